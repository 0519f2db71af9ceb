#include "qclock/spin_chain.hpp"

#include <cmath>
#include <map>

namespace qclock::spin_chain {

namespace {
const cdouble I1(0.0, 1.0);
const double SQRT2 = std::sqrt(2.0);
}  // namespace

MatrixXcd sigma_x() {
  MatrixXcd m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

MatrixXcd sigma_y() {
  MatrixXcd m(2, 2);
  m << 0, -I1, I1, 0;
  return m;
}

MatrixXcd sigma_z() {
  MatrixXcd m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

MatrixXcd projector_up() {
  MatrixXcd m = MatrixXcd::Zero(2, 2);
  m(0, 0) = 1;
  return m;
}

MatrixXcd projector_down() {
  MatrixXcd m = MatrixXcd::Zero(2, 2);
  m(1, 1) = 1;
  return m;
}

HermitianOperator pair_coupling() {
  MatrixXcd sx = sigma_x(), sy = sigma_y();
  MatrixXcd xx(4, 4), yy(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          xx(2 * i + k, 2 * j + l) = sx(i, j) * sx(k, l);
          yy(2 * i + k, 2 * j + l) = sy(i, j) * sy(k, l);
        }
  return HermitianOperator(SubsystemShape({2, 2}), (xx - yy) / (2.0 * SQRT2));
}

StateVector bell_phi_plus() {
  VectorXcd v = VectorXcd::Zero(4);
  v[0] = 1.0 / SQRT2;
  v[3] = 1.0 / SQRT2;
  return StateVector(SubsystemShape({2, 2}), v);
}

StateVector bell_phi_minus() {
  VectorXcd v = VectorXcd::Zero(4);
  v[0] = 1.0 / SQRT2;
  v[3] = -1.0 / SQRT2;
  return StateVector(SubsystemShape({2, 2}), v);
}

HermitianOperator chain_hamiltonian(const ChainSpec& spec) {
  const int n = spec.n_spins;
  std::vector<long> dims(n, 2);
  SubsystemShape shape(dims);
  long dim = shape.total();
  MatrixXcd H = MatrixXcd::Zero(dim, dim);
  MatrixXcd pair = pair_coupling().matrix;

  // Embed the 4x4 pair term on sites (j, j+1) by direct index arithmetic.
  for (int j = 0; j + 1 < n; ++j) {
    long left = 1L << j;              // configurations of spins before j
    long right = 1L << (n - j - 2);   // configurations after j+1
    for (long l = 0; l < left; ++l)
      for (long r = 0; r < right; ++r)
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            if (pair(a, b) == 0.0) continue;
            long row = (l * 4 + a) * right + r;
            long col = (l * 4 + b) * right + r;
            H(row, col) += pair(a, b);
          }
  }
  return HermitianOperator(shape, spec.E0 * H);
}

namespace {

// Basis index of |s1 s2 s3> with bit 0 = spin up. Site 1 is the most
// significant bit (row-major shape convention).
StateVector make3(std::initializer_list<std::pair<int, double>> amps) {
  VectorXcd v = VectorXcd::Zero(8);
  for (auto& [idx, a] : amps) v[idx] = a;
  return StateVector(SubsystemShape({2, 2, 2}), v);
}

struct Named {
  StateVector state;
  double eigenvalue;
};

const std::map<std::string, Named>& named_table() {
  static const std::map<std::string, Named> table = [] {
    const double h = 0.5, q = 1.0 / SQRT2;
    std::map<std::string, Named> t;
    // |uuu>=0, |uud>=1, |udu>=2, |udd>=3, |duu>=4, |dud>=5, |ddu>=6, |ddd>=7
    t["phi_m1"] = {make3({{0, q}, {3, -h}, {6, -h}}), -1.0};
    t["phi_0_1"] = {make3({{2, 1.0}}), 0.0};
    t["phi_0_2"] = {make3({{3, q}, {6, -q}}), 0.0};
    t["phi_p1"] = {make3({{0, q}, {3, h}, {6, h}}), 1.0};
    // Spin-flipped partners: basis index i -> 7 - i.
    for (auto& name : {"phi_m1", "phi_0_1", "phi_0_2", "phi_p1"}) {
      const Named& src = t[name];
      VectorXcd v(8);
      for (int i = 0; i < 8; ++i) v[7 - i] = src.state.amplitudes[i];
      t[std::string(name) + "_flipped"] = {StateVector(SubsystemShape({2, 2, 2}), v),
                                           src.eigenvalue};
    }
    return t;
  }();
  return table;
}

}  // namespace

StateVector named_eigenstate(const std::string& label) {
  auto it = named_table().find(label);
  if (it == named_table().end())
    throw std::invalid_argument("named_eigenstate: unknown label '" + label + "'");
  return it->second.state;
}

double named_eigenvalue(const std::string& label) {
  auto it = named_table().find(label);
  if (it == named_table().end())
    throw std::invalid_argument("named_eigenvalue: unknown label '" + label + "'");
  return it->second.eigenvalue;
}

const std::vector<std::string>& eigenstate_labels() {
  static const std::vector<std::string> labels = {
      "phi_m1", "phi_m1_flipped", "phi_0_1", "phi_0_2",
      "phi_0_1_flipped", "phi_0_2_flipped", "phi_p1", "phi_p1_flipped"};
  return labels;
}

LabeledEigenSystem chain3_eigensystem(double E0) {
  LabeledEigenSystem sys;
  sys.labels = eigenstate_labels();
  sys.eigenvalues.resize(8);
  sys.eigenvectors.resize(8, 8);
  for (int i = 0; i < 8; ++i) {
    sys.eigenvalues[i] = E0 * named_eigenvalue(sys.labels[i]);
    sys.eigenvectors.col(i) = named_eigenstate(sys.labels[i]).amplitudes;
  }
  return sys;
}

}  // namespace qclock::spin_chain
