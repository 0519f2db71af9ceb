#include "qclock/qla.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace qclock {

namespace {

// Strides of each subsystem axis in the flat row-major index.
std::vector<long> strides_of(const SubsystemShape& shape) {
  std::vector<long> st(shape.size());
  long acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape.dim(i);
  }
  return st;
}

void check_targets(const SubsystemShape& shape, std::span<const int> targets) {
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= static_cast<int>(shape.size()))
      throw std::invalid_argument("apply_local: target index out of range");
    for (std::size_t j = i + 1; j < targets.size(); ++j)
      if (targets[i] == targets[j])
        throw std::invalid_argument("apply_local: repeated target subsystem");
  }
}

}  // namespace

SubsystemShape::SubsystemShape(std::vector<long> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("SubsystemShape: empty dims");
  total_ = 1;
  for (long d : dims_) {
    if (d < 1) throw std::invalid_argument("SubsystemShape: dims must be >= 1");
    total_ *= d;
  }
}

StateVector::StateVector(SubsystemShape s, VectorXcd a)
    : shape(std::move(s)), amplitudes(std::move(a)) {
  if (amplitudes.size() != shape.total())
    throw std::invalid_argument("StateVector: amplitude length != product of dims");
}

bool StateVector::is_normalized(double tol) const {
  return std::abs(norm() - 1.0) <= tol;
}

StateVector StateVector::normalized() const {
  double n = norm();
  if (n == 0.0) throw std::domain_error("StateVector: cannot normalize zero vector");
  return StateVector(shape, amplitudes / n);
}

HermitianOperator::HermitianOperator(SubsystemShape s, MatrixXcd m)
    : shape(std::move(s)), matrix(std::move(m)) {
  if (matrix.rows() != shape.total() || matrix.cols() != shape.total())
    throw std::invalid_argument("HermitianOperator: matrix size != product of dims");
  double scale = matrix.cwiseAbs().maxCoeff();
  double dev = (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
  if (dev > 1e-12 * std::max(scale, 1.0))
    throw std::invalid_argument("HermitianOperator: matrix is not Hermitian");
}

DensityOperator::DensityOperator(SubsystemShape s, MatrixXcd m, double declared_trace,
                                 double trace_tol)
    : shape(std::move(s)), matrix(std::move(m)) {
  if (matrix.rows() != shape.total() || matrix.cols() != shape.total())
    throw std::invalid_argument("DensityOperator: matrix size != product of dims");
  double scale = std::max(matrix.cwiseAbs().maxCoeff(), 1.0);
  double dev = (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
  if (dev > 1e-12 * scale)
    throw std::invalid_argument("DensityOperator: matrix is not Hermitian");
  if (std::abs(trace() - declared_trace) > trace_tol)
    throw std::invalid_argument("DensityOperator: trace differs from declared trace");
}

void DensityOperator::validate() const {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(matrix, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::domain_error("DensityOperator: negative eigenvalue beyond tolerance");
}

StateVector tensor(std::span<const StateVector> factors) {
  if (factors.empty()) throw std::invalid_argument("tensor: no factors");
  std::vector<long> dims;
  VectorXcd amps = factors[0].amplitudes;
  dims = factors[0].shape.dims();
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const VectorXcd& b = factors[f].amplitudes;
    VectorXcd out(amps.size() * b.size());
    for (long i = 0; i < amps.size(); ++i)
      out.segment(i * b.size(), b.size()) = amps[i] * b;
    amps = std::move(out);
    for (long d : factors[f].shape.dims()) dims.push_back(d);
  }
  return StateVector(SubsystemShape(dims), std::move(amps));
}

StateVector tensor(std::initializer_list<StateVector> factors) {
  std::vector<StateVector> v(factors);
  return tensor(std::span<const StateVector>(v));
}

HermitianOperator tensor(std::span<const HermitianOperator> factors) {
  if (factors.empty()) throw std::invalid_argument("tensor: no factors");
  std::vector<long> dims = factors[0].shape.dims();
  MatrixXcd m = factors[0].matrix;
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const MatrixXcd& b = factors[f].matrix;
    MatrixXcd out(m.rows() * b.rows(), m.cols() * b.cols());
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j)
        out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = m(i, j) * b;
    m = std::move(out);
    for (long d : factors[f].shape.dims()) dims.push_back(d);
  }
  return HermitianOperator(SubsystemShape(dims), std::move(m));
}

HermitianOperator tensor(std::initializer_list<HermitianOperator> factors) {
  std::vector<HermitianOperator> v(factors);
  return tensor(std::span<const HermitianOperator>(v));
}

StateVector apply_local(const MatrixXcd& op, const StateVector& state,
                        std::span<const int> targets) {
  const SubsystemShape& shape = state.shape;
  check_targets(shape, targets);
  long opdim = 1;
  for (int t : targets) opdim *= shape.dim(t);
  if (op.rows() != opdim || op.cols() != opdim)
    throw std::invalid_argument("apply_local: operator dimension mismatch");

  std::vector<long> st = strides_of(shape);

  // Enumerate the complement axes; for each fixed complement configuration,
  // gather the opdim-length fiber, multiply, scatter.
  std::vector<int> comp;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i)
    if (std::find(targets.begin(), targets.end(), i) == targets.end()) comp.push_back(i);

  long ncomp = 1;
  for (int c : comp) ncomp *= shape.dim(c);

  // Fiber offsets for every joint target configuration.
  std::vector<long> fiber(opdim, 0);
  {
    long n = targets.size();
    std::vector<long> idx(n, 0);
    for (long k = 0; k < opdim; ++k) {
      long off = 0;
      for (long i = 0; i < n; ++i) off += idx[i] * st[targets[i]];
      fiber[k] = off;
      for (long i = n; i-- > 0;) {
        if (++idx[i] < shape.dim(targets[i])) break;
        idx[i] = 0;
      }
    }
  }

  VectorXcd out = VectorXcd::Zero(shape.total());
  VectorXcd buf(opdim);
  std::vector<long> cidx(comp.size(), 0);
  for (long c = 0; c < ncomp; ++c) {
    long base = 0;
    for (std::size_t i = 0; i < comp.size(); ++i) base += cidx[i] * st[comp[i]];
    for (long k = 0; k < opdim; ++k) buf[k] = state.amplitudes[base + fiber[k]];
    VectorXcd res = op * buf;
    for (long k = 0; k < opdim; ++k) out[base + fiber[k]] = res[k];
    for (std::size_t i = comp.size(); i-- > 0;) {
      if (++cidx[i] < shape.dim(comp[i])) break;
      cidx[i] = 0;
    }
  }
  return StateVector(shape, std::move(out));
}

StateVector apply_local(const HermitianOperator& op, const StateVector& state,
                        std::span<const int> targets) {
  return apply_local(op.matrix, state, targets);
}

StateVector apply_local(const MatrixXcd& op, const StateVector& state,
                        std::initializer_list<int> targets) {
  std::vector<int> t(targets);
  return apply_local(op, state, std::span<const int>(t));
}

namespace {

DensityOperator partial_trace_impl(const SubsystemShape& shape,
                                   const std::function<cdouble(long, long)>& element,
                                   std::span<const int> keep) {
  if (keep.empty()) throw std::invalid_argument("partial_trace: empty keep set");
  check_targets(shape, keep);

  std::vector<long> st = strides_of(shape);
  std::vector<int> traced;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i)
    if (std::find(keep.begin(), keep.end(), i) == keep.end()) traced.push_back(i);

  long dkeep = 1;
  for (int k : keep) dkeep *= shape.dim(k);
  long dtraced = 1;
  for (int t : traced) dtraced *= shape.dim(t);

  auto offset_of = [&](std::span<const int> axes, long flat) {
    long off = 0;
    for (std::size_t i = axes.size(); i-- > 0;) {
      long d = shape.dim(axes[i]);
      off += (flat % d) * st[axes[i]];
      flat /= d;
    }
    return off;
  };

  std::vector<long> keep_off(dkeep), tr_off(dtraced);
  for (long i = 0; i < dkeep; ++i) keep_off[i] = offset_of(keep, i);
  for (long i = 0; i < dtraced; ++i) tr_off[i] = offset_of(traced, i);

  MatrixXcd rho = MatrixXcd::Zero(dkeep, dkeep);
  for (long i = 0; i < dkeep; ++i)
    for (long j = 0; j < dkeep; ++j) {
      cdouble acc = 0.0;
      for (long t = 0; t < dtraced; ++t)
        acc += element(keep_off[i] + tr_off[t], keep_off[j] + tr_off[t]);
      rho(i, j) = acc;
    }

  std::vector<long> kept_dims;
  for (int k : keep) kept_dims.push_back(shape.dim(k));
  double tr = rho.trace().real();
  return DensityOperator(SubsystemShape(kept_dims), std::move(rho), tr, 1e-10);
}

}  // namespace

DensityOperator partial_trace(const StateVector& state, std::span<const int> keep) {
  const VectorXcd& a = state.amplitudes;
  return partial_trace_impl(
      state.shape, [&a](long r, long c) { return a[r] * std::conj(a[c]); }, keep);
}

DensityOperator partial_trace(const DensityOperator& rho, std::span<const int> keep) {
  const MatrixXcd& m = rho.matrix;
  return partial_trace_impl(
      rho.shape, [&m](long r, long c) { return m(r, c); }, keep);
}

DensityOperator partial_trace(const StateVector& state, std::initializer_list<int> keep) {
  std::vector<int> k(keep);
  return partial_trace(state, std::span<const int>(k));
}

DensityOperator partial_trace(const DensityOperator& rho, std::initializer_list<int> keep) {
  std::vector<int> k(keep);
  return partial_trace(rho, std::span<const int>(k));
}

EigenSystem eig_hermitian(const HermitianOperator& op) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(op.matrix);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eig_hermitian: eigensolver failed to converge");
  return EigenSystem{es.eigenvalues(), es.eigenvectors()};
}

double trace_distance(const DensityOperator& a, const DensityOperator& b) {
  if (!(a.shape == b.shape))
    throw std::invalid_argument("trace_distance: shape mismatch");
  if (std::abs(a.trace() - b.trace()) > 1e-9)
    throw std::invalid_argument("trace_distance: traces differ beyond tolerance");
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(a.matrix - b.matrix, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double state_fidelity(const DensityOperator& a, const DensityOperator& b) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(a.matrix);
  VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  MatrixXcd sqrta = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es2(sqrta * b.matrix * sqrta);
  double f = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return f * f;
}

StateVector permute_subsystems(const StateVector& state, std::span<const int> perm) {
  const SubsystemShape& shape = state.shape;
  if (perm.size() != shape.size())
    throw std::invalid_argument("permute_subsystems: permutation size mismatch");
  check_targets(shape, perm);
  std::vector<long> st = strides_of(shape);
  std::vector<long> new_dims(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) new_dims[i] = shape.dim(perm[i]);
  SubsystemShape ns(new_dims);

  VectorXcd out(shape.total());
  std::vector<long> idx(perm.size(), 0);  // index in NEW axis order
  for (long flat = 0; flat < shape.total(); ++flat) {
    long old_index = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) old_index += idx[i] * st[perm[i]];
    out[flat] = state.amplitudes[old_index];
    for (std::size_t i = perm.size(); i-- > 0;) {
      if (++idx[i] < ns.dim(i)) break;
      idx[i] = 0;
    }
  }
  return StateVector(ns, std::move(out));
}

}  // namespace qclock
