#pragma once

#include <complex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qclock {

using cdouble = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

/// Ordered list of subsystem dimensions. Index 0 is the slowest-varying
/// axis of the flattened amplitude vector (row-major flattening).
class SubsystemShape {
 public:
  SubsystemShape() = default;
  explicit SubsystemShape(std::vector<long> dims);

  const std::vector<long>& dims() const { return dims_; }
  long dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const { return dims_.size(); }
  long total() const { return total_; }

  bool operator==(const SubsystemShape& o) const { return dims_ == o.dims_; }

 private:
  std::vector<long> dims_;
  long total_ = 1;
};

/// Dense ket over a structured tensor-product space.
struct StateVector {
  SubsystemShape shape;
  VectorXcd amplitudes;

  StateVector() = default;
  StateVector(SubsystemShape s, VectorXcd a);

  double norm() const { return amplitudes.norm(); }
  double squared_norm() const { return amplitudes.squaredNorm(); }
  bool is_normalized(double tol = 1e-12) const;
  StateVector normalized() const;
};

/// Dense Hermitian matrix tagged with the same subsystem structure.
/// Hermiticity is enforced at construction (max|M - M^dag| <= 1e-12 max|M|).
struct HermitianOperator {
  SubsystemShape shape;
  MatrixXcd matrix;

  HermitianOperator() = default;
  HermitianOperator(SubsystemShape s, MatrixXcd m);
};

/// Hermitian, positive-semidefinite (up to tolerance), possibly
/// sub-normalized density matrix. Positivity is checked by validate(),
/// not at construction.
struct DensityOperator {
  SubsystemShape shape;
  MatrixXcd matrix;

  DensityOperator() = default;
  DensityOperator(SubsystemShape s, MatrixXcd m, double declared_trace = 1.0,
                  double trace_tol = 1e-10);

  double trace() const { return matrix.trace().real(); }
  /// Throws if any eigenvalue is below -1e-10.
  void validate() const;
};

/// Kronecker product of kets; shapes concatenate.
StateVector tensor(std::span<const StateVector> factors);
StateVector tensor(std::initializer_list<StateVector> factors);

/// Kronecker product of operators; shapes concatenate.
HermitianOperator tensor(std::span<const HermitianOperator> factors);
HermitianOperator tensor(std::initializer_list<HermitianOperator> factors);

/// Embeds `op` acting on the listed target subsystems (in the given order),
/// identity elsewhere. op's dimension must equal the product of the target
/// dims; targets must be distinct. Works for any square matrix (the operator
/// carried by HermitianOperator is Hermitian, but a raw unitary matrix can be
/// applied through the MatrixXcd overload).
StateVector apply_local(const MatrixXcd& op, const StateVector& state,
                        std::span<const int> targets);
StateVector apply_local(const HermitianOperator& op, const StateVector& state,
                        std::span<const int> targets);
StateVector apply_local(const MatrixXcd& op, const StateVector& state,
                        std::initializer_list<int> targets);

/// Reduced density operator on the kept subsystems (order as listed).
DensityOperator partial_trace(const StateVector& state, std::span<const int> keep);
DensityOperator partial_trace(const DensityOperator& rho, std::span<const int> keep);
DensityOperator partial_trace(const StateVector& state, std::initializer_list<int> keep);
DensityOperator partial_trace(const DensityOperator& rho, std::initializer_list<int> keep);

struct EigenSystem {
  VectorXd eigenvalues;    // ascending
  MatrixXcd eigenvectors;  // columns, orthonormal
};

/// Spectral decomposition of a Hermitian operator, eigenvalues ascending.
EigenSystem eig_hermitian(const HermitianOperator& op);

/// (1/2) * sum |eig(a - b)|. Requires equal shapes and equal traces (1e-9).
double trace_distance(const DensityOperator& a, const DensityOperator& b);

/// Uhlmann fidelity F(a,b) = (tr sqrt(sqrt(a) b sqrt(a)))^2 for normalized
/// inputs; computed from the Hermitian square root.
double state_fidelity(const DensityOperator& a, const DensityOperator& b);

/// Permutes the subsystem axes of a state: new subsystem i is old
/// subsystem perm[i]. Used for bookkeeping tests.
StateVector permute_subsystems(const StateVector& state, std::span<const int> perm);

}  // namespace qclock
