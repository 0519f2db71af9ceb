#pragma once

#include <string>

#include "qclock/qla.hpp"

namespace qclock::spin_chain {

/// Chain of spin-1/2 with the x x - y y next-neighbor coupling.
/// E0 multiplies the dimensionless couplings; the 3-spin chain then has
/// eigenvalues {-E0, 0, +E0}.
struct ChainSpec {
  int n_spins = 3;
  double E0 = 1.0;

  ChainSpec() = default;
  ChainSpec(int n, double e0) : n_spins(n), E0(e0) {
    if (n_spins < 2) throw std::invalid_argument("ChainSpec: n_spins must be >= 2");
    if (E0 <= 0) throw std::invalid_argument("ChainSpec: E0 must be > 0");
  }
};

/// Pauli matrices and common 2x2 blocks.
MatrixXcd sigma_x();
MatrixXcd sigma_y();
MatrixXcd sigma_z();
MatrixXcd projector_up();    // |0><0|, spin up
MatrixXcd projector_down();  // |1><1|

/// The two-site coupling (1/(2 sqrt 2)) (sx sx - sy sy), a 4x4 operator.
/// Equals (1/sqrt 2)(P_{Phi+} - P_{Phi-}).
HermitianOperator pair_coupling();

/// Bell states (|uu> +/- |dd>)/sqrt(2) as 2-qubit kets.
StateVector bell_phi_plus();
StateVector bell_phi_minus();

/// Sum of pair couplings on neighboring sites, scaled by E0.
HermitianOperator chain_hamiltonian(const ChainSpec& spec);

/// The literal 3-spin eigenstates and their spin-flipped partners.
/// Labels: "phi_m1", "phi_0_1", "phi_0_2", "phi_p1",
///         "phi_m1_flipped", "phi_0_1_flipped", "phi_0_2_flipped", "phi_p1_flipped".
StateVector named_eigenstate(const std::string& label);

/// Eigenvalue (in E0 = 1 units) of a named eigenstate.
double named_eigenvalue(const std::string& label);

/// All eight 3-chain labels, ordered by eigenvalue then name.
const std::vector<std::string>& eigenstate_labels();

/// Full eigensystem with degeneracy-stable labeling: the named literal
/// states first (they are exact eigenvectors), eigenvalues in E0 units.
struct LabeledEigenSystem {
  std::vector<std::string> labels;
  VectorXd eigenvalues;    // E0-scaled
  MatrixXcd eigenvectors;  // columns, the literal amplitudes
};
LabeledEigenSystem chain3_eigensystem(double E0 = 1.0);

}  // namespace qclock::spin_chain
