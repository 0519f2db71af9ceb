#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qclock/qla.hpp"

namespace qclock::wavepacket {

/// Gaussian clock packet. The wavefunction convention is
///   phi(x) = amp * (2 pi w^2)^(-1/4) * exp(-(x-x0)^2/(4 w^2)) * exp(i p0 (x-x0))
/// so the position density has standard deviation w, the momentum density
/// has standard deviation 1/(2w), and |amp| is the norm.
struct WavePacket {
  double x0 = 0.0;
  double p0 = 0.0;
  double width = 1.0;
  cdouble amp = 1.0;

  cdouble value(double x) const;
};

/// Correlated two-clock Gaussian. Widths are quoted so that the position
/// density of (x - y) has variance 2*delta_minus^2 and of (x + y) has
/// variance 2*delta_plus^2; delta_plus = delta_minus = w reduces exactly to
/// two independent packets of width w.
struct JointGaussian {
  double center_x = 0.0, center_y = 0.0;
  double delta_plus = 1.0, delta_minus = 1.0;
  double px = 0.0, py = 0.0;
  cdouble amp = 1.0;

  cdouble value(double x, double y) const;
};

/// Extra multiplicative phase exp(i (kx x + ky y + kmax max(x,y) + kmin min(x,y)))
/// carried by a branch on top of its packets.
struct PhaseField {
  double kx = 0.0, ky = 0.0, kmax = 0.0, kmin = 0.0;

  bool trivial() const { return kx == 0 && ky == 0 && kmax == 0 && kmin == 0; }
  cdouble value(double x, double y) const;
};

/// Which discrete basis the system labels of a BranchExpansion refer to.
enum class SystemKind {
  kSingleSpinZ,  // labels 0 = up, 1 = down
  kChain3Eigen,  // labels index spin_chain::eigenstate_labels()
};

/// One term: coefficient * |system label> * |pointer labels (physical,
/// 0 = never flipped)> * clock factor. The clock factor is either a product
/// of per-clock packets or a joint two-clock Gaussian, times the phase field.
struct BranchTerm {
  cdouble coeff = 1.0;
  int system_label = 0;
  std::vector<int> pointer_labels;
  std::vector<WavePacket> packets;
  std::optional<JointGaussian> joint;
  PhaseField field;
  double energy = 0.0;  // system energy of the label, drives free propagation
};

struct BranchExpansion {
  SystemKind system = SystemKind::kSingleSpinZ;
  int n_pointers = 0;
  int n_clocks = 0;
  std::vector<BranchTerm> terms;
};

/// Pointer-flip phase: the coupling integrates to exp(-i (pi/2) P x sigma_x),
/// so a flipped pointer component carries a factor -i relative to the bare
/// projection-postulate bookkeeping.
inline constexpr cdouble kFlipPhase{0.0, -1.0};

/// Momentum kick: multiply the wavefunction by exp(i kick x).
WavePacket momentum_kick(const WavePacket& packet, double kick);

/// Rigid free evolution for time t under H = p per clock plus the system
/// energies: packet centers advance by t, widths and momenta are unchanged,
/// each term picks up its dynamical phase.
BranchExpansion free_propagate(const BranchExpansion& b, double t);

/// <phi1|phi2> in closed form (general centers, momenta, widths).
cdouble packet_overlap(const WavePacket& a, const WavePacket& b);

/// Total squared norm including packet overlaps and phase fields.
double squared_norm(const BranchExpansion& b);

/// <a|b> between two expansions over the same label structure.
cdouble overlap(const BranchExpansion& a, const BranchExpansion& b);

// ---- scenario solutions (point-interaction limit, completed interactions) ----

/// Single spin measured along |theta> = cos(theta)|up> + sin(theta)|down> by
/// one pointer+clock; spin starts |down>, clock packet starts at x0 < 0.
/// Four branches: flipped-pointer {theta component} with a -2 omega kick on
/// the up parts, unflipped with the rest.
BranchExpansion single_spin_theta_final(double theta, double omega,
                                        const WavePacket& initial, double t);

using IndependentClocks = std::pair<WavePacket, WavePacket>;
using ClockState = std::variant<IndependentClocks, JointGaussian>;

/// Two pointers (A then B by clock offsets) measuring the same spin along
/// theta. General form with max/min phase fields over the joint clock
/// wavefunction; valid once both interactions are completed.
BranchExpansion double_pointer_final(double theta, double omega,
                                     const ClockState& clocks, double t);

/// Clock-overlap interference parameter
///   F = integral (e^{2 i omega |x-y|} + cc) |Phi(x,y)|^2.
double F_parameter(const ClockState& clocks, double omega);
/// Same integral by direct 2-D quadrature (independent check).
double F_parameter_quadrature(const ClockState& clocks, double omega);

struct PointerProbs {
  double p00, p01, p10, p11;  // physical pointer pair (0 = unflipped)
};

/// Closed-form double-pointer outcome probabilities for given theta and F.
PointerProbs pointer_outcome_probs(double theta, double F);

// ---- the 3-spin chain with both apparatuses ----

enum class ClockConvention {
  /// Branch phase exponents equal the energy exchanged with the clocks:
  /// a branch passing through intermediate eigenstate E_m into E_f carries
  /// exp(-i E0 [(E_m+1)(max-min) + (E_f+1) min]); equivalently the paper's
  /// omega equals E0/2.
  kKickEqualsEnergyChange,
};

/// One of the nine (intermediate, final) eigenstate branches. Pointer kets
/// are stored unnormalized in the readout basis (component 0 records
/// "spin up seen", i.e. the physically flipped pointer).
struct Chain3Branch {
  double e_mid, e_final;  // in E0 units: -1, 0, +1
  Eigen::Vector2cd a_ket, b_ket;
  PhaseField field;
};

/// The nine-branch table. with_flip_phase=false gives the bare
/// projection-postulate coefficients (paper-comparable); true applies the
/// -i per physically flipped pointer component.
std::vector<Chain3Branch> chain3_branch_table(double E0, bool with_flip_phase);

/// Full final state of chain + two pointers + two clocks, flattened to
/// definite-label terms with phase fields.
BranchExpansion chain3_final(double E0, ClockConvention conv,
                             const ClockState& clocks, double t);

/// Sequential variant (Alice strictly before Bob): packets carry the momentum
/// kicks explicitly, no phase fields. Requires non-overlapping windows.
BranchExpansion sequential_chain3_final(double E0, const IndependentClocks& clocks,
                                        double t);

/// State after Alice's interaction only (three eigenstate branches).
BranchExpansion sequential_chain3_intermediate(double E0,
                                               const IndependentClocks& clocks,
                                               double t);

// ---- lattice materialization (shared with the simulator) ----

struct Grid {
  long n = 0;
  double dx = 1.0;
  double origin = 0.0;
  double pos(long i) const { return origin + static_cast<double>(i) * dx; }
  double length() const { return static_cast<double>(n) * dx; }
};

/// Amplitudes over [system, pointers..., clocks...] in row-major order.
/// system_basis columns give the computational-basis kets of the labels
/// (identity for kSingleSpinZ). Lattice amplitudes carry the sqrt(dx)
/// quadrature weight so the flat vector is normalized.
VectorXcd materialize(const BranchExpansion& b, const MatrixXcd& system_basis,
                      const std::vector<Grid>& grids);

/// JSON round-trip of an expansion (labels, coefficients, packets, fields).
std::string to_json(const BranchExpansion& b);
BranchExpansion expansion_from_json(const std::string& text);

/// Gauss-Legendre nodes/weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace qclock::wavepacket
