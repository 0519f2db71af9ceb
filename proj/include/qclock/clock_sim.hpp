#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qclock/qla.hpp"
#include "qclock/wavepacket.hpp"

namespace qclock::clock_sim {

using wavepacket::Grid;
using wavepacket::JointGaussian;
using wavepacket::WavePacket;

/// Periodic ring of N sites; the clock Hamiltonian p generates rigid
/// translation, realized as an exact one-site cyclic permutation when
/// dt = dx, or spectrally for smaller steps.
struct ClockLattice {
  long n = 256;
  double dx = 0.1;
  double origin = 0.0;  // position of site 0

  ClockLattice() = default;
  ClockLattice(long n_, double dx_, double origin_);
  double pos(long i) const { return origin + static_cast<double>(i) * dx; }
  double length() const { return static_cast<double>(n) * dx; }
  Grid grid() const { return Grid{n, dx, origin}; }
};

enum class ProfileShape { kGaussianBump, kTopHat };

/// Coupling window g(q) around q = 0; the strength is normalized on the
/// lattice so that sum_j g(x_j) dx = pi/2 exactly.
struct CouplingProfile {
  ProfileShape shape = ProfileShape::kGaussianBump;
  double half_width = 0.0;  // support is [-w, w]; 0 selects 4*dx at resolve
};

enum class SystemType {
  kSingleSpinEnergyBasis,  // observable sigma_z, one pointer+clock
  kSingleSpinTheta,        // observable |theta><theta|, one pointer+clock
  kSingleSpinTwoPointers,  // two pointer+clock pairs on one spin
  kChain3,                 // 3-spin chain, apparatus on spins 1 and 3
};

enum class ShiftMode { kExactPermutation, kSpectral };

struct AutonomousScenario {
  SystemType system = SystemType::kSingleSpinTheta;
  double omega = 1.0;  // spin free Hamiltonian scale (spin scenarios)
  double E0 = 1.0;     // chain energy scale (chain3)
  double theta = 0.0;  // measured axis for the theta scenarios

  ClockLattice lattice;  // shared by both clocks
  CouplingProfile profile;
  std::vector<WavePacket> clocks;          // independent initial packets
  std::optional<JointGaussian> joint_clocks;  // alternative two-clock start

  /// Initial system ket in the computational basis (size 2 or 8);
  /// empty selects |down> for spin scenarios and phi_m1 for chain3.
  VectorXcd initial_system;

  double total_time = 0.0;
  int substeps_per_dx = 1;  // dt = dx / substeps_per_dx
  ShiftMode shift_mode = ShiftMode::kExactPermutation;
  int checkpoint_every = 8;

  bool alice_coupled = true;
  bool bob_coupled = true;  // ignored for one-pointer systems

  int n_clocks() const;
  int n_pointers() const;
  double dt() const { return lattice.dx / substeps_per_dx; }
};

/// Convenience builder: picks lattice extent, packet start positions and the
/// total time from the packet width(s) and the requested clock offset, then
/// snaps positions to lattice sites. `offset` is (Bob start delay) y_i - x_i.
struct ScenarioRequest {
  SystemType system = SystemType::kSingleSpinTheta;
  double omega = 1.0, E0 = 1.0, theta = 0.0;
  double delta = 1.0;  // packet width
  double p0 = 0.0;     // initial clock momentum
  long n = 256;
  double offset = 0.0;
  bool sequential = false;  // force a non-overlapping A-before-B offset
  bool alice_coupled = true, bob_coupled = true;
  std::optional<std::pair<double, double>> joint_widths;  // (delta_plus, delta_minus)
  int substeps_per_dx = 1;
  ShiftMode shift_mode = ShiftMode::kExactPermutation;
  double profile_half_width = 0.0;  // 0 -> 4*dx
};
AutonomousScenario standard_scenario(const ScenarioRequest& req);

/// Three-part decomposition of the full time-independent Hamiltonian:
/// clock translation generators (handled exactly), the system free part
/// (diagonal in the working basis), and the position-diagonal interactions.
struct StructuredHamiltonian {
  MatrixXcd sys_basis;   // columns: working-basis kets in the computational basis
  VectorXd sys_energies; // diagonal in the working basis
  struct Interaction {
    MatrixXcd projector;  // in the working basis
    int pointer;          // which pointer qubit flips
    int clock;            // which clock gates it
    VectorXd g;           // per-site coupling, normalized on the lattice
    long support_lo, support_hi;  // inclusive site range where g > 0
  };
  std::vector<Interaction> interactions;
};

StructuredHamiltonian build_hamiltonian(const AutonomousScenario& s);

/// Dense working state. Memory layout: [clock sites..., pointer combo,
/// system], system fastest. For chain3 the working system basis is the
/// chain eigenbasis (spin_chain::eigenstate_labels() order).
struct SimState {
  long n_sys = 2;
  int n_pointers = 1;
  int n_clocks = 1;
  long n = 0;  // sites per clock
  VectorXcd data;

  long block() const { return (1L << n_pointers) * n_sys; }
  long size() const;
  double norm() const { return data.norm(); }
};

SimState initial_state(const AutonomousScenario& s);

struct Checkpoint {
  double t;
  double e_total;
  double e_system;
  double e_interaction;
  double p_clock[2] = {0.0, 0.0};
  double pointer_energy = 0.0;  // no pointer Hamiltonian
  double norm;
};

struct Trajectory {
  AutonomousScenario scenario;
  std::vector<Checkpoint> checkpoints;
  SimState final_state;
};

Trajectory evolve(const AutonomousScenario& s);
Trajectory evolve(const AutonomousScenario& s, SimState state);

/// Signed Brillouin-zone momentum of FFT bin k.
double momentum_of_bin(const ClockLattice& lat, long k);

/// Marginal momentum distribution of one clock; sums to the squared norm.
std::vector<double> momentum_distribution(const SimState& st, const ClockLattice& lat,
                                          int clock);

double mean_momentum(const SimState& st, const ClockLattice& lat, int clock);
double mean_position(const SimState& st, const ClockLattice& lat, int clock);
double position_variance(const SimState& st, const ClockLattice& lat, int clock);

/// Sum of the distribution within [center - half_window, center + half_window],
/// on the periodic momentum axis.
double momentum_mass(const std::vector<double>& dist, const ClockLattice& lat,
                     double center, double half_window);

struct PointerOutcome {
  std::vector<int> outcome;  // physical pointer values
  double probability;
  SimState conditional;  // sub-normalized
};

/// Projective readout of the listed pointers (physical basis).
std::vector<PointerOutcome> measure_pointers(const SimState& st,
                                             std::span<const int> pointers);
std::vector<PointerOutcome> measure_pointers(const SimState& st,
                                             std::initializer_list<int> pointers);

/// Axis handles for reduced_density: clocks first, then pointers, then system.
struct Axis {
  static int clock(int i) { return i; }
  static int pointer(const SimState& st, int i) { return st.n_clocks + i; }
  static int sys(const SimState& st) { return st.n_clocks + st.n_pointers; }
};

/// Reduced density matrix over the kept axes (order as listed).
MatrixXcd reduced_density(const SimState& st, std::span<const int> keep);
MatrixXcd reduced_density(const SimState& st, std::initializer_list<int> keep);

double purity(const MatrixXcd& rho);  // tr(rho^2) / tr(rho)^2

/// Flatten to the [system(computational), pointers, clocks] subsystem order
/// as a qla StateVector (small lattices; used for cross-checks).
StateVector to_state_vector(const SimState& st, const StructuredHamiltonian& h,
                            const ClockLattice& lat);

/// Materialize an oracle expansion directly in the working layout.
SimState oracle_state(const AutonomousScenario& s,
                      const wavepacket::BranchExpansion& b);

cdouble inner(const SimState& a, const SimState& b);
double fidelity(const SimState& a, const SimState& b);  // |<a|b>|^2

/// Squared weight of each (system label, pointer combo) sector.
std::map<std::pair<int, long>, double> sector_weights(const SimState& st);

/// Impulsive von Neumann reference map exp(-i * pulse * P x sigma_x) applied
/// to spin x pointer(|0>); theta = nullopt measures sigma_z. The pulse
/// integral must equal pi/2 (within 1e-9).
VectorXcd vonneumann_reference(const VectorXcd& spin_state, std::optional<double> theta,
                               double pulse_integral);

/// The analytic oracle expansion for a scenario, evaluated at its final time.
wavepacket::BranchExpansion oracle_expansion(const AutonomousScenario& s);

struct OracleDiff {
  double fidelity;
  double sim_norm, oracle_norm;
  /// (system label, pointer combo) -> (simulated weight, oracle weight)
  std::map<std::pair<int, long>, std::pair<double, double>> sectors;
};

OracleDiff compare_with_oracle(const AutonomousScenario& s, const SimState& final_state);

}  // namespace qclock::clock_sim
