#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qclock/qla.hpp"

namespace qclock::projective {

/// Which chain sites are measured (sigma_z on each). Site indices are
/// subsystem indices into the state's shape.
struct MeasurementScenario {
  std::vector<int> sites;

  MeasurementScenario() = default;
  explicit MeasurementScenario(std::vector<int> s) : sites(std::move(s)) {
    if (sites.empty())
      throw std::invalid_argument("MeasurementScenario: no measured sites");
  }
};

/// One projective branch. Outcomes use the compact labels 0 = spin up (+1),
/// 1 = spin down (-1). Zero-probability branches carry no post state.
struct MeasurementBranch {
  std::vector<int> outcome;
  double probability = 0.0;
  std::optional<StateVector> post_state;  // renormalized
};

std::vector<MeasurementBranch> measure_sites(const StateVector& state,
                                             const MeasurementScenario& scenario);

struct SharpEntry {
  double delta_e;      // sharp energy change (eigenvalue - E_in)
  double probability;  // conditional on the outcome
};

struct EnergyRow {
  std::vector<int> outcome;
  double probability;
  std::vector<SharpEntry> sharp;
  double mean_delta_e;
};

/// The Tables 1-2 bookkeeping: per-outcome probabilities, conditional sharp
/// energy-change distributions from the spectral projectors of H, conditional
/// means, and the unconditional mean.
struct EnergyTable {
  std::vector<EnergyRow> rows;
  double overall_mean = 0.0;
  double initial_energy = 0.0;
};

EnergyTable conditional_energy_stats(const StateVector& state,
                                     const MeasurementScenario& scenario,
                                     const HermitianOperator& hamiltonian);

/// CSV rendering, one line per (outcome, sharp value):
/// outcome,prob,delta_e,prob_delta_e,cond_mean,overall_mean
std::string table_to_csv(const EnergyTable& table);

enum class Feasibility { kFeasible, kInfeasible };

/// One term of a marginal-consistency decomposition
///   prob(share_P = e | o) = sum_o' prob(o'|o) * prob(share_P = e | cell(o,o'))
struct CertTerm {
  std::vector<int> distant_outcome;
  double weight;                        // prob(distant | local)
  bool fixed;                           // cell split pinned by the symmetry ansatz
  double fixed_value = 0.0;             // contribution when fixed
  double min_value = 0.0, max_value = 0.0;  // achievable range when free
  // per sharp value: coefficient multiplying the split indicator (free cells)
  std::vector<std::pair<double, double>> coefficients;  // (delta_e, prob(delta_e|cell))
};

struct MarginalConstraint {
  char party;  // 'A' or 'B'
  int local_outcome;
  double share_value;
  double required;  // the single-party table probability
  double forced_min, forced_max;
  std::vector<CertTerm> terms;
  bool violated = false;
};

/// The Appendix-A attribution question: can per-apparatus energy shares be
/// assigned so each apparatus's contribution is independent of the distant
/// choice? Cells are (joint outcome, sharp value) with an unknown
/// distribution over integer splits; symmetric outcomes with even sharp
/// value are pinned to the symmetric split.
struct AttributionCell {
  std::vector<int> outcome;
  double delta_e;
  double probability;            // prob(delta_e | outcome)
  std::vector<std::pair<double, double>> splits;  // (share_A, share_B)
  bool fixed = false;            // deterministic split (first entry)
};

struct AttributionProblem {
  std::vector<AttributionCell> cells;
  std::vector<MarginalConstraint> constraints;
  double unit = 1.0;  // energy grid unit
};

struct AttributionReport {
  Feasibility verdict = Feasibility::kFeasible;
  AttributionProblem problem;
  std::vector<std::size_t> violated_constraints;
  /// Mean-level warm-up: for each asymmetric joint outcome, the conditional
  /// mean contributions (share_A, share_B) forced by mean consistency.
  std::map<std::pair<int, int>, std::pair<double, double>> mean_warmup;
  /// Feasible witness: per cell, probabilities of each split.
  std::vector<std::vector<double>> witness;
  std::string summary;
};

AttributionProblem build_attribution_problem(const EnergyTable& one_party,
                                             const EnergyTable& two_party);

AttributionReport attribution_feasibility(const EnergyTable& one_party,
                                          const EnergyTable& two_party);

}  // namespace qclock::projective
