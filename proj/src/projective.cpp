#include "qclock/projective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace qclock::projective {

namespace {

constexpr double kTol = 1e-9;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string outcome_str(const std::vector<int>& o) {
  std::string s;
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(o[i]);
  }
  return s;
}

}  // namespace

std::vector<MeasurementBranch> measure_sites(const StateVector& state,
                                             const MeasurementScenario& scenario) {
  if (!state.is_normalized(1e-10))
    throw std::invalid_argument("measure_sites: state is not normalized");
  const auto& shape = state.shape;
  for (int s : scenario.sites)
    if (s < 0 || s >= static_cast<int>(shape.size()) || shape.dim(s) != 2)
      throw std::invalid_argument("measure_sites: site out of range or not a qubit");

  // Strides of the measured sites.
  std::vector<long> st(shape.size());
  {
    long acc = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
      st[i] = acc;
      acc *= shape.dim(i);
    }
  }

  const int k = static_cast<int>(scenario.sites.size());
  std::vector<MeasurementBranch> branches(1 << k);
  std::vector<VectorXcd> projected(1 << k, VectorXcd::Zero(shape.total()));

  for (long idx = 0; idx < shape.total(); ++idx) {
    int key = 0;
    for (int i = 0; i < k; ++i) {
      int bit = static_cast<int>((idx / st[scenario.sites[i]]) % 2);
      key = (key << 1) | bit;
    }
    projected[key][idx] = state.amplitudes[idx];
  }

  for (int key = 0; key < (1 << k); ++key) {
    MeasurementBranch& br = branches[key];
    br.outcome.resize(k);
    for (int i = 0; i < k; ++i) br.outcome[i] = (key >> (k - 1 - i)) & 1;
    double p = projected[key].squaredNorm();
    br.probability = p;
    if (p > 1e-14)
      br.post_state = StateVector(shape, projected[key] / std::sqrt(p));
  }
  return branches;
}

EnergyTable conditional_energy_stats(const StateVector& state,
                                     const MeasurementScenario& scenario,
                                     const HermitianOperator& hamiltonian) {
  if (!(state.shape == hamiltonian.shape))
    throw std::invalid_argument("conditional_energy_stats: shape mismatch");

  EnergyTable table;
  table.initial_energy =
      (state.amplitudes.adjoint() * hamiltonian.matrix * state.amplitudes)(0).real();

  EigenSystem es = eig_hermitian(hamiltonian);
  // Cluster eigenvalues into degenerate groups.
  std::vector<std::pair<double, std::vector<long>>> clusters;
  for (long i = 0; i < es.eigenvalues.size(); ++i) {
    if (clusters.empty() ||
        std::abs(es.eigenvalues[i] - clusters.back().first) > 1e-9)
      clusters.push_back({es.eigenvalues[i], {}});
    clusters.back().second.push_back(i);
  }

  auto branches = measure_sites(state, scenario);
  for (const auto& br : branches) {
    if (!br.post_state) continue;
    EnergyRow row;
    row.outcome = br.outcome;
    row.probability = br.probability;
    const VectorXcd& post = br.post_state->amplitudes;
    row.mean_delta_e =
        (post.adjoint() * hamiltonian.matrix * post)(0).real() - table.initial_energy;
    for (const auto& [energy, cols] : clusters) {
      double p = 0.0;
      for (long c : cols) {
        cdouble amp = es.eigenvectors.col(c).adjoint() * post;
        p += std::norm(amp);
      }
      if (p > 1e-12)
        row.sharp.push_back({energy - table.initial_energy, p});
    }
    table.rows.push_back(std::move(row));
  }

  table.overall_mean = 0.0;
  for (const auto& row : table.rows)
    table.overall_mean += row.probability * row.mean_delta_e;
  return table;
}

std::string table_to_csv(const EnergyTable& table) {
  std::string out = "outcome,prob,delta_e,prob_delta_e,cond_mean,overall_mean\n";
  for (const auto& row : table.rows)
    for (const auto& sharp : row.sharp) {
      out += outcome_str(row.outcome) + ',' + fmt_g(row.probability) + ',' +
             fmt_g(sharp.delta_e) + ',' + fmt_g(sharp.probability) + ',' +
             fmt_g(row.mean_delta_e) + ',' + fmt_g(table.overall_mean) + '\n';
    }
  return out;
}

namespace {

// ---- attribution machinery ----

struct RowRef {
  const EnergyRow* row;
};

void validate_table(const EnergyTable& t, int n_outcomes) {
  double psum = 0.0;
  for (const auto& row : t.rows) {
    if (static_cast<int>(row.outcome.size()) != n_outcomes)
      throw std::invalid_argument("attribution: outcome arity mismatch");
    if (row.probability < -kTol)
      throw std::invalid_argument("attribution: negative probability");
    psum += row.probability;
    double ssum = 0.0, mean = 0.0;
    for (const auto& s : row.sharp) {
      if (s.probability < -kTol)
        throw std::invalid_argument("attribution: negative sharp probability");
      ssum += s.probability;
      mean += s.probability * s.delta_e;
    }
    if (row.probability > kTol) {
      if (std::abs(ssum - 1.0) > 1e-6)
        throw std::invalid_argument("attribution: sharp distribution not normalized");
      if (std::abs(mean - row.mean_delta_e) > 1e-6)
        throw std::invalid_argument("attribution: sharp mean inconsistent with row mean");
    }
  }
  if (std::abs(psum - 1.0) > 1e-6)
    throw std::invalid_argument("attribution: outcome probabilities do not sum to 1");
}

double detect_unit(const EnergyTable& a, const EnergyTable& b) {
  double unit = 0.0;
  auto scan = [&](const EnergyTable& t) {
    for (const auto& row : t.rows)
      for (const auto& s : row.sharp) {
        if (s.delta_e < -kTol)
          throw std::invalid_argument("attribution: negative sharp value unsupported");
        if (s.delta_e > kTol && (unit == 0.0 || s.delta_e < unit)) unit = s.delta_e;
      }
  };
  scan(a);
  scan(b);
  if (unit == 0.0) return 1.0;
  auto check = [&](const EnergyTable& t) {
    for (const auto& row : t.rows)
      for (const auto& s : row.sharp) {
        double k = s.delta_e / unit;
        if (std::abs(k - std::round(k)) > 1e-6)
          throw std::invalid_argument("attribution: sharp values not on a common grid");
      }
  };
  check(a);
  check(b);
  return unit;
}

bool tables_symmetric(const EnergyTable& two_party) {
  for (const auto& row : two_party.rows) {
    std::vector<int> swapped = {row.outcome[1], row.outcome[0]};
    bool found = false;
    for (const auto& other : two_party.rows) {
      if (other.outcome != swapped) continue;
      found = true;
      if (std::abs(other.probability - row.probability) > 1e-9) return false;
      if (other.sharp.size() != row.sharp.size()) return false;
      for (std::size_t i = 0; i < row.sharp.size(); ++i)
        if (std::abs(other.sharp[i].delta_e - row.sharp[i].delta_e) > 1e-9 ||
            std::abs(other.sharp[i].probability - row.sharp[i].probability) > 1e-9)
          return false;
    }
    if (!found && row.probability > kTol) return false;
  }
  return true;
}

// Phase-1 simplex for {x >= 0, A x = b}; returns a feasible x or nullopt.
std::optional<std::vector<double>> lp_feasible(std::vector<std::vector<double>> A,
                                               std::vector<double> b) {
  const std::size_t m = A.size();
  if (m == 0) return std::vector<double>{};
  const std::size_t n = A[0].size();
  for (std::size_t i = 0; i < m; ++i)
    if (b[i] < 0) {
      for (auto& v : A[i]) v = -v;
      b[i] = -b[i];
    }

  // Tableau over n structural + m artificial variables.
  const std::size_t cols = n + m;
  std::vector<std::vector<double>> T(m, std::vector<double>(cols + 1, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) T[i][j] = A[i][j];
    T[i][n + i] = 1.0;
    T[i][cols] = b[i];
    basis[i] = n + i;
  }
  // Objective: minimize sum of artificials. Reduced costs row.
  std::vector<double> z(cols + 1, 0.0);
  for (std::size_t j = 0; j < cols + 1; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += T[i][j];
    z[j] = (j >= n && j < cols) ? s - 1.0 : s;
  }

  for (int iter = 0; iter < 10000; ++iter) {
    // Bland's rule: first column with positive reduced cost.
    std::size_t pivot_col = cols;
    for (std::size_t j = 0; j < cols; ++j)
      if (z[j] > 1e-11) {
        pivot_col = j;
        break;
      }
    if (pivot_col == cols) break;
    std::size_t pivot_row = m;
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (T[i][pivot_col] > 1e-11) {
        double ratio = T[i][cols] / T[i][pivot_col];
        if (pivot_row == m || ratio < best - 1e-14 ||
            (std::abs(ratio - best) <= 1e-14 && basis[i] > basis[pivot_row])) {
          pivot_row = i;
          best = ratio;
        }
      }
    if (pivot_row == m) break;  // unbounded direction (should not happen here)
    double pv = T[pivot_row][pivot_col];
    for (auto& v : T[pivot_row]) v /= pv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == pivot_row) continue;
      double f = T[i][pivot_col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < cols + 1; ++j) T[i][j] -= f * T[pivot_row][j];
    }
    double f = z[pivot_col];
    for (std::size_t j = 0; j < cols + 1; ++j) z[j] -= f * T[pivot_row][j];
    basis[pivot_row] = pivot_col;
  }

  double objective = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] >= n) objective += T[i][cols];
  if (objective > 1e-8) return std::nullopt;

  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] < n) x[basis[i]] = T[i][cols];
  return x;
}

}  // namespace

AttributionProblem build_attribution_problem(const EnergyTable& one_party,
                                             const EnergyTable& two_party) {
  validate_table(one_party, 1);
  validate_table(two_party, 2);
  AttributionProblem prob;
  prob.unit = detect_unit(one_party, two_party);
  const bool symmetric = tables_symmetric(two_party);

  // Marginal outcome probabilities of the two-party table must reproduce the
  // single-party ones (same initial state, compatible measurements).
  for (int party = 0; party < 2; ++party)
    for (const auto& srow : one_party.rows) {
      double marg = 0.0;
      for (const auto& jrow : two_party.rows)
        if (jrow.outcome[party] == srow.outcome[0]) marg += jrow.probability;
      if (std::abs(marg - srow.probability) > 1e-6)
        throw std::invalid_argument(
            "attribution: joint outcome marginals do not match the one-party table");
    }

  for (const auto& jrow : two_party.rows) {
    if (jrow.probability <= kTol) continue;
    for (const auto& s : jrow.sharp) {
      if (s.probability <= kTol) continue;
      AttributionCell cell;
      cell.outcome = jrow.outcome;
      cell.delta_e = s.delta_e;
      cell.probability = s.probability;
      long m = std::lround(s.delta_e / prob.unit);
      bool pin = symmetric && jrow.outcome[0] == jrow.outcome[1] && m % 2 == 0;
      if (pin) {
        cell.splits = {{s.delta_e / 2.0, s.delta_e / 2.0}};
        cell.fixed = true;
      } else {
        for (long j = 0; j <= m; ++j)
          cell.splits.push_back({j * prob.unit, s.delta_e - j * prob.unit});
      }
      prob.cells.push_back(std::move(cell));
    }
  }

  // Share-value grid.
  long max_units = 0;
  for (const auto& c : prob.cells)
    max_units = std::max(max_units, std::lround(c.delta_e / prob.unit));

  for (int party = 0; party < 2; ++party) {
    for (const auto& srow : one_party.rows) {
      if (srow.probability <= kTol) continue;
      int local = srow.outcome[0];
      double plocal = srow.probability;
      for (long e_units = 0; e_units <= max_units; ++e_units) {
        double e = e_units * prob.unit;
        MarginalConstraint mc;
        mc.party = party == 0 ? 'A' : 'B';
        mc.local_outcome = local;
        mc.share_value = e;
        mc.required = 0.0;
        for (const auto& s : srow.sharp)
          if (std::abs(s.delta_e - e) < 1e-9) mc.required = s.probability;
        mc.forced_min = mc.forced_max = 0.0;

        for (const auto& jrow : two_party.rows) {
          if (jrow.probability <= kTol || jrow.outcome[party] != local) continue;
          CertTerm term;
          term.distant_outcome = {jrow.outcome[1 - party]};
          term.weight = jrow.probability / plocal;
          term.fixed = true;
          double fixed_sum = 0.0, free_max = 0.0;
          for (const auto& c : prob.cells) {
            if (c.outcome != jrow.outcome) continue;
            bool reachable = false;
            for (const auto& sp : c.splits) {
              double share = party == 0 ? sp.first : sp.second;
              if (std::abs(share - e) < 1e-9) reachable = true;
            }
            if (c.fixed) {
              double share = party == 0 ? c.splits[0].first : c.splits[0].second;
              if (std::abs(share - e) < 1e-9) fixed_sum += c.probability;
            } else {
              term.fixed = false;
              if (reachable) {
                free_max += c.probability;
                term.coefficients.push_back({c.delta_e, c.probability});
              }
            }
          }
          term.fixed_value = fixed_sum;
          term.min_value = fixed_sum;
          term.max_value = fixed_sum + free_max;
          mc.forced_min += term.weight * term.min_value;
          mc.forced_max += term.weight * term.max_value;
          mc.terms.push_back(std::move(term));
        }
        mc.violated = mc.required < mc.forced_min - 1e-8 ||
                      mc.required > mc.forced_max + 1e-8;
        prob.constraints.push_back(std::move(mc));
      }
    }
  }
  return prob;
}

AttributionReport attribution_feasibility(const EnergyTable& one_party,
                                          const EnergyTable& two_party) {
  AttributionReport report;
  report.problem = build_attribution_problem(one_party, two_party);
  const AttributionProblem& prob = report.problem;

  for (std::size_t i = 0; i < prob.constraints.size(); ++i)
    if (prob.constraints[i].violated) report.violated_constraints.push_back(i);

  // Mean-level warm-up: per local outcome, solve for the single free
  // outcome-group mean contribution when exactly one is unknown.
  // Symmetric outcomes are pinned to half the group mean.
  std::map<std::pair<int, int>, double> group_mean;  // cell-group total mean
  for (const auto& jrow : two_party.rows)
    if (jrow.probability > kTol)
      group_mean[{jrow.outcome[0], jrow.outcome[1]}] = jrow.mean_delta_e;

  for (int party = 0; party < 2; ++party) {
    for (const auto& srow : one_party.rows) {
      if (srow.probability <= kTol) continue;
      int local = srow.outcome[0];
      double rhs = srow.mean_delta_e;  // per the distant-independence ansatz
      double known = 0.0;
      std::vector<std::pair<int, int>> unknowns;
      double unknown_weight = 0.0;
      for (const auto& jrow : two_party.rows) {
        if (jrow.probability <= kTol || jrow.outcome[party] != local) continue;
        double w = jrow.probability / srow.probability;
        if (jrow.outcome[0] == jrow.outcome[1]) {
          known += w * jrow.mean_delta_e / 2.0;
        } else {
          unknowns.push_back({jrow.outcome[0], jrow.outcome[1]});
          unknown_weight = w;
        }
      }
      if (unknowns.size() == 1) {
        double share = (rhs - known) / unknown_weight;
        auto key = unknowns[0];
        auto& entry = report.mean_warmup[key];
        double total = group_mean[key];
        if (party == 0)
          entry = {share, total - share};
        else
          entry = {total - share, share};
      }
    }
  }

  // Joint feasibility over all free cells.
  std::vector<std::size_t> var_base;
  std::size_t nvars = 0;
  for (const auto& c : prob.cells) {
    var_base.push_back(nvars);
    if (!c.fixed) nvars += c.splits.size();
  }
  std::vector<std::vector<double>> A;
  std::vector<double> b;
  for (std::size_t ci = 0; ci < prob.cells.size(); ++ci) {
    if (prob.cells[ci].fixed) continue;
    std::vector<double> row(nvars, 0.0);
    for (std::size_t s = 0; s < prob.cells[ci].splits.size(); ++s)
      row[var_base[ci] + s] = 1.0;
    A.push_back(std::move(row));
    b.push_back(1.0);
  }
  for (const auto& mc : prob.constraints) {
    std::vector<double> row(nvars, 0.0);
    double rhs = mc.required;
    int party = mc.party == 'A' ? 0 : 1;
    for (const auto& term : mc.terms) {
      std::vector<int> joint = party == 0
          ? std::vector<int>{mc.local_outcome, term.distant_outcome[0]}
          : std::vector<int>{term.distant_outcome[0], mc.local_outcome};
      for (std::size_t ci = 0; ci < prob.cells.size(); ++ci) {
        const auto& c = prob.cells[ci];
        if (c.outcome != joint) continue;
        if (c.fixed) {
          double share = party == 0 ? c.splits[0].first : c.splits[0].second;
          if (std::abs(share - mc.share_value) < 1e-9)
            rhs -= term.weight * c.probability;
        } else {
          for (std::size_t s = 0; s < c.splits.size(); ++s) {
            double share = party == 0 ? c.splits[s].first : c.splits[s].second;
            if (std::abs(share - mc.share_value) < 1e-9)
              row[var_base[ci] + s] += term.weight * c.probability;
          }
        }
      }
    }
    A.push_back(std::move(row));
    b.push_back(rhs);
  }

  auto solution = report.violated_constraints.empty() ? lp_feasible(A, b)
                                                      : std::nullopt;
  report.verdict = solution ? Feasibility::kFeasible : Feasibility::kInfeasible;
  if (solution) {
    report.witness.resize(prob.cells.size());
    for (std::size_t ci = 0; ci < prob.cells.size(); ++ci) {
      if (prob.cells[ci].fixed) {
        report.witness[ci] = {1.0};
      } else {
        for (std::size_t s = 0; s < prob.cells[ci].splits.size(); ++s)
          report.witness[ci].push_back((*solution)[var_base[ci] + s]);
      }
    }
  }

  std::ostringstream os;
  os << (report.verdict == Feasibility::kFeasible ? "FEASIBLE" : "INFEASIBLE") << "\n";
  for (std::size_t i : report.violated_constraints) {
    const auto& mc = prob.constraints[i];
    os << "violated: prob(dE_" << static_cast<char>(std::tolower(mc.party)) << "="
       << fmt_g(mc.share_value) << "|" << static_cast<char>(std::tolower(mc.party))
       << "=" << mc.local_outcome << ") = " << fmt_g(mc.required) << " but forced to [";
    os << fmt_g(mc.forced_min) << ", " << fmt_g(mc.forced_max) << "]; terms:";
    for (const auto& t : mc.terms) {
      os << " (distant=" << t.distant_outcome[0] << " weight=" << fmt_g(t.weight);
      if (t.fixed)
        os << " fixed=" << fmt_g(t.fixed_value) << ")";
      else
        os << " range=[" << fmt_g(t.min_value) << "," << fmt_g(t.max_value) << "])";
    }
    os << "\n";
  }
  for (const auto& [key, val] : report.mean_warmup)
    os << "mean warm-up (" << key.first << "," << key.second
       << "): share_A=" << fmt_g(val.first) << " share_B=" << fmt_g(val.second) << "\n";
  report.summary = os.str();
  return report;
}

}  // namespace qclock::projective
