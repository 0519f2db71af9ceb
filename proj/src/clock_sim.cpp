#include "qclock/clock_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "qclock/spin_chain.hpp"

namespace qclock::clock_sim {

namespace {

constexpr double kPi = std::numbers::pi;
const cdouble kI(0.0, 1.0);

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// One forward in-place FFT of length n on buf (unnormalized).
void fft_inplace(VectorXcd& buf, int sign) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(buf.size()),
                            reinterpret_cast<fftw_complex*>(buf.data()),
                            reinterpret_cast<fftw_complex*>(buf.data()), sign,
                            FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
}

}  // namespace

ClockLattice::ClockLattice(long n_, double dx_, double origin_)
    : n(n_), dx(dx_), origin(origin_) {
  if (n < 16) throw std::invalid_argument("ClockLattice: need at least 16 sites");
  if (dx <= 0) throw std::invalid_argument("ClockLattice: dx must be positive");
}

int AutonomousScenario::n_clocks() const {
  return (system == SystemType::kSingleSpinTwoPointers || system == SystemType::kChain3)
             ? 2
             : 1;
}

int AutonomousScenario::n_pointers() const { return n_clocks(); }

long SimState::size() const {
  long s = block();
  for (int c = 0; c < n_clocks; ++c) s *= n;
  return s;
}

AutonomousScenario standard_scenario(const ScenarioRequest& req) {
  AutonomousScenario s;
  s.system = req.system;
  s.omega = req.omega;
  s.E0 = req.E0;
  s.theta = req.theta;
  s.substeps_per_dx = req.substeps_per_dx;
  s.shift_mode = req.shift_mode;
  s.alice_coupled = req.alice_coupled;
  s.bob_coupled = req.bob_coupled;

  const int nclk = s.n_clocks();
  double width = req.delta;
  if (req.joint_widths)
    width = std::max(req.joint_widths->first, req.joint_widths->second);
  const double pad = 5.0 * width;

  // Fixed point for the profile width (default 4*dx) vs the lattice pitch.
  double dx = 0.0, w = req.profile_half_width, xi = 0.0, yi = 0.0, T = 0.0;
  for (int pass = 0; pass < 4; ++pass) {
    double wp = (req.profile_half_width > 0.0) ? req.profile_half_width
                                               : 4.0 * (dx > 0 ? dx : width / 8.0);
    double offset = req.offset;
    if (req.sequential)
      offset = std::max(offset, 8.0 * width + 2.0 * wp + 2.0 * width);
    xi = pad + wp;
    yi = nclk == 2 ? xi + offset : xi;
    T = std::max(xi, yi) + pad + wp;
    double lo = -std::max(xi, yi) - pad;
    double hi = T - xi + pad;
    double need = (hi - lo) * 1.03;
    dx = need / static_cast<double>(req.n - 4);
    w = wp;
  }
  // Snap positions to lattice pitch so packets start exactly on sites.
  auto snap = [&](double v) { return std::round(v / dx) * dx; };
  xi = snap(xi);
  yi = snap(yi);
  long left_sites = static_cast<long>(std::ceil((std::max(xi, yi) + pad) / dx)) + 2;
  double origin = -static_cast<double>(left_sites) * dx;

  s.lattice = ClockLattice(req.n, dx, origin);
  s.profile.half_width = w;
  s.profile.shape = ProfileShape::kGaussianBump;

  double steps = std::ceil(T / s.dt());
  s.total_time = steps * s.dt();
  if (s.total_time - xi + pad > origin + s.lattice.length())
    throw std::logic_error("standard_scenario: lattice sizing failed");

  if (req.joint_widths) {
    JointGaussian g;
    g.center_x = -xi;
    g.center_y = -yi;
    g.delta_plus = req.joint_widths->first;
    g.delta_minus = req.joint_widths->second;
    g.px = g.py = req.p0;
    s.joint_clocks = g;
  } else {
    s.clocks.push_back(WavePacket{-xi, req.p0, req.delta, 1.0});
    if (nclk == 2) s.clocks.push_back(WavePacket{-yi, req.p0, req.delta, 1.0});
  }
  s.checkpoint_every = std::max<int>(1, static_cast<int>(steps) / 16);
  return s;
}

namespace {

void validate_scenario(const AutonomousScenario& s) {
  if (s.lattice.n < 16) throw std::invalid_argument("scenario: lattice too small");
  const int nclk = s.n_clocks();
  if (s.joint_clocks) {
    if (nclk != 2)
      throw std::invalid_argument("scenario: joint clocks need a two-clock system");
  } else if (static_cast<int>(s.clocks.size()) != nclk) {
    throw std::invalid_argument("scenario: clock count mismatch");
  }
  for (const auto& p : s.clocks)
    if (4.0 * p.width > s.lattice.length())
      throw std::invalid_argument("scenario: packet too wide for the lattice");
  if (s.shift_mode == ShiftMode::kExactPermutation && s.substeps_per_dx != 1)
    throw std::invalid_argument(
        "scenario: exact-shift mode requires dt = dx (substeps_per_dx = 1)");
  if (s.substeps_per_dx < 1)
    throw std::invalid_argument("scenario: substeps_per_dx must be >= 1");
}

VectorXd sample_profile(const CouplingProfile& profile, const ClockLattice& lat,
                        long& lo, long& hi) {
  double w = profile.half_width > 0 ? profile.half_width : 4.0 * lat.dx;
  lo = -1;
  hi = -2;
  VectorXd g = VectorXd::Zero(lat.n);
  double raw_sum = 0.0;
  for (long i = 0; i < lat.n; ++i) {
    double x = lat.pos(i);
    if (std::abs(x) > w + 1e-12) continue;
    double v;
    if (profile.shape == ProfileShape::kGaussianBump) {
      double sigma = w / 3.0;
      v = std::exp(-x * x / (2.0 * sigma * sigma));
    } else {
      v = 1.0;
    }
    if (lo < 0) lo = i;
    hi = i;
    g[i] = v;
    raw_sum += v;
  }
  if (hi < lo)
    throw std::invalid_argument("coupling profile: no lattice site inside the support");
  g *= (kPi / 2.0) / (raw_sum * lat.dx);  // lattice quadrature = pi/2 exactly
  return g;
}

MatrixXcd theta_projector(double theta) {
  Eigen::Vector2cd ket;
  ket << std::cos(theta), std::sin(theta);
  return ket * ket.adjoint();
}

}  // namespace

StructuredHamiltonian build_hamiltonian(const AutonomousScenario& s) {
  validate_scenario(s);
  StructuredHamiltonian h;
  const bool chain = s.system == SystemType::kChain3;

  if (chain) {
    auto sys = spin_chain::chain3_eigensystem(s.E0);
    h.sys_basis = sys.eigenvectors;
    h.sys_energies = sys.eigenvalues;
  } else {
    h.sys_basis = MatrixXcd::Identity(2, 2);
    h.sys_energies.resize(2);
    h.sys_energies << s.omega, -s.omega;
  }

  long lo, hi;
  VectorXd g = sample_profile(s.profile, s.lattice, lo, hi);

  auto add_interaction = [&](const MatrixXcd& proj_comp, int pointer, int clock) {
    StructuredHamiltonian::Interaction in;
    in.projector = h.sys_basis.adjoint() * proj_comp * h.sys_basis;
    in.pointer = pointer;
    in.clock = clock;
    in.g = g;
    in.support_lo = lo;
    in.support_hi = hi;
    h.interactions.push_back(std::move(in));
  };

  switch (s.system) {
    case SystemType::kSingleSpinEnergyBasis:
      if (s.alice_coupled) add_interaction(spin_chain::projector_up(), 0, 0);
      break;
    case SystemType::kSingleSpinTheta:
      if (s.alice_coupled) add_interaction(theta_projector(s.theta), 0, 0);
      break;
    case SystemType::kSingleSpinTwoPointers: {
      MatrixXcd p = theta_projector(s.theta);
      if (s.alice_coupled) add_interaction(p, 0, 0);
      if (s.bob_coupled) add_interaction(p, 1, 1);
      break;
    }
    case SystemType::kChain3: {
      // P_up on spin 1 (A) and spin 3 (B), embedded in the 8-dim chain space.
      MatrixXcd pa = MatrixXcd::Zero(8, 8), pb = MatrixXcd::Zero(8, 8);
      for (int i = 0; i < 8; ++i) {
        if ((i & 4) == 0) pa(i, i) = 1.0;  // spin 1 = most significant bit
        if ((i & 1) == 0) pb(i, i) = 1.0;  // spin 3 = least significant bit
      }
      if (s.alice_coupled) add_interaction(pa, 0, 0);
      if (s.bob_coupled) add_interaction(pb, 1, 1);
      break;
    }
  }
  return h;
}

SimState initial_state(const AutonomousScenario& s) {
  StructuredHamiltonian h = build_hamiltonian(s);
  SimState st;
  st.n_sys = h.sys_basis.rows();
  st.n_pointers = s.n_pointers();
  st.n_clocks = s.n_clocks();
  st.n = s.lattice.n;
  st.data = VectorXcd::Zero(st.size());

  VectorXcd sys0;
  if (s.initial_system.size() == 0) {
    if (s.system == SystemType::kChain3) {
      sys0 = VectorXcd::Zero(8);
      sys0[0] = 1.0;  // phi_m1 in the working (eigen) basis
    } else {
      sys0 = VectorXcd::Zero(2);
      sys0[1] = 1.0;  // spin down
    }
  } else {
    if (s.initial_system.size() != st.n_sys)
      throw std::invalid_argument("initial_state: system ket has wrong dimension");
    sys0 = h.sys_basis.adjoint() * s.initial_system;  // to the working basis
  }

  const long B = st.block(), ns = st.n_sys;
  const double wq = std::pow(s.lattice.dx, 0.5 * st.n_clocks);
  if (st.n_clocks == 1) {
    const WavePacket& p = s.clocks[0];
    for (long i = 0; i < st.n; ++i) {
      cdouble v = p.value(s.lattice.pos(i)) * wq;
      for (long k = 0; k < ns; ++k) st.data[i * B + k] = v * sys0[k];
    }
  } else {
    for (long i = 0; i < st.n; ++i) {
      double x = s.lattice.pos(i);
      for (long j = 0; j < st.n; ++j) {
        double y = s.lattice.pos(j);
        cdouble v;
        if (s.joint_clocks)
          v = s.joint_clocks->value(x, y);
        else
          v = s.clocks[0].value(x) * s.clocks[1].value(y);
        v *= wq;
        if (std::abs(v) < 1e-300) continue;
        long base = (i * st.n + j) * B;
        for (long k = 0; k < ns; ++k) st.data[base + k] = v * sys0[k];
      }
    }
  }
  st.data /= st.data.norm();
  return st;
}

namespace {

// exp(-i angle P (x) sigma_x) on the (system, pointer) factor, applied to all
// blocks at one clock site (or site range).
void apply_projector_rotation(SimState& st, const MatrixXcd& proj, int pointer,
                              double angle, long block_base) {
  const long ns = st.n_sys;
  const long pstride = ns << (st.n_pointers - 1 - pointer);
  const long ncombo = 1L << st.n_pointers;
  const double c = std::cos(angle) - 1.0;
  const cdouble ms = -kI * std::sin(angle);

  static thread_local VectorXcd px0, px1;
  px0.resize(ns);
  px1.resize(ns);

  for (long combo = 0; combo < ncombo; ++combo) {
    if ((combo >> (st.n_pointers - 1 - pointer)) & 1) continue;
    cdouble* x0 = st.data.data() + block_base + combo * ns;
    cdouble* x1 = x0 + pstride;
    Eigen::Map<VectorXcd> v0(x0, ns), v1(x1, ns);
    px0.noalias() = proj * v0;
    px1.noalias() = proj * v1;
    v0 += c * px0 + ms * px1;
    v1 += c * px1 + ms * px0;
  }
}

void apply_interaction(SimState& st, const StructuredHamiltonian::Interaction& in,
                       double dt_half) {
  const long B = st.block(), N = st.n;
  for (long site = in.support_lo; site <= in.support_hi; ++site) {
    double angle = dt_half * in.g[site];
    if (angle == 0.0) continue;
    if (st.n_clocks == 1) {
      apply_projector_rotation(st, in.projector, in.pointer, angle, site * B);
    } else if (in.clock == 0) {
      for (long j = 0; j < N; ++j)
        apply_projector_rotation(st, in.projector, in.pointer, angle,
                                 (site * N + j) * B);
    } else {
      for (long i = 0; i < N; ++i)
        apply_projector_rotation(st, in.projector, in.pointer, angle,
                                 (i * N + site) * B);
    }
  }
}

void shift_exact(SimState& st, int clock) {
  const long B = st.block(), N = st.n;
  cdouble* d = st.data.data();
  if (st.n_clocks == 1) {
    std::rotate(d, d + (N - 1) * B, d + N * B);
  } else if (clock == 0) {
    const long row = N * B;
    std::rotate(d, d + (N - 1) * row, d + N * row);
  } else {
    const long row = N * B;
    for (long i = 0; i < N; ++i)
      std::rotate(d + i * row, d + i * row + (N - 1) * B, d + (i + 1) * row);
  }
}

void shift_spectral(SimState& st, const ClockLattice& lat, int clock, double dt) {
  const long B = st.block(), N = st.n;
  // Phase table e^{-i k dt} over FFT bins.
  VectorXcd phase(N);
  for (long k = 0; k < N; ++k)
    phase[k] = std::exp(-kI * momentum_of_bin(lat, k) * dt);

  const long stride = (st.n_clocks == 2 && clock == 0) ? N * B : B;
  const long nrows = st.data.size() / N;
  VectorXcd buf(N);
  for (long r = 0; r < nrows; ++r) {
    // Decompose the row id into the non-transformed axes.
    long base;
    if (st.n_clocks == 1 || clock == 0) {
      base = (r / B) * B * (st.n_clocks == 1 ? 1 : 1);
      base = (r % B) + (r / B) * B * 1;  // rows enumerate (other clock x block)
    }
    // Generic: compute base from row index given the transformed axis stride.
    long inner = r % (stride / 1);
    long outer = r / stride;
    base = outer * stride * N + inner;
    for (long k = 0; k < N; ++k) buf[k] = st.data[base + k * stride];
    fft_inplace(buf, FFTW_FORWARD);
    buf.array() *= phase.array();
    fft_inplace(buf, FFTW_BACKWARD);
    buf /= static_cast<double>(N);
    for (long k = 0; k < N; ++k) st.data[base + k * stride] = buf[k];
  }
}

void apply_sys_phases(SimState& st, const VectorXcd& block_phase) {
  const long B = st.block();
  const long nblocks = st.data.size() / B;
  for (long b = 0; b < nblocks; ++b)
    st.data.segment(b * B, B).array() *= block_phase.array();
}

double interaction_energy(const SimState& st,
                          const StructuredHamiltonian::Interaction& in,
                          const ClockLattice&) {
  const long B = st.block(), N = st.n, ns = st.n_sys;
  const long pstride = ns << (st.n_pointers - 1 - in.pointer);
  const long ncombo = 1L << st.n_pointers;
  double total = 0.0;
  VectorXcd px(ns);
  auto accumulate = [&](long base, double g) {
    double val = 0.0;
    for (long combo = 0; combo < ncombo; ++combo) {
      if ((combo >> (st.n_pointers - 1 - in.pointer)) & 1) continue;
      const cdouble* x0 = st.data.data() + base + combo * ns;
      const cdouble* x1 = x0 + pstride;
      Eigen::Map<const VectorXcd> v0(x0, ns), v1(x1, ns);
      px.noalias() = in.projector * v1;
      val += 2.0 * (v0.dot(px)).real();  // <v0|P|v1> + cc
    }
    total += g * val;
  };
  for (long site = in.support_lo; site <= in.support_hi; ++site) {
    double g = in.g[site];
    if (g == 0.0) continue;
    if (st.n_clocks == 1) {
      accumulate(site * B, g);
    } else if (in.clock == 0) {
      for (long j = 0; j < N; ++j) accumulate((site * N + j) * B, g);
    } else {
      for (long i = 0; i < N; ++i) accumulate((i * N + site) * B, g);
    }
  }
  return total;
}

Checkpoint make_checkpoint(const SimState& st, const StructuredHamiltonian& h,
                           const AutonomousScenario& s, double t) {
  Checkpoint cp;
  cp.t = t;
  cp.norm = st.norm();

  const long B = st.block(), ns = st.n_sys;
  VectorXd sys_weight = VectorXd::Zero(ns);
  const long nblocks = st.data.size() / B;
  for (long b = 0; b < nblocks; ++b)
    for (long p = 0; p < B / ns; ++p)
      for (long k = 0; k < ns; ++k)
        sys_weight[k] += std::norm(st.data[b * B + p * ns + k]);
  cp.e_system = h.sys_energies.dot(sys_weight);

  double p_sum = 0.0;
  for (int c = 0; c < st.n_clocks; ++c) {
    cp.p_clock[c] = mean_momentum(st, s.lattice, c);
    p_sum += cp.p_clock[c];
  }
  cp.e_interaction = 0.0;
  for (const auto& in : h.interactions)
    cp.e_interaction += interaction_energy(st, in, s.lattice);
  cp.e_total = cp.e_system + p_sum + cp.e_interaction;
  return cp;
}

}  // namespace

Trajectory evolve(const AutonomousScenario& s) { return evolve(s, initial_state(s)); }

Trajectory evolve(const AutonomousScenario& s, SimState st) {
  validate_scenario(s);
  StructuredHamiltonian h = build_hamiltonian(s);
  const double dt = s.dt();
  const long steps = std::lround(s.total_time / dt);

  VectorXcd block_phase(st.block());
  {
    const long ns = st.n_sys;
    for (long p = 0; p < st.block() / ns; ++p)
      for (long k = 0; k < ns; ++k)
        block_phase[p * ns + k] = std::exp(-kI * h.sys_energies[k] * dt);
  }

  Trajectory traj;
  traj.scenario = s;
  traj.checkpoints.push_back(make_checkpoint(st, h, s, 0.0));

  for (long step = 0; step < steps; ++step) {
    for (const auto& in : h.interactions) apply_interaction(st, in, 0.5 * dt);
    if (s.shift_mode == ShiftMode::kExactPermutation) {
      for (int c = 0; c < st.n_clocks; ++c) shift_exact(st, c);
    } else {
      for (int c = 0; c < st.n_clocks; ++c) shift_spectral(st, s.lattice, c, dt);
    }
    apply_sys_phases(st, block_phase);
    for (const auto& in : h.interactions) apply_interaction(st, in, 0.5 * dt);

    if ((step + 1) % s.checkpoint_every == 0 || step + 1 == steps)
      traj.checkpoints.push_back(make_checkpoint(st, h, s, (step + 1) * dt));
  }
  traj.final_state = std::move(st);
  return traj;
}

double momentum_of_bin(const ClockLattice& lat, long k) {
  long signed_k = k <= lat.n / 2 ? k : k - lat.n;
  return 2.0 * kPi * static_cast<double>(signed_k) / lat.length();
}

std::vector<double> momentum_distribution(const SimState& st, const ClockLattice& lat,
                                          int clock) {
  if (clock < 0 || clock >= st.n_clocks)
    throw std::invalid_argument("momentum_distribution: no such clock");
  const long B = st.block(), N = st.n;
  const long stride = (st.n_clocks == 2 && clock == 0) ? N * B : B;
  const long nrows = st.data.size() / N;
  std::vector<double> dist(N, 0.0);
  VectorXcd buf(N);
  for (long r = 0; r < nrows; ++r) {
    long inner = r % stride;
    long outer = r / stride;
    long base = outer * stride * N + inner;
    for (long k = 0; k < N; ++k) buf[k] = st.data[base + k * stride];
    fft_inplace(buf, FFTW_FORWARD);
    for (long k = 0; k < N; ++k) dist[k] += std::norm(buf[k]);
  }
  double inv = 1.0 / static_cast<double>(N);
  for (auto& v : dist) v *= inv;
  return dist;
}

double mean_momentum(const SimState& st, const ClockLattice& lat, int clock) {
  auto dist = momentum_distribution(st, lat, clock);
  double mean = 0.0;
  for (long k = 0; k < st.n; ++k) mean += momentum_of_bin(lat, k) * dist[k];
  return mean;
}

namespace {
std::vector<double> position_marginal(const SimState& st, int clock) {
  const long B = st.block(), N = st.n;
  const long stride = (st.n_clocks == 2 && clock == 0) ? N * B : B;
  std::vector<double> marg(N, 0.0);
  const long nrows = st.data.size() / N;
  for (long r = 0; r < nrows; ++r) {
    long inner = r % stride;
    long outer = r / stride;
    long base = outer * stride * N + inner;
    for (long k = 0; k < N; ++k) marg[k] += std::norm(st.data[base + k * stride]);
  }
  return marg;
}
}  // namespace

double mean_position(const SimState& st, const ClockLattice& lat, int clock) {
  auto marg = position_marginal(st, clock);
  double mean = 0.0;
  for (long i = 0; i < st.n; ++i) mean += lat.pos(i) * marg[i];
  return mean;
}

double position_variance(const SimState& st, const ClockLattice& lat, int clock) {
  auto marg = position_marginal(st, clock);
  double mean = 0.0, sq = 0.0;
  for (long i = 0; i < st.n; ++i) {
    mean += lat.pos(i) * marg[i];
    sq += lat.pos(i) * lat.pos(i) * marg[i];
  }
  return sq - mean * mean;
}

double momentum_mass(const std::vector<double>& dist, const ClockLattice& lat,
                     double center, double half_window) {
  const double period = 2.0 * kPi / lat.dx;
  double mass = 0.0;
  for (long k = 0; k < static_cast<long>(dist.size()); ++k) {
    double d = std::fmod(std::abs(momentum_of_bin(lat, k) - center), period);
    d = std::min(d, period - d);
    if (d <= half_window) mass += dist[k];
  }
  return mass;
}

std::vector<PointerOutcome> measure_pointers(const SimState& st,
                                             std::span<const int> pointers) {
  for (int p : pointers)
    if (p < 0 || p >= st.n_pointers)
      throw std::invalid_argument("measure_pointers: no such pointer");
  const int k = static_cast<int>(pointers.size());
  const long B = st.block(), ns = st.n_sys;
  std::vector<PointerOutcome> out(1 << k);
  for (int key = 0; key < (1 << k); ++key) {
    out[key].outcome.resize(k);
    for (int i = 0; i < k; ++i) out[key].outcome[i] = (key >> (k - 1 - i)) & 1;
    out[key].conditional = st;
    out[key].conditional.data.setZero();
  }
  const long nblocks = st.data.size() / B;
  for (long b = 0; b < nblocks; ++b)
    for (long combo = 0; combo < B / ns; ++combo) {
      int key = 0;
      for (int i = 0; i < k; ++i)
        key = (key << 1) | static_cast<int>(
                  (combo >> (st.n_pointers - 1 - pointers[i])) & 1);
      long off = b * B + combo * ns;
      out[key].conditional.data.segment(off, ns) = st.data.segment(off, ns);
    }
  for (auto& o : out) o.probability = o.conditional.data.squaredNorm();
  return out;
}

std::vector<PointerOutcome> measure_pointers(const SimState& st,
                                             std::initializer_list<int> pointers) {
  std::vector<int> p(pointers);
  return measure_pointers(st, std::span<const int>(p));
}

namespace {

struct AxisInfo {
  std::vector<long> dims;
  std::vector<long> strides;
};

AxisInfo axes_of(const SimState& st) {
  AxisInfo a;
  const long ns = st.n_sys;
  // clocks..., pointers..., sys
  if (st.n_clocks == 2) {
    a.dims = {st.n, st.n};
    a.strides = {st.n * st.block(), st.block()};
  } else {
    a.dims = {st.n};
    a.strides = {st.block()};
  }
  for (int i = 0; i < st.n_pointers; ++i) {
    a.dims.push_back(2);
    a.strides.push_back(ns << (st.n_pointers - 1 - i));
  }
  a.dims.push_back(ns);
  a.strides.push_back(1);
  return a;
}

}  // namespace

MatrixXcd reduced_density(const SimState& st, std::span<const int> keep) {
  AxisInfo axes = axes_of(st);
  const int naxes = static_cast<int>(axes.dims.size());
  std::vector<int> traced;
  for (int i = 0; i < naxes; ++i)
    if (std::find(keep.begin(), keep.end(), i) == keep.end()) traced.push_back(i);
  for (int kx : keep)
    if (kx < 0 || kx >= naxes) throw std::invalid_argument("reduced_density: bad axis");

  long dkeep = 1, dtr = 1;
  for (int kx : keep) dkeep *= axes.dims[kx];
  for (int tx : traced) dtr *= axes.dims[tx];

  auto offsets = [&](std::span<const int> list, long count) {
    std::vector<long> off(count, 0);
    std::vector<long> idx(list.size(), 0);
    for (long f = 0; f < count; ++f) {
      long o = 0;
      for (std::size_t i = 0; i < list.size(); ++i) o += idx[i] * axes.strides[list[i]];
      off[f] = o;
      for (std::size_t i = list.size(); i-- > 0;) {
        if (++idx[i] < axes.dims[list[i]]) break;
        idx[i] = 0;
      }
    }
    return off;
  };
  std::vector<long> keep_off = offsets(keep, dkeep);
  std::vector<long> tr_off = offsets(traced, dtr);

  MatrixXcd K(dkeep, dtr);
  for (long t = 0; t < dtr; ++t)
    for (long kx = 0; kx < dkeep; ++kx) K(kx, t) = st.data[keep_off[kx] + tr_off[t]];
  MatrixXcd rho;
  rho.noalias() = K * K.adjoint();
  return rho;
}

MatrixXcd reduced_density(const SimState& st, std::initializer_list<int> keep) {
  std::vector<int> k(keep);
  return reduced_density(st, std::span<const int>(k));
}

double purity(const MatrixXcd& rho) {
  double tr = rho.trace().real();
  double tr2 = (rho * rho).trace().real();
  return tr2 / (tr * tr);
}

StateVector to_state_vector(const SimState& st, const StructuredHamiltonian& h,
                            const ClockLattice& lat) {
  const long ns = st.n_sys, B = st.block();
  std::vector<long> dims;
  if (st.n_sys == 8) {
    dims = {2, 2, 2};
  } else {
    dims = {2};
  }
  for (int i = 0; i < st.n_pointers; ++i) dims.push_back(2);
  for (int c = 0; c < st.n_clocks; ++c) dims.push_back(lat.n);
  SubsystemShape shape(dims);

  VectorXcd out = VectorXcd::Zero(shape.total());
  const long nclk_block = st.data.size() / B;
  const long nptr = B / ns;
  for (long cb = 0; cb < nclk_block; ++cb)
    for (long p = 0; p < nptr; ++p) {
      VectorXcd sys_comp = h.sys_basis * st.data.segment(cb * B + p * ns, ns);
      for (long c = 0; c < ns; ++c)
        out[(c * nptr + p) * nclk_block + cb] = sys_comp[c];
    }
  return StateVector(shape, std::move(out));
}

SimState oracle_state(const AutonomousScenario& s,
                      const wavepacket::BranchExpansion& b) {
  SimState st;
  st.n_sys = (s.system == SystemType::kChain3) ? 8 : 2;
  st.n_pointers = s.n_pointers();
  st.n_clocks = s.n_clocks();
  st.n = s.lattice.n;
  st.data = VectorXcd::Zero(st.size());
  const long B = st.block(), ns = st.n_sys;
  const double wq = std::pow(s.lattice.dx, 0.5 * st.n_clocks);

  for (const auto& term : b.terms) {
    long combo = 0;
    for (int i = 0; i < st.n_pointers; ++i)
      combo = combo * 2 + term.pointer_labels[i];
    long off = combo * ns + term.system_label;
    if (st.n_clocks == 1) {
      for (long i = 0; i < st.n; ++i) {
        double x = s.lattice.pos(i);
        cdouble v = term.packets[0].value(x);
        if (term.field.kx != 0.0) v *= std::exp(kI * term.field.kx * x);
        st.data[i * B + off] += term.coeff * v * wq;
      }
    } else {
      for (long i = 0; i < st.n; ++i) {
        double x = s.lattice.pos(i);
        cdouble ax = term.joint ? cdouble(1.0) : term.packets[0].value(x);
        if (!term.joint && std::abs(ax) < 1e-200) continue;
        for (long j = 0; j < st.n; ++j) {
          double y = s.lattice.pos(j);
          cdouble v = term.joint ? term.joint->value(x, y)
                                 : ax * term.packets[1].value(y);
          v *= term.field.value(x, y);
          st.data[(i * st.n + j) * B + off] += term.coeff * v * wq;
        }
      }
    }
  }
  return st;
}

cdouble inner(const SimState& a, const SimState& b) {
  if (a.data.size() != b.data.size())
    throw std::invalid_argument("inner: state size mismatch");
  return a.data.adjoint() * b.data;
}

double fidelity(const SimState& a, const SimState& b) { return std::norm(inner(a, b)); }

std::map<std::pair<int, long>, double> sector_weights(const SimState& st) {
  std::map<std::pair<int, long>, double> w;
  const long B = st.block(), ns = st.n_sys;
  const long nblocks = st.data.size() / B;
  for (long b = 0; b < nblocks; ++b)
    for (long p = 0; p < B / ns; ++p)
      for (long k = 0; k < ns; ++k) {
        double v = std::norm(st.data[b * B + p * ns + k]);
        if (v != 0.0) w[{static_cast<int>(k), p}] += v;
      }
  return w;
}

VectorXcd vonneumann_reference(const VectorXcd& spin_state, std::optional<double> theta,
                               double pulse_integral) {
  if (spin_state.size() != 2)
    throw std::invalid_argument("vonneumann_reference: spin ket must be 2-dim");
  if (std::abs(pulse_integral - kPi / 2.0) > 1e-9)
    throw std::invalid_argument("vonneumann_reference: pulse integral must be pi/2");
  MatrixXcd proj = theta ? theta_projector(*theta) : spin_chain::projector_up();
  MatrixXcd u = MatrixXcd::Identity(4, 4);
  MatrixXcd sx = spin_chain::sigma_x();
  // exp(-i a P x sx) = 1 + (cos a - 1) P x 1 - i sin a P x sx
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          u(2 * i + k, 2 * j + l) +=
              (std::cos(pulse_integral) - 1.0) * proj(i, j) * (k == l ? 1.0 : 0.0) -
              kI * std::sin(pulse_integral) * proj(i, j) * sx(k, l);
        }
  VectorXcd in = VectorXcd::Zero(4);
  in[0] = spin_state[0];  // pointer starts in |0>
  in[2] = spin_state[1];
  return u * in;
}

wavepacket::BranchExpansion oracle_expansion(const AutonomousScenario& s) {
  using namespace wavepacket;
  const double T = s.total_time;
  switch (s.system) {
    case SystemType::kSingleSpinEnergyBasis: {
      if (!s.alice_coupled)
        throw std::invalid_argument("oracle_expansion: coupling disabled");
      cdouble cu = 1.0, cd = 0.0;
      if (s.initial_system.size() == 2) {
        cu = s.initial_system[0];
        cd = s.initial_system[1];
      } else {
        cu = 0.0;
        cd = 1.0;
      }
      WavePacket moved = s.clocks[0];
      moved.x0 += T;
      BranchExpansion b;
      b.system = SystemKind::kSingleSpinZ;
      b.n_pointers = 1;
      b.n_clocks = 1;
      if (std::abs(cu) > 0)
        b.terms.push_back({cu * kFlipPhase * std::exp(-kI * s.omega * T), 0, {1},
                           {moved}, {}, {}, +s.omega});
      if (std::abs(cd) > 0)
        b.terms.push_back({cd * std::exp(kI * s.omega * T), 1, {0}, {moved}, {},
                           {}, -s.omega});
      return b;
    }
    case SystemType::kSingleSpinTheta: {
      if (!s.alice_coupled)
        throw std::invalid_argument("oracle_expansion: coupling disabled");
      if (s.initial_system.size() == 2 &&
          (std::abs(s.initial_system[0]) > 1e-12 ||
           std::abs(s.initial_system[1] - 1.0) > 1e-12))
        throw std::invalid_argument("oracle_expansion: theta oracle assumes spin down");
      return single_spin_theta_final(s.theta, s.omega, s.clocks[0], T);
    }
    case SystemType::kSingleSpinTwoPointers: {
      if (!s.alice_coupled || !s.bob_coupled)
        throw std::invalid_argument("oracle_expansion: both couplings required");
      ClockState clocks = s.joint_clocks
                              ? ClockState(*s.joint_clocks)
                              : ClockState(IndependentClocks{s.clocks[0], s.clocks[1]});
      return double_pointer_final(s.theta, s.omega, clocks, T);
    }
    case SystemType::kChain3: {
      if (!s.alice_coupled || !s.bob_coupled)
        throw std::invalid_argument("oracle_expansion: both couplings required");
      ClockState clocks = s.joint_clocks
                              ? ClockState(*s.joint_clocks)
                              : ClockState(IndependentClocks{s.clocks[0], s.clocks[1]});
      return chain3_final(s.E0, ClockConvention::kKickEqualsEnergyChange, clocks, T);
    }
  }
  throw std::logic_error("oracle_expansion: unreachable");
}

OracleDiff compare_with_oracle(const AutonomousScenario& s, const SimState& final_state) {
  wavepacket::BranchExpansion b = oracle_expansion(s);
  SimState oracle = oracle_state(s, b);
  OracleDiff diff;
  diff.sim_norm = final_state.norm();
  diff.oracle_norm = oracle.norm();
  diff.fidelity = fidelity(final_state, oracle);
  auto sw = sector_weights(final_state);
  auto ow = sector_weights(oracle);
  for (const auto& [key, v] : sw) diff.sectors[key].first = v;
  for (const auto& [key, v] : ow) diff.sectors[key].second = v;
  return diff;
}

}  // namespace qclock::clock_sim
