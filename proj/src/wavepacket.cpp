#include "qclock/wavepacket.hpp"

#include <cmath>
#include <numbers>

#include "qclock/spin_chain.hpp"
#include "json.hpp"

namespace qclock::wavepacket {

namespace {

constexpr double kPi = std::numbers::pi;
const cdouble kI(0.0, 1.0);

double sq(double x) { return x * x; }

WavePacket translated(WavePacket p, double t) {
  p.x0 += t;
  return p;
}

JointGaussian translated(JointGaussian g, double t) {
  g.center_x += t;
  g.center_y += t;
  return g;
}

void require_completed(double current_center, double width, const char* who) {
  if (current_center < 4.0 * width)
    throw std::domain_error(std::string(who) +
                            ": interaction not completed (packet still near the coupling region)");
}

}  // namespace

cdouble WavePacket::value(double x) const {
  double norm = std::pow(2.0 * kPi * width * width, -0.25);
  double d = x - x0;
  return amp * norm * std::exp(-d * d / (4.0 * width * width)) *
         std::exp(kI * p0 * d);
}

cdouble JointGaussian::value(double x, double y) const {
  double norm = 1.0 / std::sqrt(2.0 * kPi * delta_plus * delta_minus);
  double cp = center_x + center_y, cm = center_x - center_y;
  double ep = -sq(x + y - cp) / (8.0 * delta_plus * delta_plus);
  double em = -sq(x - y - cm) / (8.0 * delta_minus * delta_minus);
  return amp * norm * std::exp(ep + em) *
         std::exp(kI * (px * (x - center_x) + py * (y - center_y)));
}

cdouble PhaseField::value(double x, double y) const {
  if (trivial()) return 1.0;
  double mx = std::max(x, y), mn = std::min(x, y);
  return std::exp(kI * (kx * x + ky * y + kmax * mx + kmin * mn));
}

WavePacket momentum_kick(const WavePacket& packet, double kick) {
  WavePacket out = packet;
  out.p0 += kick;
  out.amp *= std::exp(kI * kick * packet.x0);
  return out;
}

BranchExpansion free_propagate(const BranchExpansion& b, double t) {
  BranchExpansion out = b;
  for (auto& term : out.terms) {
    for (auto& p : term.packets) p.x0 += t;
    if (term.joint) {
      term.joint->center_x += t;
      term.joint->center_y += t;
    }
    double field_rate = term.field.kx + term.field.ky + term.field.kmax + term.field.kmin;
    term.coeff *= std::exp(-kI * (term.energy + field_rate) * t);
  }
  return out;
}

cdouble packet_overlap(const WavePacket& a, const WavePacket& b) {
  // integral of conj(phi_a) phi_b via the complex Gaussian integral
  //   int exp(-q x^2 + l x + c) dx = sqrt(pi/q) exp(l^2/(4q) + c).
  double na = std::pow(2.0 * kPi * a.width * a.width, -0.25);
  double nb = std::pow(2.0 * kPi * b.width * b.width, -0.25);
  double qa = 1.0 / (4.0 * a.width * a.width);
  double qb = 1.0 / (4.0 * b.width * b.width);
  double q = qa + qb;
  cdouble l = 2.0 * qa * a.x0 + 2.0 * qb * b.x0 + kI * (b.p0 - a.p0);
  cdouble c = -qa * a.x0 * a.x0 - qb * b.x0 * b.x0 + kI * (a.p0 * a.x0 - b.p0 * b.x0);
  return std::conj(a.amp) * b.amp * na * nb * std::sqrt(kPi / q) *
         std::exp(l * l / (4.0 * q) + c);
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
}

namespace {

// Clock-factor description used by the pairwise quadrature, in the rotated
// coordinates u = (x-y)/sqrt2, v = (x+y)/sqrt2.
struct ClockFactor {
  const BranchTerm* term;
  double cu, cv;      // amplitude center
  double su, sv;      // amplitude decay widths along u and v
  double px_tot, py_tot;

  cdouble value(double x, double y) const {
    cdouble v;
    if (term->joint)
      v = term->joint->value(x, y);
    else
      v = term->packets[0].value(x) * term->packets[1].value(y);
    return v * term->field.value(x, y);
  }
};

ClockFactor make_factor(const BranchTerm& t) {
  const double s2 = std::sqrt(2.0);
  ClockFactor f;
  f.term = &t;
  if (t.joint) {
    f.cu = (t.joint->center_x - t.joint->center_y) / s2;
    f.cv = (t.joint->center_x + t.joint->center_y) / s2;
    f.su = t.joint->delta_minus;
    f.sv = t.joint->delta_plus;
    f.px_tot = t.joint->px;
    f.py_tot = t.joint->py;
  } else {
    f.cu = (t.packets[0].x0 - t.packets[1].x0) / s2;
    f.cv = (t.packets[0].x0 + t.packets[1].x0) / s2;
    f.su = f.sv = std::max(t.packets[0].width, t.packets[1].width);
    f.px_tot = t.packets[0].p0;
    f.py_tot = t.packets[1].p0;
  }
  return f;
}

int node_count(double cycles) {
  int n = 48 + static_cast<int>(std::ceil(8.0 * cycles));
  return std::min(std::max(n, 48), 700);
}

// integral over the plane of conj(f_a) f_b, in rotated coordinates
// u = (x-y)/sqrt2, v = (x+y)/sqrt2, with the u-axis split at the max/min kink.
cdouble pair_integral(const ClockFactor& a, const ClockFactor& b) {
  const double s2 = std::sqrt(2.0);
  double Ru = 8.0 * std::max(a.su, b.su) + 1e-9;
  double Rv = 8.0 * std::max(a.sv, b.sv) + 1e-9;
  double ulo = std::min(a.cu, b.cu) - Ru, uhi = std::max(a.cu, b.cu) + Ru;
  double vlo = std::min(a.cv, b.cv) - Rv, vhi = std::max(a.cv, b.cv) + Rv;

  const PhaseField& fa = a.term->field;
  const PhaseField& fb = b.term->field;
  double freq_u = std::abs((b.px_tot - b.py_tot) - (a.px_tot - a.py_tot)) / s2 +
                  (std::abs(fb.kx - fa.kx) + std::abs(fb.ky - fa.ky) +
                   std::abs(fb.kmax - fa.kmax) + std::abs(fb.kmin - fa.kmin)) / s2;
  double freq_v = std::abs((b.px_tot + b.py_tot) - (a.px_tot + a.py_tot)) / s2 +
                  (std::abs(fb.kx - fa.kx) + std::abs(fb.ky - fa.ky) +
                   std::abs(fb.kmax - fa.kmax) + std::abs(fb.kmin - fa.kmin)) / s2;

  int nv = node_count(freq_v * (vhi - vlo) / (2.0 * kPi));
  std::vector<double> vn, vw;
  gauss_legendre(nv, vn, vw);

  bool kinked = fa.kmax != 0 || fa.kmin != 0 || fb.kmax != 0 || fb.kmin != 0;
  std::vector<std::pair<double, double>> u_intervals;
  if (kinked && ulo < 0.0 && uhi > 0.0) {
    u_intervals = {{ulo, 0.0}, {0.0, uhi}};
  } else {
    u_intervals = {{ulo, uhi}};
  }

  cdouble total = 0.0;
  for (auto [u0, u1] : u_intervals) {
    int nu = node_count(freq_u * (u1 - u0) / (2.0 * kPi));
    std::vector<double> un, uw;
    gauss_legendre(nu, un, uw);
    double uh = 0.5 * (u1 - u0), um = 0.5 * (u1 + u0);
    double vh = 0.5 * (vhi - vlo), vm = 0.5 * (vhi + vlo);
    for (int i = 0; i < nu; ++i) {
      double u = um + uh * un[i];
      cdouble row = 0.0;
      for (int j = 0; j < nv; ++j) {
        double v = vm + vh * vn[j];
        double x = (v + u) / s2, y = (v - u) / s2;
        row += vw[j] * std::conj(a.value(x, y)) * b.value(x, y);
      }
      total += uw[i] * uh * vh * row;
    }
  }
  return total;
}

cdouble clock_inner(const BranchTerm& ta, const BranchTerm& tb, int n_clocks) {
  if (n_clocks == 0) return 1.0;
  if (n_clocks == 1) {
    // Fold 1-D phase fields into effective momentum kicks.
    WavePacket pa = ta.packets[0], pb = tb.packets[0];
    if (ta.field.kx != 0.0) pa = momentum_kick(pa, ta.field.kx);
    if (tb.field.kx != 0.0) pb = momentum_kick(pb, tb.field.kx);
    return packet_overlap(pa, pb);
  }
  if (!ta.joint && !tb.joint && ta.field.trivial() && tb.field.trivial())
    return packet_overlap(ta.packets[0], tb.packets[0]) *
           packet_overlap(ta.packets[1], tb.packets[1]);
  return pair_integral(make_factor(ta), make_factor(tb));
}

bool labels_match(const BranchTerm& a, const BranchTerm& b) {
  return a.system_label == b.system_label && a.pointer_labels == b.pointer_labels;
}

}  // namespace

cdouble overlap(const BranchExpansion& a, const BranchExpansion& b) {
  if (a.system != b.system || a.n_pointers != b.n_pointers || a.n_clocks != b.n_clocks)
    throw std::invalid_argument("overlap: incompatible expansions");
  cdouble acc = 0.0;
  for (const auto& ta : a.terms)
    for (const auto& tb : b.terms) {
      if (!labels_match(ta, tb)) continue;
      acc += std::conj(ta.coeff) * tb.coeff * clock_inner(ta, tb, a.n_clocks);
    }
  return acc;
}

double squared_norm(const BranchExpansion& b) { return overlap(b, b).real(); }

BranchExpansion single_spin_theta_final(double theta, double omega,
                                        const WavePacket& initial, double t) {
  require_completed(initial.x0 + t, initial.width, "single_spin_theta_final");
  const double c = std::cos(theta), s = std::sin(theta);
  const cdouble global = std::exp(kI * omega * t);

  WavePacket moved = translated(initial, t);
  WavePacket kicked = momentum_kick(moved, -2.0 * omega);

  BranchExpansion out;
  out.system = SystemKind::kSingleSpinZ;
  out.n_pointers = 1;
  out.n_clocks = 1;
  out.terms = {
      {s * c * kFlipPhase * global, 0, {1}, {kicked}, {}, {}, +omega},
      {s * s * kFlipPhase * global, 1, {1}, {moved}, {}, {}, -omega},
      {-s * c * global, 0, {0}, {kicked}, {}, {}, +omega},
      {c * c * global, 1, {0}, {moved}, {}, {}, -omega},
  };
  return out;
}

namespace {

void check_clocks_completed(const ClockState& clocks, double t, const char* who) {
  if (std::holds_alternative<IndependentClocks>(clocks)) {
    const auto& [a, b] = std::get<IndependentClocks>(clocks);
    require_completed(a.x0 + t, a.width, who);
    require_completed(b.x0 + t, b.width, who);
  } else {
    const auto& g = std::get<JointGaussian>(clocks);
    double w = std::max(g.delta_plus, g.delta_minus);
    require_completed(g.center_x + t, w, who);
    require_completed(g.center_y + t, w, who);
  }
}

void attach_clocks(BranchTerm& term, const ClockState& clocks, double t) {
  if (std::holds_alternative<IndependentClocks>(clocks)) {
    const auto& [a, b] = std::get<IndependentClocks>(clocks);
    term.packets = {translated(a, t), translated(b, t)};
  } else {
    term.joint = translated(std::get<JointGaussian>(clocks), t);
  }
}

}  // namespace

BranchExpansion double_pointer_final(double theta, double omega,
                                     const ClockState& clocks, double t) {
  check_clocks_completed(clocks, t, "double_pointer_final");
  const double c = std::cos(theta), s = std::sin(theta);
  const double w = 2.0 * omega;
  const cdouble global = std::exp(kI * omega * t);

  // (coefficient, spin, ptrA, ptrB, field) with physical pointer labels;
  // fields {kmax, kmin}. The -i flip phases are applied below.
  struct Row {
    double coeff;
    int spin, pa, pb;
    double kmax, kmin;
  };
  const double s3c = s * s * s * c, sc3 = s * c * c * c, s2c2 = s * s * c * c;
  std::vector<Row> rows = {
      {sc3, 0, 1, 1, -w, 0.0},   {s3c, 0, 1, 1, 0.0, -w},
      {s2c2, 1, 1, 1, -w, +w},   {s * s * s * s, 1, 1, 1, 0.0, 0.0},
      {s3c, 0, 1, 0, -w, 0.0},   {-s3c, 0, 1, 0, 0.0, -w},
      {s2c2, 1, 1, 0, 0.0, 0.0}, {-s2c2, 1, 1, 0, -w, +w},
      {-sc3, 0, 0, 1, -w, 0.0},  {sc3, 0, 0, 1, 0.0, -w},
      {s2c2, 1, 0, 1, 0.0, 0.0}, {-s2c2, 1, 0, 1, -w, +w},
      {-s3c, 0, 0, 0, -w, 0.0},  {-sc3, 0, 0, 0, 0.0, -w},
      {s2c2, 1, 0, 0, -w, +w},   {c * c * c * c, 1, 0, 0, 0.0, 0.0},
  };

  BranchExpansion out;
  out.system = SystemKind::kSingleSpinZ;
  out.n_pointers = 2;
  out.n_clocks = 2;
  for (const Row& r : rows) {
    BranchTerm term;
    term.coeff = r.coeff * global;
    if (r.pa == 1) term.coeff *= kFlipPhase;
    if (r.pb == 1) term.coeff *= kFlipPhase;
    term.system_label = r.spin;
    term.pointer_labels = {r.pa, r.pb};
    term.field = {0.0, 0.0, r.kmax, r.kmin};
    term.energy = r.spin == 0 ? +omega : -omega;
    attach_clocks(term, clocks, t);
    out.terms.push_back(std::move(term));
  }
  return out;
}

double F_parameter(const ClockState& clocks, double omega) {
  const double k = 2.0 * omega;
  if (std::holds_alternative<IndependentClocks>(clocks)) {
    const auto& [a, b] = std::get<IndependentClocks>(clocks);
    double var = a.width * a.width + b.width * b.width;  // var(x - y)
    return 2.0 * std::cos(k * (a.x0 - b.x0)) * std::exp(-k * k * var / 2.0);
  }
  const auto& g = std::get<JointGaussian>(clocks);
  double var = 2.0 * g.delta_minus * g.delta_minus;
  return 2.0 * std::cos(k * (g.center_x - g.center_y)) *
         std::exp(-k * k * var / 2.0);
}

double F_parameter_quadrature(const ClockState& clocks, double omega) {
  // Direct 2-D integral of (e^{2 i omega |x-y|} + cc) |Phi|^2.
  BranchTerm t;
  if (std::holds_alternative<IndependentClocks>(clocks)) {
    const auto& [a, b] = std::get<IndependentClocks>(clocks);
    t.packets = {a, b};
  } else {
    t.joint = std::get<JointGaussian>(clocks);
  }
  BranchTerm t2 = t;
  t2.field = {0.0, 0.0, +2.0 * omega, -2.0 * omega};  // e^{2 i omega (max-min)}
  double norm = pair_integral(make_factor(t), make_factor(t)).real();
  cdouble val = pair_integral(make_factor(t), make_factor(t2));
  return 2.0 * val.real() / norm;
}

PointerProbs pointer_outcome_probs(double theta, double F) {
  if (F < -2.0 || F > 2.0)
    throw std::invalid_argument("pointer_outcome_probs: F outside [-2, 2]");
  const double c2 = sq(std::cos(theta)), s2 = sq(std::sin(theta));
  PointerProbs p;
  p.p00 = c2 * (1.0 - 2.0 * s2 * c2) + s2 * c2 * c2 * F;
  p.p11 = s2 * (1.0 - 2.0 * s2 * c2) + s2 * s2 * c2 * F;
  p.p01 = 2.0 * s2 * c2 * c2 - s2 * c2 * c2 * F;
  p.p10 = 2.0 * s2 * s2 * c2 - s2 * s2 * c2 * F;
  return p;
}

namespace {

// Physical-basis split kets. a_phys[m] is the A-pointer ket attached to the
// intermediate eigenstate m; b_phys[m][f] the B-pointer ket joining m to f.
// Index 0/1 = pointer never-flipped / flipped; m, f in {0: E=-1, 1: E=0, 2: E=+1}.
struct SplitTables {
  Eigen::Vector2d a[3];
  Eigen::Vector2d b[3][3];
};

const SplitTables& split_tables() {
  static const SplitTables t = [] {
    SplitTables s;
    const double r = 1.0 / (2.0 * std::sqrt(2.0));
    s.a[0] << 0.25, 0.75;   // E_m = -1
    s.a[1] << r, -r;        // E_m = 0
    s.a[2] << -0.25, 0.25;  // E_m = +1
    s.b[0][0] << 0.25, 0.75;
    s.b[0][1] << -r, r;
    s.b[0][2] << -0.25, 0.25;
    s.b[1][0] << -r, r;
    s.b[1][1] << 0.5, 0.5;
    s.b[1][2] << r, -r;
    s.b[2][0] << -0.25, 0.25;
    s.b[2][1] << r, -r;
    s.b[2][2] << 0.25, 0.75;
    return s;
  }();
  return t;
}

double e_of(int idx) { return idx == 0 ? -1.0 : (idx == 1 ? 0.0 : +1.0); }

// System label in spin_chain::eigenstate_labels() order.
int eigen_label_of(int idx) { return idx == 0 ? 0 : (idx == 1 ? 3 : 6); }

}  // namespace

std::vector<Chain3Branch> chain3_branch_table(double E0, bool with_flip_phase) {
  const SplitTables& st = split_tables();
  std::vector<Chain3Branch> out;
  for (int m = 0; m < 3; ++m)
    for (int f = 0; f < 3; ++f) {
      Chain3Branch br;
      br.e_mid = e_of(m);
      br.e_final = e_of(f);
      // Readout basis: component 0 records "up seen" = physical flipped.
      br.a_ket << st.a[m][1], st.a[m][0];
      br.b_ket << st.b[m][f][1], st.b[m][f][0];
      if (with_flip_phase) {
        br.a_ket[0] *= kFlipPhase;
        br.b_ket[0] *= kFlipPhase;
      }
      br.field.kmax = -E0 * (br.e_mid + 1.0);
      br.field.kmin = -E0 * (br.e_final - br.e_mid);
      out.push_back(br);
    }
  return out;
}

BranchExpansion chain3_final(double E0, ClockConvention conv,
                             const ClockState& clocks, double t) {
  (void)conv;  // single supported convention, enforced by the enum
  check_clocks_completed(clocks, t, "chain3_final");
  const SplitTables& st = split_tables();
  const cdouble global = std::exp(kI * E0 * t);

  BranchExpansion out;
  out.system = SystemKind::kChain3Eigen;
  out.n_pointers = 2;
  out.n_clocks = 2;
  for (int m = 0; m < 3; ++m)
    for (int f = 0; f < 3; ++f)
      for (int pa = 0; pa < 2; ++pa)
        for (int pb = 0; pb < 2; ++pb) {
          BranchTerm term;
          term.coeff = st.a[m][pa] * st.b[m][f][pb] * global;
          if (pa == 1) term.coeff *= kFlipPhase;
          if (pb == 1) term.coeff *= kFlipPhase;
          term.system_label = eigen_label_of(f);
          term.pointer_labels = {pa, pb};
          term.field.kmax = -E0 * (e_of(m) + 1.0);
          term.field.kmin = -E0 * (e_of(f) - e_of(m));
          term.energy = e_of(f) * E0;
          attach_clocks(term, clocks, t);
          out.terms.push_back(std::move(term));
        }
  return out;
}

namespace {

BranchExpansion sequential_chain3_impl(double E0, const IndependentClocks& clocks,
                                       double t, bool final_state) {
  const auto& [a, b] = clocks;
  const double xi = -a.x0, yi = -b.x0;
  if (xi <= 0 || yi <= 0)
    throw std::invalid_argument("sequential_chain3: clocks must start left of the coupling");
  if (yi - xi < 4.0 * (a.width + b.width))
    throw std::invalid_argument("sequential_chain3: interaction windows overlap");
  const SplitTables& st = split_tables();

  BranchExpansion out;
  out.system = SystemKind::kChain3Eigen;
  out.n_pointers = 2;
  out.n_clocks = 2;

  if (!final_state) {
    if (t <= xi + 4.0 * a.width || t >= yi - 4.0 * b.width)
      throw std::domain_error("sequential_chain3_intermediate: t not between the windows");
    for (int m = 0; m < 3; ++m)
      for (int pa = 0; pa < 2; ++pa) {
        BranchTerm term;
        double em = e_of(m);
        term.coeff = st.a[m][pa] * std::exp(kI * E0 * xi) *
                     std::exp(-kI * em * E0 * (t - xi));
        if (pa == 1) term.coeff *= kFlipPhase;
        term.system_label = eigen_label_of(m);
        term.pointer_labels = {pa, 0};
        WavePacket pk = a;
        pk.x0 = 0.0;  // at the firing instant
        pk = momentum_kick(pk, -E0 * (em + 1.0));
        pk.x0 = t - xi;
        term.packets = {pk, translated(b, t)};
        term.energy = em * E0;
        out.terms.push_back(std::move(term));
      }
    return out;
  }

  require_completed(b.x0 + t, b.width, "sequential_chain3_final");
  for (int m = 0; m < 3; ++m)
    for (int f = 0; f < 3; ++f)
      for (int pa = 0; pa < 2; ++pa)
        for (int pb = 0; pb < 2; ++pb) {
          BranchTerm term;
          double em = e_of(m), ef = e_of(f);
          term.coeff = st.a[m][pa] * st.b[m][f][pb] * std::exp(kI * E0 * xi) *
                       std::exp(-kI * em * E0 * (yi - xi)) *
                       std::exp(-kI * ef * E0 * (t - yi));
          if (pa == 1) term.coeff *= kFlipPhase;
          if (pb == 1) term.coeff *= kFlipPhase;
          term.system_label = eigen_label_of(f);
          term.pointer_labels = {pa, pb};
          WavePacket pka = a;
          pka.x0 = 0.0;
          pka = momentum_kick(pka, -E0 * (em + 1.0));
          pka.x0 = t - xi;
          WavePacket pkb = b;
          pkb.x0 = 0.0;
          pkb = momentum_kick(pkb, -E0 * (ef - em));
          pkb.x0 = t - yi;
          term.packets = {pka, pkb};
          term.energy = ef * E0;
          out.terms.push_back(std::move(term));
        }
  return out;
}

}  // namespace

BranchExpansion sequential_chain3_final(double E0, const IndependentClocks& clocks,
                                        double t) {
  return sequential_chain3_impl(E0, clocks, t, true);
}

BranchExpansion sequential_chain3_intermediate(double E0,
                                               const IndependentClocks& clocks,
                                               double t) {
  return sequential_chain3_impl(E0, clocks, t, false);
}

VectorXcd materialize(const BranchExpansion& b, const MatrixXcd& system_basis,
                      const std::vector<Grid>& grids) {
  if (static_cast<int>(grids.size()) != b.n_clocks)
    throw std::invalid_argument("materialize: grid count != clock count");
  const long dsys = system_basis.rows();
  long total = dsys;
  for (int i = 0; i < b.n_pointers; ++i) total *= 2;
  for (const auto& g : grids) total *= g.n;

  long clock_block = 1;
  for (const auto& g : grids) clock_block *= g.n;

  VectorXcd out = VectorXcd::Zero(total);
  for (const auto& term : b.terms) {
    VectorXcd sys = system_basis.col(term.system_label);
    long ptr_index = 0;
    for (int i = 0; i < b.n_pointers; ++i)
      ptr_index = ptr_index * 2 + term.pointer_labels[i];
    long ptr_count = 1L << b.n_pointers;

    if (b.n_clocks == 1) {
      const Grid& g = grids[0];
      double wq = std::sqrt(g.dx);
      for (long i = 0; i < g.n; ++i) {
        double x = g.pos(i);
        cdouble v = term.packets[0].value(x) * wq;
        if (term.field.kx != 0.0) v *= std::exp(kI * term.field.kx * x);
        cdouble cv = term.coeff * v;
        if (std::abs(cv) < 1e-300) continue;
        for (long s = 0; s < dsys; ++s) {
          if (sys[s] == 0.0) continue;
          out[(s * ptr_count + ptr_index) * clock_block + i] += cv * sys[s];
        }
      }
    } else if (b.n_clocks == 2) {
      const Grid& ga = grids[0];
      const Grid& gb = grids[1];
      double wq = std::sqrt(ga.dx * gb.dx);
      for (long i = 0; i < ga.n; ++i) {
        double x = ga.pos(i);
        cdouble ax = term.joint ? cdouble(1.0) : term.packets[0].value(x);
        if (!term.joint && std::abs(ax) < 1e-200) continue;
        for (long j = 0; j < gb.n; ++j) {
          double y = gb.pos(j);
          cdouble v = term.joint ? term.joint->value(x, y)
                                 : ax * term.packets[1].value(y);
          v *= term.field.value(x, y) * wq;
          cdouble cv = term.coeff * v;
          if (std::abs(cv) < 1e-300) continue;
          long clk = i * gb.n + j;
          for (long s = 0; s < dsys; ++s) {
            if (sys[s] == 0.0) continue;
            out[(s * ptr_count + ptr_index) * clock_block + clk] += cv * sys[s];
          }
        }
      }
    } else if (b.n_clocks == 0) {
      for (long s = 0; s < dsys; ++s)
        if (sys[s] != 0.0)
          out[s * ptr_count + ptr_index] += term.coeff * sys[s];
    } else {
      throw std::invalid_argument("materialize: unsupported clock count");
    }
  }
  return out;
}

// ---- JSON serialization ----

namespace {
using nlohmann::ordered_json;

ordered_json packet_json(const WavePacket& p) {
  return ordered_json{{"x0", p.x0},
                      {"p0", p.p0},
                      {"width", p.width},
                      {"amp_re", p.amp.real()},
                      {"amp_im", p.amp.imag()}};
}

WavePacket packet_from(const ordered_json& j) {
  WavePacket p;
  p.x0 = j.at("x0");
  p.p0 = j.at("p0");
  p.width = j.at("width");
  p.amp = cdouble(j.at("amp_re"), j.at("amp_im"));
  return p;
}
}  // namespace

std::string to_json(const BranchExpansion& b) {
  ordered_json root;
  root["system"] = b.system == SystemKind::kSingleSpinZ ? "single_spin_z" : "chain3_eigen";
  root["n_pointers"] = b.n_pointers;
  root["n_clocks"] = b.n_clocks;
  root["terms"] = ordered_json::array();
  for (const auto& t : b.terms) {
    ordered_json jt;
    jt["coeff_re"] = t.coeff.real();
    jt["coeff_im"] = t.coeff.imag();
    if (b.system == SystemKind::kChain3Eigen)
      jt["system_label"] = spin_chain::eigenstate_labels()[t.system_label];
    else
      jt["system_label"] = t.system_label == 0 ? "up" : "down";
    jt["pointer_labels"] = t.pointer_labels;
    jt["energy"] = t.energy;
    if (t.joint) {
      jt["joint"] = ordered_json{{"center_x", t.joint->center_x},
                                 {"center_y", t.joint->center_y},
                                 {"delta_plus", t.joint->delta_plus},
                                 {"delta_minus", t.joint->delta_minus},
                                 {"px", t.joint->px},
                                 {"py", t.joint->py},
                                 {"amp_re", t.joint->amp.real()},
                                 {"amp_im", t.joint->amp.imag()}};
    } else {
      jt["packets"] = ordered_json::array();
      for (const auto& p : t.packets) jt["packets"].push_back(packet_json(p));
    }
    if (!t.field.trivial())
      jt["phase_field"] = ordered_json{{"kx", t.field.kx},
                                       {"ky", t.field.ky},
                                       {"kmax", t.field.kmax},
                                       {"kmin", t.field.kmin}};
    root["terms"].push_back(std::move(jt));
  }
  return root.dump(2);
}

BranchExpansion expansion_from_json(const std::string& text) {
  ordered_json root = ordered_json::parse(text);
  BranchExpansion b;
  b.system = root.at("system") == "single_spin_z" ? SystemKind::kSingleSpinZ
                                                  : SystemKind::kChain3Eigen;
  b.n_pointers = root.at("n_pointers");
  b.n_clocks = root.at("n_clocks");
  for (const auto& jt : root.at("terms")) {
    BranchTerm t;
    t.coeff = cdouble(jt.at("coeff_re"), jt.at("coeff_im"));
    if (b.system == SystemKind::kChain3Eigen) {
      const auto& labels = spin_chain::eigenstate_labels();
      std::string name = jt.at("system_label");
      t.system_label = static_cast<int>(
          std::find(labels.begin(), labels.end(), name) - labels.begin());
    } else {
      t.system_label = jt.at("system_label") == "up" ? 0 : 1;
    }
    t.pointer_labels = jt.at("pointer_labels").get<std::vector<int>>();
    t.energy = jt.at("energy");
    if (jt.contains("joint")) {
      JointGaussian g;
      const auto& jj = jt.at("joint");
      g.center_x = jj.at("center_x");
      g.center_y = jj.at("center_y");
      g.delta_plus = jj.at("delta_plus");
      g.delta_minus = jj.at("delta_minus");
      g.px = jj.at("px");
      g.py = jj.at("py");
      g.amp = cdouble(jj.at("amp_re"), jj.at("amp_im"));
      t.joint = g;
    } else {
      for (const auto& jp : jt.at("packets")) t.packets.push_back(packet_from(jp));
    }
    if (jt.contains("phase_field")) {
      const auto& jf = jt.at("phase_field");
      t.field = {jf.at("kx"), jf.at("ky"), jf.at("kmax"), jf.at("kmin")};
    }
    b.terms.push_back(std::move(t));
  }
  return b;
}

}  // namespace qclock::wavepacket
