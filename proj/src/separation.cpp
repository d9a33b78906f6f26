#include "drcc/separation.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace drcc {

namespace {

constexpr double kTauTol = 1e-12;
constexpr double kSupremumBranchTol = 1e-10;

// Root of a function that is >= 0 at lo and <= 0 at hi.
template <class F>
double bisect_down(F&& phi, double lo, double hi) {
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= kTauTol * std::max(1.0, lo) || mid <= lo || mid >= hi) break;
    if (phi(mid) >= 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Maximizer of a concave function on [lo, hi].
template <class F>
double golden_max(F&& fn, double lo, double hi) {
  constexpr double r = 0.6180339887498949;
  double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
  double f1 = fn(x1), f2 = fn(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + r * (hi - lo);
      f2 = fn(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - r * (hi - lo);
      f1 = fn(x1);
    }
  }
  double best = lo, fb = fn(lo);
  for (double x : {x1, x2, hi}) {
    const double v = fn(x);
    if (v > fb) best = x, fb = v;
  }
  return best;
}

// d/dtau of C g(tau) - k tau.
double concave_slope(double tau, double coef, double k, const SeparationInstance& in) {
  return coef * g_prime(tau, in.alpha, in.epsilon) - k;
}

}  // namespace

void SeparationInstance::validate() const {
  UnimodalityConfig{alpha, epsilon}.validate();
  if (!(r_tilde > 0.0) || !std::isfinite(r_tilde))
    throw Error(ErrorCode::DomainError, "R~ must be positive and finite");
  if (!std::isfinite(c_tilde) || !std::isfinite(h_lo) || !std::isfinite(h_hi))
    throw Error(ErrorCode::DomainError, "non-finite separation data");
  const double tol = 1e-12 * std::max(1.0, r_tilde);
  if (h_lo > h_hi + tol) throw Error(ErrorCode::DomainError, "h range is empty");
  if (h_hi >= r_tilde || h_lo <= -r_tilde)
    throw Error(ErrorCode::DomainError, "h range [" + std::to_string(h_lo) + ", " + std::to_string(h_hi) +
                                            "] not inside (-R~, R~) with R~ = " + std::to_string(r_tilde));
  if (c_tilde + alpha * h_lo < -1e-7 * std::max({1.0, r_tilde, std::abs(c_tilde)}))
    throw Error(ErrorCode::DomainError, "mode support not inside the deterministic constraint (c~ + alpha h_lo = " +
                                            std::to_string(c_tilde + alpha * h_lo) + ")");
}

double violation_value(double h, double tau, const SeparationInstance& in) {
  const double tol = 1e-12 * std::max(1.0, in.r_tilde);
  if (!(tau >= in.tau0() * (1.0 - 1e-14)) || !(std::abs(h) <= in.r_tilde + tol))
    throw Error(ErrorCode::DomainError,
                "violation_value outside its domain (h " + std::to_string(h) + ", tau " + std::to_string(tau) + ")");
  const double root = std::sqrt(std::max(0.0, in.r_tilde * in.r_tilde - h * h));
  return g_of_tau(tau, in.alpha, in.epsilon) * root + f_of_tau(tau, in.alpha) * h - in.c_tilde * tau;
}

double h_hat(double tau, const SeparationInstance& in) {
  const double g = g_of_tau(tau, in.alpha, in.epsilon);
  const double f = f_of_tau(tau, in.alpha);
  return f / std::hypot(g, f) * in.r_tilde;
}

double tau_search_bound(const SeparationInstance& in) {
  const double a = in.alpha;
  if (in.h_lo >= 0.0) return (a + 1.0) / a;
  const double r2 = in.r_tilde * in.r_tilde - in.h_lo * in.h_lo;
  return -(in.h_lo * std::sqrt((1.0 - in.epsilon) / (in.epsilon * r2)) - (a + 1.0)) / a;
}

std::optional<double> lower_piece_bound(const SeparationInstance& in) {
  const double k = in.c_tilde + in.alpha * in.h_lo;
  if (!(k > kSupremumBranchTol)) return std::nullopt;
  const double c3 = std::sqrt(std::max(0.0, in.r_tilde * in.r_tilde - in.h_lo * in.h_lo));
  const double c2 = in.alpha * in.alpha * c3 * c3 / (4.0 * in.epsilon * k * k);
  const double inner = (-1.0 + std::sqrt(1.0 + 4.0 * (1.0 - in.epsilon) * c2)) / (2.0 * c2);
  return std::pow(inner, -1.0 / in.alpha);
}

std::pair<double, double> tau_bracket(const SeparationInstance& in) {
  const double t0 = in.tau0();
  const double mid = (in.alpha + 1.0) / in.alpha;  // h_hat(mid) = 0
  double upper = tau_search_bound(in);
  // Guard against rounding in the closed-form bound.
  while (h_hat(upper, in) > in.h_lo) upper *= 2.0;
  auto solve = [&](double target) {
    if (target == 0.0) return mid;
    const double lo = target > 0.0 ? t0 : mid;
    const double hi = target > 0.0 ? mid : upper;
    return bisect_down([&](double t) { return h_hat(t, in) - target; }, lo, hi);
  };
  const double tlo = solve(in.h_hi);
  const double thi = in.h_hi == in.h_lo ? tlo : std::max(tlo, solve(in.h_lo));
  return {tlo, thi};
}

namespace {

WorstCase case1(const SeparationInstance& in, double tlo) {
  // h = h_hi on [tau0, tau_lo]; concave in tau with infinite slope at tau0.
  const double c1 = std::sqrt(std::max(0.0, in.r_tilde * in.r_tilde - in.h_hi * in.h_hi));
  const double k = in.c_tilde + in.alpha * in.h_hi;
  const double t0 = in.tau0();
  double tau = tlo;
  if (tlo > t0 && concave_slope(tlo, c1, k, in) < 0.0)
    tau = bisect_down([&](double t) { return concave_slope(t, c1, k, in); }, t0, tlo);
  return {tau, in.h_hi, violation_value(in.h_hi, tau, in), false, 1};
}

WorstCase case2(const SeparationInstance& in, double tlo, double thi) {
  // h = h_hat(tau): value R~ sqrt(s(tau)) - c~ tau, where s = g^2 + f^2.
  // sqrt(s) can change curvature inside the range, so split at the sign
  // changes of (sqrt s)'' and maximize each concave piece by its slope root.
  auto value = [&](double t) {
    const double h = std::clamp(h_hat(t, in), in.h_lo, in.h_hi);
    return violation_value(h, t, in);
  };
  auto slope = [&](double t) {
    const auto q = gf_squares(t, in.alpha, in.epsilon);
    return in.r_tilde * q.ds / (2.0 * std::sqrt(q.s)) - in.c_tilde;
  };
  auto curvature = [&](double t) {
    const auto q = gf_squares(t, in.alpha, in.epsilon);
    return 2.0 * q.s * q.d2s - q.ds * q.ds;
  };

  std::vector<double> knots{tlo};
  if (thi > tlo) {
    constexpr int kSamples = 64;
    double prev_t = tlo, prev_c = curvature(tlo);
    for (int i = 1; i <= kSamples; ++i) {
      const double t = tlo * std::pow(thi / tlo, static_cast<double>(i) / kSamples);
      const double c = curvature(t);
      if ((prev_c < 0.0) != (c < 0.0)) {
        const double sgn = prev_c >= 0.0 ? 1.0 : -1.0;
        knots.push_back(bisect_down([&](double x) { return sgn * curvature(x); }, prev_t, t));
      }
      prev_t = t;
      prev_c = c;
    }
    knots.push_back(thi);
  }

  std::vector<double> candidates = knots;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double lo = knots[i], hi = knots[i + 1];
    if (!(hi > lo) || curvature(0.5 * (lo + hi)) >= 0.0) continue;
    if (slope(lo) > 0.0 && slope(hi) < 0.0) candidates.push_back(bisect_down(slope, lo, hi));
  }

  WorstCase best{tlo, 0.0, -std::numeric_limits<double>::infinity(), false, 2};
  for (double t : candidates) {
    const double v = value(t);
    if (v > best.violation) best = {t, std::clamp(h_hat(t, in), in.h_lo, in.h_hi), v, false, 2};
  }
  return best;
}

WorstCase case3(const SeparationInstance& in, double thi) {
  // h = h_lo on [tau_hi, inf); concave in tau.
  const double c3 = std::sqrt(std::max(0.0, in.r_tilde * in.r_tilde - in.h_lo * in.h_lo));
  const double k = in.c_tilde + in.alpha * in.h_lo;
  const auto t2 = lower_piece_bound(in);
  if (!t2) {
    // Increasing with a finite supremum as tau grows.
    const double g_inf = std::sqrt((1.0 - in.epsilon) / in.epsilon);
    const double sup = c3 * g_inf + (in.alpha + 1.0) * in.h_lo;
    double tau = thi;
    const double target = g_inf - 5e-7 / c3;
    if (target > 0.0) {
      const double u = (1.0 - in.epsilon) - in.epsilon * target * target;
      tau = std::max(thi, std::pow(u, -1.0 / in.alpha));
    }
    return {tau, in.h_lo, sup, true, 3};
  }
  double tau = thi;
  if (concave_slope(thi, c3, k, in) > 0.0) {
    double hi = std::max(*t2, thi);
    while (concave_slope(hi, c3, k, in) > 0.0) hi *= 2.0;
    tau = bisect_down([&](double t) { return concave_slope(t, c3, k, in); }, thi, hi);
  }
  return {tau, in.h_lo, violation_value(in.h_lo, tau, in), false, 3};
}

}  // namespace

WorstCase worst_case(const SeparationInstance& in) {
  in.validate();
  const auto [tlo, thi] = tau_bracket(in);
  WorstCase best = case1(in, tlo);
  for (const auto& wc : {case2(in, tlo, thi), case3(in, thi)})
    if (wc.violation > best.violation) best = wc;
  return best;
}

WorstCase brute_force_worst_case(const SeparationInstance& in, int grid_tau, int grid_h) {
  in.validate();
  if (grid_tau < 2 || grid_h < 1) throw Error(ErrorCode::DomainError, "brute force grid too small");
  const double t0 = in.tau0();
  const double cap = std::max(lower_piece_bound(in).value_or(0.0), 10.0 * (in.alpha + 1.0) / in.alpha);
  const int nh = in.h_hi > in.h_lo ? grid_h : 1;

  std::vector<double> taus(grid_tau), gs(grid_tau), fs(grid_tau);
  for (int i = 0; i < grid_tau; ++i) {
    taus[i] = t0 * std::pow(cap / t0, static_cast<double>(i) / (grid_tau - 1));
    gs[i] = g_of_tau(taus[i], in.alpha, in.epsilon);
    fs[i] = f_of_tau(taus[i], in.alpha);
  }
  std::vector<double> hs(nh), roots(nh);
  for (int j = 0; j < nh; ++j) {
    hs[j] = nh == 1 ? in.h_lo : in.h_lo + (in.h_hi - in.h_lo) * j / (nh - 1);
    roots[j] = std::sqrt(std::max(0.0, in.r_tilde * in.r_tilde - hs[j] * hs[j]));
  }
  double best = -std::numeric_limits<double>::infinity();
  double tau = t0, h = in.h_lo;
  for (int i = 0; i < grid_tau; ++i)
    for (int j = 0; j < nh; ++j) {
      const double v = gs[i] * roots[j] + fs[i] * hs[j] - in.c_tilde * taus[i];
      if (v > best) best = v, tau = taus[i], h = hs[j];
    }

  // Each coordinate section is concave, so golden section is exact per sweep.
  for (int it = 0; it < 50; ++it) {
    if (nh > 1) h = golden_max([&](double x) { return violation_value(x, tau, in); }, in.h_lo, in.h_hi);
    tau = golden_max([&](double t) { return violation_value(h, t, in); }, t0, cap);
  }
  const double v = violation_value(h, tau, in);
  if (v >= best) return {tau, h, v, false, 0};
  return {tau, h, best, false, 0};
}

SeparationInstance make_instance(const Vector& a, double b, const MomentData& moments, const ModeSupport& support,
                                 const UnimodalityConfig& uni) {
  if (a.size() != moments.dimension() || support.dimension() != moments.dimension())
    throw Error(ErrorCode::DimensionMismatch, "separation inputs disagree in dimension");
  SeparationInstance in;
  in.alpha = uni.alpha;
  in.epsilon = uni.epsilon;
  in.r_tilde = std::sqrt((uni.alpha + 2.0) / uni.alpha) * (moments.covariance_factor().transpose() * a).norm();
  const double amu = moments.mu().dot(a);
  in.c_tilde = b - amu;
  const auto [lo, hi] = support.linear_range(a);
  in.h_lo = (amu - hi) / uni.alpha;
  in.h_hi = (amu - lo) / uni.alpha;
  return in;
}

Vector recover_mode(double h_star, const Vector& a, const MomentData& moments, const ModeSupport& support,
                    double alpha) {
  const double amu = moments.mu().dot(a);
  const auto [lo, hi] = support.linear_range(a);
  const double h_lo = (amu - hi) / alpha, h_hi = (amu - lo) / alpha;
  const double tol = 1e-9 * std::max({1.0, std::abs(h_lo), std::abs(h_hi)});
  if (h_star < h_lo - tol || h_star > h_hi + tol)
    throw Error(ErrorCode::DomainError, "h* = " + std::to_string(h_star) + " outside [" + std::to_string(h_lo) +
                                            ", " + std::to_string(h_hi) + "]");

  if (const auto* p = std::get_if<PointSupport>(&support.variant())) return p->mode;
  if (const auto* r = std::get_if<RectangleSupport>(&support.variant())) {
    const Vector c = r->center();
    const Vector w = r->half_width();
    const double spread = a.cwiseAbs().dot(w);
    const double lambda = spread > 0.0 ? std::clamp((alpha * h_star - a.dot(moments.mu() - c)) / spread, -1.0, 1.0)
                                       : 0.0;
    const Vector sgn = a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return c - lambda * sgn.cwiseProduct(w);
  }
  const auto& e = std::get<EllipsoidSupport>(support.variant());
  const Vector pa = e.shape * a;
  const double norm = std::sqrt(std::max(0.0, a.dot(pa)));
  if (!(norm > 0.0)) return e.center;
  const double lambda = std::clamp((a.dot(moments.mu() - e.center) - alpha * h_star) / norm, -1.0, 1.0);
  return e.center + lambda * pa / norm;
}

double deepest_tau(const SeparationInstance& in, double h, double tau_max) {
  const double t0 = in.tau0();
  if (!(tau_max > t0)) return t0;
  auto depth = [&](double u) {
    const double t = std::exp(u);
    return violation_value(h, t, in) / t;
  };
  // Coarse log grid, then golden section around the best node.
  constexpr int kNodes = 64;
  const double u0 = std::log(t0), u1 = std::log(tau_max);
  int best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kNodes; ++i) {
    const double v = depth(u0 + (u1 - u0) * i / kNodes);
    if (v > best_v) best_v = v, best = i;
  }
  double lo = u0 + (u1 - u0) * std::max(0, best - 1) / kNodes;
  double hi = u0 + (u1 - u0) * std::min(kNodes, best + 1) / kNodes;
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
  double f1 = depth(x1), f2 = depth(x2);
  for (int it = 0; it < 100 && hi - lo > 1e-13; ++it) {
    if (f1 < f2) {
      lo = x1, x1 = x2, f1 = f2;
      x2 = lo + r * (hi - lo), f2 = depth(x2);
    } else {
      hi = x2, x2 = x1, f2 = f1;
      x1 = hi - r * (hi - lo), f1 = depth(x1);
    }
  }
  const double t = std::exp(0.5 * (lo + hi));
  return depth(std::log(t)) >= best_v ? std::clamp(t, t0, tau_max)
                                      : std::exp(u0 + (u1 - u0) * best / kNodes);
}

RowSeparation separate_row(const Vector& a, double b, const MomentData& moments, const ModeSupport& support,
                           const UnimodalityConfig& uni, CutPlacement placement) {
  RowSeparation out;
  if (a.norm() <= kZeroRowTol) {
    out.skipped = true;
    return out;
  }
  const SeparationInstance in = make_instance(a, b, moments, support, uni);
  out.worst = worst_case(in);
  out.mode = recover_mode(std::clamp(out.worst.h, in.h_lo, in.h_hi), a, moments, support, uni.alpha);
  out.cut_tau = out.worst.tau;
  if (placement == CutPlacement::Deepest && out.worst.violation > 0.0)
    out.cut_tau = deepest_tau(in, std::clamp(out.worst.h, in.h_lo, in.h_hi), out.worst.tau);
  return out;
}

}  // namespace drcc
