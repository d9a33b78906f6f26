#include "drcc/separation.hpp"

#include <doctest.h>

#include <random>

using namespace drcc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SeparationInstance unit_instance(double h_lo, double h_hi, double c = 0.0) {
  SeparationInstance in;
  in.alpha = 1.0;
  in.epsilon = 0.05;
  in.r_tilde = 1.0;
  in.c_tilde = c;
  in.h_lo = h_lo;
  in.h_hi = h_hi;
  return in;
}

}  // namespace

TEST_CASE("violation surface at reference points") {
  const SeparationInstance in = unit_instance(-0.9, 0.9);
  CHECK(violation_value(0.1, 2.0, in) == doctest::Approx(2.985).epsilon(2e-4));
  CHECK(violation_value(0.3, 3.0, in) == doctest::Approx(3.05).epsilon(2e-4));
  CHECK(violation_value(0.2, 2.5, in) == doctest::Approx(3.15).epsilon(2e-4));
  CHECK(violation_value(0.4, 11.0, in) == doctest::Approx(0.1990).epsilon(3e-4));
  CHECK(violation_value(0.6, 10.0, in) == doctest::Approx(-1.5015).epsilon(1e-4));
  CHECK(violation_value(0.5, 10.5, in) == doctest::Approx(-0.6693).epsilon(1e-4));

  // Extended-precision values of the same points.
  CHECK(violation_value(0.1, 2.0, in) == doctest::Approx(2.984962311).epsilon(1e-9));
  CHECK(violation_value(0.6, 10.0, in) == doctest::Approx(-1.5015155).epsilon(1e-7));

  // Neither jointly concave nor convex.
  const double chord1 = 0.5 * (violation_value(0.1, 2.0, in) + violation_value(0.3, 3.0, in));
  const double chord2 = 0.5 * (violation_value(0.4, 11.0, in) + violation_value(0.6, 10.0, in));
  CHECK(chord1 == doctest::Approx(3.0175).epsilon(1e-4));
  CHECK(chord2 == doctest::Approx(-0.65125).epsilon(1e-4));
  CHECK(violation_value(0.2, 2.5, in) > chord1);
  CHECK(violation_value(0.5, 10.5, in) < chord2);

  CHECK_THROWS_AS(violation_value(0.1, 1.0, in), Error);
  CHECK_THROWS_AS(violation_value(1.5, 2.0, in), Error);
}

TEST_CASE("templated helpers agree across precisions") {
  for (double t : {1.06, 1.5, 2.0, 7.0, 100.0}) {
    const long double gl = g_of_tau<long double>(t, 2.0L, 0.05L);
    CHECK(static_cast<double>(gl) == doctest::Approx(g_of_tau(t, 2.0, 0.05)).epsilon(1e-14));
    // Finite-difference check of the analytic derivatives of g^2 + f^2.
    const double hstep = 1e-5 * t;
    const auto q = gf_squares(t, 2.0, 0.05);
    const auto qp = gf_squares(t + hstep, 2.0, 0.05), qm = gf_squares(t - hstep, 2.0, 0.05);
    CHECK(q.ds == doctest::Approx((qp.s - qm.s) / (2 * hstep)).epsilon(1e-6));
    CHECK(q.d2s == doctest::Approx((qp.ds - qm.ds) / (2 * hstep)).epsilon(1e-6));
  }
}

TEST_CASE("unconstrained maximizer in h") {
  const SeparationInstance in = unit_instance(-0.5, 0.5);
  CHECK(h_hat(in.tau0(), in) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h_hat(2.0, in) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  CHECK(h_hat(1e6, in) == doctest::Approx(-1.0).epsilon(1e-9));

  SUBCASE("strictly decreasing") {
    for (double alpha : {1.0, 2.0, 5.0}) {
      SeparationInstance s = in;
      s.alpha = alpha;
      double prev = h_hat(s.tau0(), s);
      for (int i = 1; i <= 2000; ++i) {
        const double t = s.tau0() * std::pow(1000.0, i / 2000.0);
        const double cur = h_hat(t, s);
        CHECK(cur < prev);
        prev = cur;
      }
    }
  }

  SUBCASE("value at the maximizer is R~ sqrt(g^2 + f^2) - c~ tau") {
    SeparationInstance s = unit_instance(-0.9, 0.9, 0.4);
    s.r_tilde = 2.5;
    for (double t : {1.1, 1.7, 2.4, 6.0}) {
      const double g = g_of_tau(t, s.alpha, s.epsilon), f = f_of_tau(t, s.alpha);
      const double peak = s.r_tilde * std::hypot(g, f) - s.c_tilde * t;
      CHECK(violation_value(h_hat(t, s), t, s) == doctest::Approx(peak).epsilon(1e-12));
      for (int k = 0; k <= 400; ++k) {
        const double h = -s.r_tilde + 2 * s.r_tilde * k / 400.0;
        CHECK(violation_value(h, t, s) <= peak + 1e-12);
      }
    }
  }
}

TEST_CASE("tau search bracket") {
  SUBCASE("search bound for a negative lower end") {
    const SeparationInstance in = unit_instance(-0.5, 0.2);
    // 0.5 sqrt(0.95 / (0.05 * 0.75)) + 2
    CHECK(tau_search_bound(in) == doctest::Approx(4.5166).epsilon(1e-4));
    CHECK(tau_search_bound(in) == doctest::Approx(4.516611478).epsilon(1e-9));
    CHECK(h_hat(tau_search_bound(in), in) <= -0.5);
    const auto [lo, hi] = tau_bracket(in);
    CHECK(h_hat(lo, in) == doctest::Approx(0.2).epsilon(1e-10));
    CHECK(h_hat(hi, in) == doctest::Approx(-0.5).epsilon(1e-10));
    CHECK(in.tau0() < lo);
    CHECK(lo <= hi);
    CHECK(hi <= tau_search_bound(in));
  }
  SUBCASE("mode fixed at the mean") {
    const auto [lo, hi] = tau_bracket(unit_instance(0.0, 0.0));
    CHECK(lo == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("non-negative lower end stays left of (a+1)/a") {
    for (double alpha : {1.0, 3.0}) {
      SeparationInstance in = unit_instance(0.05, 0.7);
      in.alpha = alpha;
      const auto [lo, hi] = tau_bracket(in);
      CHECK(hi <= (alpha + 1) / alpha);
      CHECK(lo <= hi);
      CHECK(tau_search_bound(in) == doctest::Approx((alpha + 1) / alpha));
    }
  }
}

TEST_CASE("worst case on a reference instance") {
  // h in [0.1, 0.6], c~ = 0; extended-precision 1-D maximization along h = 0.1.
  const SeparationInstance in = unit_instance(0.1, 0.6);
  const WorstCase wc = worst_case(in);
  CHECK(wc.violation == doctest::Approx(3.5536579539086195).epsilon(1e-11));
  CHECK(wc.tau == doctest::Approx(5.0642953219425729).epsilon(1e-8));
  CHECK(wc.h == doctest::Approx(0.1));
  CHECK(wc.violation == doctest::Approx(violation_value(wc.h, wc.tau, in)).epsilon(1e-12));

  const WorstCase bf = brute_force_worst_case(in, 2000, 2000);
  CHECK(std::abs(bf.violation - wc.violation) < 1e-4);
  CHECK(bf.violation <= wc.violation + 1e-6);
}

TEST_CASE("worst case special regimes") {
  SUBCASE("large margin leaves nothing violated") {
    const WorstCase wc = worst_case(unit_instance(-0.3, 0.4, 1e3));
    CHECK(wc.violation < 0.0);
  }
  SUBCASE("mode at the mean binds at the D4 maximizer") {
    for (double alpha : {1.0, 2.0, 4.0})
      for (double eps : {0.02, 0.05, 0.2}) {
        SeparationInstance in = unit_instance(0.0, 0.0);
        in.alpha = alpha;
        in.epsilon = eps;
        in.r_tilde = 3.0;
        const UnimodalityConfig uni{alpha, eps};
        const double ts = d4_tau_star(uni);
        // Margin exactly at the single-cut requirement R~ g(tau*) / tau*.
        in.c_tilde = in.r_tilde * g_of_tau(ts, alpha, eps) / ts;
        const WorstCase wc = worst_case(in);
        CHECK(wc.tau == doctest::Approx(ts).epsilon(1e-8));
        CHECK(std::abs(wc.violation) < 1e-10);
        // Equivalently the single cut with K4.
        CHECK(in.c_tilde ==
              doctest::Approx(k_factor(AmbiguityKind::D4, uni) * in.r_tilde / std::sqrt((alpha + 2) / alpha)));
      }
  }
  SUBCASE("supremum branch") {
    // c~ + alpha h_lo = 0
    const SeparationInstance in = unit_instance(-0.2, 0.3, 0.2);
    const WorstCase wc = worst_case(in);
    const double sup = std::sqrt(1 - 0.04) * std::sqrt(0.95 / 0.05) + 2 * (-0.2);
    CHECK(wc.at_supremum);
    CHECK(wc.violation == doctest::Approx(sup).epsilon(1e-12));
    CHECK(violation_value(wc.h, wc.tau, in) >= sup - 1e-6);
    CHECK(violation_value(wc.h, wc.tau, in) <= sup);
  }
  SUBCASE("degenerate h range matches a one-dimensional search") {
    for (double h : {-0.4, 0.0, 0.35}) {
      const SeparationInstance in = unit_instance(h, h, 0.7);
      const WorstCase wc = worst_case(in);
      const WorstCase bf = brute_force_worst_case(in, 20000, 1);
      CHECK(bf.violation == doctest::Approx(wc.violation).epsilon(1e-10));
    }
  }
}

TEST_CASE("right end of the h = h_lo search range") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    SeparationInstance in = unit_instance(-0.9 + 1.5 * ud(rng), 0.0, 0.0);
    in.h_hi = in.h_lo + (0.9 - in.h_lo) * ud(rng);
    in.alpha = 1.0 + 4.0 * ud(rng);
    in.epsilon = 0.01 + 0.4 * ud(rng);
    in.c_tilde = -in.alpha * in.h_lo + 3.0 * ud(rng) + 1e-3;
    const auto t2 = lower_piece_bound(in);
    REQUIRE(t2.has_value());
    const double c3 = std::sqrt(1 - in.h_lo * in.h_lo);
    const double slope = c3 * g_prime(*t2, in.alpha, in.epsilon) - (in.c_tilde + in.alpha * in.h_lo);
    CHECK(slope <= 1e-12);
  }
}

TEST_CASE("analytic worst case agrees with brute force on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  int count = 0;
  double worst_gap = 0.0;
  for (double alpha : {1.0, 2.0, 3.0, 5.0})
    for (double eps : {0.01, 0.05, 0.1, 0.3})
      for (int k = 0; k < 63; ++k) {
        SeparationInstance in;
        in.alpha = alpha;
        in.epsilon = eps;
        in.r_tilde = std::pow(10.0, -1.0 + 2.0 * ud(rng));
        double u1 = -0.98 + 1.96 * ud(rng), u2 = -0.98 + 1.96 * ud(rng);
        if (k % 7 == 0) u2 = u1;
        in.h_lo = std::min(u1, u2) * in.r_tilde;
        in.h_hi = std::max(u1, u2) * in.r_tilde;
        // Margins range from barely feasible to comfortably safe.
        const double spread = k % 3 == 0 ? 0.05 : (k % 3 == 1 ? 1.0 : 6.0);
        in.c_tilde = -alpha * in.h_lo + spread * in.r_tilde * ud(rng) + 1e-6;
        const WorstCase wc = worst_case(in);
        const WorstCase bf = brute_force_worst_case(in, 400, 400);
        INFO("alpha " << alpha << " eps " << eps << " R " << in.r_tilde << " c " << in.c_tilde << " h [" << in.h_lo
                      << ", " << in.h_hi << "] analytic " << wc.violation << " @ " << wc.tau << " case "
                      << wc.which_case << " brute " << bf.violation << " @ " << bf.tau);
        CHECK(wc.violation >= bf.violation - 1e-6);
        CHECK(wc.violation <= bf.violation + 1e-6);
        CHECK(wc.violation == doctest::Approx(violation_value(wc.h, wc.tau, in)).epsilon(1e-9));
        CHECK(wc.h >= in.h_lo);
        CHECK(wc.h <= in.h_hi);
        worst_gap = std::max(worst_gap, std::abs(wc.violation - bf.violation));
        ++count;
      }
  CHECK(count >= 1000);
  MESSAGE("largest analytic/brute gap " << worst_gap);
}

TEST_CASE("recovering the worst mode") {
  const MomentData mom = MomentData::from_mean_covariance(vec({0.5, -0.2, 0.1}), Matrix::Identity(3, 3));
  const Vector a = vec({1.0, -2.0, 0.5});
  const double alpha = 2.0;
  SUBCASE("rectangle upper end gives the minimizing vertex") {
    const ModeSupport box = ModeSupport::rectangle(vec({-0.3, -0.4, -0.1}), vec({0.2, 0.1, 0.4}));
    const auto [lo, hi] = box.linear_range(a);
    const double h_hi = (a.dot(mom.mu()) - lo) / alpha;
    const Vector m = recover_mode(h_hi, a, mom, box, alpha);
    CHECK((m - vec({-0.3, 0.1, -0.1})).norm() < 1e-12);
    CHECK(a.dot(m) == doctest::Approx(lo));
    CHECK_THROWS_AS(recover_mode(h_hi + 1e-3, a, mom, box, alpha), Error);
  }
  SUBCASE("ellipsoid midpoint gives the center") {
    const Matrix p = vec({0.04, 0.09, 0.01}).asDiagonal();
    const ModeSupport ell = ModeSupport::ellipsoid(vec({0.4, -0.1, 0.0}), p);
    const auto [lo, hi] = ell.linear_range(a);
    const double mid = (a.dot(mom.mu()) - 0.5 * (lo + hi)) / alpha;
    CHECK((recover_mode(mid, a, mom, ell, alpha) - vec({0.4, -0.1, 0.0})).norm() < 1e-12);
  }
  SUBCASE("random targets are reproduced inside the support") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      const Vector lo = Vector::NullaryExpr(3, [&] { return 0.3 * nd(rng); });
      const Vector hi = lo + Vector::NullaryExpr(3, [&] { return 0.5 * ud(rng); });
      const Matrix q = Matrix::NullaryExpr(3, 3, [&] { return 0.3 * nd(rng); });
      for (const ModeSupport& s :
           {ModeSupport::rectangle(lo, hi), ModeSupport::ellipsoid(lo, q * q.transpose() + 0.01 * Matrix::Identity(3, 3))}) {
        const Vector row = Vector::NullaryExpr(3, [&] { return nd(rng); });
        const auto [mn, mx] = s.linear_range(row);
        const double h_lo = (row.dot(mom.mu()) - mx) / alpha, h_hi = (row.dot(mom.mu()) - mn) / alpha;
        const double target = h_lo + (h_hi - h_lo) * ud(rng);
        const Vector m = recover_mode(target, row, mom, s, alpha);
        CHECK(row.dot(mom.mu() - m) / alpha == doctest::Approx(target).epsilon(1e-9));
        CHECK(s.contains(m, 1e-9));
      }
    }
  }
}

TEST_CASE("row separation end to end") {
  const MomentData mom = MomentData::from_mean_covariance(vec({0.0, 0.0}), Matrix::Identity(2, 2));
  const UnimodalityConfig uni{1.0, 0.05};
  const ModeSupport box = ModeSupport::rectangle(vec({-0.2, -0.2}), vec({0.3, 0.1}));
  const Vector a = vec({1.0, 0.5});

  SUBCASE("zero row is skipped") {
    const RowSeparation r = separate_row(Vector::Zero(2), 1.0, mom, box, uni);
    CHECK(r.skipped);
    CHECK_FALSE(r.violated());
  }
  SUBCASE("the emitted cut is violated by exactly the reported amount") {
    const double b = 1.0;
    const RowSeparation r = separate_row(a, b, mom, box, uni);
    REQUIRE(r.violated());
    CHECK(box.contains(r.mode));
    const SocCut cut = cut_d2_at(mom, r.mode, uni, r.worst.tau);
    CHECK(-cut.slack(a, b) == doctest::Approx(r.worst.violation).epsilon(1e-9));
  }
  SUBCASE("a generous right side is not violated") {
    const RowSeparation r = separate_row(a, 50.0, mom, box, uni);
    CHECK_FALSE(r.violated());
  }
}

TEST_CASE("deepest cut placement") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  int checked = 0;
  for (int k = 0; k < 300; ++k) {
    SeparationInstance in;
    in.alpha = 1.0 + 4.0 * ud(rng);
    in.epsilon = 0.01 + 0.3 * ud(rng);
    in.r_tilde = 0.5 + 2.0 * ud(rng);
    const double u1 = -0.9 + 1.8 * ud(rng), u2 = -0.9 + 1.8 * ud(rng);
    in.h_lo = std::min(u1, u2) * in.r_tilde;
    in.h_hi = std::max(u1, u2) * in.r_tilde;
    in.c_tilde = -in.alpha * in.h_lo + 0.5 * in.r_tilde * ud(rng) + 1e-6;
    const WorstCase wc = worst_case(in);
    if (wc.violation <= 0.0) continue;
    const double t = deepest_tau(in, wc.h, wc.tau);
    CHECK(t >= in.tau0());
    CHECK(t <= wc.tau * (1 + 1e-12));
    const double depth = violation_value(wc.h, t, in) / t;
    CHECK(depth >= violation_value(wc.h, wc.tau, in) / wc.tau - 1e-12);
    CHECK(depth > 0.0);

    // Grid oracle in log tau.
    double grid_best = -1e300;
    const double l0 = std::log(in.tau0()), l1 = std::log(wc.tau);
    for (int i = 0; i <= 20000; ++i) {
      const double tau = std::exp(l0 + (l1 - l0) * i / 20000.0);
      grid_best = std::max(grid_best, violation_value(wc.h, tau, in) / tau);
    }
    CHECK(depth >= grid_best - 1e-9 * std::max(1.0, grid_best));
    ++checked;
  }
  CHECK(checked > 50);

  SUBCASE("the emitted cut separates the point") {
    const MomentData mom = MomentData::from_mean_covariance(vec({0.0, 0.0}), Matrix::Identity(2, 2));
    const UnimodalityConfig uni{1.0, 0.05};
    const ModeSupport box = ModeSupport::rectangle(vec({-0.2, -0.2}), vec({0.3, 0.1}));
    const Vector a = vec({1.0, 0.5});
    const RowSeparation deep = separate_row(a, 1.0, mom, box, uni, CutPlacement::Deepest);
    const RowSeparation lit = separate_row(a, 1.0, mom, box, uni, CutPlacement::WorstCase);
    REQUIRE(deep.violated());
    CHECK(lit.cut_tau == doctest::Approx(lit.worst.tau));
    CHECK(deep.worst.violation == doctest::Approx(lit.worst.violation));
    CHECK(cut_d2_at(mom, deep.mode, uni, deep.cut_tau).slack(a, 1.0) < 0.0);
  }
}
