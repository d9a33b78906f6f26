#include "drcc/ambiguity.hpp"

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

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::ConfigError;
}

MomentData random_moments(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  const Matrix l = Matrix::NullaryExpr(n, n, [&] { return nd(rng); });
  return MomentData::from_mean_covariance(Vector::NullaryExpr(n, [&] { return nd(rng); }),
                                          l * l.transpose() + 0.5 * Matrix::Identity(n, n));
}

// Row with a(x) = x (n = l), b(x) = b0.
UncertainRow identity_row(int n, double b0) {
  return {Matrix::Identity(n, n), Vector::Zero(n), Vector::Zero(n), b0};
}

}  // namespace

TEST_CASE("moment-only cut") {
  const MomentData std_normal = MomentData::from_mean_covariance(Vector::Zero(3), Matrix::Identity(3, 3));
  const SocCut cut = cut_d1(std_normal, 0.05);
  const Vector a = vec({1, -2, 0.5});
  // sqrt(0.95 / 0.05) = sqrt(19) = 4.3589
  CHECK((cut.scale * a).norm() == doctest::Approx(4.3589 * a.norm()).epsilon(1e-4));
  CHECK((cut.scale * a).norm() == doctest::Approx(std::sqrt(19.0) * a.norm()).epsilon(1e-14));
  // One-sided Chebyshev: P(a^T xi > t) <= var / (var + t^2) = eps at t = sqrt(var (1-eps)/eps).
  const double var = a.squaredNorm();
  CHECK(var / (var + (cut.scale * a).squaredNorm()) == doctest::Approx(0.05).epsilon(1e-12));

  CHECK(k_factor(AmbiguityKind::D1, {1.0, 0.5 - 1e-12}) == doctest::Approx(1.0).epsilon(1e-9));
  // Zero row: 0 <= b.
  CHECK(cut.slack(Vector::Zero(3), 2.0) == doctest::Approx(2.0));
  CHECK(cut.slack(Vector::Zero(3), -1.0) < 0.0);
}

TEST_CASE("realized cuts evaluate the same as numeric slack") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const MomentData mom = random_moments(rng, 3);
  UncertainRow row{Matrix::NullaryExpr(3, 5, [&] { return nd(rng); }), Vector::NullaryExpr(3, [&] { return nd(rng); }),
                   Vector::NullaryExpr(5, [&] { return nd(rng); }), 1.7};
  const UnimodalityConfig uni{2.0, 0.1};
  for (const SocCut& cut : {cut_d1(mom, 0.1), cut_d2_at(mom, mom.mu() + 0.1 * Vector::Ones(3), uni, 1.8),
                            single_cut(AmbiguityKind::D4, mom, uni)}) {
    const SocConstraint soc = cut.realize(row);
    for (int t = 0; t < 5; ++t) {
      const Vector x = Vector::NullaryExpr(5, [&] { return nd(rng); });
      CHECK(soc.slack(x) == doctest::Approx(cut.slack(row.a(x), row.b(x))).epsilon(1e-12));
    }
  }
}

TEST_CASE("parametric cut at (tau, m)") {
  const UnimodalityConfig uni{1.0, 0.05};
  CHECK(uni.tau0() == doctest::Approx(1.05263).epsilon(1e-5));

  SUBCASE("at the mean and tau0 the cone term vanishes") {
    const MomentData mom = MomentData::from_mean_covariance(vec({1, 2}), Matrix::Identity(2, 2));
    const SocCut cut = cut_d2_at(mom, mom.mu(), uni, uni.tau0());
    CHECK(cut.scale.norm() < 1e-7);
    const Vector a = vec({0.3, -0.4});
    // 0 <= tau0 (b - mu^T a)
    CHECK(cut.slack(a, 5.0) == doctest::Approx(uni.tau0() * (5.0 - mom.mu().dot(a))).epsilon(1e-7));
  }

  SUBCASE("Lambda identity ||Lambda a||^2 = R~^2 - h^2") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 100; ++t) {
      const int n = 1 + t % 4;
      const double alpha = 1.0 + t % 3;
      const MomentData mom = random_moments(rng, n);
      // Scale the offset so the set stays nonempty.
      Vector d = Vector::NullaryExpr(n, [&] { return nd(rng); });
      const Matrix b = ((alpha + 2) / alpha) * mom.covariance();
      d *= 0.9 * alpha / std::sqrt(d.dot(b.ldlt().solve(d)));
      const Vector m = mom.mu() - d;
      const Vector a = Vector::NullaryExpr(n, [&] { return nd(rng); });
      const double r2 = a.dot(b * a);
      const double h = a.dot(d) / alpha;
      const Matrix lam = lambda_matrix(mom, m, alpha);
      CHECK((lam * a).squaredNorm() == doctest::Approx(r2 - h * h).epsilon(1e-9));
    }
  }

  SUBCASE("errors") {
    const MomentData mom = MomentData::from_mean_covariance(Vector::Zero(2), Matrix::Identity(2, 2));
    CHECK(code_of([&] { cut_d2_at(mom, Vector::Zero(2), uni, 1.0); }) == ErrorCode::InvalidTau);
    // |mu - m| = 2 > sqrt(3): Lambda^2 indefinite.
    CHECK(code_of([&] { cut_d2_at(mom, vec({2, 0}), uni, 2.0); }) == ErrorCode::Assumption1Violated);
  }
}

TEST_CASE("single-cut multipliers") {
  const UnimodalityConfig uni{1.0, 0.05};
  CHECK(k_factor(AmbiguityKind::D1, uni) == doctest::Approx(4.3589).epsilon(1e-4));
  CHECK(d4_tau_star(uni) == doctest::Approx(1.5789).epsilon(1e-4));
  CHECK(k_factor(AmbiguityKind::D4, uni) == doctest::Approx(2.7607).epsilon(1e-4));
  CHECK(k_factor(AmbiguityKind::D5, uni) == doctest::Approx(2.8087).epsilon(1e-4));

  // 1e6-point grid maxima over tau in [tau0, 10].
  CHECK(k_factor(AmbiguityKind::D4, uni) == doctest::Approx(2.7606359975463124).epsilon(1e-9));
  CHECK(k_factor(AmbiguityKind::D4, {2.0, 0.1}) == doctest::Approx(2.0124611797221243).epsilon(1e-9));
  CHECK(k_factor(AmbiguityKind::D4, {3.0, 0.01}) == doctest::Approx(7.306611105117958).epsilon(1e-9));

  CHECK(code_of([] { k_factor(AmbiguityKind::D5, {2.0, 0.05}); }) == ErrorCode::UnsupportedRegime);
  CHECK(code_of([] { k_factor(AmbiguityKind::D5, {1.0, 0.2}); }) == ErrorCode::UnsupportedRegime);
  CHECK(code_of([] { k_factor(AmbiguityKind::D2, {1.0, 0.05}); }) == ErrorCode::ConfigError);

  SUBCASE("K4 <= K5 <= K1 over epsilon in (0, 1/6]") {
    for (int i = 1; i <= 200; ++i) {
      const UnimodalityConfig u{1.0, (1.0 / 6.0) * i / 200.0};
      const double k4 = k_factor(AmbiguityKind::D4, u);
      const double k5 = k_factor(AmbiguityKind::D5, u);
      const double k1 = k_factor(AmbiguityKind::D1, u);
      CHECK(k4 <= k5);
      CHECK(k5 <= k1);
    }
  }

  SUBCASE("D4 agrees with a tau grid for several alpha") {
    for (double alpha : {1.0, 1.5, 2.0, 4.0})
      for (double eps : {0.01, 0.05, 0.2, 0.4}) {
        const UnimodalityConfig u{alpha, eps};
        double best = 0;
        const double t0 = u.tau0();
        for (int i = 0; i <= 200000; ++i) {
          const double t = t0 + (20.0 - t0) * i / 200000.0;
          best = std::max(best, std::sqrt(std::max(0.0, (1 - eps - std::pow(t, -alpha)) / eps)) / t);
        }
        CHECK(k_factor(AmbiguityKind::D4, u) == doctest::Approx(std::sqrt((alpha + 2) / alpha) * best).epsilon(1e-7));
      }
  }
}

TEST_CASE("parametric cut at the mean reproduces the D4 single cut") {
  // With m = mu the binding requirement on b - mu^T a is
  // max_tau g(tau) ||Lambda a|| / tau = K4 sqrt(a^T C a).
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const UnimodalityConfig uni{1.0, 0.05};
  const double k4 = k_factor(AmbiguityKind::D4, uni);
  for (int t = 0; t < 20; ++t) {
    const MomentData mom = random_moments(rng, 3);
    const Vector a = Vector::NullaryExpr(3, [&] { return nd(rng); });
    const double need = k4 * (mom.covariance_factor().transpose() * a).norm();
    const SocCut at_star = cut_d2_at(mom, mom.mu(), uni, d4_tau_star(uni));
    // At tau*: ||scale a|| <= tau (b - mu^T a)  <=>  b - mu^T a >= ||scale a|| / tau
    CHECK((at_star.scale * a).norm() / d4_tau_star(uni) == doctest::Approx(need).epsilon(1e-8));
    // No other tau asks for more.
    for (double tau : {1.1, 1.3, 1.5, 1.7, 2.0, 3.0, 6.0}) {
      const SocCut c = cut_d2_at(mom, mom.mu(), uni, tau);
      CHECK((c.scale * a).norm() / tau <= need * (1 + 1e-12));
    }
  }
}

TEST_CASE("cuts are positively homogeneous in the row") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  const MomentData mom = random_moments(rng, 2);
  const UnimodalityConfig uni{2.0, 0.05};
  const Vector m = mom.mu() + vec({0.05, -0.05});
  for (const SocCut& cut : {cut_d1(mom, 0.05), cut_d2_at(mom, m, uni, 1.7), single_cut(AmbiguityKind::D4, mom, uni)}) {
    const Vector a = Vector::NullaryExpr(2, [&] { return nd(rng); });
    const double b = 3.0;
    for (double lam : {0.1, 2.0, 37.0})
      CHECK(cut.slack(lam * a, lam * b) == doctest::Approx(lam * cut.slack(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("deterministic mode constraints") {
  const int n = 3;
  const UncertainRow row = identity_row(n, 4.0);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;

  auto satisfied = [](const ModeFeasibility& mf, const Vector& z) {
    double worst = 1e300;
    for (const auto& c : mf.linear) worst = std::min(worst, c.rhs - c.coef.dot(z));
    for (const auto& c : mf.cones) worst = std::min(worst, c.slack(z));
    return worst;
  };

  SUBCASE("point") {
    const Vector m = vec({1, 2, -1});
    const ModeFeasibility mf = mode_feasibility_constraints(ModeSupport::point(m), row);
    CHECK(mf.num_aux == 0);
    REQUIRE(mf.linear.size() == 1);
    const Vector x = vec({0.5, 1, 0.3});
    CHECK(satisfied(mf, x) == doctest::Approx(4.0 - x.dot(m)));
  }

  SUBCASE("symmetric box reduces to |a|^T 1 <= b") {
    const ModeFeasibility mf =
        mode_feasibility_constraints(ModeSupport::rectangle(-Vector::Ones(n), Vector::Ones(n)), row);
    CHECK(mf.num_aux == n);
    for (int t = 0; t < 20; ++t) {
      const Vector x = Vector::NullaryExpr(n, [&] { return 2 * nd(rng); });
      Vector z(2 * n);
      z << x, x.cwiseAbs();
      // First row carries the support function; the rest encode t >= |a|.
      CHECK(mf.linear[0].rhs - mf.linear[0].coef.dot(z) == doctest::Approx(4.0 - x.cwiseAbs().sum()).epsilon(1e-12));
      CHECK(satisfied(mf, z) >= std::min(0.0, 4.0 - x.cwiseAbs().sum()) - 1e-12);
      z.tail(n).array() -= 0.1;
      CHECK(satisfied(mf, z) < 0.0);
    }
  }

  SUBCASE("general box matches the support function") {
    const Vector lo = vec({-1, 0.5, -2}), hi = vec({0.5, 1, 3});
    const ModeSupport box = ModeSupport::rectangle(lo, hi);
    const ModeFeasibility mf = mode_feasibility_constraints(box, row);
    for (int t = 0; t < 20; ++t) {
      const Vector x = Vector::NullaryExpr(n, [&] { return nd(rng); });
      Vector z(2 * n);
      z << x, x.cwiseAbs();
      CHECK(mf.linear[0].rhs - mf.linear[0].coef.dot(z) ==
            doctest::Approx(4.0 - box.linear_range(x).second).epsilon(1e-12));
    }
  }

  SUBCASE("unit ball reduces to ||a|| <= b") {
    const ModeFeasibility mf =
        mode_feasibility_constraints(ModeSupport::ellipsoid(Vector::Zero(n), Matrix::Identity(n, n)), row);
    REQUIRE(mf.cones.size() == 1);
    const Vector x = vec({1, -2, 2});
    CHECK(satisfied(mf, x) == doctest::Approx(1.0));
  }
}

TEST_CASE("ambiguity configuration validation") {
  const MomentData mom = MomentData::from_mean_covariance(Vector::Zero(2), Matrix::Identity(2, 2));
  AmbiguityConfig cfg;
  cfg.kind = AmbiguityKind::D3;
  CHECK(code_of([&] { cfg.validate(mom); }) == ErrorCode::ConfigError);
  cfg.support = ModeSupport::rectangle(vec({-0.5, -0.5}), vec({0.5, 0.5}));
  CHECK_NOTHROW(cfg.validate(mom));
  cfg.kind = AmbiguityKind::D2;
  CHECK(code_of([&] { cfg.validate(mom); }) == ErrorCode::ConfigError);
  cfg.support = ModeSupport::point(vec({2, 0}));
  CHECK(code_of([&] { cfg.validate(mom); }) == ErrorCode::Assumption1Violated);
  cfg.kind = AmbiguityKind::D5;
  cfg.unimodality.epsilon = 0.2;
  CHECK(code_of([&] { cfg.validate(mom); }) == ErrorCode::UnsupportedRegime);

  CHECK(parse_ambiguity_kind("D4") == AmbiguityKind::D4);
  CHECK(code_of([] { parse_ambiguity_kind("D9"); }) == ErrorCode::ConfigError);
}
