#include "drcc/master.hpp"

#include <doctest.h>

#include <cmath>

using namespace drcc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

MomentData toy_moments() {
  Matrix c(2, 2);
  c << 1.0, 0.4, 0.4, 2.0;
  return MomentData::from_mean_covariance(vec({0.3, -0.1}), c);
}

// x = (w1, w2, t): min t + 0.5 w1^2 with w on the simplex and
// P[w^T xi <= t] >= 1 - eps over the ambiguity set.
DrccProblem toy(const AmbiguityConfig& amb, std::optional<ModeSupport> region = std::nullopt) {
  DrccProblem p;
  p.num_vars = 3;
  p.quadratic = Matrix::Zero(3, 3);
  p.quadratic(0, 0) = 0.5;
  p.linear = vec({0.0, 0.0, 1.0});
  p.equalities.push_back({vec({1.0, 1.0, 0.0}), 1.0});
  const double inf = std::numeric_limits<double>::infinity();
  p.lower = vec({0.0, 0.0, -inf});
  p.models.push_back({toy_moments(), amb, std::move(region)});
  UncertainConstraint r;
  r.row.a_matrix = Matrix::Zero(2, 3);
  r.row.a_matrix(0, 0) = 1.0;
  r.row.a_matrix(1, 1) = 1.0;
  r.row.a_offset = Vector::Zero(2);
  r.row.b_coef = vec({0.0, 0.0, 1.0});
  r.label = "portfolio";
  p.rows.push_back(r);
  return p;
}

AmbiguityConfig config(AmbiguityKind kind, std::optional<ModeSupport> support = std::nullopt) {
  AmbiguityConfig a;
  a.kind = kind;
  a.unimodality = {1.0, 0.05};
  a.support = std::move(support);
  return a;
}

// Smallest t with zero worst-case violation for weights w, found by bisection
// on the scalar separation problem, and never below the mode constraint.
double min_threshold(const Vector& w, const MomentData& mom, const ModeSupport& support, const UnimodalityConfig& uni) {
  const double floor = support.linear_range(w).second;
  if (worst_case(make_instance(w, floor, mom, support, uni)).violation <= 0.0) return floor;
  double lo = floor, hi = floor + 100.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (worst_case(make_instance(w, mid, mom, support, uni)).violation > 0.0) lo = mid;
    else hi = mid;
  }
  return hi;
}

// Minimizes f over w1 in [0, 1] on a grid, then golden section around the best node.
template <class F>
double minimize_unit(F f) {
  double best = 0.0, best_v = f(0.0);
  for (int i = 1; i <= 400; ++i) {
    const double v = f(i / 400.0);
    if (v < best_v) best_v = v, best = i / 400.0;
  }
  double a = std::max(0.0, best - 1.0 / 400), b = std::min(1.0, best + 1.0 / 400);
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 80; ++it) {
    const double c = b - r * (b - a), d = a + r * (b - a);
    if (f(c) < f(d)) b = d;
    else a = c;
  }
  return std::min(best_v, f(0.5 * (a + b)));
}

}  // namespace

TEST_CASE("moment-only toy matches a one-dimensional search") {
  const DrccProblem p = toy(config(AmbiguityKind::D1));
  const SolveReport rep = solve_drcc(p);
  CHECK(rep.status == SolveStatus::Converged);
  CHECK(rep.iterations == 1);
  CHECK(rep.cuts_added == 0);
  const MomentData mom = toy_moments();
  const double k = std::sqrt(0.95 / 0.05);
  const double oracle = minimize_unit([&](double w1) {
    const Vector w = vec({w1, 1 - w1});
    return k * std::sqrt(w.dot(mom.covariance() * w)) + mom.mu().dot(w) + 0.5 * w1 * w1;
  });
  CHECK(rep.objective == doctest::Approx(oracle).epsilon(1e-7));
  CHECK(rep.x(0) + rep.x(1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cutting planes reach the exact fixed-mode optimum") {
  const Vector mode = vec({-0.2, 0.1});
  const ModeSupport point = ModeSupport::point(mode);
  const DrccProblem p = toy(config(AmbiguityKind::D2, point));
  const SolveReport rep = solve_drcc(p);
  REQUIRE(rep.status == SolveStatus::Converged);
  CHECK(rep.final_max_violation <= 1e-8);
  CHECK(rep.iterations <= 15);

  const MomentData mom = toy_moments();
  const UnimodalityConfig uni{1.0, 0.05};
  const double oracle = minimize_unit([&](double w1) {
    return min_threshold(vec({w1, 1 - w1}), mom, point, uni) + 0.5 * w1 * w1;
  });
  CHECK(rep.objective == doctest::Approx(oracle).epsilon(1e-6));

  // Certificate: the brute-force worst case at the returned point is not violated.
  const Vector w = rep.x.head(2);
  const WorstCase bf = brute_force_worst_case(make_instance(w, rep.x(2), mom, point, uni), 400, 400);
  CHECK(bf.violation <= 1e-6);

  // The relaxation only tightens.
  for (std::size_t i = 1; i < rep.objective_trace.size(); ++i)
    CHECK(rep.objective_trace[i] >= rep.objective_trace[i - 1] - 1e-7 * std::abs(rep.objective_trace[i - 1]));
  CHECK(rep.violation_trace.size() == static_cast<std::size_t>(rep.iterations));
  CHECK(rep.violation_trace.back() <= 1e-8);
}

TEST_CASE("misspecified-mode toy") {
  const ModeSupport box = ModeSupport::rectangle(vec({-0.4, -0.2}), vec({0.1, 0.3}));
  const MomentData mom = toy_moments();
  const UnimodalityConfig uni{1.0, 0.05};
  SolveOptions opt;
  const SolveReport d3 = solve_drcc(toy(config(AmbiguityKind::D3, box)), opt);
  REQUIRE(d3.status == SolveStatus::Converged);
  const double oracle = minimize_unit([&](double w1) {
    return min_threshold(vec({w1, 1 - w1}), mom, box, uni) + 0.5 * w1 * w1;
  });
  CHECK(d3.objective == doctest::Approx(oracle).epsilon(1e-6));

  SUBCASE("ordering across sets over the same mode region") {
    const SolveReport d1 = solve_drcc(toy(config(AmbiguityKind::D1), box), opt);
    const SolveReport d4 = solve_drcc(toy(config(AmbiguityKind::D4), box), opt);
    const SolveReport d5 = solve_drcc(toy(config(AmbiguityKind::D5), box), opt);
    for (const Vector& m : {vec({-0.4, -0.2}), vec({0.1, 0.3}), vec({-0.1, 0.0})}) {
      const SolveReport d2 = solve_drcc(toy(config(AmbiguityKind::D2, ModeSupport::point(m)), box), opt);
      CHECK(d2.objective <= d3.objective * (1 + 1e-6));
    }
    CHECK(d3.objective <= d1.objective * (1 + 1e-6));
    CHECK(d4.objective <= d5.objective * (1 + 1e-6));
    CHECK(d5.objective <= d1.objective * (1 + 1e-6));
  }
  SUBCASE("literal and deepest placement agree") {
    SolveOptions lit;
    lit.cut_placement = CutPlacement::WorstCase;
    const SolveReport r = solve_drcc(toy(config(AmbiguityKind::D3, box)), lit);
    CHECK(r.objective == doctest::Approx(d3.objective).epsilon(1e-6));
  }
  SUBCASE("iteration limit is reported, not thrown") {
    SolveOptions one;
    one.max_iter = 1;
    const SolveReport r = solve_drcc(toy(config(AmbiguityKind::D3, box)), one);
    CHECK(r.status == SolveStatus::IterationLimit);
    CHECK(r.final_max_violation > 1e-8);
    CHECK(r.objective <= d3.objective + 1e-7);
  }
}

TEST_CASE("assembled master sizes") {
  const ModeSupport box = ModeSupport::rectangle(vec({-0.4, -0.2}), vec({0.1, 0.3}));
  const DrccProblem p = toy(config(AmbiguityKind::D3, box));
  CutPool pool(1);
  const MasterModel empty = assemble_master(p, pool);
  CHECK(empty.num_cut_cones == 0);
  CHECK(empty.epigraph_var >= 3);
  CHECK(empty.conic.num_equalities() == 1);

  const UnimodalityConfig uni{1.0, 0.05};
  const MomentData mom = toy_moments();
  for (double tau : {1.1, 2.0, 5.0}) CHECK(pool.add(0, tau, box.initial_point(), cut_d2_at(mom, box.initial_point(), uni, tau)));
  CHECK_FALSE(pool.add(0, 2.0, box.initial_point(), cut_d2_at(mom, box.initial_point(), uni, 2.0)));
  CHECK(pool.total() == 3);
  const MasterModel full = assemble_master(p, pool);
  CHECK(full.num_cut_cones == 3);
  CHECK(full.conic.num_socs() == empty.conic.num_socs() + 3);

  const MasterModel single = assemble_master(toy(config(AmbiguityKind::D1)), CutPool(1));
  CHECK(single.conic.num_socs() == 2);  // epigraph and the single cut
}

TEST_CASE("master errors") {
  SUBCASE("infeasible deterministic rows") {
    DrccProblem p = toy(config(AmbiguityKind::D1));
    p.inequalities.push_back({vec({-1.0, 0.0, 0.0}), -2.0});
    CHECK_THROWS_WITH_AS(solve_drcc(p), doctest::Contains("MasterInfeasible"), Error);
  }
  SUBCASE("dimension mismatch") {
    DrccProblem p = toy(config(AmbiguityKind::D1));
    p.linear = vec({1.0});
    CHECK_THROWS_WITH_AS(solve_drcc(p), doctest::Contains("DimensionMismatch"), Error);
  }
  SUBCASE("support too far from the mean") {
    const DrccProblem p = toy(config(AmbiguityKind::D3, ModeSupport::rectangle(vec({-5.0, -5.0}), vec({5.0, 5.0}))));
    CHECK_THROWS_WITH_AS(solve_drcc(p), doctest::Contains("Assumption1Violated"), Error);
  }
  SUBCASE("bad iteration budget") {
    SolveOptions o;
    o.max_iter = 0;
    CHECK_THROWS_WITH_AS(solve_drcc(toy(config(AmbiguityKind::D1)), o), doctest::Contains("ConfigError"), Error);
  }
}
