#include "drcc/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace drcc {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- generator

namespace {

Vector component_mean(const SyntheticSpec& s) {
  return s.law == ComponentLaw::Gamma ? Vector(s.shape) : Vector(Vector::Zero(s.dimension()));
}

Vector component_variance(const SyntheticSpec& s) {
  return s.law == ComponentLaw::Gamma ? Vector(s.shape) : Vector(Vector::Ones(s.dimension()));
}

}  // namespace

SyntheticSpec SyntheticSpec::calibrated(const Vector& mode, const Vector& mean, const Matrix& covariance, double alpha,
                                        const Vector& shape, ComponentLaw law) {
  const Eigen::Index n = mode.size();
  if (n < 1 || mean.size() != n || covariance.rows() != n || covariance.cols() != n ||
      (law == ComponentLaw::Gamma && shape.size() != n))
    throw Error(ErrorCode::DimensionMismatch, "synthetic mode, mean, covariance and shape sizes differ");
  if (!(alpha > 0.0)) throw Error(ErrorCode::DomainError, "synthetic alpha must be positive");

  SyntheticSpec s;
  s.mode = mode;
  s.alpha = alpha;
  s.law = law;
  s.shape = law == ComponentLaw::Gamma ? shape : Vector(Vector::Ones(n));
  const Vector d = mean - mode;
  const Vector delta = d * (alpha + 1.0) / alpha;
  const Matrix target =
      symmetrized((alpha + 2.0) / alpha * (covariance + d * d.transpose()) - delta * delta.transpose());
  Eigen::LLT<Matrix> llt(target);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::DomainError, "mode too far from the mean for the requested covariance");
  const Vector var = component_variance(s);
  s.mixing = Matrix(llt.matrixL()) * var.cwiseSqrt().cwiseInverse().asDiagonal();
  s.offset = component_mean(s) - s.mixing.lu().solve(delta);
  s.validate();
  return s;
}

void SyntheticSpec::validate() const {
  const Eigen::Index n = dimension();
  if (n < 1) throw Error(ErrorCode::DimensionMismatch, "synthetic spec has no dimensions");
  if (mixing.rows() != n || mixing.cols() != n || offset.size() != n || shape.size() != n)
    throw Error(ErrorCode::DimensionMismatch, "synthetic mixing, offset and shape must match the mode dimension");
  if (!(alpha > 0.0)) throw Error(ErrorCode::DomainError, "synthetic alpha must be positive");
  if (law == ComponentLaw::Gamma && !(shape.array() > 0.0).all())
    throw Error(ErrorCode::DomainError, "Gamma shapes must be positive");
  if (std::abs(mixing.determinant()) < 1e-12 * std::max(1.0, mixing.cwiseAbs().maxCoeff()))
    throw Error(ErrorCode::DomainError, "synthetic mixing matrix is singular");
}

Vector SyntheticSpec::mean() const {
  return mode + alpha / (alpha + 1.0) * mixing * (component_mean(*this) - offset);
}

Matrix SyntheticSpec::second_moment() const {
  const Vector ez = mixing * (component_mean(*this) - offset);
  const Matrix ezz = mixing * component_variance(*this).asDiagonal() * mixing.transpose() + ez * ez.transpose();
  const double k1 = alpha / (alpha + 1.0);
  const double k2 = alpha / (alpha + 2.0);
  return symmetrized(mode * mode.transpose() + k1 * (mode * ez.transpose() + ez * mode.transpose()) + k2 * ezz);
}

Matrix SyntheticSpec::covariance() const {
  const Vector mu = mean();
  return symmetrized(second_moment() - mu * mu.transpose());
}

MomentData SyntheticSpec::moments() const { return MomentData(mean(), second_moment()); }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ScenarioPool generate_synthetic_pool(const SyntheticSpec& spec, Eigen::Index count, std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw Error(ErrorCode::DomainError, "pool size must be positive");
  const Eigen::Index n = spec.dimension();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::gamma_distribution<double>> gammas;
  for (Eigen::Index i = 0; i < n; ++i) gammas.emplace_back(spec.law == ComponentLaw::Gamma ? spec.shape(i) : 1.0, 1.0);

  Matrix out(count, n);
  Vector g(n);
  for (Eigen::Index r = 0; r < count; ++r) {
    const double radial = std::pow(unif(rng), 1.0 / spec.alpha);
    for (Eigen::Index i = 0; i < n; ++i)
      g(i) = spec.law == ComponentLaw::Gamma ? gammas[static_cast<std::size_t>(i)](rng) : normal(rng);
    out.row(r) = (spec.mode + radial * spec.mixing * (g - spec.offset)).transpose();
  }
  return ScenarioPool(std::move(out));
}

std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index count, std::uint64_t seed) {
  if (count < 0 || count > n) throw Error(ErrorCode::ConfigError, "cannot draw " + std::to_string(count) +
                                                                      " distinct rows out of " + std::to_string(n));
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (Eigen::Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

ScenarioPool select_rows(const ScenarioPool& pool, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), pool.dimension());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pool.samples().row(rows[i]);
  return ScenarioPool(std::move(out));
}

// -------------------------------------------------------------- reliability

Vector ReliabilityReport::worst_row_violation() const {
  if (row_violation.rows() == 0) return Vector::Zero(row_violation.cols());
  return row_violation.colwise().maxCoeff().transpose();
}

ReliabilityReport evaluate_reliability(const DrccProblem& problem, const Vector& x, const ScenarioPool& scenarios,
                                       int batches, Eigen::Index batch_size) {
  if (batches < 1 || batch_size < 1) throw Error(ErrorCode::ConfigError, "need at least one non-empty batch");
  if (scenarios.size() < batches * batch_size)
    throw Error(ErrorCode::ValidationError, "scenario pool holds " + std::to_string(scenarios.size()) +
                                                " rows, evaluation needs " + std::to_string(batches * batch_size));
  if (x.size() != problem.num_vars) throw Error(ErrorCode::DimensionMismatch, "solution length differs from the problem");
  const auto nrows = static_cast<Eigen::Index>(problem.rows.size());
  for (const auto& r : problem.rows)
    if (r.row.dimension() != scenarios.dimension())
      throw Error(ErrorCode::DimensionMismatch, "scenario dimension differs from row '" + r.label + "'");

  Matrix a(scenarios.dimension(), nrows);
  Vector b(nrows), tol(nrows);
  ReliabilityReport rep;
  for (Eigen::Index j = 0; j < nrows; ++j) {
    const auto& r = problem.rows[static_cast<std::size_t>(j)];
    a.col(j) = r.row.a(x);
    b(j) = r.row.b(x);
    tol(j) = 1e-9 * (1.0 + std::abs(b(j)));
    rep.row_labels.push_back(r.label);
  }

  rep.row_violation = Matrix::Zero(batches, nrows);
  for (int k = 0; k < batches; ++k) {
    const Matrix lhs = scenarios.samples().middleRows(k * batch_size, batch_size) * a;  // batch x rows
    long all_met = 0;
    for (Eigen::Index s = 0; s < batch_size; ++s) {
      bool ok = true;
      for (Eigen::Index j = 0; j < nrows; ++j) {
        if (lhs(s, j) > b(j) + tol(j)) {
          rep.row_violation(k, j) += 1.0;
          ok = false;
        }
      }
      all_met += ok;
    }
    rep.row_violation.row(k) /= static_cast<double>(batch_size);
    rep.joint.push_back(100.0 * static_cast<double>(all_met) / static_cast<double>(batch_size));
  }
  rep.min = *std::min_element(rep.joint.begin(), rep.joint.end());
  rep.max = *std::max_element(rep.joint.begin(), rep.joint.end());
  rep.avg = std::accumulate(rep.joint.begin(), rep.joint.end(), 0.0) / static_cast<double>(batches);
  rep.avg = std::clamp(rep.avg, rep.min, rep.max);
  return rep;
}

ReliabilityReport evaluate_reliability(const OpfDecision& solution, const OpfProblem& problem,
                                       const ScenarioPool& scenarios, int batches, Eigen::Index batch_size) {
  return evaluate_reliability(problem.problem, problem.encode(solution), scenarios, batches, batch_size);
}

// ------------------------------------------------------------------- config

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

Vector to_vector(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) config_error(what + " must be a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) config_error(what + " must be a non-empty array of numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix to_matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) config_error(what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = to_vector(j[static_cast<std::size_t>(r)], what);
    if (r == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) config_error(what + " has rows of different lengths");
    m.row(r) = row.transpose();
  }
  return m;
}

json from_vector(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json from_matrix(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(from_vector(m.row(r).transpose()));
  return out;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string("bad value for '") + key + "'");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      config_error("unknown key '" + key + "' in " + where);
  }
}

SupportShape parse_shape(const std::string& s) {
  if (s == "rectangle") return SupportShape::Rectangle;
  if (s == "ellipsoid") return SupportShape::Ellipsoid;
  config_error("support shape must be 'rectangle' or 'ellipsoid', got '" + s + "'");
}

std::string_view shape_name(SupportShape s) { return s == SupportShape::Rectangle ? "rectangle" : "ellipsoid"; }

ModeSupport parse_support(const json& j) {
  if (!j.is_object()) config_error("support must be an object");
  if (j.contains("point")) return ModeSupport::point(to_vector(j["point"], "support.point"));
  if (j.contains("lower") || j.contains("upper")) {
    if (!j.contains("lower") || !j.contains("upper")) config_error("rectangle support needs lower and upper");
    Vector lo = to_vector(j["lower"], "support.lower"), hi = to_vector(j["upper"], "support.upper");
    if (lo.size() != hi.size()) config_error("support.lower and support.upper differ in length");
    if ((lo.array() > hi.array()).any()) config_error("support.lower exceeds support.upper");
    return ModeSupport::rectangle(std::move(lo), std::move(hi));
  }
  if (j.contains("center") && j.contains("shape")) {
    Vector c = to_vector(j["center"], "support.center");
    Matrix p = to_matrix(j["shape"], "support.shape");
    if (p.rows() != c.size() || p.cols() != c.size()) config_error("support.shape must be square and match the center");
    return ModeSupport::ellipsoid(std::move(c), symmetrized(p));
  }
  config_error("support needs 'point', 'lower'/'upper' or 'center'/'shape'");
}

json support_json(const ModeSupport& s) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointSupport>) {
          return {{"point", from_vector(v.mode)}};
        } else if constexpr (std::is_same_v<T, RectangleSupport>) {
          return {{"lower", from_vector(v.lower)}, {"upper", from_vector(v.upper)}};
        } else {
          return {{"center", from_vector(v.center)}, {"shape", from_matrix(v.shape)}};
        }
      },
      s.variant());
}

SyntheticSpec parse_synthetic(const json& j, double default_alpha) {
  check_keys(j, {"mode", "mean", "covariance", "std", "correlation", "mixing", "offset", "shape", "alpha", "law"},
             "synthetic");
  if (!j.contains("mode")) config_error("synthetic.mode is required");
  const Vector mode = to_vector(j["mode"], "synthetic.mode");
  const Eigen::Index n = mode.size();
  const double alpha = get_or(j, "alpha", default_alpha);
  const std::string law_name = get_or<std::string>(j, "law", "gamma");
  ComponentLaw law;
  if (law_name == "gamma") law = ComponentLaw::Gamma;
  else if (law_name == "normal") law = ComponentLaw::Normal;
  else config_error("synthetic.law must be 'gamma' or 'normal'");
  Vector shape = j.contains("shape") ? to_vector(j["shape"], "synthetic.shape") : Vector(Vector::Constant(n, 2.0));

  if (j.contains("mixing")) {
    SyntheticSpec s;
    s.mode = mode;
    s.alpha = alpha;
    s.law = law;
    s.mixing = to_matrix(j["mixing"], "synthetic.mixing");
    s.offset = j.contains("offset") ? to_vector(j["offset"], "synthetic.offset") : Vector(Vector::Zero(n));
    s.shape = law == ComponentLaw::Gamma ? shape : Vector(Vector::Ones(n));
    s.validate();
    return s;
  }
  if (!j.contains("mean")) config_error("synthetic needs either 'mixing' or 'mean'");
  const Vector mean = to_vector(j["mean"], "synthetic.mean");
  Matrix cov;
  if (j.contains("covariance")) {
    cov = to_matrix(j["covariance"], "synthetic.covariance");
  } else if (j.contains("std")) {
    const Vector sd = to_vector(j["std"], "synthetic.std");
    const double rho = get_or(j, "correlation", 0.0);
    if (sd.size() != n) config_error("synthetic.std must match the mode dimension");
    cov = rho * sd * sd.transpose();
    cov.diagonal() = sd.array().square();
  } else {
    config_error("synthetic needs 'covariance' or 'std'");
  }
  return SyntheticSpec::calibrated(mode, mean, cov, alpha, shape, law);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ModeSupport parse_mode_support(std::string_view json_text) { return parse_support(parse_json(json_text)); }

SyntheticSpec parse_synthetic_spec(std::string_view json_text, double default_alpha) {
  return parse_synthetic(parse_json(json_text), default_alpha);
}

ExperimentConfig parse_experiment_config(std::string_view json_text, const fs::path& base_dir) {
  const json j = parse_json(json_text);
  check_keys(j, {"case", "overrides", "wind", "data", "epsilon", "alpha", "support_shape", "mode_region", "runs",
                 "kinds", "solver", "evaluation", "output", "seed"},
             "config");
  ExperimentConfig cfg;
  if (!j.contains("case") || !j["case"].is_string()) config_error("'case' (path to the case file) is required");
  cfg.case_file = resolve(base_dir, j["case"].get<std::string>());

  if (j.contains("overrides")) {
    const json& o = j["overrides"];
    check_keys(o, {"load_scale", "rating_scale", "line_limits", "reserve_cost_factor"}, "overrides");
    cfg.overrides.load_scale = get_or(o, "load_scale", 1.0);
    cfg.overrides.rating_scale = get_or(o, "rating_scale", 1.0);
    cfg.opf.reserve_cost_factor = get_or(o, "reserve_cost_factor", cfg.opf.reserve_cost_factor);
    if (o.contains("line_limits")) {
      if (!o["line_limits"].is_array()) config_error("overrides.line_limits must be an array");
      for (const auto& l : o["line_limits"]) {
        check_keys(l, {"from", "to", "limit"}, "line limit");
        if (!l.contains("from") || !l.contains("to") || !l.contains("limit"))
          config_error("line limit needs from, to and limit");
        cfg.overrides.line_limits.push_back({get_or(l, "from", 0), get_or(l, "to", 0), get_or(l, "limit", 0.0)});
      }
    }
  }
  if (j.contains("wind")) {
    if (!j["wind"].is_array()) config_error("'wind' must be an array");
    std::vector<WindPlant> wind;
    for (const auto& w : j["wind"]) {
      check_keys(w, {"bus", "forecast"}, "wind plant");
      if (!w.contains("bus") || !w.contains("forecast")) config_error("wind plant needs bus and forecast");
      wind.push_back({get_or(w, "bus", 0), get_or(w, "forecast", 0.0)});
    }
    cfg.overrides.wind = std::move(wind);
  }

  cfg.unimodality.epsilon = get_or(j, "epsilon", cfg.unimodality.epsilon);
  cfg.unimodality.alpha = get_or(j, "alpha", cfg.unimodality.alpha);
  try {
    cfg.unimodality.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  cfg.shape = parse_shape(get_or<std::string>(j, "support_shape", "rectangle"));

  if (!j.contains("data")) config_error("'data' section is required");
  {
    const json& d = j["data"];
    check_keys(d, {"synthetic", "pool_file", "pool_size", "partial_pool", "n_data", "n_groups", "n_bins",
                   "trim_outliers", "moments"},
               "data");
    auto& ds = cfg.data;
    if (d.contains("synthetic")) ds.synthetic = parse_synthetic(d["synthetic"], cfg.unimodality.alpha);
    if (d.contains("pool_file")) ds.pool_file = resolve(base_dir, get_or<std::string>(d, "pool_file", ""));
    if (ds.synthetic.has_value() == !ds.pool_file.empty())
      config_error("data needs exactly one of 'synthetic' and 'pool_file'");
    ds.pool_size = get_or<Eigen::Index>(d, "pool_size", ds.pool_size);
    ds.partial_pool = get_or<Eigen::Index>(d, "partial_pool", ds.partial_pool);
    ds.n_data = get_or<Eigen::Index>(d, "n_data", ds.n_data);
    ds.n_groups = get_or(d, "n_groups", ds.n_groups);
    ds.n_bins = get_or(d, "n_bins", ds.n_bins);
    ds.trim_outliers = get_or(d, "trim_outliers", ds.trim_outliers);
    const std::string moments = get_or<std::string>(d, "moments", "sample");
    if (moments != "sample" && moments != "exact") config_error("data.moments must be 'sample' or 'exact'");
    ds.exact_moments = moments == "exact";
    if (ds.exact_moments && !ds.synthetic) config_error("exact moments need a synthetic generator");
    if (ds.pool_size < 1 || ds.partial_pool < 0 || ds.n_data < 1 || ds.n_groups < 1 || ds.n_bins < 2)
      config_error("data sizes must be positive and n_bins at least 2");
    if (!(ds.trim_outliers >= 0.0 && ds.trim_outliers < 0.5)) config_error("data.trim_outliers must lie in [0, 0.5)");
  }

  if (j.contains("mode_region")) {
    const json& m = j["mode_region"];
    if (m.is_string() && m == "own") cfg.mode_region = ModeRegionPolicy::Own;
    else if (m.is_string() && m == "common") cfg.mode_region = ModeRegionPolicy::Common;
    else if (m.is_object()) cfg.common_region = parse_support(m);
    else config_error("mode_region must be 'own', 'common' or a support object");
  }

  if (j.contains("runs") && j.contains("kinds")) config_error("give either 'runs' or 'kinds', not both");
  if (j.contains("kinds")) {
    if (!j["kinds"].is_array()) config_error("'kinds' must be an array");
    for (const auto& k : j["kinds"]) {
      if (!k.is_string()) config_error("'kinds' entries must be strings");
      RunSpec r;
      r.kind = parse_ambiguity_kind(k.get<std::string>());
      cfg.runs.push_back(r);
    }
  } else if (j.contains("runs")) {
    if (!j["runs"].is_array()) config_error("'runs' must be an array");
    for (const auto& rj : j["runs"]) {
      check_keys(rj, {"name", "kind", "n_data", "n_bins", "support_shape", "mode", "support"}, "run");
      if (!rj.contains("kind")) config_error("every run needs a kind");
      RunSpec r;
      r.kind = parse_ambiguity_kind(get_or<std::string>(rj, "kind", ""));
      r.name = get_or<std::string>(rj, "name", "");
      if (rj.contains("n_data")) r.n_data = get_or<Eigen::Index>(rj, "n_data", 0);
      if (rj.contains("n_bins")) r.n_bins = get_or(rj, "n_bins", 0);
      if (rj.contains("support_shape")) r.shape = parse_shape(get_or<std::string>(rj, "support_shape", ""));
      if (rj.contains("mode")) r.mode = to_vector(rj["mode"], "run.mode");
      if (rj.contains("support")) r.support = parse_support(rj["support"]);
      if ((r.n_data && *r.n_data < 1) || (r.n_bins && *r.n_bins < 2)) config_error("run n_data/n_bins out of range");
      cfg.runs.push_back(std::move(r));
    }
  }
  if (cfg.runs.empty()) config_error("no runs configured");
  std::map<std::string, int> seen;
  for (auto& r : cfg.runs) {
    if (r.name.empty()) r.name = std::string(to_string(r.kind));
    if (!valid_name(r.name)) config_error("run name '" + r.name + "' may only use letters, digits, '-', '_' and '.'");
    if (const int n = seen[r.name]++; n > 0) r.name += "-" + std::to_string(n + 1);
  }

  if (j.contains("solver")) {
    const json& s = j["solver"];
    check_keys(s, {"max_iter", "violation_tol", "cut_placement"}, "solver");
    cfg.solve.max_iter = get_or(s, "max_iter", cfg.solve.max_iter);
    cfg.solve.violation_tol = get_or(s, "violation_tol", cfg.solve.violation_tol);
    const std::string p = get_or<std::string>(s, "cut_placement", "deepest");
    if (p == "deepest") cfg.solve.cut_placement = CutPlacement::Deepest;
    else if (p == "worst_case") cfg.solve.cut_placement = CutPlacement::WorstCase;
    else config_error("solver.cut_placement must be 'deepest' or 'worst_case'");
  }
  if (j.contains("evaluation")) {
    const json& e = j["evaluation"];
    check_keys(e, {"batches", "batch_size", "scenario_file"}, "evaluation");
    cfg.evaluation.batches = get_or(e, "batches", cfg.evaluation.batches);
    cfg.evaluation.batch_size = get_or<Eigen::Index>(e, "batch_size", cfg.evaluation.batch_size);
    if (e.contains("scenario_file"))
      cfg.evaluation.scenario_file = resolve(base_dir, get_or<std::string>(e, "scenario_file", ""));
    if (cfg.evaluation.batches < 0 || cfg.evaluation.batch_size < 1)
      config_error("evaluation.batches must be >= 0 and batch_size >= 1");
  }
  cfg.output_dir = resolve(base_dir, get_or<std::string>(j, "output", "out"));
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return parse_experiment_config(read_file(path), path.parent_path());
}

// --------------------------------------------------------------- experiment

namespace {

enum Stream : std::uint64_t { kPool = 1, kEvaluation = 2, kGroups = 3, kPartial = 4 };

class Estimator {
 public:
  Estimator(const ScenarioPool& pool, std::uint64_t seed, int n_groups) : pool_(pool), seed_(seed), n_groups_(n_groups) {}

  const ModeScatter& scatter(Eigen::Index n_data, int n_bins) {
    const auto key = std::make_pair(n_data, n_bins);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    ModeScatter sc;
    sc.n_data = n_data;
    sc.n_bins = n_bins;
    sc.modes.resize(n_groups_, pool_.dimension());
    sc.means.resize(n_groups_, pool_.dimension());
    const std::uint64_t base = derive_seed(derive_seed(seed_, kGroups), static_cast<std::uint64_t>(n_data) * 4096 +
                                                                            static_cast<std::uint64_t>(n_bins));
    for (int g = 0; g < n_groups_; ++g) {
      const ScenarioPool group =
          select_rows(pool_, sample_without_replacement(pool_.size(), n_data, derive_seed(base, g)));
      sc.modes.row(g) = estimate_mode_histogram(group, n_bins).transpose();
      sc.means.row(g) = group.samples().colwise().mean();
    }
    order_.push_back(key);
    return cache_.emplace(key, std::move(sc)).first->second;
  }

  std::vector<ModeScatter> all() const {
    std::vector<ModeScatter> out;
    for (const auto& k : order_) out.push_back(cache_.at(k));
    return out;
  }

 private:
  const ScenarioPool& pool_;
  std::uint64_t seed_;
  int n_groups_;
  std::map<std::pair<Eigen::Index, int>, ModeScatter> cache_;
  std::vector<std::pair<Eigen::Index, int>> order_;
};

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.config = cfg;
  Network net = parse_case(cfg.case_file);
  apply_overrides(net, cfg.overrides);

  const auto& ds = cfg.data;
  const ScenarioPool full = ds.synthetic ? generate_synthetic_pool(*ds.synthetic, ds.pool_size, derive_seed(cfg.seed, kPool))
                                         : read_pool_csv(ds.pool_file);
  const ScenarioPool pool =
      ds.partial_pool > 0
          ? select_rows(full, sample_without_replacement(full.size(), ds.partial_pool, derive_seed(cfg.seed, kPartial)))
          : full;
  const MomentData moments = ds.exact_moments ? ds.synthetic->moments() : estimate_moments(pool);
  rep.mean = moments.mu();
  rep.covariance = moments.covariance();
  rep.pool_mode = estimate_mode_histogram(pool, ds.n_bins);
  rep.histogram_samples = trim_outliers(pool, ds.trim_outliers).samples();

  Estimator est(pool, cfg.seed, ds.n_groups);
  std::optional<ModeSupport> common;
  if (cfg.mode_region == ModeRegionPolicy::Common) {
    common = cfg.common_region ? *cfg.common_region
                               : build_mode_support(est.scatter(ds.n_data, ds.n_bins).modes, cfg.shape);
  }

  std::optional<ScenarioPool> evaluation;
  const Eigen::Index needed = static_cast<Eigen::Index>(cfg.evaluation.batches) * cfg.evaluation.batch_size;
  auto evaluation_pool = [&]() -> const ScenarioPool& {
    if (!evaluation) {
      if (!cfg.evaluation.scenario_file.empty()) {
        evaluation = read_pool_csv(cfg.evaluation.scenario_file);
      } else if (ds.synthetic) {
        evaluation = generate_synthetic_pool(*ds.synthetic, needed, derive_seed(cfg.seed, kEvaluation));
      } else {
        std::mt19937_64 rng(derive_seed(cfg.seed, kEvaluation));
        std::uniform_int_distribution<Eigen::Index> pick(0, full.size() - 1);
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(needed));
        for (auto& r : rows) r = pick(rng);
        evaluation = select_rows(full, rows);
      }
    }
    return *evaluation;
  };

  for (const RunSpec& spec : cfg.runs) {
    RunResult res;
    res.spec = spec;
    try {
      AmbiguityConfig amb;
      amb.kind = spec.kind;
      amb.unimodality = cfg.unimodality;
      const int n_bins = spec.n_bins.value_or(ds.n_bins);
      if (spec.kind == AmbiguityKind::D2) {
        res.mode = spec.mode ? *spec.mode : (n_bins == ds.n_bins ? rep.pool_mode : estimate_mode_histogram(pool, n_bins));
        amb.support = ModeSupport::point(res.mode);
      } else if (spec.kind == AmbiguityKind::D3) {
        amb.support = spec.support ? *spec.support
                                   : build_mode_support(est.scatter(spec.n_data.value_or(ds.n_data), n_bins).modes,
                                                        spec.shape.value_or(cfg.shape));
      }
      res.support = amb.support;

      OpfProblem opf = build_problem(net, moments, amb, cfg.opf);
      if (common && spec.kind != AmbiguityKind::D3) opf.problem.models.front().mode_region = common;

      SolveReport sr = solve_drcc(opf.problem, cfg.solve);
      res.status = sr.status;
      res.x = sr.x;
      res.decision = opf.decode(sr.x);
      res.generation_cost = opf.generation_cost(sr.x);
      res.reserve_cost = opf.reserve_cost(sr.x);
      res.total_cost = res.generation_cost + res.reserve_cost;
      res.up_reserve = res.decision.r_up.sum();
      res.down_reserve = res.decision.r_dn.sum();
      res.iterations = sr.iterations;
      res.cuts = sr.cuts_added;
      res.wall_seconds = sr.wall_seconds;
      res.final_violation = sr.final_max_violation;
      res.objective_trace = sr.objective_trace;
      res.violation_trace = sr.violation_trace;
      if (cfg.evaluation.batches > 0)
        res.reliability = evaluate_reliability(opf.problem, sr.x, evaluation_pool(), cfg.evaluation.batches,
                                               cfg.evaluation.batch_size);
      res.ok = true;
    } catch (const Error& e) {
      res.error_code = e.code();
      res.error = e.what();
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    rep.runs.push_back(std::move(res));
  }
  rep.scatter = est.all();
  return rep;
}

bool ExperimentReport::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.ok; });
}

// ------------------------------------------------------------------ writing

namespace {

json network_json(const Network& net) {
  json j;
  j["base_mva"] = net.base_mva;
  j["slack"] = net.slack;
  for (const auto& b : net.buses) j["buses"].push_back({b.id, b.load});
  for (const auto& b : net.branches) j["branches"].push_back({b.from, b.to, b.reactance, b.limit});
  for (const auto& g : net.generators) {
    json row = {g.bus, g.pmin, g.pmax, g.quad_cost, g.lin_cost};
    if (!std::isnan(g.reserve_cost)) row.push_back(g.reserve_cost);
    j["generators"].push_back(row);
  }
  j["wind"] = json::array();
  for (const auto& w : net.wind) j["wind"].push_back({w.bus, w.forecast});
  return j;
}

Network network_from_json(const json& j) {
  Network net;
  try {
    net.base_mva = j.at("base_mva").get<double>();
    net.slack = j.at("slack").get<int>();
    for (const auto& b : j.at("buses")) net.buses.push_back({b.at(0).get<int>(), b.at(1).get<double>()});
    for (const auto& b : j.at("branches"))
      net.branches.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<double>(), b.at(3).get<double>()});
    for (const auto& g : j.at("generators")) {
      Generator gen{g.at(0).get<int>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<double>(),
                    g.at(4).get<double>()};
      if (g.size() > 5) gen.reserve_cost = g.at(5).get<double>();
      net.generators.push_back(gen);
    }
    for (const auto& w : j.at("wind")) net.wind.push_back({w.at(0).get<int>(), w.at(1).get<double>()});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("solution network: ") + e.what());
  }
  net.validate();
  return net;
}

json reliability_json(const ReliabilityReport& r) {
  json j;
  j["min"] = r.min;
  j["avg"] = r.avg;
  j["max"] = r.max;
  j["joint"] = r.joint;
  j["row_labels"] = r.row_labels;
  j["worst_row_violation"] = from_vector(r.worst_row_violation());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(12) << v;
  return ss.str();
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

void ExperimentReport::write(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::ConfigError, "cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream csv;
  csv << "name,kind,status,total_cost,generation_cost,reserve_cost,up_reserve_mw,down_reserve_mw,iterations,cuts,"
         "wall_seconds,max_violation,reliability_min,reliability_avg,reliability_max,worst_row_violation,error\n";
  for (const auto& r : runs) {
    csv << csv_quote(r.spec.name) << ',' << to_string(r.spec.kind) << ',';
    if (!r.ok) {
      csv << "failed,,,,,,,,,,,,,,"
          << (r.error_code ? std::string(to_string(*r.error_code)) : std::string("InternalError")) << '\n';
      continue;
    }
    csv << to_string(r.status) << ',' << fmt(r.total_cost) << ',' << fmt(r.generation_cost) << ','
        << fmt(r.reserve_cost) << ',' << fmt(r.up_reserve) << ',' << fmt(r.down_reserve) << ',' << r.iterations << ','
        << r.cuts << ',' << fmt(r.wall_seconds) << ',' << fmt(r.final_violation) << ',';
    if (r.reliability)
      csv << fmt(r.reliability->min) << ',' << fmt(r.reliability->avg) << ',' << fmt(r.reliability->max) << ','
          << fmt(r.reliability->worst_row_violation().maxCoeff()) << ',';
    else
      csv << ",,,,";
    csv << '\n';
  }
  write_text(dir / "results.csv", csv.str());

  json s;
  s["seed"] = config.seed;
  s["case"] = config.case_file.string();
  s["epsilon"] = config.unimodality.epsilon;
  s["alpha"] = config.unimodality.alpha;
  s["support_shape"] = shape_name(config.shape);
  s["moments"] = {{"mean", from_vector(mean)}, {"covariance", from_matrix(covariance)}};
  s["pool_mode"] = from_vector(pool_mode);
  if (config.data.synthetic) {
    const auto& syn = *config.data.synthetic;
    s["ground_truth"] = {{"mode", from_vector(syn.mode)},
                         {"mean", from_vector(syn.mean())},
                         {"covariance", from_matrix(syn.covariance())}};
  }
  s["runs"] = json::array();
  for (const auto& r : runs) {
    json j;
    j["name"] = r.spec.name;
    j["kind"] = to_string(r.spec.kind);
    j["ok"] = r.ok;
    if (!r.ok) {
      j["error_category"] = r.error_code ? std::string(to_string(*r.error_code)) : std::string("InternalError");
      j["error"] = r.error;
      s["runs"].push_back(j);
      continue;
    }
    j["status"] = to_string(r.status);
    j["total_cost"] = r.total_cost;
    j["generation_cost"] = r.generation_cost;
    j["reserve_cost"] = r.reserve_cost;
    j["up_reserve_mw"] = r.up_reserve;
    j["down_reserve_mw"] = r.down_reserve;
    j["iterations"] = r.iterations;
    j["cuts"] = r.cuts;
    j["wall_seconds"] = r.wall_seconds;
    j["max_violation"] = r.final_violation;
    j["objective_trace"] = r.objective_trace;
    j["violation_trace"] = r.violation_trace;
    if (r.spec.kind == AmbiguityKind::D2) j["mode"] = from_vector(r.mode);
    if (r.support) j["support"] = support_json(*r.support);
    j["dispatch"] = {{"pg", from_vector(r.decision.pg)},
                     {"r_up", from_vector(r.decision.r_up)},
                     {"r_dn", from_vector(r.decision.r_dn)},
                     {"d", from_vector(r.decision.d)}};
    if (r.reliability) j["reliability"] = reliability_json(*r.reliability);
    s["runs"].push_back(j);
  }
  write_text(dir / "summary.json", s.dump(2) + "\n");

  const Eigen::Index n = mean.size();
  std::ostringstream modes;
  modes << "n_data,n_bins,group";
  for (Eigen::Index i = 0; i < n; ++i) modes << ",mode_" << i + 1;
  for (Eigen::Index i = 0; i < n; ++i) modes << ",mean_" << i + 1;
  modes << '\n';
  for (const auto& sc : scatter) {
    for (Eigen::Index g = 0; g < sc.modes.rows(); ++g) {
      modes << sc.n_data << ',' << sc.n_bins << ',' << g;
      for (Eigen::Index i = 0; i < n; ++i) modes << ',' << fmt(sc.modes(g, i));
      for (Eigen::Index i = 0; i < n; ++i) modes << ',' << fmt(sc.means(g, i));
      modes << '\n';
    }
  }
  write_text(dir / "modes.csv", modes.str());

  // Per-axis marginals plus the joint histogram of the first two axes.
  std::ostringstream hist;
  hist << "axis,bin_1,bin_2,center_1,center_2,count\n";
  const Matrix& x = histogram_samples;
  const int nb = config.data.n_bins;
  if (x.rows() > 0) {
    const Vector lo = x.colwise().minCoeff().transpose();
    const Vector width = (x.colwise().maxCoeff().transpose() - lo) / nb;
    auto bin = [&](Eigen::Index r, Eigen::Index c) {
      if (width(c) <= 0.0) return 0;
      return std::clamp(static_cast<int>(std::floor((x(r, c) - lo(c)) / width(c))), 0, nb - 1);
    };
    auto center = [&](Eigen::Index c, int b) { return lo(c) + (b + 0.5) * width(c); };
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      std::vector<long> counts(static_cast<std::size_t>(nb), 0);
      for (Eigen::Index r = 0; r < x.rows(); ++r) ++counts[static_cast<std::size_t>(bin(r, c))];
      for (int b = 0; b < nb; ++b)
        hist << c + 1 << ',' << b << ",," << fmt(center(c, b)) << ",," << counts[static_cast<std::size_t>(b)] << '\n';
    }
    if (x.cols() >= 2) {
      std::vector<long> counts(static_cast<std::size_t>(nb * nb), 0);
      for (Eigen::Index r = 0; r < x.rows(); ++r) ++counts[static_cast<std::size_t>(bin(r, 0) * nb + bin(r, 1))];
      for (int b1 = 0; b1 < nb; ++b1)
        for (int b2 = 0; b2 < nb; ++b2)
          hist << "1+2," << b1 << ',' << b2 << ',' << fmt(center(0, b1)) << ',' << fmt(center(1, b2)) << ','
               << counts[static_cast<std::size_t>(b1 * nb + b2)] << '\n';
    }
  }
  write_text(dir / "histogram.csv", hist.str());

  Network net = parse_case(config.case_file);
  apply_overrides(net, config.overrides);
  for (const auto& r : runs) {
    if (!r.ok) continue;
    json j;
    j["name"] = r.spec.name;
    j["kind"] = to_string(r.spec.kind);
    j["epsilon"] = config.unimodality.epsilon;
    j["alpha"] = config.unimodality.alpha;
    if (r.support) j["support"] = support_json(*r.support);
    j["reserve_cost_factor"] = config.opf.reserve_cost_factor;
    j["moments"] = {{"mean", from_vector(mean)}, {"covariance", from_matrix(covariance)}};
    j["network"] = network_json(net);
    j["x"] = from_vector(r.x);
    write_text(dir / ("solution_" + r.spec.name + ".json"), j.dump(2) + "\n");
  }
}

SolutionFile load_solution(const fs::path& path) {
  const json j = parse_json(read_file(path));
  try {
    AmbiguityConfig amb;
    amb.kind = parse_ambiguity_kind(j.at("kind").get<std::string>());
    amb.unimodality.epsilon = j.at("epsilon").get<double>();
    amb.unimodality.alpha = j.at("alpha").get<double>();
    if (j.contains("support")) amb.support = parse_support(j["support"]);
    OpfOptions opf;
    opf.reserve_cost_factor = j.value("reserve_cost_factor", opf.reserve_cost_factor);
    const json& m = j.at("moments");
    return SolutionFile{network_from_json(j.at("network")),
                        MomentData::from_mean_covariance(to_vector(m.at("mean"), "moments.mean"),
                                                         to_matrix(m.at("covariance"), "moments.covariance")),
                        std::move(amb), opf, to_vector(j.at("x"), "x")};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace drcc
