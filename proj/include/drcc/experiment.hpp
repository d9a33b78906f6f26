#ifndef DRCC_EXPERIMENT_HPP
#define DRCC_EXPERIMENT_HPP

#include "drcc/dcopf.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drcc {

enum class ComponentLaw { Gamma, Normal };

/// xi = mode + U^(1/alpha) L (G - c) with U ~ Uniform(0,1) and independent
/// components G_i (Gamma(shape_i, 1) or standard normal). Any such law is
/// alpha-unimodal about `mode`, and its first two moments are closed form.
struct SyntheticSpec {
  Vector mode;
  double alpha = 1.0;
  Matrix mixing;  ///< L
  Vector shape;   ///< Gamma shapes; ignored for Normal
  Vector offset;  ///< c
  ComponentLaw law = ComponentLaw::Gamma;

  /// Picks L and c so the law has exactly the given mode, mean and
  /// covariance. Smaller Gamma shapes give more skew. Throws DomainError when
  /// ((a+2)/a)(C + dd^T) - ((a+1)/a)^2 dd^T, d = mean - mode, is not PD.
  static SyntheticSpec calibrated(const Vector& mode, const Vector& mean, const Matrix& covariance, double alpha,
                                  const Vector& shape, ComponentLaw law = ComponentLaw::Gamma);

  Eigen::Index dimension() const { return mode.size(); }
  /// Throws DimensionMismatch or DomainError.
  void validate() const;
  Vector mean() const;
  Matrix second_moment() const;
  Matrix covariance() const;
  MomentData moments() const;
};

/// Deterministic in (spec, count, seed).
ScenarioPool generate_synthetic_pool(const SyntheticSpec& spec, Eigen::Index count, std::uint64_t seed);

/// Independent stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// `count` distinct row indices out of [0, n), in draw order.
std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index count, std::uint64_t seed);

ScenarioPool select_rows(const ScenarioPool& pool, const std::vector<Eigen::Index>& rows);

struct ReliabilityReport {
  std::vector<double> joint;  ///< % of scenarios meeting every row, per batch
  double min = 0.0;
  double avg = 0.0;
  double max = 0.0;
  Matrix row_violation;  ///< batch x row, fraction of scenarios violating the row
  std::vector<std::string> row_labels;

  /// Largest per-batch violation frequency of each row.
  Vector worst_row_violation() const;
};

/// Consecutive batches of `batch_size` scenarios from the start of the pool.
/// A row counts as met when a(x)^T xi <= b(x) + 1e-9 (1 + |b(x)|).
ReliabilityReport evaluate_reliability(const DrccProblem& problem, const Vector& x, const ScenarioPool& scenarios,
                                       int batches, Eigen::Index batch_size);
ReliabilityReport evaluate_reliability(const OpfDecision& solution, const OpfProblem& problem,
                                       const ScenarioPool& scenarios, int batches, Eigen::Index batch_size);

struct DataSettings {
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path pool_file;  ///< used when synthetic is absent
  Eigen::Index pool_size = 10000;
  /// When positive, estimation uses this many pool rows drawn without replacement.
  Eigen::Index partial_pool = 0;
  Eigen::Index n_data = 100;
  int n_groups = 100;
  int n_bins = 15;
  /// Quantile trimmed from each tail of every axis in the histogram output.
  double trim_outliers = 0.0;
  /// Use the generator's closed-form moments instead of sample moments.
  bool exact_moments = false;
};

/// One solve. Unset fields inherit the data settings.
struct RunSpec {
  std::string name;
  AmbiguityKind kind = AmbiguityKind::D1;
  std::optional<Eigen::Index> n_data;
  std::optional<int> n_bins;
  std::optional<SupportShape> shape;
  /// D2 mode. Default: histogram mode of the estimation pool.
  std::optional<Vector> mode;
  /// D3 set. Default: built from the group mode estimates.
  std::optional<ModeSupport> support;
};

struct EvaluationSettings {
  int batches = 20;
  Eigen::Index batch_size = 5000;
  /// Out-of-sample scenarios. Default: fresh draws from the generator, or a
  /// resample of the pool when the data come from a file.
  std::filesystem::path scenario_file;
};

enum class ModeRegionPolicy {
  Own,     ///< each run uses only its own support (D3) for the mode constraints
  Common,  ///< every run carries the default D3 set as its mode constraints
};

struct ExperimentConfig {
  std::filesystem::path case_file;
  CaseOverrides overrides;
  OpfOptions opf;
  DataSettings data;
  std::vector<RunSpec> runs;
  UnimodalityConfig unimodality;
  SupportShape shape = SupportShape::Rectangle;
  ModeRegionPolicy mode_region = ModeRegionPolicy::Common;
  /// Region used under Common. Default: the set built from the base data settings.
  std::optional<ModeSupport> common_region;
  EvaluationSettings evaluation;
  SolveOptions solve;
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
};

/// Relative paths are resolved against base_dir. Throws ConfigError.
ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// {"point": m}, {"lower": lo, "upper": hi} or {"center": c, "shape": P}.
ModeSupport parse_mode_support(std::string_view json_text);

/// Parses the "synthetic" object of a config or gen-data spec.
SyntheticSpec parse_synthetic_spec(std::string_view json_text, double default_alpha = 1.0);

struct RunResult {
  RunSpec spec;
  bool ok = false;
  std::optional<ErrorCode> error_code;
  std::string error;

  SolveStatus status = SolveStatus::Converged;
  Vector x;
  OpfDecision decision;
  double generation_cost = 0.0;
  double reserve_cost = 0.0;
  double total_cost = 0.0;
  double up_reserve = 0.0;
  double down_reserve = 0.0;
  int iterations = 0;
  std::size_t cuts = 0;
  double wall_seconds = 0.0;
  double final_violation = 0.0;
  std::vector<double> objective_trace;
  std::vector<double> violation_trace;
  Vector mode;  ///< D2 mode used
  std::optional<ModeSupport> support;
  std::optional<ReliabilityReport> reliability;
};

/// Mode and mean estimates of every sample group for one (N_data, N_bin).
struct ModeScatter {
  Eigen::Index n_data = 0;
  int n_bins = 0;
  Matrix modes;  ///< group x dim
  Matrix means;
};

struct ExperimentReport {
  ExperimentConfig config;
  Vector mean;
  Matrix covariance;
  Vector pool_mode;
  std::vector<ModeScatter> scatter;
  Matrix histogram_samples;  ///< estimation pool after outlier trimming
  std::vector<RunResult> runs;

  /// results.csv, summary.json, modes.csv, histogram.csv and one
  /// solution_<name>.json per solved run.
  void write(const std::filesystem::path& dir) const;
  bool all_ok() const;
};

/// Estimates, solves and evaluates every configured run. A run that throws is
/// recorded with its error category and the remaining runs continue.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Solution file written by ExperimentReport::write, enough to rebuild the
/// OPF rows for an evaluation-only pass.
struct SolutionFile {
  Network network;
  MomentData moments;
  AmbiguityConfig ambiguity;
  OpfOptions opf;
  Vector x;
};

SolutionFile load_solution(const std::filesystem::path& path);

}  // namespace drcc

#endif  // DRCC_EXPERIMENT_HPP
