#ifndef DRCC_MASTER_HPP
#define DRCC_MASTER_HPP

#include "drcc/ambiguity.hpp"
#include "drcc/conic.hpp"
#include "drcc/separation.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace drcc {

/// Moments and ambiguity set shared by a group of uncertain rows.
struct UncertaintyModel {
  MomentData moments;
  /// For D1/D4/D5 a support is optional; when present it only contributes
  /// the deterministic mode constraints.
  AmbiguityConfig ambiguity;
  /// Region whose every point must satisfy the row deterministically. Falls
  /// back to ambiguity.support; set it to give D1/D2/D4/D5 the same mode
  /// constraints as a D3 model over the same region.
  std::optional<ModeSupport> mode_region;

  const ModeSupport* mode_constraint_region() const {
    if (mode_region) return &*mode_region;
    return ambiguity.support ? &*ambiguity.support : nullptr;
  }
};

struct UncertainConstraint {
  UncertainRow row;
  std::size_t model = 0;
  std::string label;
};

/// min x^T Q x + c^T x + c0 subject to deterministic linear rows, bounds and
/// uncertain rows.
struct DrccProblem {
  Eigen::Index num_vars = 0;
  Matrix quadratic;  ///< Q, symmetric PSD (may be empty for a linear objective)
  Vector linear;
  double constant = 0.0;
  std::vector<LinearConstraint> equalities;
  std::vector<LinearConstraint> inequalities;  ///< coef^T x <= rhs
  Vector lower;                                ///< -inf allowed; empty means unbounded
  Vector upper;
  std::vector<UncertaintyModel> models;
  std::vector<UncertainConstraint> rows;

  /// Throws ValidationError / DimensionMismatch / Assumption1Violated.
  void validate() const;
  double objective_value(const Vector& x) const;
};

struct CutEntry {
  double tau = 0.0;
  Vector mode;
  SocCut cut;
};

/// Cuts collected for each uncertain row across iterations.
class CutPool {
 public:
  explicit CutPool(std::size_t num_rows = 0) : cuts_(num_rows) {}

  /// False (and nothing stored) when (tau, mode) duplicates a stored entry
  /// within 1e-9.
  bool add(std::size_t row, double tau, const Vector& mode, SocCut cut);
  const std::vector<CutEntry>& cuts(std::size_t row) const { return cuts_.at(row); }
  std::size_t num_rows() const { return cuts_.size(); }
  std::size_t total() const;

  int iteration = 0;

 private:
  std::vector<std::vector<CutEntry>> cuts_;
};

/// Conic model of the current relaxation plus index bookkeeping.
struct MasterModel {
  ConicProblem conic;
  Eigen::Index epigraph_var = -1;  ///< index of t >= x^T Q x, or -1
  std::size_t num_cut_cones = 0;
};

/// Adds a constant tightening to every realized cut so the master's own
/// residuals do not surface as violations.
struct AssemblyOptions {
  double cut_margin = 0.0;
};

MasterModel assemble_master(const DrccProblem& problem, const CutPool& pool, const AssemblyOptions& opts = {});

enum class SolveStatus { Converged, IterationLimit };

std::string_view to_string(SolveStatus status);

struct SolveOptions {
  int max_iter = 50;
  double violation_tol = kViolationThreshold;
  double cut_margin = 1e-9;
  CutPlacement cut_placement = CutPlacement::Deepest;
  /// Called with each trace line as it is produced.
  std::function<void(const std::string&)> on_trace;
};

struct SolveReport {
  SolveStatus status = SolveStatus::Converged;
  Vector x;
  double objective = 0.0;
  int iterations = 0;
  std::size_t cuts_added = 0;
  std::vector<double> violation_trace;  ///< max violation found after each master solve
  std::vector<double> objective_trace;
  std::vector<std::string> trace;
  double final_max_violation = 0.0;
  double wall_seconds = 0.0;
  CutPool pool;
};

/// Solve-separate-add loop. Throws MasterInfeasible or SolverFailure.
SolveReport solve_drcc(const DrccProblem& problem, const SolveOptions& options = {},
                       ConicSolverAdapter* solver = nullptr);

/// Largest worst-case violation over the separated rows at x, and its row
/// (or -1 when no row needs separation).
std::pair<double, long> max_violation(const DrccProblem& problem, const Vector& x);

}  // namespace drcc

#endif  // DRCC_MASTER_HPP
