#ifndef DRCC_CONIC_HPP
#define DRCC_CONIC_HPP

#include "drcc/core.hpp"

#include <Eigen/SparseCore>

#include <string>
#include <vector>

namespace drcc {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// coef^T x <= rhs, or coef^T x == rhs for equality rows.
struct LinearConstraint {
  Vector coef;
  double rhs = 0.0;
};

/// ||F x + f|| <= d^T x + e
struct SocConstraint {
  Matrix F;
  Vector f;
  Vector d;
  double e = 0.0;

  /// d^T x + e - ||F x + f||; non-negative when satisfied.
  double slack(const Vector& x) const { return d.dot(x) + e - (F * x + f).norm(); }
};

/// min c^T x  s.t.  A x = b,  G x + s = h,  s in R+^l x Q^{q_1} x ... x Q^{q_k}.
///
/// Rows are accumulated through the add_* methods; the linear inequalities
/// always precede the cone blocks in the assembled G, in insertion order.
class ConicProblem {
 public:
  explicit ConicProblem(Eigen::Index num_vars = 0);

  Eigen::Index add_variables(Eigen::Index count);
  Eigen::Index num_vars() const { return num_vars_; }

  void set_objective(const Vector& c);
  const Vector& objective() const { return c_; }

  void add_equality(const Vector& coef, double rhs);
  void add_inequality(const Vector& coef, double rhs);
  /// Sparse form: coefficients at the given indices.
  void add_inequality(const std::vector<std::pair<Eigen::Index, double>>& coef, double rhs);
  void add_soc(const SocConstraint& soc);

  Eigen::Index num_equalities() const { return static_cast<Eigen::Index>(eq_rhs_.size()); }
  Eigen::Index num_inequalities() const { return static_cast<Eigen::Index>(lin_rhs_.size()); }
  Eigen::Index num_socs() const { return static_cast<Eigen::Index>(soc_dims_.size()); }
  const std::vector<Eigen::Index>& soc_dims() const { return soc_dims_; }

  SparseMatrix equality_matrix() const;
  Vector equality_rhs() const;
  SparseMatrix cone_matrix() const;
  Vector cone_rhs() const;

 private:
  Eigen::Index num_vars_;
  Vector c_;
  std::vector<Triplet> eq_;
  std::vector<double> eq_rhs_;
  std::vector<Triplet> lin_;
  std::vector<double> lin_rhs_;
  std::vector<Triplet> soc_;
  std::vector<double> soc_rhs_;
  std::vector<Eigen::Index> soc_dims_;
};

enum class ConicStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

std::string_view to_string(ConicStatus status);

struct ConicSolution {
  ConicStatus status = ConicStatus::NumericalFailure;
  Vector x;
  Vector y;  ///< equality multipliers
  Vector z;  ///< cone multipliers
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  /// Optimal only to the looser tolerances applied to a stalled run.
  bool reduced_accuracy = false;
};

/// Abstract conic back end. Implementations must tolerate sequential reuse.
class ConicSolverAdapter {
 public:
  virtual ~ConicSolverAdapter() = default;
  virtual ConicSolution solve(const ConicProblem& problem) = 0;
};

struct InteriorPointOptions {
  int max_iterations = 100;
  double feasibility_tol = 1e-10;
  double absolute_gap_tol = 1e-9;
  double relative_gap_tol = 1e-10;
  double step_fraction = 0.99;
  int refinement_steps = 6;
  /// Dual residual still accepted when progress stalls.
  double stalled_dual_tol = 1e-6;
};

/// Primal-dual path-following method on the homogeneous self-dual embedding,
/// Nesterov-Todd scaling, Mehrotra predictor-corrector.
class InteriorPointSolver final : public ConicSolverAdapter {
 public:
  explicit InteriorPointSolver(InteriorPointOptions options = {}) : options_(options) {}
  ConicSolution solve(const ConicProblem& problem) override;

 private:
  InteriorPointOptions options_;
};

}  // namespace drcc

#endif  // DRCC_CONIC_HPP
