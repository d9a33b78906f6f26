#ifndef DRCC_AMBIGUITY_HPP
#define DRCC_AMBIGUITY_HPP

#include "drcc/conic.hpp"
#include "drcc/uncertainty.hpp"

#include <optional>
#include <string_view>

namespace drcc {

/// a(x)^T xi <= b(x) with a(x) = a_matrix x + a_offset, b(x) = b_coef^T x + b_offset.
struct UncertainRow {
  Matrix a_matrix;  ///< n x l
  Vector a_offset;  ///< n
  Vector b_coef;    ///< l
  double b_offset = 0.0;

  Eigen::Index num_vars() const { return a_matrix.cols(); }
  Eigen::Index dimension() const { return a_matrix.rows(); }
  Vector a(const Vector& x) const { return a_matrix * x + a_offset; }
  double b(const Vector& x) const { return b_coef.dot(x) + b_offset; }

  /// Throws DimensionMismatch if the pieces disagree.
  void validate() const;
};

/// ||scale a(x)|| <= b_weight b(x) + a_weight^T a(x).
///
/// Independent of the row it is later applied to, so one cut can be realized
/// against many rows.
struct SocCut {
  Matrix scale;
  double b_weight = 1.0;
  Vector a_weight;

  /// Conic form over the row's decision vector.
  SocConstraint realize(const UncertainRow& row) const;
  /// rhs - lhs for numeric a and b; negative when violated.
  double slack(const Vector& a, double b) const;
};

enum class AmbiguityKind { D1, D2, D3, D4, D5 };

std::string_view to_string(AmbiguityKind kind);
AmbiguityKind parse_ambiguity_kind(std::string_view text);

/// Kind plus the data it needs. D2 carries a point support, D3 a set.
struct AmbiguityConfig {
  AmbiguityKind kind = AmbiguityKind::D1;
  UnimodalityConfig unimodality;
  std::optional<ModeSupport> support;

  /// Enforces the per-kind preconditions (the nonemptiness check for D2/D3, the D5
  /// validity range).
  void validate(const MomentData& moments) const;
  /// Whether the set is handled by cutting planes (D2, D3) or a single cut.
  bool needs_separation() const { return kind == AmbiguityKind::D2 || kind == AmbiguityKind::D3; }
};

/// Moment-only cut: sqrt((1-eps)/eps) ||L^T a|| <= b - mu^T a.
SocCut cut_d1(const MomentData& moments, double epsilon);

/// Member (tau, m) of the D2/D3 cut family.
SocCut cut_d2_at(const MomentData& moments, const Vector& mode, const UnimodalityConfig& uni, double tau);

/// K ||L^T a|| <= b - mu^T a for the single-cut sets D1, D4, D5.
SocCut single_cut(AmbiguityKind kind, const MomentData& moments, const UnimodalityConfig& uni);

/// Multiplier K of the single-cut reformulations.
double k_factor(AmbiguityKind kind, const UnimodalityConfig& uni);

/// Interior maximizer of sqrt((1-eps-tau^-a)/eps)/tau, clamped to tau0.
double d4_tau_star(const UnimodalityConfig& uni);

/// Lambda(m) = (((a+2)/a) C - (1/a^2)(mu-m)(mu-m)^T)^{1/2}.
Matrix lambda_matrix(const MomentData& moments, const Vector& mode, double alpha);

/// Deterministic encoding of a(x)^T m <= b(x) for all m in the support.
/// Linear rows and cones are over [x; aux] where aux has num_aux entries.
struct ModeFeasibility {
  Eigen::Index num_aux = 0;
  std::vector<LinearConstraint> linear;
  std::vector<SocConstraint> cones;
};

ModeFeasibility mode_feasibility_constraints(const ModeSupport& support, const UncertainRow& row);

}  // namespace drcc

#endif  // DRCC_AMBIGUITY_HPP
