#ifndef DRCC_UNCERTAINTY_HPP
#define DRCC_UNCERTAINTY_HPP

#include "drcc/core.hpp"

#include <filesystem>
#include <utility>
#include <variant>
#include <vector>

namespace drcc {

/// Realizations of the uncertain vector, one per row (MW for wind errors).
class ScenarioPool {
 public:
  explicit ScenarioPool(Matrix samples);

  const Matrix& samples() const { return samples_; }
  Eigen::Index size() const { return samples_.rows(); }
  Eigen::Index dimension() const { return samples_.cols(); }
  bool empty() const { return samples_.rows() == 0; }

  /// Rows [first, first + count).
  ScenarioPool slice(Eigen::Index first, Eigen::Index count) const;

 private:
  Matrix samples_;
};

/// First moment mu and raw second moment E[xi xi^T].
class MomentData {
 public:
  /// Throws DegenerateMoments unless sigma - mu mu^T is positive definite.
  MomentData(Vector mu, Matrix second_moment);

  static MomentData from_mean_covariance(const Vector& mu, const Matrix& covariance);

  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return sigma_; }
  const Matrix& covariance() const { return covariance_; }
  /// Lower Cholesky factor of the centered covariance.
  const Matrix& covariance_factor() const { return factor_; }
  Eigen::Index dimension() const { return mu_.size(); }

 private:
  Vector mu_;
  Matrix sigma_;
  Matrix covariance_;
  Matrix factor_;
};

struct PointSupport {
  Vector mode;
};

struct RectangleSupport {
  Vector lower;
  Vector upper;

  Vector center() const { return 0.5 * (lower + upper); }
  Vector half_width() const { return 0.5 * (upper - lower); }
};

/// { center + P^{1/2} u : ||u|| <= 1 }
struct EllipsoidSupport {
  Vector center;
  Matrix shape;
};

/// Set of admissible mode locations.
class ModeSupport {
 public:
  using Variant = std::variant<PointSupport, RectangleSupport, EllipsoidSupport>;

  ModeSupport(PointSupport p);
  ModeSupport(RectangleSupport r);
  ModeSupport(EllipsoidSupport e);

  static ModeSupport point(Vector m) { return ModeSupport(PointSupport{std::move(m)}); }
  static ModeSupport rectangle(Vector lo, Vector hi) {
    return ModeSupport(RectangleSupport{std::move(lo), std::move(hi)});
  }
  static ModeSupport ellipsoid(Vector c, Matrix p) {
    return ModeSupport(EllipsoidSupport{std::move(c), std::move(p)});
  }

  const Variant& variant() const { return v_; }
  Eigen::Index dimension() const;
  bool is_point() const { return std::holds_alternative<PointSupport>(v_); }

  /// Point used to seed the cutting-plane loop: the point itself, the
  /// lexicographically smallest vertex of a rectangle, the ellipsoid center.
  Vector initial_point() const;

  /// [min, max] of a^T m over the set.
  std::pair<double, double> linear_range(const Vector& a) const;

  /// Membership with absolute tolerance (quadratic-form metric for ellipsoids).
  bool contains(const Vector& m, double tol = 1e-9) const;

 private:
  Variant v_;
};

/// Degree of unimodality and violation budget.
struct UnimodalityConfig {
  double alpha = 1.0;
  double epsilon = 0.05;

  /// Throws DomainError unless alpha >= 1 and 0 < epsilon < 0.5.
  void validate() const;
  /// Smallest admissible tau, (1 / (1 - epsilon))^(1 / alpha).
  double tau0() const;
};

enum class SupportShape { Rectangle, Ellipsoid };

MomentData estimate_moments(const ScenarioPool& pool);

/// Center of the fullest cell of an equal-width histogram with n_bins bins per
/// axis over the bounding box of the samples. Ties go to the lexicographically
/// smallest cell index.
Vector estimate_mode_histogram(const ScenarioPool& pool, int n_bins);

/// Bounding box, or covariance-metric enclosing ellipsoid, of the estimates
/// (one per row).
ModeSupport build_mode_support(const Matrix& estimates, SupportShape shape);

/// Largest value of (mu - m)^T [((a+2)/a) C]^{-1} (mu - m) over the support.
double assumption1_margin(const MomentData& moments, const ModeSupport& support, double alpha);

/// Whether ((a+2)/a) C - (1/a^2)(mu - m)(mu - m)^T is positive definite for all m.
bool check_assumption1(const MomentData& moments, const ModeSupport& support, double alpha);

/// Drops samples outside the per-axis [q, 1 - q] quantile box.
ScenarioPool trim_outliers(const ScenarioPool& pool, double q);

ScenarioPool read_pool_csv(const std::filesystem::path& path);
void write_pool_csv(const ScenarioPool& pool, const std::filesystem::path& path);

}  // namespace drcc

#endif  // DRCC_UNCERTAINTY_HPP
