#include "drcc/uncertainty.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace drcc {

ScenarioPool::ScenarioPool(Matrix samples) : samples_(std::move(samples)) {
  if (samples_.cols() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "scenario pool needs dimension >= 1");
  }
}

ScenarioPool ScenarioPool::slice(Eigen::Index first, Eigen::Index count) const {
  if (first < 0 || count < 0 || first + count > size()) {
    throw Error(ErrorCode::DomainError, "pool slice out of range");
  }
  return ScenarioPool(samples_.middleRows(first, count));
}

MomentData::MomentData(Vector mu, Matrix second_moment)
    : mu_(std::move(mu)), sigma_(symmetrized(second_moment)) {
  if (sigma_.rows() != mu_.size() || sigma_.cols() != mu_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "second moment must be n x n with n = dim(mu)");
  }
  covariance_ = symmetrized(sigma_ - mu_ * mu_.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance_, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (!(eig.eigenvalues().minCoeff() > 1e-12 * top)) {
    throw Error(ErrorCode::DegenerateMoments, "centered covariance is not positive definite");
  }
  Eigen::LLT<Matrix> llt(covariance_);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::DegenerateMoments, "Cholesky factorization of the covariance failed");
  }
  factor_ = llt.matrixL();
}

MomentData MomentData::from_mean_covariance(const Vector& mu, const Matrix& covariance) {
  return MomentData(mu, covariance + mu * mu.transpose());
}

ModeSupport::ModeSupport(PointSupport p) : v_(std::move(p)) {}

ModeSupport::ModeSupport(RectangleSupport r) : v_(std::move(r)) {
  const auto& box = std::get<RectangleSupport>(v_);
  if (box.lower.size() != box.upper.size()) {
    throw Error(ErrorCode::DimensionMismatch, "rectangle bounds differ in dimension");
  }
  if ((box.lower.array() > box.upper.array()).any()) {
    throw Error(ErrorCode::ValidationError, "rectangle needs lower <= upper componentwise");
  }
}

ModeSupport::ModeSupport(EllipsoidSupport e) : v_(std::move(e)) {
  auto& ell = std::get<EllipsoidSupport>(v_);
  if (ell.shape.rows() != ell.center.size() || ell.shape.cols() != ell.center.size()) {
    throw Error(ErrorCode::DimensionMismatch, "ellipsoid shape must be n x n");
  }
  ell.shape = symmetrized(ell.shape);
  Eigen::LLT<Matrix> llt(ell.shape);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::ValidationError, "ellipsoid shape matrix must be positive definite");
  }
}

Eigen::Index ModeSupport::dimension() const {
  return std::visit(
      [](const auto& s) -> Eigen::Index {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointSupport>) return s.mode.size();
        else if constexpr (std::is_same_v<T, RectangleSupport>) return s.lower.size();
        else return s.center.size();
      },
      v_);
}

Vector ModeSupport::initial_point() const {
  return std::visit(
      [](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointSupport>) return s.mode;
        else if constexpr (std::is_same_v<T, RectangleSupport>) return s.lower;
        else return s.center;
      },
      v_);
}

std::pair<double, double> ModeSupport::linear_range(const Vector& a) const {
  return std::visit(
      [&a](const auto& s) -> std::pair<double, double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointSupport>) {
          const double v = a.dot(s.mode);
          return {v, v};
        } else if constexpr (std::is_same_v<T, RectangleSupport>) {
          const double mid = a.dot(s.center());
          const double spread = a.cwiseAbs().dot(s.half_width());
          return {mid - spread, mid + spread};
        } else {
          const double mid = a.dot(s.center);
          const double spread = std::sqrt(std::max(0.0, a.dot(s.shape * a)));
          return {mid - spread, mid + spread};
        }
      },
      v_);
}

bool ModeSupport::contains(const Vector& m, double tol) const {
  return std::visit(
      [&](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointSupport>) {
          return (m - s.mode).cwiseAbs().maxCoeff() <= tol;
        } else if constexpr (std::is_same_v<T, RectangleSupport>) {
          return (m.array() >= s.lower.array() - tol).all() &&
                 (m.array() <= s.upper.array() + tol).all();
        } else {
          const Vector d = m - s.center;
          return d.dot(s.shape.ldlt().solve(d)) <= 1.0 + tol;
        }
      },
      v_);
}

void UnimodalityConfig::validate() const {
  if (!(alpha >= 1.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::DomainError, "alpha must be >= 1");
  }
  if (!(epsilon > 0.0 && epsilon < 0.5)) {
    throw Error(ErrorCode::DomainError, "epsilon must lie in (0, 0.5)");
  }
}

double UnimodalityConfig::tau0() const { return std::pow(1.0 / (1.0 - epsilon), 1.0 / alpha); }

MomentData estimate_moments(const ScenarioPool& pool) {
  if (pool.empty()) {
    throw Error(ErrorCode::DegenerateMoments, "empty scenario pool");
  }
  const Matrix& x = pool.samples();
  const double n = static_cast<double>(x.rows());
  Vector mu = x.colwise().mean().transpose();
  Matrix second = (x.transpose() * x) / n;
  return MomentData(std::move(mu), std::move(second));
}

Vector estimate_mode_histogram(const ScenarioPool& pool, int n_bins) {
  if (pool.empty()) {
    throw Error(ErrorCode::DomainError, "empty scenario pool");
  }
  if (n_bins < 2) {
    throw Error(ErrorCode::DomainError, "histogram needs at least 2 bins per axis");
  }
  const Matrix& x = pool.samples();
  const Eigen::Index dim = x.cols();
  const Vector lo = x.colwise().minCoeff().transpose();
  const Vector hi = x.colwise().maxCoeff().transpose();
  const Vector width = (hi - lo) / static_cast<double>(n_bins);

  std::map<std::vector<int>, long> counts;
  std::vector<int> cell(static_cast<std::size_t>(dim));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      int idx = 0;
      if (width(c) > 0.0) {
        idx = static_cast<int>(std::floor((x(r, c) - lo(c)) / width(c)));
        idx = std::clamp(idx, 0, n_bins - 1);
      }
      cell[static_cast<std::size_t>(c)] = idx;
    }
    ++counts[cell];
  }

  // std::map iterates in lexicographic order, so a strict comparison keeps the
  // first of any tied cells.
  const std::vector<int>* best = nullptr;
  long best_count = -1;
  for (const auto& [key, count] : counts) {
    if (count > best_count) {
      best = &key;
      best_count = count;
    }
  }
  Vector center(dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    center(c) = lo(c) + ((*best)[static_cast<std::size_t>(c)] + 0.5) * width(c);
  }
  return center;
}

namespace {

constexpr double kEigenFloor = 1e-8;

Matrix floor_eigenvalues(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(m));
  Vector values = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

ModeSupport build_mode_support(const Matrix& estimates, SupportShape shape) {
  if (estimates.rows() < 1) {
    throw Error(ErrorCode::DomainError, "need at least one mode estimate");
  }
  if (shape == SupportShape::Rectangle) {
    return ModeSupport::rectangle(estimates.colwise().minCoeff().transpose(),
                                  estimates.colwise().maxCoeff().transpose());
  }

  const Eigen::Index k = estimates.rows();
  const Vector mean = estimates.colwise().mean().transpose();
  const Matrix centered = estimates.rowwise() - mean.transpose();
  const Matrix metric = floor_eigenvalues(centered.transpose() * centered / static_cast<double>(k),
                                          kEigenFloor);
  const Matrix root = symmetric_sqrt(metric);
  const Matrix whitened = root.ldlt().solve(centered.transpose());  // n x k

  // Badoiu-Clarkson iterations towards the minimum enclosing ball; the radius
  // is then taken exactly from the final center so containment holds.
  Vector c = whitened.col(0);
  for (int it = 1; it <= 2000; ++it) {
    Eigen::Index far = 0;
    (whitened.colwise() - c).colwise().squaredNorm().maxCoeff(&far);
    c += (whitened.col(far) - c) / static_cast<double>(it + 1);
  }
  const double radius = std::sqrt((whitened.colwise() - c).colwise().squaredNorm().maxCoeff());
  const Vector center = mean + root * c;
  Matrix p = metric * std::max(radius * radius, 0.0);
  p = floor_eigenvalues(p, kEigenFloor);
  return ModeSupport::ellipsoid(center, p);
}

namespace {

// max over ||u|| <= 1 of (d - S u)^T Binv (d - S u).
double max_quadratic_over_ball(const Matrix& s, const Matrix& b_inv, const Vector& d) {
  const Matrix k = symmetrized(s.transpose() * b_inv * s);
  const Vector w = s.transpose() * b_inv * d;
  const double base = d.dot(b_inv * d);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
  const Vector kv = eig.eigenvalues();
  const Vector wh = eig.eigenvectors().transpose() * w;
  const Eigen::Index n = kv.size();
  const double kmax = kv(n - 1);
  const double scale = std::max({1.0, std::abs(kmax), wh.norm()});

  auto value_at = [&](const Vector& uh) { return uh.dot(kv.cwiseProduct(uh)) - 2.0 * wh.dot(uh) + base; };
  auto u_of = [&](double lambda) {
    Vector uh(n);
    for (Eigen::Index i = 0; i < n; ++i) uh(i) = wh(i) / (kv(i) - lambda);
    return uh;
  };

  double best = -std::numeric_limits<double>::infinity();
  // Secular equation ||u(lambda)|| = 1 on (kmax, kmax + ||w||].
  if (wh.norm() > 0.0) {
    double lo = kmax;
    double hi = kmax + wh.norm() + 1e-300;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const Vector uh = u_of(mid);
      if (uh.squaredNorm() > 1.0) lo = mid; else hi = mid;
    }
    Vector uh = u_of(hi);
    if (uh.norm() > 0.0) uh /= uh.norm();
    best = std::max(best, value_at(uh));
  }
  // Hard case: no weight on the top eigenspace.
  {
    Vector uh = Vector::Zero(n);
    double used = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (kmax - kv(i) > 1e-12 * scale) {
        uh(i) = wh(i) / (kv(i) - kmax);
        used += uh(i) * uh(i);
      }
    }
    if (used <= 1.0) {
      uh(n - 1) = std::sqrt(1.0 - used);
      best = std::max(best, value_at(uh));
      uh(n - 1) = -uh(n - 1);
      best = std::max(best, value_at(uh));
    }
  }
  return best;
}

}  // namespace

double assumption1_margin(const MomentData& moments, const ModeSupport& support, double alpha) {
  if (support.dimension() != moments.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "support and moments differ in dimension");
  }
  const Matrix b = ((alpha + 2.0) / alpha) * moments.covariance();
  const Eigen::LLT<Matrix> llt(b);
  const Vector& mu = moments.mu();
  auto quad = [&](const Vector& m) {
    const Vector d = mu - m;
    return d.dot(llt.solve(d));
  };

  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointSupport>) {
          return quad(s.mode);
        } else if constexpr (std::is_same_v<T, RectangleSupport>) {
          const Eigen::Index n = s.lower.size();
          if (n > 30) throw Error(ErrorCode::UnsupportedRegime, "vertex enumeration beyond 30 dimensions");
          double best = 0.0;
          Vector v(n);
          for (unsigned long mask = 0; mask < (1UL << n); ++mask) {
            for (Eigen::Index i = 0; i < n; ++i) v(i) = (mask >> i) & 1UL ? s.upper(i) : s.lower(i);
            best = std::max(best, quad(v));
          }
          return best;
        } else {
          const Matrix b_inv = llt.solve(Matrix::Identity(b.rows(), b.cols()));
          return max_quadratic_over_ball(symmetric_sqrt(s.shape), b_inv, mu - s.center);
        }
      },
      support.variant());
}

bool check_assumption1(const MomentData& moments, const ModeSupport& support, double alpha) {
  return assumption1_margin(moments, support, alpha) < alpha * alpha;
}

ScenarioPool trim_outliers(const ScenarioPool& pool, double q) {
  if (pool.empty() || q <= 0.0) return pool;
  const Matrix& x = pool.samples();
  const Eigen::Index n = x.rows();
  Vector lo(x.cols()), hi(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> col(x.col(c).data(), x.col(c).data() + n);
    std::sort(col.begin(), col.end());
    const auto at = [&](double p) {
      const auto idx = static_cast<std::size_t>(std::clamp(std::floor(p * (n - 1)), 0.0, double(n - 1)));
      return col[idx];
    };
    lo(c) = at(q);
    hi(c) = at(1.0 - q);
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < n; ++r) {
    if ((x.row(r).transpose().array() >= lo.array()).all() &&
        (x.row(r).transpose().array() <= hi.array()).all()) {
      keep.push_back(r);
    }
  }
  Matrix out(static_cast<Eigen::Index>(keep.size()), x.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(keep[i]);
  return ScenarioPool(std::move(out));
}

ScenarioPool read_pool_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::size_t col = 0;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      ++col;
      const auto first = field.find_first_not_of(" \t");
      const auto last = field.find_last_not_of(" \t");
      double v = 0.0;
      const char* b = first == std::string::npos ? field.data() : field.data() + first;
      const char* e = first == std::string::npos ? field.data() : field.data() + last + 1;
      const auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e) {
        throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ":" +
                                               std::to_string(col) + ": not a number");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) +
                                             ": expected " + std::to_string(rows.front().size()) + " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::ParseError, path.string() + ": no samples");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  return ScenarioPool(std::move(m));
}

void write_pool_csv(const ScenarioPool& pool, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
  out << std::setprecision(17);
  const Matrix& x = pool.samples();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c) out << ',';
      out << x(r, c);
    }
    out << '\n';
  }
}

}  // namespace drcc
