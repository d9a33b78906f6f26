#include "drcc/ambiguity.hpp"

#include <cmath>
#include <string>

namespace drcc {

void UncertainRow::validate() const {
  if (a_offset.size() != a_matrix.rows() || b_coef.size() != a_matrix.cols())
    throw Error(ErrorCode::DimensionMismatch,
                "uncertain row: a is " + std::to_string(a_matrix.rows()) + "x" +
                    std::to_string(a_matrix.cols()) + ", offset " + std::to_string(a_offset.size()) +
                    ", b has " + std::to_string(b_coef.size()) + " coefficients");
}

SocConstraint SocCut::realize(const UncertainRow& row) const {
  SocConstraint soc;
  soc.F = scale * row.a_matrix;
  soc.f = scale * row.a_offset;
  soc.d = b_weight * row.b_coef + row.a_matrix.transpose() * a_weight;
  soc.e = b_weight * row.b_offset + a_weight.dot(row.a_offset);
  return soc;
}

double SocCut::slack(const Vector& a, double b) const {
  return b_weight * b + a_weight.dot(a) - (scale * a).norm();
}

std::string_view to_string(AmbiguityKind kind) {
  switch (kind) {
    case AmbiguityKind::D1: return "D1";
    case AmbiguityKind::D2: return "D2";
    case AmbiguityKind::D3: return "D3";
    case AmbiguityKind::D4: return "D4";
    case AmbiguityKind::D5: return "D5";
  }
  return "?";
}

AmbiguityKind parse_ambiguity_kind(std::string_view text) {
  for (auto k : {AmbiguityKind::D1, AmbiguityKind::D2, AmbiguityKind::D3, AmbiguityKind::D4, AmbiguityKind::D5})
    if (text == to_string(k)) return k;
  throw Error(ErrorCode::ConfigError, "unknown ambiguity set '" + std::string(text) + "'");
}

namespace {

void check_d5_regime(const UnimodalityConfig& uni) {
  if (uni.alpha != 1.0 || uni.epsilon > 1.0 / 6.0)
    throw Error(ErrorCode::UnsupportedRegime,
                "D5 needs alpha = 1 and epsilon <= 1/6 (got alpha " + std::to_string(uni.alpha) +
                    ", epsilon " + std::to_string(uni.epsilon) + ")");
}

}  // namespace

void AmbiguityConfig::validate(const MomentData& moments) const {
  unimodality.validate();
  switch (kind) {
    case AmbiguityKind::D1:
    case AmbiguityKind::D4:
      return;
    case AmbiguityKind::D5:
      check_d5_regime(unimodality);
      return;
    case AmbiguityKind::D2:
    case AmbiguityKind::D3:
      break;
  }
  if (!support) throw Error(ErrorCode::ConfigError, std::string(to_string(kind)) + " needs a mode support");
  if (kind == AmbiguityKind::D2 && !support->is_point())
    throw Error(ErrorCode::ConfigError, "D2 needs a single mode location");
  if (support->dimension() != moments.dimension())
    throw Error(ErrorCode::DimensionMismatch, "mode support dimension differs from the moments");
  if (!check_assumption1(moments, *support, unimodality.alpha))
    throw Error(ErrorCode::Assumption1Violated,
                "mode support too far from the mean (margin " +
                    std::to_string(assumption1_margin(moments, *support, unimodality.alpha)) +
                    " vs alpha^2 " + std::to_string(unimodality.alpha * unimodality.alpha) + ")");
}

SocCut cut_d1(const MomentData& moments, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorCode::DomainError, "epsilon outside (0, 1)");
  SocCut cut;
  cut.scale = std::sqrt((1.0 - epsilon) / epsilon) * moments.covariance_factor().transpose();
  cut.b_weight = 1.0;
  cut.a_weight = -moments.mu();
  return cut;
}

Matrix lambda_matrix(const MomentData& moments, const Vector& mode, double alpha) {
  const Vector d = moments.mu() - mode;
  const Matrix inner = ((alpha + 2.0) / alpha) * moments.covariance() - (d * d.transpose()) / (alpha * alpha);
  try {
    return symmetric_sqrt(inner);
  } catch (const Error&) {
    throw Error(ErrorCode::Assumption1Violated, "mode too far from the mean: Lambda(m)^2 is indefinite");
  }
}

SocCut cut_d2_at(const MomentData& moments, const Vector& mode, const UnimodalityConfig& uni, double tau) {
  uni.validate();
  const double tau0 = uni.tau0();
  // Allow a hair of rounding below tau0 so callers can pass tau0 itself.
  if (!(tau >= tau0 * (1.0 - 1e-14)))
    throw Error(ErrorCode::InvalidTau, "tau " + std::to_string(tau) + " below tau0 " + std::to_string(tau0));
  if (mode.size() != moments.dimension()) throw Error(ErrorCode::DimensionMismatch, "mode dimension");
  const double a = uni.alpha;
  const double g = std::sqrt(std::max(0.0, (1.0 - uni.epsilon - std::pow(tau, -a)) / uni.epsilon));
  SocCut cut;
  cut.scale = g * lambda_matrix(moments, mode, a);
  cut.b_weight = tau;
  cut.a_weight = -tau * moments.mu() + (tau - (a + 1.0) / a) * (moments.mu() - mode);
  return cut;
}

double d4_tau_star(const UnimodalityConfig& uni) {
  const double a = uni.alpha;
  const double t = std::pow((a + 2.0) / (2.0 * (1.0 - uni.epsilon)), 1.0 / a);
  return std::max(t, uni.tau0());
}

double k_factor(AmbiguityKind kind, const UnimodalityConfig& uni) {
  uni.validate();
  const double eps = uni.epsilon;
  switch (kind) {
    case AmbiguityKind::D1:
      return std::sqrt((1.0 - eps) / eps);
    case AmbiguityKind::D4: {
      const double a = uni.alpha;
      const double t = d4_tau_star(uni);
      const double g = std::sqrt(std::max(0.0, (1.0 - eps - std::pow(t, -a)) / eps));
      return std::sqrt((a + 2.0) / a) * g / t;
    }
    case AmbiguityKind::D5:
      check_d5_regime(uni);
      return std::sqrt(4.0 / (9.0 * eps) - 1.0);
    case AmbiguityKind::D2:
    case AmbiguityKind::D3:
      break;
  }
  throw Error(ErrorCode::ConfigError, std::string(to_string(kind)) + " has no single-cut form");
}

SocCut single_cut(AmbiguityKind kind, const MomentData& moments, const UnimodalityConfig& uni) {
  SocCut cut;
  cut.scale = k_factor(kind, uni) * moments.covariance_factor().transpose();
  cut.b_weight = 1.0;
  cut.a_weight = -moments.mu();
  return cut;
}

ModeFeasibility mode_feasibility_constraints(const ModeSupport& support, const UncertainRow& row) {
  row.validate();
  if (support.dimension() != row.dimension())
    throw Error(ErrorCode::DimensionMismatch, "mode support dimension differs from the row");
  const Eigen::Index l = row.num_vars();
  const Eigen::Index n = row.dimension();
  ModeFeasibility out;

  if (const auto* p = std::get_if<PointSupport>(&support.variant())) {
    // a(x)^T m <= b(x)
    out.linear.push_back({row.a_matrix.transpose() * p->mode - row.b_coef,
                          row.b_offset - row.a_offset.dot(p->mode)});
  } else if (const auto* r = std::get_if<RectangleSupport>(&support.variant())) {
    // a(x)^T c + t^T w <= b(x), t >= a(x), t >= -a(x)
    const Vector c = r->center();
    const Vector w = r->half_width();
    out.num_aux = n;
    Vector coef = Vector::Zero(l + n);
    coef.head(l) = row.a_matrix.transpose() * c - row.b_coef;
    coef.tail(n) = w;
    out.linear.push_back({coef, row.b_offset - row.a_offset.dot(c)});
    for (Eigen::Index i = 0; i < n; ++i) {
      for (double sign : {1.0, -1.0}) {
        Vector e = Vector::Zero(l + n);
        e.head(l) = sign * row.a_matrix.row(i).transpose();
        e(l + i) = -1.0;
        out.linear.push_back({e, -sign * row.a_offset(i)});
      }
    }
  } else {
    const auto& e = std::get<EllipsoidSupport>(support.variant());
    // ||P^{1/2} a(x)|| <= b(x) - m_c^T a(x)
    const Matrix half = symmetric_sqrt(e.shape);
    SocConstraint soc;
    soc.F = half * row.a_matrix;
    soc.f = half * row.a_offset;
    soc.d = row.b_coef - row.a_matrix.transpose() * e.center;
    soc.e = row.b_offset - e.center.dot(row.a_offset);
    out.cones.push_back(std::move(soc));
  }
  return out;
}

}  // namespace drcc
