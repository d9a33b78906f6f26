#ifndef DRCC_SEPARATION_HPP
#define DRCC_SEPARATION_HPP

#include "drcc/ambiguity.hpp"

#include <cmath>
#include <optional>
#include <utility>

namespace drcc {

// Scalar pieces of the violation surface, templated so tests can evaluate
// them in extended precision.

template <class T>
T g_of_tau(T tau, T alpha, T epsilon) {
  using std::pow, std::sqrt;
  const T v = (T(1) - epsilon - pow(tau, -alpha)) / epsilon;
  return v > T(0) ? sqrt(v) : T(0);
}

template <class T>
T f_of_tau(T tau, T alpha) {
  return -(alpha * tau - alpha - T(1));
}

/// dg/dtau; infinite at tau0.
template <class T>
T g_prime(T tau, T alpha, T epsilon) {
  using std::pow;
  return alpha * pow(tau, -alpha - T(1)) / (T(2) * epsilon * g_of_tau(tau, alpha, epsilon));
}

/// g^2 + f^2 and its first two derivatives in tau.
template <class T>
struct GfSquares {
  T s, ds, d2s;
};

template <class T>
GfSquares<T> gf_squares(T tau, T alpha, T epsilon) {
  using std::pow;
  const T f = f_of_tau(tau, alpha);
  const T u = pow(tau, -alpha);
  return {(T(1) - epsilon - u) / epsilon + f * f,
          alpha * u / (tau * epsilon) - T(2) * alpha * f,
          -alpha * (alpha + T(1)) * u / (tau * tau * epsilon) + T(2) * alpha * alpha};
}

/// Reduced data of one row at a candidate solution.
struct SeparationInstance {
  double alpha = 1.0;
  double epsilon = 0.05;
  double r_tilde = 0.0;  ///< sqrt(((a+2)/a) a^T C a)
  double c_tilde = 0.0;  ///< b - mu^T a
  double h_lo = 0.0;     ///< min over the support of a^T (mu - m) / alpha
  double h_hi = 0.0;

  double tau0() const { return std::pow(1.0 / (1.0 - epsilon), 1.0 / alpha); }
  /// Throws DomainError when the invariants fail beyond rounding.
  void validate() const;
};

struct WorstCase {
  double tau = 0.0;
  double h = 0.0;
  double violation = 0.0;
  /// The violation is a supremum approached as tau grows; tau is a finite
  /// point whose value is within 1e-6 of it.
  bool at_supremum = false;
  int which_case = 0;
};

/// Cut generation threshold on the violation.
inline constexpr double kViolationThreshold = 1e-8;
/// Rows with ||a(x*)|| at or below this are skipped.
inline constexpr double kZeroRowTol = 1e-10;

double violation_value(double h, double tau, const SeparationInstance& inst);
double h_hat(double tau, const SeparationInstance& inst);

/// Upper end of the search range for the roots of h_hat.
double tau_search_bound(const SeparationInstance& inst);
/// Right end of the search range for the h = h_lo piece; empty when
/// c_tilde + alpha h_lo is not positive.
std::optional<double> lower_piece_bound(const SeparationInstance& inst);

/// (tau_lo, tau_hi) with h_hat(tau_lo) = h_hi and h_hat(tau_hi) = h_lo.
std::pair<double, double> tau_bracket(const SeparationInstance& inst);

WorstCase worst_case(const SeparationInstance& inst);

/// Grid search plus coordinate-wise golden-section refinement.
WorstCase brute_force_worst_case(const SeparationInstance& inst, int grid_tau, int grid_h);

SeparationInstance make_instance(const Vector& a, double b, const MomentData& moments, const ModeSupport& support,
                                 const UnimodalityConfig& uni);

/// Point of the support with a^T (mu - m) / alpha = h_star.
Vector recover_mode(double h_star, const Vector& a, const MomentData& moments, const ModeSupport& support,
                    double alpha);

/// Outcome of separating one row at a candidate solution.
/// Where on the worst-case curve the cut is placed. WorstCase uses tau* as
/// reported; Deepest keeps h* and m* but picks tau in [tau0, tau*] maximizing
/// v(tau, h*) / tau, the violation in the units of b. When c~ + alpha h_lo is
/// near zero, tau* runs off to very large values and its cut is nearly flat.
enum class CutPlacement { WorstCase, Deepest };

/// argmax of v(tau, h) / tau over [tau0, tau_max].
double deepest_tau(const SeparationInstance& inst, double h, double tau_max);

struct RowSeparation {
  bool skipped = false;  ///< zero row
  WorstCase worst;
  Vector mode;           ///< m* (empty when skipped)
  double cut_tau = 0.0;  ///< tau at which to emit the cut
  bool violated() const { return !skipped && worst.violation > kViolationThreshold; }
};

RowSeparation separate_row(const Vector& a, double b, const MomentData& moments, const ModeSupport& support,
                           const UnimodalityConfig& uni, CutPlacement placement = CutPlacement::Deepest);

}  // namespace drcc

#endif  // DRCC_SEPARATION_HPP
