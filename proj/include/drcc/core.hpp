#ifndef DRCC_CORE_HPP
#define DRCC_CORE_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace drcc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Failure categories. The CLI maps each to a distinct exit code.
enum class ErrorCode {
  DegenerateMoments = 10,
  InvalidTau,
  Assumption1Violated,
  DomainError,
  UnsupportedRegime,
  MasterInfeasible,
  SolverFailure,
  ParseError,
  ValidationError,
  SingularSusceptance,
  DimensionMismatch,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Symmetric square root by spectral decomposition. Eigenvalues in
/// (-1e-10, 0) are clipped to zero; anything more negative throws.
Matrix symmetric_sqrt(const Matrix& m);

/// Returns (m + m^T) / 2.
inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace drcc

#endif  // DRCC_CORE_HPP
