#include "drcc/core.hpp"

#include <Eigen/Eigenvalues>

namespace drcc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateMoments: return "DegenerateMoments";
    case ErrorCode::InvalidTau: return "InvalidTau";
    case ErrorCode::Assumption1Violated: return "Assumption1Violated";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::UnsupportedRegime: return "UnsupportedRegime";
    case ErrorCode::MasterInfeasible: return "MasterInfeasible";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::SingularSusceptance: return "SingularSusceptance";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Matrix symmetric_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(m));
  Vector values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < -1e-10) {
      throw Error(ErrorCode::DomainError, "matrix square root of an indefinite matrix (eigenvalue " +
                                              std::to_string(values(i)) + ")");
    }
    values(i) = std::sqrt(std::max(values(i), 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace drcc
