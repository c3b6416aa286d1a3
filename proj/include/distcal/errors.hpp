#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace distcal {

// Failure classification. The CLI maps validation errors to exit code 2 and
// numerical errors (rank/conditioning/degeneracy problems discovered during
// computation) to exit code 3.
enum class ErrorKind {
  Domain,
  Config,
  Ingestion,
  InsufficientEstimators,
  Collinearity,
  Singularity,
  IllConditionedTransform,
  DegeneratePerturbation,
  InfeasibleEpsilon,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool is_validation() const noexcept {
    switch (kind_) {
      case ErrorKind::Domain:
      case ErrorKind::Config:
      case ErrorKind::Ingestion:
      case ErrorKind::InsufficientEstimators:
        return true;
      default:
        return false;
    }
  }

  const char* kind_name() const noexcept {
    switch (kind_) {
      case ErrorKind::Domain: return "domain";
      case ErrorKind::Config: return "config";
      case ErrorKind::Ingestion: return "ingestion";
      case ErrorKind::InsufficientEstimators: return "insufficient_estimators";
      case ErrorKind::Collinearity: return "collinearity";
      case ErrorKind::Singularity: return "singularity";
      case ErrorKind::IllConditionedTransform: return "ill_conditioned_transform";
      case ErrorKind::DegeneratePerturbation: return "degenerate_perturbation";
      case ErrorKind::InfeasibleEpsilon: return "infeasible_epsilon";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_domain(const std::string& msg) {
  throw Error(ErrorKind::Domain, msg);
}

}  // namespace distcal
