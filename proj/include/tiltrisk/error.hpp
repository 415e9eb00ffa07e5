#pragma once

// Error type shared by every tiltrisk module.

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiltrisk {

enum class ErrorKind {
  invalid_argument,
  overflow_guard,
  non_finite_integrand,
  bracket_failure,
  no_interior_maximum,
  singular,
  degenerate_information,
  parameter_out_of_range,
  empty_zero_set,
  non_threshold_optimum,
  did_not_converge,
  unknown_identifier,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::overflow_guard: return "overflow guard";
    case ErrorKind::non_finite_integrand: return "non-finite integrand";
    case ErrorKind::bracket_failure: return "bracket failure";
    case ErrorKind::no_interior_maximum: return "no interior maximum";
    case ErrorKind::singular: return "singular";
    case ErrorKind::degenerate_information: return "degenerate information";
    case ErrorKind::parameter_out_of_range: return "parameter out of range";
    case ErrorKind::empty_zero_set: return "empty zero set";
    case ErrorKind::non_threshold_optimum: return "non-threshold optimum";
    case ErrorKind::did_not_converge: return "did not converge";
    case ErrorKind::unknown_identifier: return "unknown identifier";
  }
  return "unknown error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& detail) {
  if (!condition) throw Error(kind, detail);
}

}  // namespace tiltrisk
