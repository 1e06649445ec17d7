#pragma once

#include <stdexcept>
#include <string>

namespace vebridge {

enum class Err {
  // input / configuration problems (CLI exit code 1)
  MissingColumn,
  InvalidTreatment,
  InvalidOutcome,
  StarRowHasOutcome,
  EmptySample,
  ConvexityViolation,
  PseudoRiskOutOfRange,
  OrderViolation,
  SingleArmTrial,
  NoObservedControls,
  B5NotDeclared,
  ConfigError,
  // estimation-time problems (CLI exit code 2)
  ZeroDenominator,
  ZeroOmega,
  InfeasibleMu,
  NumericError,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::MissingColumn: return "MissingColumn";
    case Err::InvalidTreatment: return "InvalidTreatment";
    case Err::InvalidOutcome: return "InvalidOutcome";
    case Err::StarRowHasOutcome: return "StarRowHasOutcome";
    case Err::EmptySample: return "EmptySample";
    case Err::ConvexityViolation: return "ConvexityViolation";
    case Err::PseudoRiskOutOfRange: return "PseudoRiskOutOfRange";
    case Err::OrderViolation: return "OrderViolation";
    case Err::SingleArmTrial: return "SingleArmTrial";
    case Err::NoObservedControls: return "NoObservedControls";
    case Err::B5NotDeclared: return "B5NotDeclared";
    case Err::ConfigError: return "ConfigError";
    case Err::ZeroDenominator: return "ZeroDenominator";
    case Err::ZeroOmega: return "ZeroOmega";
    case Err::InfeasibleMu: return "InfeasibleMu";
    case Err::NumericError: return "NumericError";
  }
  return "Unknown";
}

//! True for errors caused by bad inputs rather than estimation failures.
inline bool is_input_error(Err e) {
  switch (e) {
    case Err::ZeroDenominator:
    case Err::ZeroOmega:
    case Err::InfeasibleMu:
    case Err::NumericError:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

}  // namespace vebridge
