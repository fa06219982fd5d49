#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace balsens {

enum class ErrorCode {
  // input / configuration
  SchemaError,
  ConfigError,
  EmptyGroup,
  NonFinite,
  NonBinaryTreatment,
  Domain,
  HOutOfRange,
  EmptyInput,
  OddN,
  NoBenchmarks,
  // numerical
  NoConvergence,
  Infeasible,
  ZeroWeightSum,
  DegenerateResampling,
  RankDeficient,
  TooManyDropped,
  // search
  NotBracketed,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace balsens
