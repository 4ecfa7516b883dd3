#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace msub {

enum class ErrorCode {
  invalid_input,
  degenerate_input,
  training_diverged,
  numerical,
  io,
  checksum,
  unsupported_version,
  not_a_bundle,
  missing_stage,
  not_found,
  not_ready,
  outside,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by every optimizer loop when a loss or gradient turns non-finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t iteration,
                   std::vector<double> trace = {})
      : Error(ErrorCode::training_diverged, what),
        iteration_(iteration),
        trace_(std::move(trace)) {}

  std::size_t iteration() const noexcept { return iteration_; }
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::size_t iteration_;
  std::vector<double> trace_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

// Warnings go to stderr unless silenced (tests silence them).
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace msub
