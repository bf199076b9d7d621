#pragma once

#include <stdexcept>
#include <string>

namespace bustr {

enum class ErrorCode {
  unknown_descriptor,
  out_of_vocabulary,
  invalid_config,
  inconsistent_descriptors,
  empty_mask,
  shape_mismatch,
  too_few_samples,
  missing_file,
  schema_mismatch,
  non_positive_size,
  realizer_failure,
  bad_geometry,
  missing_label,
  task_mismatch,
  diverged_loss,
  context_overflow,
  frozen_violation,
  length_mismatch,
  zero_variance,
  undefined_idf,
  io_failure,
  usage,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace bustr
