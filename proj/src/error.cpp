#include "bustr/error.hpp"

namespace bustr {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::unknown_descriptor: return "UnknownDescriptor";
    case ErrorCode::out_of_vocabulary: return "OutOfVocabulary";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::inconsistent_descriptors: return "InconsistentDescriptors";
    case ErrorCode::empty_mask: return "EmptyMask";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::too_few_samples: return "TooFewSamples";
    case ErrorCode::missing_file: return "MissingFile";
    case ErrorCode::schema_mismatch: return "SchemaMismatch";
    case ErrorCode::non_positive_size: return "NonPositiveSize";
    case ErrorCode::realizer_failure: return "RealizerFailure";
    case ErrorCode::bad_geometry: return "BadGeometry";
    case ErrorCode::missing_label: return "MissingLabel";
    case ErrorCode::task_mismatch: return "TaskMismatch";
    case ErrorCode::diverged_loss: return "DivergedLoss";
    case ErrorCode::context_overflow: return "ContextOverflow";
    case ErrorCode::frozen_violation: return "FrozenViolation";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::zero_variance: return "ZeroVariance";
    case ErrorCode::undefined_idf: return "UndefinedIdf";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::usage: return "Usage";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace bustr
