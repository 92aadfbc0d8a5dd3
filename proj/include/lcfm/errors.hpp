#pragma once

#include <stdexcept>
#include <string>

namespace lcfm {

enum class ErrorCode {
    // dataio
    EmptyFile,
    NonMonotonicTime,
    TooFewPoints,
    BadRatios,
    MissingLabels,
    // encoding
    PositionOutOfRange,
    // tensor / model
    ShapeMismatch,
    BadConfig,
    NoHead,
    IncompatibleCheckpoint,
    // losses / training
    EmptyMask,
    BadMaskKind,
    BadFraction,
    EmptyDataset,
    NonFiniteLoss,
    UnlabelledData,
    VocabMismatch,
    // metrics
    SingleClass,
    // generation
    NoReferences,
    EmptySet,
    BadFamily,
    // cli
    BadKey,
    IoError,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::EmptyFile: return "EmptyFile";
        case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::BadRatios: return "BadRatios";
        case ErrorCode::MissingLabels: return "MissingLabels";
        case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BadConfig: return "BadConfig";
        case ErrorCode::NoHead: return "NoHead";
        case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::BadMaskKind: return "BadMaskKind";
        case ErrorCode::BadFraction: return "BadFraction";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::UnlabelledData: return "UnlabelledData";
        case ErrorCode::VocabMismatch: return "VocabMismatch";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::NoReferences: return "NoReferences";
        case ErrorCode::EmptySet: return "EmptySet";
        case ErrorCode::BadFamily: return "BadFamily";
        case ErrorCode::BadKey: return "BadKey";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// All recoverable failures surface as this one exception type; tests and the
/// CLI dispatch on `code`.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace lcfm
