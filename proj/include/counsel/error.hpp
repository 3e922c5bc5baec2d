#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace counsel {

enum class ErrorCode {
    InvalidArgument,
    // signal
    EmptyWindow,
    FlatSignal,
    InsufficientBeats,
    NonMonotoneTimestamp,
    NegativeMu,
    // speech
    KTooLarge,
    MissingAnnotation,
    // models
    TooFewSamples,
    SingleClassTrainSet,
    NonFiniteFeature,
    DimensionMismatch,
    EmptyEvalSet,
    // fusion
    InvalidDistribution,
    // session
    DuplicateSession,
    ConsentViolation,
    SessionClosed,
    SessionNotFound,
    CorruptLog,
    AlertNotFound,
    // reporting / followup
    EmptyTranscript,
    GeneratorUnavailable,
    QueueFull,
    // io
    ParseError,
    IoError,
    // service
    PortInUse,
    StoreUnwritable,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace counsel
