#include "counsel/error.hpp"

namespace counsel {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyWindow: return "EmptyWindow";
        case ErrorCode::FlatSignal: return "FlatSignal";
        case ErrorCode::InsufficientBeats: return "InsufficientBeats";
        case ErrorCode::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
        case ErrorCode::NegativeMu: return "NegativeMu";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::MissingAnnotation: return "MissingAnnotation";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::SingleClassTrainSet: return "SingleClassTrainSet";
        case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
        case ErrorCode::InvalidDistribution: return "InvalidDistribution";
        case ErrorCode::DuplicateSession: return "DuplicateSession";
        case ErrorCode::ConsentViolation: return "ConsentViolation";
        case ErrorCode::SessionClosed: return "SessionClosed";
        case ErrorCode::SessionNotFound: return "SessionNotFound";
        case ErrorCode::CorruptLog: return "CorruptLog";
        case ErrorCode::AlertNotFound: return "AlertNotFound";
        case ErrorCode::EmptyTranscript: return "EmptyTranscript";
        case ErrorCode::GeneratorUnavailable: return "GeneratorUnavailable";
        case ErrorCode::QueueFull: return "QueueFull";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::PortInUse: return "PortInUse";
        case ErrorCode::StoreUnwritable: return "StoreUnwritable";
    }
    return "Unknown";
}

}  // namespace counsel
