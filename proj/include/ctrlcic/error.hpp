#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ctrlcic {

enum class Errc {
    TokenizerFailure,
    InvalidSpan,
    EmptyCaption,
    DegenerateEmbedding,
    ShapeMismatch,
    DimensionMismatch,
    SeparatorCollision,
    BudgetExceeded,
    ModelFailure,
    DataFormatError,
    DivergenceDetected,
    MalformedRecord,
    SchemaViolation,
    EmptyHighlights,
    GroupSizeError,
    NoHighlightedSentence,
    DegenerateInput,
    JudgeUnavailable,
    UnparseableResponse,
    MissingSection,
    OutOfRangeScore,
    NonPositiveRatio,
    Io,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the toolkit carries one of the codes above so that
/// callers (CLI, HTTP service) can map it onto exit codes and status lines.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Errc::InvalidSpan raised for a specific input span.
class SpanError : public Error {
public:
    SpanError(std::size_t index, const std::string& message)
        : Error(Errc::InvalidSpan, message), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

}  // namespace ctrlcic
