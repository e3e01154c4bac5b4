#pragma once

#include <stdexcept>
#include <string>

namespace lorafuse {

enum class ErrorKind {
    InvalidArgument,
    MissingColumn,
    ConfigError,
    IoError,
    FormatError,
    NormError,
    UnknownText,
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
    NegativeDistance,
    EmptyNeighbourList,
    InvalidP,
    UnnormalizedInput,
    ShapeMismatch,
    RankMismatch,
    NonFinite,
    InvalidDensity,
    MissingAdapter,
    InvalidConfig,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure in the library is reported as an Error carrying a kind, so
/// callers (the CLI in particular) can branch on it without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace lorafuse
