#pragma once

#include <stdexcept>
#include <string>

namespace fastlr {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes do not conform (matmul inner dims, elementwise mismatch, ...).
struct ShapeError : Error {
    using Error::Error;
};

/// Input outside an op's numeric domain (log of non-positive, division by zero).
struct DomainError : Error {
    using Error::Error;
};

/// Target cannot be produced by any CTC path of the given length.
struct InfeasibleTarget : Error {
    using Error::Error;
};

/// Weight sequence sums to zero; scaling is undefined.
struct DegenerateWeights : Error {
    using Error::Error;
};

/// Every NPD candidate was filtered out.
struct NoViableCandidate : Error {
    using Error::Error;
};

/// NAR decoder invoked with zero fired embeddings.
struct EmptyHypothesis : Error {
    using Error::Error;
};

/// Bad configuration, checkpoint/config mismatch, unknown file version.
struct ConfigError : Error {
    using Error::Error;
};

/// File read/write failure, corrupt or truncated file.
struct IoError : Error {
    using Error::Error;
};

}  // namespace fastlr
