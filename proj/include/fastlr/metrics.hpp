#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fastlr/errors.hpp"

namespace fastlr {

struct ErrorBreakdown {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t ref_len = 0;
    double rate = 0.0;

    std::size_t total() const { return substitutions + deletions + insertions; }
};

enum class ErrorUnit { Word, Char };

/// Levenshtein alignment with unit costs over explicit token sequences.
/// Among minimal alignments, substitutions are preferred over
/// insertion+deletion pairs. Empty reference is an error (rate undefined).
ErrorBreakdown error_rate(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp);

/// Word mode splits on whitespace; char mode compares UTF-8 code points,
/// spaces included.
ErrorBreakdown error_rate(const std::string& ref, const std::string& hyp,
                          ErrorUnit unit);

}  // namespace fastlr
