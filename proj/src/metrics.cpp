#include "fastlr/metrics.hpp"

#include <algorithm>
#include <sstream>

namespace fastlr {

namespace {

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

std::vector<std::string> split_chars(const std::string& s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        std::size_t len = 1;
        unsigned char c = s[i];
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace

ErrorBreakdown error_rate(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp) {
    if (ref.empty()) throw Error("error_rate: empty reference");
    std::size_t n = ref.size(), m = hyp.size();
    // dp[i][j]: min edits aligning ref[0..i) with hyp[0..j).
    std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) dp[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) dp[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            std::size_t sub = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            std::size_t del = dp[i - 1][j] + 1;
            std::size_t ins = dp[i][j - 1] + 1;
            dp[i][j] = std::min({sub, del, ins});
        }
    // Traceback, preferring the diagonal (match/substitution) on ties.
    ErrorBreakdown eb;
    eb.ref_len = n;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            std::size_t sub = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            if (sub == dp[i][j]) {
                if (ref[i - 1] != hyp[j - 1]) ++eb.substitutions;
                --i;
                --j;
                continue;
            }
        }
        if (i > 0 && dp[i - 1][j] + 1 == dp[i][j]) {
            ++eb.deletions;
            --i;
        } else {
            ++eb.insertions;
            --j;
        }
    }
    eb.rate = double(eb.total()) / double(n);
    return eb;
}

ErrorBreakdown error_rate(const std::string& ref, const std::string& hyp,
                          ErrorUnit unit) {
    if (unit == ErrorUnit::Word) return error_rate(split_words(ref), split_words(hyp));
    return error_rate(split_chars(ref), split_chars(hyp));
}

}  // namespace fastlr
