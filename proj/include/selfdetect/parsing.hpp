#pragma once

// Strict, recoverable parsers for the model-output grammars the strategies
// depend on: the Gi/Pi guess-list block, CoT "Answer:" fields, true/false
// verdicts and verbalized confidence numbers.

#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "selfdetect/core.hpp"

namespace selfdetect {

/// Parsed "G1: ... P1: ..." block. Pairs whose probability failed to parse
/// are dropped (counted), probabilities outside [0,1] are clamped (counted),
/// entries beyond the requested K are truncated (counted).
struct GuessList {
    struct Entry {
        std::string guess;
        double prob = 0.0;
    };
    std::vector<Entry> entries;
    int dropped_pairs = 0;
    int clamped = 0;
    int truncated = 0;
};

namespace detail {

struct Marker {
    char kind;         // 'g' or 'p'
    int index;         // the numeric suffix
    std::size_t begin; // position of the marker letter
    std::size_t end;   // position just past the ':'
};

inline std::vector<Marker> scan_markers(const std::string& text) {
    std::vector<Marker> ms;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        if (c != 'g' && c != 'p') continue;
        if (i > 0 && std::isalnum(static_cast<unsigned char>(text[i - 1]))) continue;
        std::size_t j = i + 1;
        std::size_t digits_begin = j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        if (j == digits_begin) continue;
        std::size_t k = j;
        while (k < text.size() && (text[k] == ' ' || text[k] == '\t')) ++k;
        if (k >= text.size() || text[k] != ':') continue;
        ms.push_back(Marker{c, std::atoi(text.substr(digits_begin, j - digits_begin).c_str()),
                            i, k + 1});
    }
    return ms;
}

inline std::string trim_guess(std::string_view v) {
    std::size_t b = 0, e = v.size();
    auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (b < e && ws(v[b])) ++b;
    while (e > b && ws(v[e - 1])) --e;
    // Trailing sentence punctuation is noise from prose-style responses.
    while (e > b && (v[e - 1] == '.' || v[e - 1] == ',' || v[e - 1] == ';')) --e;
    while (e > b && ws(v[e - 1])) --e;
    return std::string(v.substr(b, e - b));
}

// First numeric token in the segment; "70%" style values are rescaled.
inline std::optional<double> parse_prob_token(std::string_view v) {
    std::size_t i = 0;
    while (i < v.size() && !(std::isdigit(static_cast<unsigned char>(v[i])) || v[i] == '.' ||
                             v[i] == '+' || v[i] == '-'))
        ++i;
    if (i == v.size()) return std::nullopt;
    std::size_t j = i;
    if (v[j] == '+' || v[j] == '-') ++j;
    bool saw_digit = false, saw_dot = false;
    while (j < v.size()) {
        if (std::isdigit(static_cast<unsigned char>(v[j]))) {
            saw_digit = true;
            ++j;
        } else if (v[j] == '.' && !saw_dot) {
            saw_dot = true;
            ++j;
        } else {
            break;
        }
    }
    if (!saw_digit) return std::nullopt;
    // exponent part ("8.31e-05" appears once values get tiny)
    if (j < v.size() && (v[j] == 'e' || v[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < v.size() && (v[k] == '+' || v[k] == '-')) ++k;
        std::size_t exp_digits = k;
        while (k < v.size() && std::isdigit(static_cast<unsigned char>(v[k]))) ++k;
        if (k > exp_digits) j = k;
    }
    double value = std::strtod(std::string(v.substr(i, j - i)).c_str(), nullptr);
    std::size_t k = j;
    while (k < v.size() && (v[k] == ' ' || v[k] == '\t')) ++k;
    if (k < v.size() && v[k] == '%') value /= 100.0;
    return value;
}

}  // namespace detail

/// Extracts the Gi/Pi pairs from a verbalized response, in ascending index
/// order. Throws UnparsableResponse when not a single pair survives.
inline GuessList parse_top_k(const std::string& text, int k) {
    if (k < 1) throw InvalidAnswerSpace("parse_top_k: K must be >= 1");
    GuessList out;
    auto markers = detail::scan_markers(text);

    std::map<int, std::string> guesses;
    std::map<int, std::optional<double>> probs;
    for (std::size_t m = 0; m < markers.size(); ++m) {
        const auto& mk = markers[m];
        std::size_t value_end = m + 1 < markers.size() ? markers[m + 1].begin : text.size();
        std::string_view segment(text.data() + mk.end, value_end - mk.end);
        if (mk.kind == 'g') {
            guesses.emplace(mk.index, detail::trim_guess(segment));  // first occurrence wins
        } else {
            probs.emplace(mk.index, detail::parse_prob_token(segment));
        }
    }

    for (const auto& [idx, guess] : guesses) {
        auto it = probs.find(idx);
        if (it == probs.end() || !it->second) {
            ++out.dropped_pairs;
            continue;
        }
        double p = *it->second;
        if (p < 0.0 || p > 1.0) {
            p = std::clamp(p, 0.0, 1.0);
            ++out.clamped;
        }
        out.entries.push_back(GuessList::Entry{guess, p});
    }

    if (out.entries.empty())
        throw UnparsableResponse("no guess/probability pairs in response");
    if (out.entries.size() > static_cast<std::size_t>(k)) {
        out.truncated = static_cast<int>(out.entries.size()) - k;
        out.entries.resize(static_cast<std::size_t>(k));
    }
    return out;
}

/// Probability the response assigns to the target answer: the first guess
/// matching it, or 0 when none does. Total over valid inputs; guesses that
/// match nothing or match ambiguously contribute nothing.
inline double target_prob(const GuessList& guesses, const CandidateAnswer& target,
                          const std::vector<CandidateAnswer>& space,
                          const ChoicePresentation* presented = nullptr) {
    auto target_idx = index_of(target, space);
    if (!target_idx) return 0.0;
    const ChoicePresentation identity = ChoicePresentation::identity_for(space);
    const ChoicePresentation& pres = presented ? *presented : identity;
    for (const auto& e : guesses.entries) {
        std::optional<int> idx;
        try {
            idx = match_answer(e.guess, space, pres);
        } catch (const AmbiguousAnswer&) {
            continue;
        }
        if (idx && *idx == *target_idx) return std::clamp(e.prob, 0.0, 1.0);
    }
    return 0.0;
}

/// Answer index from a CoT-formatted response: the final "Answer:" field
/// wins; with no marker the last non-empty line is matched instead.
inline std::optional<int> parse_cot_answer(const std::string& text,
                                           const std::vector<CandidateAnswer>& space) {
    auto try_match = [&](std::string_view s) -> std::optional<int> {
        if (s.empty()) return std::nullopt;
        try {
            return match_answer(s, space);
        } catch (const AmbiguousAnswer&) {
            return std::nullopt;
        }
    };

    // Find the last case-insensitive "answer" followed by ':'.
    std::string lower;
    lower.reserve(text.size());
    for (unsigned char c : text) lower.push_back(static_cast<char>(std::tolower(c)));
    std::size_t marker = std::string::npos;
    std::size_t from = 0;
    while (true) {
        std::size_t p = lower.find("answer", from);
        if (p == std::string::npos) break;
        std::size_t q = p + 6;
        while (q < lower.size() && (lower[q] == ' ' || lower[q] == '\t')) ++q;
        if (q < lower.size() && lower[q] == ':') marker = q + 1;
        from = p + 1;
    }

    if (marker != std::string::npos) {
        std::size_t eol = text.find('\n', marker);
        std::string_view rest(text.data() + marker,
                              (eol == std::string::npos ? text.size() : eol) - marker);
        if (auto m = try_match(rest)) return m;
        // Answer may sit on the following line.
        while (eol != std::string::npos) {
            std::size_t next = text.find('\n', eol + 1);
            std::string_view line(text.data() + eol + 1,
                                  (next == std::string::npos ? text.size() : next) - eol - 1);
            if (!detail::trim_guess(line).empty()) return try_match(line);
            eol = next;
        }
        return std::nullopt;
    }

    // No marker: match the last non-empty line.
    std::size_t end = text.size();
    while (end > 0) {
        std::size_t begin = text.rfind('\n', end - 1);
        std::size_t line_begin = begin == std::string::npos ? 0 : begin + 1;
        std::string_view line(text.data() + line_begin, end - line_begin);
        if (!detail::trim_guess(line).empty()) return try_match(line);
        if (begin == std::string::npos) break;
        end = begin;
    }
    return std::nullopt;
}

/// Correct/incorrect (true/false) verdict scan, earliest standalone verdict
/// word wins; "incorrect" is recognized before its "correct" suffix can
/// match. Returns nullopt when no verdict word appears.
inline std::optional<bool> parse_true_false(const std::string& text) {
    std::string lower;
    lower.reserve(text.size());
    for (unsigned char c : text) lower.push_back(static_cast<char>(std::tolower(c)));

    auto word_at = [&](std::size_t pos, std::string_view word) {
        if (pos + word.size() > lower.size()) return false;
        if (lower.compare(pos, word.size(), word) != 0) return false;
        if (pos > 0 && std::isalpha(static_cast<unsigned char>(lower[pos - 1]))) return false;
        std::size_t after = pos + word.size();
        if (after < lower.size() && std::isalpha(static_cast<unsigned char>(lower[after])))
            return false;
        return true;
    };

    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (word_at(i, "incorrect") || word_at(i, "false")) return false;
        if (word_at(i, "correct") || word_at(i, "true")) return true;
    }
    return std::nullopt;
}

/// First number after a "confidence" marker, percent-aware and clamped to
/// [0,1]. Returns nullopt when no such number exists.
inline std::optional<double> parse_confidence(const std::string& text) {
    std::string lower;
    lower.reserve(text.size());
    for (unsigned char c : text) lower.push_back(static_cast<char>(std::tolower(c)));
    std::size_t p = lower.find("confidence");
    if (p == std::string::npos) return std::nullopt;
    auto v = detail::parse_prob_token(std::string_view(text).substr(p + 10));
    if (!v) return std::nullopt;
    return std::clamp(*v, 0.0, 1.0);
}

}  // namespace selfdetect
