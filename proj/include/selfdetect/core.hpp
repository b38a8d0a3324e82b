#pragma once

// Shared domain types for answer self-detection pipelines, plus the answer
// normalization/matching used by every scoring strategy. Everything here is
// an immutable value type; the free functions are pure.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace selfdetect {

// ---------------------------------------------------------------- errors --

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidAnswer : public Error { public: using Error::Error; };
class AmbiguousAnswer : public Error { public: using Error::Error; };
class InvalidAnswerSpace : public Error { public: using Error::Error; };
class TemplateIncomplete : public Error { public: using Error::Error; };
class UnparsableResponse : public Error { public: using Error::Error; };
class TargetUndetermined : public Error { public: using Error::Error; };
class AdjustUnavailable : public Error { public: using Error::Error; };
class DegenerateLabels : public Error { public: using Error::Error; };
class BackendUnavailable : public Error { public: using Error::Error; };
class UnscriptedPrompt : public Error { public: using Error::Error; };
class CacheCorrupt : public Error { public: using Error::Error; };

class RequestRejected : public Error {
public:
    RequestRejected(int status, std::string body)
        : Error("http request rejected with status " + std::to_string(status) + ": " + body),
          status_(status), body_(std::move(body)) {}
    int status() const { return status_; }
    const std::string& body() const { return body_; }
private:
    int status_;
    std::string body_;
};

class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }
private:
    std::size_t line_;
};

// ------------------------------------------------------- answer handling --

/// Canonicalizes an answer string: trims, lowercases, collapses internal
/// whitespace, and strips sentence punctuation and quotes from both ends.
/// Bracket characters survive because they mark choice labels ("(a) yard").
/// Idempotent. Throws InvalidAnswer on empty input.
inline std::string normalize_answer(std::string_view text) {
    if (text.empty()) throw InvalidAnswer("normalize_answer: empty input");

    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }

    auto edge = [](char c) {
        return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' ||
               c == '?' || c == '"' || c == '\'' || c == '`' || c == ' ';
    };
    std::size_t b = 0, e = out.size();
    while (b < e && edge(out[b])) ++b;
    while (e > b && edge(out[e - 1])) --e;
    return out.substr(b, e - b);
}

struct CandidateAnswer {
    std::string surface;    // display form, e.g. "(a) yard"
    std::string canonical;  // normalized form used for matching

    static CandidateAnswer from_surface(std::string s) {
        std::string canon = normalize_answer(s);
        return CandidateAnswer{std::move(s), std::move(canon)};
    }

    bool operator==(const CandidateAnswer& o) const { return canonical == o.canonical; }
};

enum class Task { SA, NLI, CQA, Other };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::SA: return "SA";
        case Task::NLI: return "NLI";
        case Task::CQA: return "CQA";
        default: return "other";
    }
}

inline Task task_from_string(std::string_view s) {
    if (s == "SA") return Task::SA;
    if (s == "NLI") return Task::NLI;
    if (s == "CQA") return Task::CQA;
    return Task::Other;
}

/// One task item: instruction text, question/input text, the closed answer
/// space and an optional gold label index.
struct QuestionInstance {
    std::string id;
    Task task = Task::Other;
    std::string instruction;  // task description, without the task input
    std::string question;     // the task input (review text, premise/hypothesis, question)
    std::vector<CandidateAnswer> answer_space;
    std::optional<int> gold_label;
};

/// Throws if the instance violates its invariants: N >= 2, pairwise-distinct
/// canonicals, gold label in range.
inline void validate(const QuestionInstance& q) {
    if (q.answer_space.size() < 2)
        throw InvalidAnswerSpace("instance " + q.id + ": answer space needs at least 2 entries");
    for (std::size_t i = 0; i < q.answer_space.size(); ++i)
        for (std::size_t j = i + 1; j < q.answer_space.size(); ++j)
            if (q.answer_space[i].canonical == q.answer_space[j].canonical)
                throw InvalidAnswerSpace("instance " + q.id + ": duplicate candidate '" +
                                         q.answer_space[i].canonical + "'");
    if (q.gold_label &&
        (*q.gold_label < 0 || static_cast<std::size_t>(*q.gold_label) >= q.answer_space.size()))
        throw InvalidAnswerSpace("instance " + q.id + ": gold label out of range");
}

/// Minimally-edited question pair with different labels over the same
/// k-sized answer space.
struct CounterfactualPair {
    QuestionInstance original;
    QuestionInstance counterfactual;
    int k = 2;
};

// --------------------------------------------------------- LLM responses --

/// One backend completion. The fingerprint is a pure function of backend id,
/// model name, prompt, generation params and sample index, so replays are
/// recognizable across process restarts.
struct LlmResponse {
    std::string text;
    std::string request_fingerprint;
    bool cached = false;
    std::int64_t latency_ms = 0;
};

struct TraceEntry {
    std::string prompt;
    LlmResponse response;
};

/// Output of one detection strategy for one instance: the scored target
/// answer plus the full prompt/response trace that produced the score.
struct DetectionResult {
    std::string instance_id;
    std::string strategy;
    CandidateAnswer target_answer;
    double score = 0.0;  // always within [0,1]
    std::vector<TraceEntry> trace;
    int api_calls = 0;  // equals trace.size()

    std::optional<int> top_answer_index;  // strategy's own best answer, when it has one
    int parse_attempts = 0;
    int parse_failures = 0;
    std::map<std::string, double> diagnostics;
};

/// Clamps a raw score into [0,1]; out-of-range inputs are kept in the
/// diagnostics so the pre-clamp value stays auditable.
inline void set_score(DetectionResult& r, double raw) {
    if (raw < 0.0 || raw > 1.0 || raw != raw) {
        r.diagnostics["pre_clamp_score"] = raw;
        raw = raw != raw ? 0.0 : std::clamp(raw, 0.0, 1.0);
    }
    r.score = raw;
}

// ------------------------------------------------------ answer matching --

/// How candidates were laid out in a prompt: view position -> original index,
/// plus the letter label each view position carried (0 when unlabeled).
/// Reversed-label ensembles need this so a bare "A" maps to whatever
/// candidate was listed first in that particular prompt.
struct ChoicePresentation {
    std::vector<int> order;
    std::vector<char> letters;

    static ChoicePresentation identity_for(const std::vector<CandidateAnswer>& space);
};

namespace detail {

// Leading choice-label letter of a canonical candidate ("(a) yard", "a) x",
// "a. x"), if any.
inline std::optional<char> label_letter(const std::string& canonical) {
    const auto n = canonical.size();
    auto alpha = [](char c) { return c >= 'a' && c <= 'z'; };
    if (n >= 4 && canonical[0] == '(' && alpha(canonical[1]) && canonical[2] == ')' &&
        canonical[3] == ' ')
        return canonical[1];
    if (n >= 3 && alpha(canonical[0]) && (canonical[1] == ')' || canonical[1] == '.') &&
        canonical[2] == ' ')
        return canonical[0];
    return std::nullopt;
}

// Canonical text with any leading choice label removed.
inline std::string strip_label(const std::string& canonical) {
    if (auto l = label_letter(canonical)) {
        std::size_t skip = canonical[0] == '(' ? 4 : 3;
        std::size_t b = skip;
        while (b < canonical.size() && canonical[b] == ' ') ++b;
        return canonical.substr(b);
    }
    return canonical;
}

// Whole-string bare letter responses: "b", "(b)", "b)".
inline std::optional<char> bare_choice_letter(const std::string& normalized) {
    auto alpha = [](char c) { return c >= 'a' && c <= 'z'; };
    if (normalized.size() == 1 && alpha(normalized[0])) return normalized[0];
    if (normalized.size() == 3 && normalized[0] == '(' && alpha(normalized[1]) &&
        normalized[2] == ')')
        return normalized[1];
    if (normalized.size() == 2 && alpha(normalized[0]) && normalized[1] == ')')
        return normalized[0];
    return std::nullopt;
}

}  // namespace detail

inline ChoicePresentation ChoicePresentation::identity_for(
    const std::vector<CandidateAnswer>& space) {
    ChoicePresentation p;
    p.order.resize(space.size());
    p.letters.resize(space.size(), 0);
    for (std::size_t i = 0; i < space.size(); ++i) {
        p.order[i] = static_cast<int>(i);
        auto l = detail::label_letter(space[i].canonical);
        p.letters[i] = l ? *l : (i < 26 ? static_cast<char>('a' + i) : 0);
    }
    return p;
}

/// Matches a model response against the answer space as it was presented.
/// Tiers, most specific first: exact canonical equality, bare choice letter,
/// label-stripped canonical equality. Two hits within one tier raise
/// AmbiguousAnswer; no hit anywhere returns nullopt.
inline std::optional<int> match_answer(std::string_view text,
                                       const std::vector<CandidateAnswer>& space,
                                       const ChoicePresentation& presented) {
    if (space.empty()) throw InvalidAnswerSpace("match_answer: empty answer space");
    if (text.empty()) return std::nullopt;
    const std::string norm = normalize_answer(text);
    if (norm.empty()) return std::nullopt;

    auto unique_or_throw = [&](const std::vector<int>& hits) -> std::optional<int> {
        if (hits.empty()) return std::nullopt;
        if (hits.size() > 1)
            throw AmbiguousAnswer("answer '" + norm + "' matches " +
                                  std::to_string(hits.size()) + " candidates");
        return hits.front();
    };

    std::vector<int> hits;
    for (std::size_t i = 0; i < space.size(); ++i)
        if (space[i].canonical == norm) hits.push_back(static_cast<int>(i));
    if (auto m = unique_or_throw(hits)) return m;

    if (auto letter = detail::bare_choice_letter(norm)) {
        hits.clear();
        for (std::size_t v = 0; v < presented.order.size(); ++v)
            if (presented.letters[v] == *letter) hits.push_back(presented.order[v]);
        if (auto m = unique_or_throw(hits)) return m;
    }

    hits.clear();
    for (std::size_t i = 0; i < space.size(); ++i)
        if (detail::strip_label(space[i].canonical) == norm) hits.push_back(static_cast<int>(i));
    return unique_or_throw(hits);
}

inline std::optional<int> match_answer(std::string_view text,
                                       const std::vector<CandidateAnswer>& space) {
    return match_answer(text, space, ChoicePresentation::identity_for(space));
}

/// Index of a candidate inside its own answer space, by canonical equality.
inline std::optional<int> index_of(const CandidateAnswer& c,
                                   const std::vector<CandidateAnswer>& space) {
    for (std::size_t i = 0; i < space.size(); ++i)
        if (space[i].canonical == c.canonical) return static_cast<int>(i);
    return std::nullopt;
}

}  // namespace selfdetect
