#pragma once

// Typed prompt templates with {name} placeholder substitution, plus the
// deterministic justification-order control used by the joint scoring step.
// Template bodies are data: the bundled texts ship as files under
// templates/ and can be overridden per directory for prompt studies.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "selfdetect/core.hpp"

namespace selfdetect {

enum class TemplateId {
    Base,
    CoT,
    TopKVerb,
    PTrue,
    Justify,
    JointVerb,
    SelfProbe,
    Rephrase,
    InducedContext,
    CapeAlpha,
    CapeItemized,
};

inline const char* template_file_name(TemplateId id) {
    switch (id) {
        case TemplateId::Base: return "base.txt";
        case TemplateId::CoT: return "cot.txt";
        case TemplateId::TopKVerb: return "top_k_verb.txt";
        case TemplateId::PTrue: return "p_true.txt";
        case TemplateId::Justify: return "justify.txt";
        case TemplateId::JointVerb: return "joint_verb.txt";
        case TemplateId::SelfProbe: return "self_probe.txt";
        case TemplateId::Rephrase: return "rephrase.txt";
        case TemplateId::InducedContext: return "induced_context.txt";
        case TemplateId::CapeAlpha: return "cape_alpha.txt";
        case TemplateId::CapeItemized: return "cape_itemized.txt";
    }
    return "";
}

struct PromptTemplate {
    TemplateId id;
    std::string body;
};

using PlaceholderMap = std::map<std::string, std::string>;

/// Substitutes every {name} in the template body from the map. Unused
/// bindings are ignored; a placeholder missing from the map raises
/// TemplateIncomplete naming it. Substituted values are emitted verbatim,
/// never re-scanned.
inline std::string render(const PromptTemplate& tpl, const PlaceholderMap& bindings) {
    std::string out;
    out.reserve(tpl.body.size());
    const std::string& b = tpl.body;
    std::size_t i = 0;
    while (i < b.size()) {
        if (b[i] != '{') {
            out.push_back(b[i++]);
            continue;
        }
        std::size_t close = b.find('}', i + 1);
        if (close == std::string::npos) {
            out.append(b, i, std::string::npos);
            break;
        }
        std::string name = b.substr(i + 1, close - i - 1);
        auto it = bindings.find(name);
        if (it == bindings.end())
            throw TemplateIncomplete("unbound placeholder {" + name + "}");
        out += it->second;
        i = close + 1;
    }
    return out;
}

// ------------------------------------------------------- ordering control --

/// A permutation of the N justification slots in the joint prompt.
struct ExplanationOrder {
    std::vector<int> permutation;

    static ExplanationOrder identity(int n) {
        ExplanationOrder o;
        for (int i = 0; i < n; ++i) o.permutation.push_back(i);
        return o;
    }
    static ExplanationOrder reversed(int n) {
        ExplanationOrder o;
        for (int i = n - 1; i >= 0; --i) o.permutation.push_back(i);
        return o;
    }
};

/// The default shuffle set: one original and one reversed order.
inline std::vector<ExplanationOrder> orders_for_t3(int n) {
    if (n < 2) throw InvalidAnswerSpace("orders_for_t3: need at least 2 answers");
    return {ExplanationOrder::identity(n), ExplanationOrder::reversed(n)};
}

// ------------------------------------------------------ choice rendering --

enum class ChoiceStyle { AsGiven, Alphabetic, Itemized };

struct RenderedChoices {
    std::string block;
    ChoicePresentation presentation;
};

namespace detail {

// Surface text without any leading choice label, for relabeled layouts.
inline std::string bare_surface(const CandidateAnswer& c) {
    std::string strippedCanon = strip_label(c.canonical);
    if (strippedCanon == c.canonical) return c.surface;
    // Walk the surface past its label the same way strip_label walked the
    // canonical: label then whitespace.
    std::size_t skip = c.canonical[0] == '(' ? 3 : 2;
    std::size_t b = 0, seen = 0;
    while (b < c.surface.size() && seen < skip) {
        if (!std::isspace(static_cast<unsigned char>(c.surface[b]))) ++seen;
        ++b;
    }
    while (b < c.surface.size() && std::isspace(static_cast<unsigned char>(c.surface[b]))) ++b;
    return c.surface.substr(b);
}

}  // namespace detail

/// Lays the candidates out in the given order. AsGiven keeps the dataset
/// surfaces under an "Answer Choices:" heading; Alphabetic/Itemized relabel
/// the bare answer texts ("A. yard" / "- yard"). The returned presentation
/// is what answer matching must use for responses to this prompt.
inline RenderedChoices render_choices(const std::vector<CandidateAnswer>& space,
                                      const std::vector<int>& order, ChoiceStyle style) {
    if (order.empty()) throw InvalidAnswerSpace("render_choices: empty order");
    RenderedChoices rc;
    rc.presentation.order = order;
    std::ostringstream os;
    if (style == ChoiceStyle::AsGiven) os << "Answer Choices:";
    for (std::size_t v = 0; v < order.size(); ++v) {
        const CandidateAnswer& c = space.at(static_cast<std::size_t>(order[v]));
        char letter = 0;
        switch (style) {
            case ChoiceStyle::AsGiven: {
                os << "\n" << c.surface;
                auto l = detail::label_letter(c.canonical);
                letter = l ? *l : (v < 26 ? static_cast<char>('a' + v) : 0);
                break;
            }
            case ChoiceStyle::Alphabetic:
                letter = static_cast<char>('a' + v);
                if (v) os << "\n";
                os << static_cast<char>('A' + v) << ". " << detail::bare_surface(c);
                break;
            case ChoiceStyle::Itemized:
                letter = v < 26 ? static_cast<char>('a' + v) : 0;
                if (v) os << "\n";
                os << "- " << detail::bare_surface(c);
                break;
        }
        rc.presentation.letters.push_back(letter);
    }
    rc.block = os.str();
    return rc;
}

/// "Possible explanation j: ..." lines with the texts permuted by the order.
/// Slot numbers always run 1..N; the order decides which text fills each slot.
inline std::string render_explanations(const std::vector<std::string>& texts,
                                       const ExplanationOrder& order) {
    std::ostringstream os;
    for (std::size_t j = 0; j < order.permutation.size(); ++j) {
        if (j) os << "\n";
        os << "Possible explanation " << (j + 1) << ": "
           << texts.at(static_cast<std::size_t>(order.permutation[j]));
    }
    return os.str();
}

// ------------------------------------------------------------ template set --

namespace builtin {

inline const char* base_text() { return "{instruction}."; }

inline const char* cot_text() {
    return "{instruction}. Please output strictly following this format: Explanation: "
           "[reasons for the answer] Answer: [{options}]";
}

inline const char* top_k_verb_text() {
    return
        "The task is to {instruction_only}. Provide your {K} best guesses and the probability "
        "that each is correct (0.0 to 1.0) for the following question. Give ONLY the guesses "
        "and probabilities, no other words or explanation. For example:\n"
        "G1: <first most likely guess, as short as possible; not a complete sentence, just the "
        "guess!>\n"
        "P1: <the probability between 0.0 and 1.0 that G1 is correct, without any extra "
        "commentary whatsoever; just the probability!> ... G{K}: <{K}-th most likely guess, as "
        "short as possible; not a complete sentence, just the guess!>\n"
        "P{K}: <the probability between 0.0 and 1.0 that G{K} is correct, without any extra "
        "commentary whatsoever; just the probability!> {question} {choices}.";
}

inline const char* p_true_text() {
    return "The task is to {instruction}. Label: {label}. Is the label correct or incorrect?";
}

inline const char* justify_text() {
    return
        "The task is to {instruction_only}.\n"
        "{question} {choices}\n"
        "The answer is {answer}.\n"
        "Please generate an explanation to try to justify the answer judgment.";
}

inline const char* joint_verb_text() {
    return
        "The task is to {instruction_only}. Provide your {K} best guesses and the probability "
        "that each is correct (0.0 to 1.0) for the following question. Give ONLY the guesses "
        "and probabilities, no other words or explanation. For example:\n"
        "G1: <first most likely guess, as short as possible; not a complete sentence, just the "
        "guess!>\n"
        "P1: <the probability between 0.0 and 1.0 that G1 is correct, without any extra "
        "commentary whatsoever; just the probability!> ... G{K}: <{K}-th most likely guess, as "
        "short as possible; not a complete sentence, just the guess!>\n"
        "P{K}: <the probability between 0.0 and 1.0 that G{K} is correct, without any extra "
        "commentary whatsoever; just the probability!>\n"
        "{question} {choices}.\n"
        "{explanations}";
}

// Generic default; replaceable via the template directory.
inline const char* self_probe_text() {
    return
        "The task is to {instruction}. Proposed answer: {answer}. Explain whether the proposed "
        "answer is correct, then state your confidence that it is correct as a number between "
        "0.0 and 1.0, in the format Confidence: <number>.";
}

inline const char* rephrase_text() {
    return
        "Paraphrase the given sentence. Please make sure the paraphrased sentence has exactly "
        "the same meaning as the original sentence. {question}";
}

// One misleading context per line; replaceable defaults.
inline const char* induced_context_text() {
    return
        "I think the answer is {wrong_choice}.\n"
        "Are you sure? The answer might be {wrong_choice}.\n"
        "A domain expert says the answer is {wrong_choice}.";
}

inline const char* cape_alpha_text() {
    return
        "Provide your {K} best guesses and the probability that each is correct (0.0 to 1.0) "
        "for the following task. Give ONLY the guesses and probabilities, no other words or "
        "explanation. For example:\n"
        "G1: <first most likely guess, as short as possible; not a complete sentence, just the "
        "guess!>\n"
        "P1: <the probability between 0.0 and 1.0 that G1 is correct, without any extra "
        "commentary whatsoever; just the probability!> ... G{K}: <{K}-th most likely guess, as "
        "short as possible; not a complete sentence, just the guess!>\n"
        "P{K}: <the probability between 0.0 and 1.0 that G{K} is correct, without any extra "
        "commentary whatsoever; just the probability!>\n"
        "Instruction: {instruction_only} {question}\n"
        "{choices}\n"
        "{explanations}Correct Choice:";
}

inline const char* cape_itemized_text() { return cape_alpha_text(); }

}  // namespace builtin

/// All templates, keyed by id. Defaults are compiled in; load_dir overrides
/// any template whose file exists in the directory (one UTF-8 file per id,
/// {name} placeholder syntax, a single trailing newline ignored).
class TemplateSet {
public:
    TemplateSet() {
        set(TemplateId::Base, builtin::base_text());
        set(TemplateId::CoT, builtin::cot_text());
        set(TemplateId::TopKVerb, builtin::top_k_verb_text());
        set(TemplateId::PTrue, builtin::p_true_text());
        set(TemplateId::Justify, builtin::justify_text());
        set(TemplateId::JointVerb, builtin::joint_verb_text());
        set(TemplateId::SelfProbe, builtin::self_probe_text());
        set(TemplateId::Rephrase, builtin::rephrase_text());
        set(TemplateId::InducedContext, builtin::induced_context_text());
        set(TemplateId::CapeAlpha, builtin::cape_alpha_text());
        set(TemplateId::CapeItemized, builtin::cape_itemized_text());
    }

    static TemplateSet load_dir(const std::filesystem::path& dir) {
        TemplateSet ts;
        for (auto id : all_ids()) {
            auto path = dir / template_file_name(id);
            if (!std::filesystem::exists(path)) continue;
            std::ifstream in(path, std::ios::binary);
            if (!in) throw Error("cannot read template file " + path.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            std::string body = ss.str();
            if (!body.empty() && body.back() == '\n') body.pop_back();
            ts.set(id, std::move(body));
        }
        return ts;
    }

    const PromptTemplate& get(TemplateId id) const { return templates_.at(id); }

    /// Misleading-context texts for induced consistency, one per line of the
    /// InducedContext template.
    std::vector<std::string> misleaders() const {
        std::vector<std::string> out;
        std::istringstream is(get(TemplateId::InducedContext).body);
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) out.push_back(line);
        return out;
    }

    static const std::vector<TemplateId>& all_ids() {
        static const std::vector<TemplateId> ids = {
            TemplateId::Base,      TemplateId::CoT,       TemplateId::TopKVerb,
            TemplateId::PTrue,     TemplateId::Justify,   TemplateId::JointVerb,
            TemplateId::SelfProbe, TemplateId::Rephrase,  TemplateId::InducedContext,
            TemplateId::CapeAlpha, TemplateId::CapeItemized};
        return ids;
    }

private:
    void set(TemplateId id, std::string body) { templates_[id] = PromptTemplate{id, std::move(body)}; }

    std::map<TemplateId, PromptTemplate> templates_;
};

}  // namespace selfdetect
