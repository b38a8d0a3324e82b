#pragma once

// Every detection strategy: single-answer baselines (consistency sampling,
// verbalized top-K, P(True), self-probing, induced consistency, rephrase
// entropy, prompt ensembles) and the two-step multi-answer pipeline that
// justifies each candidate before joint scoring. Each strategy maps
// (instance, target answer, config, backend) to a DetectionResult with
// exact call accounting: api_calls always equals the trace length.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "selfdetect/backend.hpp"
#include "selfdetect/core.hpp"
#include "selfdetect/parsing.hpp"
#include "selfdetect/prompts.hpp"

namespace selfdetect {

/// Experiment knobs, defaulted to the reference hyperparameters: 30
/// consistency samples, K equal to the answer-space size, five ensemble
/// prompts, 15 rephrasings, sampling at temperature 1 and deterministic
/// answers at temperature 0.
struct StrategyConfig {
    int consistency_samples = 30;      // D: samples for consistency and P(True)
    std::optional<int> top_k;          // K: guesses per verbalized response; defaults to N
    int ensemble_size = 5;             // M: prompts in the verbalized ensemble
    int rephrase_count = 15;           // rephrasings for the entropy strategy
    double temperature_sample = 1.0;
    double temperature_det = 0.0;
    int max_tokens = 200;
    std::vector<ExplanationOrder> shuffle_orders;  // empty means identity + reversed
};

/// One generated justification for a candidate answer.
struct Justification {
    int answer_index = 0;
    std::string text;
};

struct StrategyContext {
    Backend& backend;
    const TemplateSet& templates;
    StrategyConfig config;
};

// ------------------------------------------------------------- rendering --

namespace detail {

inline int effective_k(const QuestionInstance& q, const StrategyConfig& cfg) {
    int k = cfg.top_k.value_or(static_cast<int>(q.answer_space.size()));
    if (k < 1) throw Error("strategy config: K must be >= 1");
    return k;
}

inline std::vector<int> identity_order(std::size_t n) {
    std::vector<int> o(n);
    std::iota(o.begin(), o.end(), 0);
    return o;
}

inline std::vector<int> reversed_order(std::size_t n) {
    auto o = identity_order(n);
    std::reverse(o.begin(), o.end());
    return o;
}

}  // namespace detail

/// Placeholder bindings shared by all templates for one instance.
/// {instruction} is the task description with the task input; multi-choice
/// tasks additionally carry their inline choice list, mirroring how those
/// instructions are phrased.
inline PlaceholderMap base_bindings(const QuestionInstance& q, int k_guesses) {
    PlaceholderMap b;
    b["instruction_only"] = q.instruction;
    std::string question = q.task == Task::CQA ? "Question: " + q.question : q.question;
    b["question"] = question;

    auto choices = render_choices(q.answer_space, detail::identity_order(q.answer_space.size()),
                                  ChoiceStyle::AsGiven);
    b["choices"] = choices.block;

    std::string instruction = q.instruction + " " + question;
    if (q.task == Task::CQA) {
        instruction += " Answer choices:";
        for (const auto& c : q.answer_space) instruction += " " + c.surface;
    }
    b["instruction"] = instruction;

    std::string options;
    for (std::size_t i = 0; i < q.answer_space.size(); ++i) {
        if (i) options += " or ";
        options += q.answer_space[i].surface;
    }
    b["options"] = options;
    b["K"] = std::to_string(k_guesses);
    b["explanations"] = "";
    return b;
}

namespace detail {

inline GenerationParams det_params(const StrategyConfig& cfg, int samples = 1) {
    GenerationParams p;
    p.temperature = cfg.temperature_det;
    p.max_tokens = cfg.max_tokens;
    p.num_samples = samples;
    return p;
}

inline GenerationParams sample_params(const StrategyConfig& cfg, int samples) {
    GenerationParams p;
    p.temperature = cfg.temperature_sample;
    p.max_tokens = cfg.max_tokens;
    p.num_samples = samples;
    return p;
}

// Matches a free-form answer response: whole text first, then the CoT
// "Answer:" field / last-line fallback. Ambiguity counts as no match.
inline std::optional<int> match_response_answer(const std::string& text,
                                                const std::vector<CandidateAnswer>& space) {
    try {
        if (auto m = match_answer(text, space)) return m;
    } catch (const AmbiguousAnswer&) {
        return std::nullopt;
    }
    return parse_cot_answer(text, space);
}

// First matching guess per candidate, as probabilities; unmatched guesses
// contribute nothing.
inline std::vector<double> per_candidate_probs(const GuessList& gl,
                                               const std::vector<CandidateAnswer>& space,
                                               const ChoicePresentation& pres) {
    std::vector<double> probs(space.size(), -1.0);
    for (const auto& e : gl.entries) {
        std::optional<int> idx;
        try {
            idx = match_answer(e.guess, space, pres);
        } catch (const AmbiguousAnswer&) {
            continue;
        }
        if (idx && probs[static_cast<std::size_t>(*idx)] < 0.0)
            probs[static_cast<std::size_t>(*idx)] = std::clamp(e.prob, 0.0, 1.0);
    }
    for (auto& p : probs)
        if (p < 0.0) p = 0.0;
    return probs;
}

struct VerbalizedOutcome {
    double score = 0.0;
    bool parsed = false;
    std::optional<int> top_index;
    std::vector<double> candidate_probs;  // per original candidate index
    TraceEntry trace;
};

// One verbalized call: render happened upstream, this sends the prompt,
// parses the guess block and extracts the target probability under the
// given presentation.
inline VerbalizedOutcome run_verbalized(const std::string& prompt, const QuestionInstance& q,
                                        const CandidateAnswer& target,
                                        const ChoicePresentation& pres, StrategyContext& ctx) {
    VerbalizedOutcome out;
    out.candidate_probs.assign(q.answer_space.size(), 0.0);
    auto rs = ctx.backend.complete(prompt, det_params(ctx.config));
    out.trace = TraceEntry{prompt, rs.front()};
    try {
        auto gl = parse_top_k(rs.front().text, effective_k(q, ctx.config));
        out.parsed = true;
        out.score = target_prob(gl, target, q.answer_space, &pres);
        out.candidate_probs = per_candidate_probs(gl, q.answer_space, pres);
        auto best = std::max_element(out.candidate_probs.begin(), out.candidate_probs.end());
        if (best != out.candidate_probs.end() && *best > 0.0)
            out.top_index = static_cast<int>(best - out.candidate_probs.begin());
    } catch (const UnparsableResponse&) {
        out.score = 0.0;
    }
    return out;
}

inline DetectionResult new_result(const QuestionInstance& q, const CandidateAnswer& target,
                                  std::string strategy) {
    DetectionResult r;
    r.instance_id = q.id;
    r.strategy = std::move(strategy);
    r.target_answer = target;
    return r;
}

inline void finish(DetectionResult& r, double raw_score) {
    set_score(r, raw_score);
    r.api_calls = static_cast<int>(r.trace.size());
}

}  // namespace detail

// -------------------------------------------------------- target answer --

struct TargetGeneration {
    CandidateAnswer answer;
    int index = 0;
    TraceEntry trace;
};

/// Greedy answer to the base prompt; the answer every strategy in a run is
/// scored against. Throws TargetUndetermined when the response matches no
/// candidate.
inline TargetGeneration generate_target(const QuestionInstance& q, StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    std::string prompt = render(ctx.templates.get(TemplateId::Base), bindings);
    auto rs = ctx.backend.complete(prompt, detail::det_params(ctx.config));
    auto idx = detail::match_response_answer(rs.front().text, q.answer_space);
    if (!idx)
        throw TargetUndetermined("instance " + q.id + ": response \"" +
                                 rs.front().text.substr(0, 80) + "\" matches no candidate");
    return TargetGeneration{q.answer_space[static_cast<std::size_t>(*idx)], *idx,
                            TraceEntry{prompt, rs.front()}};
}

// ------------------------------------------------- consistency sampling --

namespace detail {

inline DetectionResult consistency_impl(const QuestionInstance& q, const CandidateAnswer& target,
                                        StrategyContext& ctx, const std::string& strategy,
                                        TemplateId tid, bool cot_parse) {
    const int d = ctx.config.consistency_samples;
    if (d < 1) throw Error("strategy config: D must be >= 1");
    auto bindings = base_bindings(q, effective_k(q, ctx.config));
    std::string prompt = render(ctx.templates.get(tid), bindings);
    auto rs = ctx.backend.complete(prompt, sample_params(ctx.config, d));

    auto r = new_result(q, target, strategy);
    auto target_idx = index_of(target, q.answer_space);
    std::vector<int> counts(q.answer_space.size(), 0);
    int matches = 0;
    for (const auto& resp : rs) {
        r.trace.push_back(TraceEntry{prompt, resp});
        ++r.parse_attempts;
        auto idx = cot_parse ? parse_cot_answer(resp.text, q.answer_space)
                             : match_response_answer(resp.text, q.answer_space);
        if (!idx) {
            ++r.parse_failures;
            continue;
        }
        ++counts[static_cast<std::size_t>(*idx)];
        if (target_idx && *idx == *target_idx) ++matches;
    }
    auto best = std::max_element(counts.begin(), counts.end());
    if (best != counts.end() && *best > 0)
        r.top_answer_index = static_cast<int>(best - counts.begin());
    detail::finish(r, static_cast<double>(matches) / static_cast<double>(d));
    return r;
}

}  // namespace detail

/// Fraction of D sampled base-prompt answers that equal the target.
inline DetectionResult self_consistency(const QuestionInstance& q, const CandidateAnswer& target,
                                        StrategyContext& ctx) {
    return detail::consistency_impl(q, target, ctx, "self_consistency", TemplateId::Base, false);
}

/// Same, with chain-of-thought responses and "Answer:"-field parsing.
inline DetectionResult cot_consistency(const QuestionInstance& q, const CandidateAnswer& target,
                                       StrategyContext& ctx) {
    return detail::consistency_impl(q, target, ctx, "cot_consistency", TemplateId::CoT, true);
}

// ------------------------------------------------------------ verbalized --

/// Single verbalized response: the probability the model attaches to the
/// target among its K most likely answers (0 when absent or unparsable).
inline DetectionResult top_k_verbalized(const QuestionInstance& q, const CandidateAnswer& target,
                                        StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    std::string prompt = render(ctx.templates.get(TemplateId::TopKVerb), bindings);
    auto pres = ChoicePresentation::identity_for(q.answer_space);
    auto out = detail::run_verbalized(prompt, q, target, pres, ctx);

    auto r = detail::new_result(q, target, "top_k_verbalized");
    r.trace.push_back(out.trace);
    r.parse_attempts = 1;
    r.parse_failures = out.parsed ? 0 : 1;
    r.top_answer_index = out.top_index;
    detail::finish(r, out.score);
    return r;
}

/// Fraction of D sampled self-evaluation verdicts that judge the target
/// label correct; missing verdicts count as not-true.
inline DetectionResult p_true(const QuestionInstance& q, const CandidateAnswer& target,
                              StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    bindings["label"] = target.surface;
    std::string prompt = render(ctx.templates.get(TemplateId::PTrue), bindings);
    const int d = ctx.config.consistency_samples;
    if (d < 1) throw Error("strategy config: D must be >= 1");
    auto rs = ctx.backend.complete(prompt, detail::sample_params(ctx.config, d));

    auto r = detail::new_result(q, target, "p_true");
    int trues = 0;
    for (const auto& resp : rs) {
        r.trace.push_back(TraceEntry{prompt, resp});
        ++r.parse_attempts;
        auto verdict = parse_true_false(resp.text);
        if (!verdict) {
            ++r.parse_failures;
            continue;
        }
        if (*verdict) ++trues;
    }
    detail::finish(r, static_cast<double>(trues) / static_cast<double>(d));
    return r;
}

/// One direct "explain and rate your confidence" call.
inline DetectionResult self_probing(const QuestionInstance& q, const CandidateAnswer& target,
                                    StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    bindings["answer"] = target.surface;
    std::string prompt = render(ctx.templates.get(TemplateId::SelfProbe), bindings);
    auto rs = ctx.backend.complete(prompt, detail::det_params(ctx.config));

    auto r = detail::new_result(q, target, "self_probing");
    r.trace.push_back(TraceEntry{prompt, rs.front()});
    r.parse_attempts = 1;
    auto conf = parse_confidence(rs.front().text);
    if (!conf) ++r.parse_failures;
    detail::finish(r, conf.value_or(0.0));
    return r;
}

/// Re-asks the base question under each misleading context; score is the
/// fraction of answers that still equal the target. The misleading texts
/// are replaceable defaults, with the first non-target candidate as the
/// suggested wrong answer.
inline DetectionResult induced_consistency(const QuestionInstance& q,
                                           const CandidateAnswer& target, StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    std::string base_prompt = render(ctx.templates.get(TemplateId::Base), bindings);
    auto target_idx = index_of(target, q.answer_space);
    std::size_t wrong =
        target_idx ? (static_cast<std::size_t>(*target_idx) + 1) % q.answer_space.size() : 0;
    PlaceholderMap mb{{"wrong_choice", q.answer_space[wrong].surface}};

    auto r = detail::new_result(q, target, "induced_consistency");
    int kept = 0, total = 0;
    for (const auto& text : ctx.templates.misleaders()) {
        std::string prompt = base_prompt + " " + render(PromptTemplate{TemplateId::InducedContext, text}, mb);
        auto rs = ctx.backend.complete(prompt, detail::det_params(ctx.config));
        r.trace.push_back(TraceEntry{prompt, rs.front()});
        ++total;
        ++r.parse_attempts;
        auto idx = detail::match_response_answer(rs.front().text, q.answer_space);
        if (!idx) {
            ++r.parse_failures;
            continue;
        }
        if (target_idx && *idx == *target_idx) ++kept;
    }
    detail::finish(r, total ? static_cast<double>(kept) / static_cast<double>(total) : 0.0);
    return r;
}

// ------------------------------------------------------ rephrase entropy --

/// Rephrases the question, answers every rephrasing deterministically, and
/// maps the empirical answer entropy onto [0,1] as 1 - H/log(N+1) (the +1
/// bucket absorbs unmatched answers). The raw entropy is kept in the
/// diagnostics.
inline DetectionResult self_detect_entropy(const QuestionInstance& q,
                                           const CandidateAnswer& target, StrategyContext& ctx) {
    const int rephrases = ctx.config.rephrase_count;
    if (rephrases < 2) throw Error("self_detect_entropy: rephrase_count must be >= 2");

    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    std::string rephrase_prompt = render(ctx.templates.get(TemplateId::Rephrase), bindings);
    auto rs = ctx.backend.complete(rephrase_prompt, detail::sample_params(ctx.config, rephrases));

    auto r = detail::new_result(q, target, "self_detect");
    const std::size_t n = q.answer_space.size();
    std::vector<int> counts(n + 1, 0);  // last bucket: unmatched
    for (const auto& resp : rs) {
        r.trace.push_back(TraceEntry{rephrase_prompt, resp});
        QuestionInstance rq = q;
        rq.question = resp.text;
        auto rq_bindings = base_bindings(rq, detail::effective_k(q, ctx.config));
        std::string answer_prompt = render(ctx.templates.get(TemplateId::Base), rq_bindings);
        auto ans = ctx.backend.complete(answer_prompt, detail::det_params(ctx.config));
        r.trace.push_back(TraceEntry{answer_prompt, ans.front()});
        ++r.parse_attempts;
        auto idx = detail::match_response_answer(ans.front().text, q.answer_space);
        if (idx)
            ++counts[static_cast<std::size_t>(*idx)];
        else {
            ++counts[n];
            ++r.parse_failures;
        }
    }

    double entropy = 0.0;
    for (int c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(rephrases);
        entropy -= p * std::log(p);
    }
    r.diagnostics["raw_entropy"] = entropy;
    auto best = std::max_element(counts.begin(), counts.end() - 1);
    if (*best > 0) r.top_answer_index = static_cast<int>(best - counts.begin());
    detail::finish(r, 1.0 - entropy / std::log(static_cast<double>(n + 1)));
    return r;
}

// -------------------------------------------------------- prompt ensemble --

namespace detail {

struct EnsemblePrompt {
    std::string prompt;
    ChoicePresentation presentation;
};

inline EnsemblePrompt make_cape_prompt(const QuestionInstance& q, TemplateId tid,
                                       const std::vector<int>& order, const TemplateSet& templates,
                                       int k, const std::string& explanations = "") {
    auto bindings = base_bindings(q, k);
    auto choices = render_choices(q.answer_space, order,
                                  tid == TemplateId::CapeAlpha ? ChoiceStyle::Alphabetic
                                                               : ChoiceStyle::Itemized);
    bindings["choices"] = choices.block;
    bindings["explanations"] = explanations;
    return EnsemblePrompt{render(templates.get(tid), bindings), choices.presentation};
}

}  // namespace detail

/// Verbalized ensemble: the plain top-K prompt plus alphabetic and itemized
/// multi-choice layouts in original and reversed label order (five prompts);
/// score is the mean of the per-prompt target probabilities.
inline DetectionResult prompt_ensemble_cape(const QuestionInstance& q,
                                            const CandidateAnswer& target, StrategyContext& ctx) {
    const int k = detail::effective_k(q, ctx.config);
    const auto id_order = detail::identity_order(q.answer_space.size());
    const auto rev_order = detail::reversed_order(q.answer_space.size());

    std::vector<detail::EnsemblePrompt> prompts;
    {
        auto bindings = base_bindings(q, k);
        prompts.push_back({render(ctx.templates.get(TemplateId::TopKVerb), bindings),
                           ChoicePresentation::identity_for(q.answer_space)});
    }
    prompts.push_back(detail::make_cape_prompt(q, TemplateId::CapeAlpha, id_order, ctx.templates, k));
    prompts.push_back(detail::make_cape_prompt(q, TemplateId::CapeAlpha, rev_order, ctx.templates, k));
    prompts.push_back(detail::make_cape_prompt(q, TemplateId::CapeItemized, id_order, ctx.templates, k));
    prompts.push_back(detail::make_cape_prompt(q, TemplateId::CapeItemized, rev_order, ctx.templates, k));

    auto m = static_cast<std::size_t>(std::clamp<int>(ctx.config.ensemble_size, 1,
                                                      static_cast<int>(prompts.size())));
    auto r = detail::new_result(q, target, "cape");
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        auto out = detail::run_verbalized(prompts[i].prompt, q, target, prompts[i].presentation, ctx);
        r.trace.push_back(out.trace);
        ++r.parse_attempts;
        if (!out.parsed) ++r.parse_failures;
        sum += out.score;
    }
    detail::finish(r, sum / static_cast<double>(m));
    return r;
}

// --------------------------------------------------- multi-answer pipeline --

struct JustifyOutcome {
    std::vector<Justification> justifications;  // one per candidate, answer-space order
    std::vector<TraceEntry> trace;
    int empty_count = 0;
};

/// Step one: one justification request per candidate answer, in answer-space
/// order. Empty responses are retained (and counted) so step two still runs.
inline JustifyOutcome t3_justify(const QuestionInstance& q, StrategyContext& ctx) {
    if (q.answer_space.size() < 2)
        throw InvalidAnswerSpace("t3_justify: need at least 2 candidates");
    JustifyOutcome out;
    for (std::size_t i = 0; i < q.answer_space.size(); ++i) {
        auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
        bindings["answer"] = q.answer_space[i].surface;
        std::string prompt = render(ctx.templates.get(TemplateId::Justify), bindings);
        auto rs = ctx.backend.complete(prompt, detail::det_params(ctx.config));
        out.trace.push_back(TraceEntry{prompt, rs.front()});
        if (rs.front().text.empty()) ++out.empty_count;
        out.justifications.push_back(Justification{static_cast<int>(i), rs.front().text});
    }
    return out;
}

namespace detail {

inline std::vector<ExplanationOrder> effective_orders(const QuestionInstance& q,
                                                      const StrategyConfig& cfg) {
    auto n = static_cast<int>(q.answer_space.size());
    if (cfg.shuffle_orders.empty()) return orders_for_t3(n);
    for (const auto& o : cfg.shuffle_orders)
        if (o.permutation.size() != q.answer_space.size())
            throw InvalidAnswerSpace("shuffle order length does not match answer space");
    return cfg.shuffle_orders;
}

inline std::vector<std::string> justification_texts(const QuestionInstance& q,
                                                    const std::vector<Justification>& js) {
    if (js.size() != q.answer_space.size())
        throw InvalidAnswerSpace("need one justification per candidate");
    std::vector<std::string> texts(js.size());
    for (const auto& j : js) texts.at(static_cast<std::size_t>(j.answer_index)) = j.text;
    return texts;
}

}  // namespace detail

/// Step two: renders the joint verbalized prompt once per justification
/// order, parses each guess block, and averages the target probability over
/// the orders. An unparsable order contributes zero and is flagged.
inline DetectionResult t3_joint_score(const QuestionInstance& q, const CandidateAnswer& target,
                                      const std::vector<Justification>& justifications,
                                      StrategyContext& ctx) {
    auto texts = detail::justification_texts(q, justifications);
    auto orders = detail::effective_orders(q, ctx.config);
    auto pres = ChoicePresentation::identity_for(q.answer_space);

    auto r = detail::new_result(q, target, "t3_joint");
    std::vector<double> candidate_sums(q.answer_space.size(), 0.0);
    double sum = 0.0;
    for (const auto& order : orders) {
        auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
        bindings["explanations"] = render_explanations(texts, order);
        std::string prompt = render(ctx.templates.get(TemplateId::JointVerb), bindings);
        auto out = detail::run_verbalized(prompt, q, target, pres, ctx);
        r.trace.push_back(out.trace);
        ++r.parse_attempts;
        if (!out.parsed) ++r.parse_failures;
        sum += out.score;
        for (std::size_t i = 0; i < out.candidate_probs.size(); ++i)
            candidate_sums[i] += out.candidate_probs[i];
    }
    auto best = std::max_element(candidate_sums.begin(), candidate_sums.end());
    if (best != candidate_sums.end() && *best > 0.0)
        r.top_answer_index = static_cast<int>(best - candidate_sums.begin());
    detail::finish(r, sum / static_cast<double>(orders.size()));
    return r;
}

/// Full two-step pipeline: justify every candidate, then jointly score the
/// target under the configured justification orders. N+2 calls at defaults.
inline DetectionResult t3(const QuestionInstance& q, const CandidateAnswer& target,
                          StrategyContext& ctx) {
    auto justify = t3_justify(q, ctx);
    auto r = t3_joint_score(q, target, justify.justifications, ctx);
    r.strategy = "t3";
    r.trace.insert(r.trace.begin(), justify.trace.begin(), justify.trace.end());
    r.api_calls = static_cast<int>(r.trace.size());
    if (justify.empty_count) r.diagnostics["empty_justifications"] = justify.empty_count;
    return r;
}

// ----------------------------------------------------------- combination --

/// Combination rule for two strategies scoring the same target: the mean of
/// the two scores, halved when their own best answers disagree. This
/// concrete rule is a toolkit decision kept behind this one function so
/// alternates can be swapped.
inline DetectionResult hybrid_combine(const DetectionResult& a, const DetectionResult& b,
                                      bool answers_agree) {
    DetectionResult r;
    r.instance_id = a.instance_id;
    r.strategy = a.strategy + "+" + b.strategy;
    r.target_answer = a.target_answer;
    r.trace = a.trace;
    r.trace.insert(r.trace.end(), b.trace.begin(), b.trace.end());
    r.parse_attempts = a.parse_attempts + b.parse_attempts;
    r.parse_failures = a.parse_failures + b.parse_failures;
    r.top_answer_index = a.top_answer_index ? a.top_answer_index : b.top_answer_index;
    double mean = (a.score + b.score) / 2.0;
    detail::finish(r, answers_agree ? mean : mean * 0.5);
    return r;
}

namespace detail {

inline bool tops_agree(const DetectionResult& a, const DetectionResult& b) {
    return a.top_answer_index && b.top_answer_index && *a.top_answer_index == *b.top_answer_index;
}

}  // namespace detail

/// Self-consistency + top-K verbalized under the combination rule (D+1 calls).
inline DetectionResult hybrid(const QuestionInstance& q, const CandidateAnswer& target,
                              StrategyContext& ctx) {
    auto a = self_consistency(q, target, ctx);
    auto b = top_k_verbalized(q, target, ctx);
    auto r = hybrid_combine(a, b, detail::tops_agree(a, b));
    r.strategy = "hybrid";
    return r;
}

/// Multi-answer pipeline + top-K verbalized under the combination rule
/// (N+3 calls at defaults).
inline DetectionResult t3_plus_topk(const QuestionInstance& q, const CandidateAnswer& target,
                                    StrategyContext& ctx) {
    auto a = t3(q, target, ctx);
    auto b = top_k_verbalized(q, target, ctx);
    auto r = hybrid_combine(a, b, detail::tops_agree(a, b));
    r.strategy = "t3_plus_topk";
    return r;
}

/// Multi-answer pipeline inside the alphabetic multi-choice layout, over
/// two label orders x two justification orders (N+4 calls).
inline DetectionResult t3_plus_pe(const QuestionInstance& q, const CandidateAnswer& target,
                                  StrategyContext& ctx) {
    auto justify = t3_justify(q, ctx);
    auto texts = detail::justification_texts(q, justify.justifications);
    const auto n = q.answer_space.size();
    const int k = detail::effective_k(q, ctx.config);

    auto r = detail::new_result(q, target, "t3_plus_pe");
    r.trace = justify.trace;
    double sum = 0.0;
    int variants = 0;
    for (const auto& label_order : {detail::identity_order(n), detail::reversed_order(n)}) {
        for (const auto& j_order :
             {ExplanationOrder::identity(static_cast<int>(n)),
              ExplanationOrder::reversed(static_cast<int>(n))}) {
            auto ep = detail::make_cape_prompt(q, TemplateId::CapeAlpha, label_order, ctx.templates,
                                               k, render_explanations(texts, j_order) + "\n");
            auto out = detail::run_verbalized(ep.prompt, q, target, ep.presentation, ctx);
            r.trace.push_back(out.trace);
            ++r.parse_attempts;
            if (!out.parsed) ++r.parse_failures;
            sum += out.score;
            ++variants;
        }
    }
    detail::finish(r, sum / static_cast<double>(variants));
    return r;
}

// --------------------------------------------------------- counterfactual --

/// Re-scores the original question's result against its counterfactual
/// twin: averaged directly when the two answers differ, otherwise the
/// counterfactual confidence is inverted onto the remaining k-1 classes
/// first.
inline DetectionResult counterfactual_adjust(const CounterfactualPair& pair,
                                             const DetectionResult& result,
                                             const DetectionResult& result_cf) {
    if (pair.k < 2) throw AdjustUnavailable("counterfactual pair needs k >= 2");
    if (result_cf.target_answer.canonical.empty())
        throw AdjustUnavailable("counterfactual answer missing for " + pair.counterfactual.id);
    if (result.target_answer.canonical.empty())
        throw AdjustUnavailable("original answer missing for " + pair.original.id);

    const double c_a = result.score;
    const double c_cf = result_cf.score;
    const bool same = result.target_answer.canonical == result_cf.target_answer.canonical;
    const double opposed = (1.0 - c_cf) / static_cast<double>(pair.k - 1);
    const double adjusted = same ? (c_a + opposed) / 2.0 : (c_a + c_cf) / 2.0;

    DetectionResult r;
    r.instance_id = result.instance_id;
    r.strategy = result.strategy + "+cf";
    r.target_answer = result.target_answer;
    r.trace = result.trace;
    r.trace.insert(r.trace.end(), result_cf.trace.begin(), result_cf.trace.end());
    r.parse_attempts = result.parse_attempts + result_cf.parse_attempts;
    r.parse_failures = result.parse_failures + result_cf.parse_failures;
    r.top_answer_index = result.top_answer_index;
    detail::finish(r, adjusted);
    return r;
}

// -------------------------------------------------------------- ablations --

/// Joint scoring with the justification slots filled by sampled
/// chain-of-thought outputs of the base question instead of per-candidate
/// justifications (N+2 calls).
inline DetectionResult t3_with_cot_explanations(const QuestionInstance& q,
                                                const CandidateAnswer& target,
                                                StrategyContext& ctx) {
    auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
    std::string cot_prompt = render(ctx.templates.get(TemplateId::CoT), bindings);
    auto n = static_cast<int>(q.answer_space.size());
    auto rs = ctx.backend.complete(cot_prompt, detail::sample_params(ctx.config, n));

    std::vector<Justification> js;
    std::vector<TraceEntry> trace;
    for (int i = 0; i < n; ++i) {
        trace.push_back(TraceEntry{cot_prompt, rs[static_cast<std::size_t>(i)]});
        js.push_back(Justification{i, rs[static_cast<std::size_t>(i)].text});
    }
    auto r = t3_joint_score(q, target, js, ctx);
    r.strategy = "t3_w_cot_expl";
    r.trace.insert(r.trace.begin(), trace.begin(), trace.end());
    r.api_calls = static_cast<int>(r.trace.size());
    return r;
}

/// One joint prompt per single justification, averaged (2N calls).
inline DetectionResult t3_separate_explanations(const QuestionInstance& q,
                                                const CandidateAnswer& target,
                                                StrategyContext& ctx) {
    auto justify = t3_justify(q, ctx);
    auto pres = ChoicePresentation::identity_for(q.answer_space);

    auto r = detail::new_result(q, target, "t3_sep_expl");
    r.trace = justify.trace;
    double sum = 0.0;
    for (const auto& j : justify.justifications) {
        auto bindings = base_bindings(q, detail::effective_k(q, ctx.config));
        bindings["explanations"] = "Possible explanation 1: " + j.text;
        std::string prompt = render(ctx.templates.get(TemplateId::JointVerb), bindings);
        auto out = detail::run_verbalized(prompt, q, target, pres, ctx);
        r.trace.push_back(out.trace);
        ++r.parse_attempts;
        if (!out.parsed) ++r.parse_failures;
        sum += out.score;
    }
    detail::finish(r, sum / static_cast<double>(justify.justifications.size()));
    return r;
}

/// Identity justification order only, no shuffling (N+1 calls).
inline DetectionResult t3_without_shuffle(const QuestionInstance& q,
                                          const CandidateAnswer& target, StrategyContext& ctx) {
    auto justify = t3_justify(q, ctx);
    StrategyContext single{ctx.backend, ctx.templates, ctx.config};
    single.config.shuffle_orders = {
        ExplanationOrder::identity(static_cast<int>(q.answer_space.size()))};
    auto r = t3_joint_score(q, target, justify.justifications, single);
    r.strategy = "t3_wo_shuffle";
    r.trace.insert(r.trace.begin(), justify.trace.begin(), justify.trace.end());
    r.api_calls = static_cast<int>(r.trace.size());
    return r;
}

/// All three pipeline ablations, keyed by variant name.
inline std::map<std::string, DetectionResult> ablation_variants(const QuestionInstance& q,
                                                                const CandidateAnswer& target,
                                                                StrategyContext& ctx) {
    std::map<std::string, DetectionResult> out;
    out.emplace("w_cot_expl", t3_with_cot_explanations(q, target, ctx));
    out.emplace("sep_expl", t3_separate_explanations(q, target, ctx));
    out.emplace("wo_shuffle", t3_without_shuffle(q, target, ctx));
    return out;
}

}  // namespace selfdetect
