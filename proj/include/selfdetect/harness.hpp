#pragma once

// Experiment runner: JSONL dataset ingestion with counterfactual joins,
// declarative experiment configs, orchestration of strategies over
// instances with caching and bounded parallelism, and report emission
// (summary/selective/box-stat CSVs plus per-instance JSONL).

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "selfdetect/backend.hpp"
#include "selfdetect/core.hpp"
#include "selfdetect/http_backend.hpp"
#include "selfdetect/metrics.hpp"
#include "selfdetect/prompts.hpp"
#include "selfdetect/strategies.hpp"

namespace selfdetect {

// ----------------------------------------------------------------- dataset --

struct Dataset {
    std::vector<QuestionInstance> instances;
    std::vector<CounterfactualPair> pairs;
    // instance id -> id of its counterfactual twin, for pair-based scoring
    std::map<std::string, std::string> counterfactual_of;
    std::size_t skipped_lines = 0;
};

/// Loads a JSONL dataset (one record per line: id, task, instruction,
/// question, choices[], optional label, optional counterfactual_of).
/// Malformed lines raise SchemaError with their line number in strict mode
/// and are skipped when lenient.
inline Dataset load_dataset(const std::filesystem::path& path, bool lenient = false) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset " + path.string());

    Dataset ds;
    std::map<std::string, std::string> cf_links;  // counterfactual id -> original id
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            QuestionInstance q;
            q.id = j.at("id").get<std::string>();
            q.task = task_from_string(j.value("task", "other"));
            q.instruction = j.at("instruction").get<std::string>();
            q.question = j.at("question").get<std::string>();
            if (!j.contains("choices") || !j.at("choices").is_array())
                throw Error("missing choices array");
            for (const auto& c : j.at("choices"))
                q.answer_space.push_back(CandidateAnswer::from_surface(c.get<std::string>()));
            if (j.contains("label") && !j.at("label").is_null())
                q.gold_label = j.at("label").get<int>();
            validate(q);
            if (j.contains("counterfactual_of") && !j.at("counterfactual_of").is_null())
                cf_links[q.id] = j.at("counterfactual_of").get<std::string>();
            ds.instances.push_back(std::move(q));
        } catch (const std::exception& e) {
            if (lenient) {
                ++ds.skipped_lines;
                continue;
            }
            throw SchemaError(lineno, e.what());
        }
    }

    std::map<std::string, const QuestionInstance*> by_id;
    std::map<std::string, std::string> cf_by_original;  // original id -> counterfactual id
    for (const auto& q : ds.instances) by_id[q.id] = &q;
    for (const auto& [cf_id, orig_id] : cf_links) {
        if (!by_id.count(orig_id)) {
            if (lenient) {
                ++ds.skipped_lines;
                continue;
            }
            throw Error("counterfactual_of link to unknown instance " + orig_id);
        }
        cf_by_original[orig_id] = cf_id;
    }
    // Pairs keep the dataset's file order of the original instances.
    for (const auto& q : ds.instances) {
        auto link = cf_by_original.find(q.id);
        if (link == cf_by_original.end()) continue;
        const QuestionInstance* cf = by_id.at(link->second);
        if (cf->answer_space.size() != q.answer_space.size())
            throw Error("counterfactual pair " + q.id + "/" + cf->id +
                        " differs in answer space size");
        if (q.gold_label && cf->gold_label && *q.gold_label == *cf->gold_label)
            throw Error("counterfactual pair " + q.id + "/" + cf->id +
                        " must have different labels");
        CounterfactualPair pair;
        pair.original = q;
        pair.counterfactual = *cf;
        pair.k = static_cast<int>(q.answer_space.size());
        ds.pairs.push_back(std::move(pair));
        ds.counterfactual_of[q.id] = cf->id;
    }
    return ds;
}

// ------------------------------------------------------------------ config --

enum class TargetMode { Greedy, SelfConsMajority, CotConsMajority };

inline TargetMode target_mode_from_string(const std::string& s) {
    if (s == "greedy") return TargetMode::Greedy;
    if (s == "sc") return TargetMode::SelfConsMajority;
    if (s == "cc") return TargetMode::CotConsMajority;
    throw Error("unknown target mode '" + s + "' (expected greedy|sc|cc)");
}

inline std::string to_string(TargetMode m) {
    switch (m) {
        case TargetMode::Greedy: return "greedy";
        case TargetMode::SelfConsMajority: return "sc";
        case TargetMode::CotConsMajority: return "cc";
    }
    return "greedy";
}

struct BackendSpec {
    std::string kind = "mock";  // "mock" or "http"
    std::string script_path;    // mock
    std::string base_url;       // http
    std::string model = "mock-model";
    std::string api_key_env = "OPENAI_API_KEY";
    bool use_native_n = true;
    double requests_per_minute = 60.0;
};

struct StrategyRequest {
    std::string id;
    StrategyConfig config;
};

struct ExperimentConfig {
    std::string dataset_path;
    BackendSpec backend;
    std::vector<StrategyRequest> strategies;
    std::optional<std::size_t> sample_limit;
    int parallelism = 1;
    std::string cache_path;  // empty disables caching
    std::string output_dir = "out";
    std::uint64_t rng_seed = 0;
    bool trace = false;
    bool lenient = false;
    TargetMode target_mode = TargetMode::Greedy;
    std::string templates_dir;  // empty keeps the bundled texts
    int ece_bins = 10;
};

namespace detail {

inline StrategyConfig strategy_config_from_json(const nlohmann::json& j, StrategyConfig base) {
    if (j.contains("D")) base.consistency_samples = j.at("D").get<int>();
    if (j.contains("K") && !j.at("K").is_null()) base.top_k = j.at("K").get<int>();
    if (j.contains("M")) base.ensemble_size = j.at("M").get<int>();
    if (j.contains("rephrase_count")) base.rephrase_count = j.at("rephrase_count").get<int>();
    if (j.contains("temperature_sample"))
        base.temperature_sample = j.at("temperature_sample").get<double>();
    if (j.contains("temperature_det")) base.temperature_det = j.at("temperature_det").get<double>();
    if (j.contains("max_tokens")) base.max_tokens = j.at("max_tokens").get<int>();
    return base;
}

}  // namespace detail

/// Reads the declarative experiment file. Paths inside the config resolve
/// relative to the config file's directory.
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    nlohmann::json j;
    in >> j;
    auto dir = path.parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        return fp.is_absolute() ? p : (dir / fp).string();
    };

    ExperimentConfig cfg;
    cfg.dataset_path = resolve(j.at("dataset").get<std::string>());
    const auto& jb = j.at("backend");
    cfg.backend.kind = jb.at("kind").get<std::string>();
    if (jb.contains("script")) cfg.backend.script_path = resolve(jb.at("script").get<std::string>());
    if (jb.contains("base_url")) cfg.backend.base_url = jb.at("base_url").get<std::string>();
    if (jb.contains("model")) cfg.backend.model = jb.at("model").get<std::string>();
    if (jb.contains("api_key_env")) cfg.backend.api_key_env = jb.at("api_key_env").get<std::string>();
    if (jb.contains("use_native_n")) cfg.backend.use_native_n = jb.at("use_native_n").get<bool>();
    if (jb.contains("requests_per_minute"))
        cfg.backend.requests_per_minute = jb.at("requests_per_minute").get<double>();

    StrategyConfig defaults;
    if (j.contains("defaults")) defaults = detail::strategy_config_from_json(j.at("defaults"), defaults);
    for (const auto& js : j.at("strategies")) {
        StrategyRequest req;
        if (js.is_string()) {
            req.id = js.get<std::string>();
            req.config = defaults;
        } else {
            req.id = js.at("id").get<std::string>();
            req.config = detail::strategy_config_from_json(js, defaults);
        }
        cfg.strategies.push_back(std::move(req));
    }
    if (cfg.strategies.empty()) throw Error("config needs at least one strategy");

    if (j.contains("sample_limit") && !j.at("sample_limit").is_null())
        cfg.sample_limit = j.at("sample_limit").get<std::size_t>();
    if (j.contains("parallelism")) cfg.parallelism = j.at("parallelism").get<int>();
    if (cfg.parallelism < 1) throw Error("parallelism must be >= 1");
    if (j.contains("cache") && !j.at("cache").is_null())
        cfg.cache_path = resolve(j.at("cache").get<std::string>());
    if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
    if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    if (j.contains("trace")) cfg.trace = j.at("trace").get<bool>();
    if (j.contains("lenient")) cfg.lenient = j.at("lenient").get<bool>();
    if (j.contains("target_mode"))
        cfg.target_mode = target_mode_from_string(j.at("target_mode").get<std::string>());
    if (j.contains("templates_dir") && !j.at("templates_dir").is_null())
        cfg.templates_dir = resolve(j.at("templates_dir").get<std::string>());
    if (j.contains("ece_bins")) cfg.ece_bins = j.at("ece_bins").get<int>();
    return cfg;
}

// --------------------------------------------------------------- results --

struct InstanceOutcome {
    std::string instance_id;
    std::string strategy;
    std::string target_surface;
    double score = 0.0;
    std::optional<bool> correct;
    int api_calls = 0;
    int parse_attempts = 0;
    int parse_failures = 0;
    nlohmann::json trace;  // null unless tracing is on
};

struct StrategySummary {
    std::string id;
    MetricReport report;
    long long api_calls = 0;
    std::size_t scored = 0;
    std::size_t skipped = 0;
};

struct ExperimentResult {
    std::vector<StrategySummary> summaries;        // in config order
    std::vector<InstanceOutcome> outcomes;         // instance-major, strategy order within
    std::size_t loaded = 0;
    std::size_t selected = 0;
    std::size_t target_undetermined = 0;
    std::map<std::string, std::size_t> skip_reasons;
    std::uint64_t live_calls = 0;
};

// ---------------------------------------------------------------- running --

namespace detail {

using StrategyFn = std::function<DetectionResult(const QuestionInstance&, const CandidateAnswer&,
                                                 StrategyContext&)>;

inline const std::map<std::string, StrategyFn>& strategy_registry() {
    static const std::map<std::string, StrategyFn> reg = {
        {"self_consistency", [](const auto& q, const auto& t, auto& c) { return self_consistency(q, t, c); }},
        {"cot_consistency", [](const auto& q, const auto& t, auto& c) { return cot_consistency(q, t, c); }},
        {"top_k_verbalized", [](const auto& q, const auto& t, auto& c) { return top_k_verbalized(q, t, c); }},
        {"p_true", [](const auto& q, const auto& t, auto& c) { return p_true(q, t, c); }},
        {"self_probing", [](const auto& q, const auto& t, auto& c) { return self_probing(q, t, c); }},
        {"induced_consistency", [](const auto& q, const auto& t, auto& c) { return induced_consistency(q, t, c); }},
        {"self_detect", [](const auto& q, const auto& t, auto& c) { return self_detect_entropy(q, t, c); }},
        {"cape", [](const auto& q, const auto& t, auto& c) { return prompt_ensemble_cape(q, t, c); }},
        {"hybrid", [](const auto& q, const auto& t, auto& c) { return hybrid(q, t, c); }},
        {"t3", [](const auto& q, const auto& t, auto& c) { return t3(q, t, c); }},
        {"t3_plus_topk", [](const auto& q, const auto& t, auto& c) { return t3_plus_topk(q, t, c); }},
        {"t3_plus_pe", [](const auto& q, const auto& t, auto& c) { return t3_plus_pe(q, t, c); }},
        {"t3_w_cot_expl", [](const auto& q, const auto& t, auto& c) { return t3_with_cot_explanations(q, t, c); }},
        {"t3_sep_expl", [](const auto& q, const auto& t, auto& c) { return t3_separate_explanations(q, t, c); }},
        {"t3_wo_shuffle", [](const auto& q, const auto& t, auto& c) { return t3_without_shuffle(q, t, c); }},
    };
    return reg;
}

// Top-K verbalized on the original question adjusted by its counterfactual
// twin; the twin's answer is its highest-probability guess.
inline std::optional<DetectionResult> run_topk_cf(const QuestionInstance& q,
                                                  const CandidateAnswer& target,
                                                  const Dataset& ds, StrategyContext& ctx) {
    auto link = ds.counterfactual_of.find(q.id);
    if (link == ds.counterfactual_of.end()) return std::nullopt;
    const CounterfactualPair* pair = nullptr;
    for (const auto& p : ds.pairs)
        if (p.original.id == q.id) {
            pair = &p;
            break;
        }
    if (!pair) return std::nullopt;

    auto orig = top_k_verbalized(q, target, ctx);
    const auto& cf_q = pair->counterfactual;
    auto cf_bindings = base_bindings(cf_q, effective_k(cf_q, ctx.config));
    std::string cf_prompt = render(ctx.templates.get(TemplateId::TopKVerb), cf_bindings);
    auto rs = ctx.backend.complete(cf_prompt, det_params(ctx.config));

    DetectionResult cf_res;
    cf_res.instance_id = cf_q.id;
    cf_res.strategy = "top_k_verbalized";
    cf_res.trace.push_back(TraceEntry{cf_prompt, rs.front()});
    cf_res.api_calls = 1;
    cf_res.parse_attempts = 1;
    try {
        auto gl = parse_top_k(rs.front().text, effective_k(cf_q, ctx.config));
        const GuessList::Entry* best = nullptr;
        std::optional<int> best_idx;
        for (const auto& e : gl.entries) {
            std::optional<int> idx;
            try {
                idx = match_answer(e.guess, cf_q.answer_space);
            } catch (const AmbiguousAnswer&) {
                continue;
            }
            if (idx && (!best || e.prob > best->prob)) {
                best = &e;
                best_idx = idx;
            }
        }
        if (!best) throw AdjustUnavailable("counterfactual guesses match no candidate");
        cf_res.target_answer = cf_q.answer_space[static_cast<std::size_t>(*best_idx)];
        set_score(cf_res, best->prob);
    } catch (const UnparsableResponse&) {
        cf_res.parse_failures = 1;
        throw AdjustUnavailable("counterfactual response unparsable");
    }

    auto adjusted = counterfactual_adjust(*pair, orig, cf_res);
    adjusted.strategy = "topk_cf";
    return adjusted;
}

inline std::string csv_num(std::optional<double> v, int precision = 6) {
    if (!v) return "undefined";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

}  // namespace detail

/// Builds the target answer for one instance under the configured mode:
/// base-greedy, or the majority answer of self-/CoT-consistency sampling.
inline TargetGeneration resolve_target(const QuestionInstance& q, TargetMode mode,
                                       StrategyContext& ctx) {
    if (mode == TargetMode::Greedy) return generate_target(q, ctx);

    auto greedy = generate_target(q, ctx);  // the base call is issued either way
    auto res = mode == TargetMode::SelfConsMajority ? self_consistency(q, greedy.answer, ctx)
                                                    : cot_consistency(q, greedy.answer, ctx);
    if (!res.top_answer_index)
        throw TargetUndetermined("instance " + q.id + ": no majority answer");
    int idx = *res.top_answer_index;
    return TargetGeneration{q.answer_space[static_cast<std::size_t>(idx)], idx, greedy.trace};
}

/// Runs every configured strategy over the dataset. All strategies score
/// the same per-instance target answer; instances whose target cannot be
/// determined are excluded from metrics and itemized in the result.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    Dataset ds = load_dataset(cfg.dataset_path, cfg.lenient);

    TemplateSet templates = cfg.templates_dir.empty()
                                ? TemplateSet()
                                : TemplateSet::load_dir(cfg.templates_dir);

    std::unique_ptr<Backend> origin;
    if (cfg.backend.kind == "mock") {
        origin = std::make_unique<MockBackend>(MockScript::load_file(cfg.backend.script_path),
                                               cfg.backend.model);
    } else if (cfg.backend.kind == "http") {
        HttpBackendConfig hc;
        hc.base_url = cfg.backend.base_url;
        hc.model = cfg.backend.model;
        hc.api_key_env = cfg.backend.api_key_env;
        hc.use_native_n = cfg.backend.use_native_n;
        hc.requests_per_minute = cfg.backend.requests_per_minute;
        origin = std::make_unique<HttpBackend>(hc);
    } else {
        throw Error("unknown backend kind '" + cfg.backend.kind + "'");
    }

    std::unique_ptr<ResponseCache> cache;
    std::unique_ptr<Backend> cached;
    Backend* backend = origin.get();
    if (!cfg.cache_path.empty()) {
        cache = std::make_unique<ResponseCache>(cfg.cache_path);
        cached = std::make_unique<CachedBackend>(*origin, *cache);
        backend = cached.get();
    }

    if (cfg.strategies.empty()) throw Error("experiment config needs at least one strategy");
    for (const auto& req : cfg.strategies)
        if (req.id != "topk_cf" && !detail::strategy_registry().count(req.id))
            throw Error("unknown strategy id '" + req.id + "'");

    ExperimentResult result;
    result.loaded = ds.instances.size();
    if (ds.skipped_lines) result.skip_reasons["malformed_line"] = ds.skipped_lines;

    // Seeded subsetting keeps the original instance order.
    std::vector<std::size_t> selected(ds.instances.size());
    std::iota(selected.begin(), selected.end(), std::size_t{0});
    if (cfg.sample_limit && *cfg.sample_limit < selected.size()) {
        std::mt19937_64 rng(cfg.rng_seed);
        std::vector<std::size_t> sampled;
        std::sample(selected.begin(), selected.end(), std::back_inserter(sampled),
                    *cfg.sample_limit, rng);
        selected = std::move(sampled);
    }
    result.selected = selected.size();

    const std::uint64_t live_before = backend->live_calls();

    struct Row {
        bool skipped = false;
        std::string skip_reason;
        std::optional<bool> correct;
        std::vector<std::optional<DetectionResult>> results;  // per strategy, config order
        std::vector<std::string> strategy_skips;              // per strategy skip reasons
    };
    std::vector<Row> rows(selected.size());

    std::atomic<std::size_t> next{0};
    std::atomic<bool> aborted{false};
    std::mutex abort_mu;
    std::exception_ptr first_error;
    auto worker = [&]() {
        while (!aborted.load()) {
            std::size_t slot = next.fetch_add(1);
            if (slot >= selected.size()) return;
            const QuestionInstance& q = ds.instances[selected[slot]];
            Row& row = rows[slot];
            row.results.resize(cfg.strategies.size());
            row.strategy_skips.resize(cfg.strategies.size());
            try {
                StrategyContext target_ctx{*backend, templates,
                                           cfg.strategies.front().config};
                auto target = resolve_target(q, cfg.target_mode, target_ctx);
                if (q.gold_label) row.correct = (*q.gold_label == target.index);
                for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
                    const auto& req = cfg.strategies[s];
                    StrategyContext ctx{*backend, templates, req.config};
                    if (req.id == "topk_cf") {
                        try {
                            auto adjusted = detail::run_topk_cf(q, target.answer, ds, ctx);
                            if (adjusted)
                                row.results[s] = std::move(*adjusted);
                            else
                                row.strategy_skips[s] = "counterfactual_unavailable";
                        } catch (const AdjustUnavailable&) {
                            row.strategy_skips[s] = "counterfactual_unavailable";
                        }
                        continue;
                    }
                    row.results[s] = detail::strategy_registry().at(req.id)(q, target.answer, ctx);
                }
            } catch (const TargetUndetermined&) {
                row.skipped = true;
                row.skip_reason = "target_undetermined";
            } catch (...) {
                // backend/config failures abort the run, reported on the caller
                std::lock_guard<std::mutex> lock(abort_mu);
                if (!first_error) first_error = std::current_exception();
                aborted.store(true);
                return;
            }
        }
    };

    if (cfg.parallelism <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int i = 0; i < cfg.parallelism; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    result.live_calls = backend->live_calls() - live_before;

    std::map<std::string, std::size_t> strategy_skip_reasons;

    // Aggregate in deterministic (config x instance) order.
    for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
        StrategySummary summary;
        summary.id = cfg.strategies[s].id;
        std::vector<ScoredItem> items;
        long long attempts = 0, parse_failures = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Row& row = rows[i];
            if (row.skipped || !row.results[s]) {
                ++summary.skipped;
                if (!row.skipped && s < row.strategy_skips.size() &&
                    !row.strategy_skips[s].empty())
                    ++strategy_skip_reasons[row.strategy_skips[s]];
                continue;
            }
            const DetectionResult& dr = *row.results[s];
            summary.api_calls += dr.api_calls;
            attempts += dr.parse_attempts;
            parse_failures += dr.parse_failures;
            ++summary.scored;
            if (row.correct) items.push_back(ScoredItem{dr.score, *row.correct});

            InstanceOutcome oc;
            oc.instance_id = dr.instance_id;
            oc.strategy = summary.id;
            oc.target_surface = dr.target_answer.surface;
            oc.score = dr.score;
            oc.correct = row.correct;
            oc.api_calls = dr.api_calls;
            oc.parse_attempts = dr.parse_attempts;
            oc.parse_failures = dr.parse_failures;
            if (cfg.trace) {
                auto arr = nlohmann::json::array();
                for (const auto& te : dr.trace)
                    arr.push_back({{"prompt", te.prompt},
                                   {"response", te.response.text},
                                   {"cached", te.response.cached}});
                oc.trace = std::move(arr);
            }
            result.outcomes.push_back(std::move(oc));
        }
        summary.report = evaluate(items, cfg.ece_bins);
        summary.report.api_calls = summary.api_calls;
        summary.report.parse_failure_rate =
            attempts ? static_cast<double>(parse_failures) / static_cast<double>(attempts) : 0.0;
        result.summaries.push_back(std::move(summary));
    }

    for (const auto& row : rows)
        if (row.skipped) {
            ++result.skip_reasons[row.skip_reason];
            if (row.skip_reason == "target_undetermined") ++result.target_undetermined;
        }
    for (const auto& [reason, count] : strategy_skip_reasons) result.skip_reasons[reason] += count;
    return result;
}

// --------------------------------------------------------------- reports --

/// Writes summary.csv, per_instance.jsonl, selective.csv, boxstats.csv and
/// run_manifest.json into the output directory. Everything except the
/// manifest timestamp is a pure function of the results, so warm-cache
/// reruns reproduce the files byte for byte. Pass write_per_instance=false
/// when regenerating summaries from an existing per_instance.jsonl.
inline void emit_report(const ExperimentResult& result, const ExperimentConfig& cfg,
                        bool write_per_instance = true) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    auto open = [&](const std::string& name) {
        std::ofstream out(fs::path(cfg.output_dir) / name, std::ios::binary);
        if (!out) throw Error("cannot write " + name + " under " + cfg.output_dir);
        return out;
    };

    {
        auto out = open("summary.csv");
        out << "strategy,auroc,prauc,ece,n,api_calls,parse_failure_rate\n";
        for (const auto& s : result.summaries) {
            out << s.id << ',' << detail::csv_num(s.report.auroc) << ','
                << detail::csv_num(s.report.prauc) << ',' << detail::csv_num(s.report.ece) << ','
                << s.report.n << ',' << s.api_calls << ','
                << detail::csv_num(s.report.parse_failure_rate) << "\n";
        }
    }
    if (write_per_instance) {
        auto out = open("per_instance.jsonl");
        for (const auto& oc : result.outcomes) {
            nlohmann::json j;
            j["instance_id"] = oc.instance_id;
            j["strategy"] = oc.strategy;
            j["target"] = oc.target_surface;
            j["score"] = oc.score;
            if (oc.correct) j["correct"] = *oc.correct;
            j["api_calls"] = oc.api_calls;
            j["parse_attempts"] = oc.parse_attempts;
            j["parse_failures"] = oc.parse_failures;
            if (!oc.trace.is_null()) j["trace"] = oc.trace;
            out << j.dump() << "\n";
        }
    }
    {
        auto out = open("selective.csv");
        out << "strategy,abstain_fraction,remaining_accuracy\n";
        for (const auto& s : result.summaries)
            for (const auto& pt : s.report.selective_curve)
                out << s.id << ',' << detail::csv_num(pt.abstain_fraction, 2) << ','
                    << detail::csv_num(pt.remaining_accuracy) << "\n";
    }
    {
        auto out = open("boxstats.csv");
        out << "strategy,group,n,min,q1,median,q3,max\n";
        for (const auto& s : result.summaries) {
            auto write_group = [&](const char* name, const QuartileSummary& g) {
                out << s.id << ',' << name << ',' << g.n << ',' << detail::csv_num(g.min) << ','
                    << detail::csv_num(g.q1) << ',' << detail::csv_num(g.median) << ','
                    << detail::csv_num(g.q3) << ',' << detail::csv_num(g.max) << "\n";
            };
            write_group("correct", s.report.correct_stats);
            write_group("incorrect", s.report.incorrect_stats);
        }
    }
    {
        auto out = open("run_manifest.json");
        nlohmann::json j;
        j["version"] = "0.1.0";
        j["dataset"] = cfg.dataset_path;
        j["backend"] = {{"kind", cfg.backend.kind},
                        {"model", cfg.backend.model},
                        {"api_key_env", cfg.backend.api_key_env}};  // the key itself is never written
        auto strategies = nlohmann::json::array();
        for (const auto& s : cfg.strategies) strategies.push_back(s.id);
        j["strategies"] = strategies;
        j["rng_seed"] = cfg.rng_seed;
        j["target_mode"] = to_string(cfg.target_mode);
        j["ece_bins"] = cfg.ece_bins;
        j["parallelism"] = cfg.parallelism;
        j["counters"] = {{"loaded", result.loaded},
                         {"selected", result.selected},
                         {"live_backend_calls", result.live_calls},
                         {"skipped", result.skip_reasons}};
        out << j.dump(2) << "\n";
    }
}

/// Recomputes summary/selective/boxstats from a per_instance.jsonl, for the
/// `report` subcommand.
inline ExperimentResult reload_results(const std::filesystem::path& results_dir, int ece_bins = 10) {
    std::ifstream in(results_dir / "per_instance.jsonl");
    if (!in) throw Error("cannot open per_instance.jsonl under " + results_dir.string());

    ExperimentResult result;
    std::vector<std::string> order;
    std::map<std::string, std::vector<InstanceOutcome>> by_strategy;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        InstanceOutcome oc;
        oc.instance_id = j.at("instance_id").get<std::string>();
        oc.strategy = j.at("strategy").get<std::string>();
        oc.target_surface = j.value("target", "");
        oc.score = j.at("score").get<double>();
        if (j.contains("correct")) oc.correct = j.at("correct").get<bool>();
        oc.api_calls = j.value("api_calls", 0);
        oc.parse_attempts = j.value("parse_attempts", 0);
        oc.parse_failures = j.value("parse_failures", 0);
        if (!by_strategy.count(oc.strategy)) order.push_back(oc.strategy);
        by_strategy[oc.strategy].push_back(oc);
        result.outcomes.push_back(std::move(oc));
    }

    for (const auto& id : order) {
        StrategySummary s;
        s.id = id;
        std::vector<ScoredItem> items;
        long long attempts = 0, fails = 0;
        for (const auto& oc : by_strategy[id]) {
            s.api_calls += oc.api_calls;
            attempts += oc.parse_attempts;
            fails += oc.parse_failures;
            ++s.scored;
            if (oc.correct) items.push_back(ScoredItem{oc.score, *oc.correct});
        }
        s.report = evaluate(items, ece_bins);
        s.report.api_calls = s.api_calls;
        s.report.parse_failure_rate =
            attempts ? static_cast<double>(fails) / static_cast<double>(attempts) : 0.0;
        result.summaries.push_back(std::move(s));
    }
    return result;
}

}  // namespace selfdetect
