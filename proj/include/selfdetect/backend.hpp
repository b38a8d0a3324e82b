#pragma once

// Uniform access to chat-completion LLMs: a deterministic scripted mock and
// a persistent response cache wrapping any backend. The live HTTP client
// lives in http_backend.hpp to keep the transport dependency optional.

#include <atomic>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfdetect/core.hpp"

namespace selfdetect {

struct GenerationParams {
    double temperature = 0.0;
    int max_tokens = 200;
    int num_samples = 1;  // D
    std::optional<double> top_p;
    std::optional<std::uint64_t> seed;  // honored by the mock only
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace detail

/// Canonical text form of the params, the stable part of every fingerprint.
inline std::string params_key(const GenerationParams& p) {
    std::ostringstream os;
    os.precision(17);
    os << "t=" << p.temperature << ";mt=" << p.max_tokens << ";n=" << p.num_samples << ";tp=";
    if (p.top_p) os << *p.top_p; else os << "none";
    os << ";seed=";
    if (p.seed) os << *p.seed; else os << "none";
    return os.str();
}

/// Stable hash of (backend id, model, prompt, params). Pure function of its
/// inputs, so replaying a request yields a byte-identical fingerprint across
/// process restarts.
inline std::string request_fingerprint(const std::string& backend_id, const std::string& model,
                                       const std::string& prompt, const GenerationParams& p) {
    std::uint64_t h = detail::fnv1a64(backend_id);
    h = detail::splitmix64(h ^ detail::fnv1a64(model));
    h = detail::splitmix64(h ^ detail::fnv1a64(prompt));
    h = detail::splitmix64(h ^ detail::fnv1a64(params_key(p)));
    return detail::hex64(h);
}

inline std::string sample_fingerprint(const std::string& backend_id, const std::string& model,
                                      const std::string& prompt, const GenerationParams& p,
                                      int sample_index) {
    std::uint64_t h = detail::fnv1a64(request_fingerprint(backend_id, model, prompt, p));
    h = detail::splitmix64(h + static_cast<std::uint64_t>(sample_index));
    return detail::hex64(h);
}

/// Chat-completion access point. complete() returns exactly
/// params.num_samples responses; live_calls() is a monotonic counter of
/// logical LLM invocations that did not come from a cache.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::vector<LlmResponse> complete(const std::string& prompt,
                                              const GenerationParams& params) = 0;
    virtual const std::string& id() const = 0;
    virtual const std::string& model_name() const = 0;
    virtual std::uint64_t live_calls() const = 0;
};

// ------------------------------------------------------------------ mock --

/// Scripted responses: ordered entries matched first-hit-first against the
/// prompt. An entry binds either a fixed response text or a categorical
/// distribution; draws are a pure function of (script seed, prompt, sample
/// index), so concurrency and call order cannot change them.
struct MockScript {
    struct Entry {
        std::optional<std::string> match_exact;
        std::vector<std::string> match_substrings;  // all must occur; empty matches any prompt
        std::optional<int> sample_index;            // restrict to one sample slot
        std::optional<std::string> response;
        std::vector<std::pair<std::string, double>> distribution;
    };

    std::vector<Entry> entries;
    std::uint64_t rng_seed = 0;

    void validate() const {
        for (const auto& e : entries) {
            if (e.response && !e.distribution.empty())
                throw Error("mock entry has both a fixed response and a distribution");
            if (!e.response && e.distribution.empty())
                throw Error("mock entry has neither a fixed response nor a distribution");
            if (!e.distribution.empty()) {
                double sum = 0.0;
                for (const auto& [text, p] : e.distribution) {
                    if (p < 0.0) throw Error("mock distribution has a negative probability");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-9)
                    throw Error("mock distribution probabilities sum to " + std::to_string(sum));
            }
        }
    }

    static MockScript from_json(const nlohmann::json& j) {
        MockScript s;
        s.rng_seed = j.value("rng_seed", 0ull);
        for (const auto& je : j.at("entries")) {
            Entry e;
            if (je.contains("match_exact")) e.match_exact = je.at("match_exact").get<std::string>();
            if (je.contains("match")) {
                if (je.at("match").is_string())
                    e.match_substrings.push_back(je.at("match").get<std::string>());
                else
                    for (const auto& m : je.at("match")) e.match_substrings.push_back(m.get<std::string>());
            }
            if (je.contains("sample_index")) e.sample_index = je.at("sample_index").get<int>();
            if (je.contains("response")) e.response = je.at("response").get<std::string>();
            if (je.contains("distribution"))
                for (auto it = je.at("distribution").begin(); it != je.at("distribution").end(); ++it)
                    e.distribution.emplace_back(it.key(), it.value().get<double>());
            s.entries.push_back(std::move(e));
        }
        s.validate();
        return s;
    }

    static MockScript load_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open mock script " + path.string());
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

class MockBackend : public Backend {
public:
    explicit MockBackend(MockScript script, std::string model = "mock-model")
        : script_(std::move(script)), model_(std::move(model)) {
        script_.validate();
    }

    std::vector<LlmResponse> complete(const std::string& prompt,
                                      const GenerationParams& params) override {
        if (prompt.empty()) throw Error("complete: empty prompt");
        if (params.num_samples < 1) throw Error("complete: num_samples must be >= 1");
        std::vector<LlmResponse> out;
        out.reserve(static_cast<std::size_t>(params.num_samples));
        for (int k = 0; k < params.num_samples; ++k) {
            const MockScript::Entry* e = find_entry(prompt, k);
            if (!e)
                throw UnscriptedPrompt("no mock entry matches prompt: \"" + prompt.substr(0, 120) +
                                       (prompt.size() > 120 ? "...\"" : "\""));
            LlmResponse r;
            r.text = e->response ? *e->response : draw(prompt, k, *e, params.seed);
            r.request_fingerprint = sample_fingerprint(id_, model_, prompt, params, k);
            r.cached = false;
            r.latency_ms = 0;
            out.push_back(std::move(r));
        }
        live_calls_ += static_cast<std::uint64_t>(params.num_samples);
        return out;
    }

    const std::string& id() const override { return id_; }
    const std::string& model_name() const override { return model_; }
    std::uint64_t live_calls() const override { return live_calls_.load(); }

private:
    const MockScript::Entry* find_entry(const std::string& prompt, int sample_index) const {
        for (const auto& e : script_.entries) {
            if (e.sample_index && *e.sample_index != sample_index) continue;
            if (e.match_exact && *e.match_exact != prompt) continue;
            bool all = true;
            for (const auto& sub : e.match_substrings)
                if (prompt.find(sub) == std::string::npos) {
                    all = false;
                    break;
                }
            if (all) return &e;
        }
        return nullptr;
    }

    std::string draw(const std::string& prompt, int sample_index, const MockScript::Entry& e,
                     std::optional<std::uint64_t> seed_override) const {
        std::uint64_t seed = seed_override ? *seed_override : script_.rng_seed;
        std::uint64_t h = detail::splitmix64(detail::fnv1a64(prompt) ^ seed);
        h = detail::splitmix64(h + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(sample_index + 1));
        double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
        double cdf = 0.0;
        for (const auto& [text, p] : e.distribution) {
            cdf += p;
            if (u < cdf) return text;
        }
        return e.distribution.back().first;
    }

    MockScript script_;
    std::string model_;
    std::string id_ = "mock";
    std::atomic<std::uint64_t> live_calls_{0};
};

// ----------------------------------------------------------------- cache --

/// Append-only JSONL store keyed by request fingerprint. Lines that fail to
/// parse are quarantined to "<file>.quarantine" at open and counted; lookups
/// for them behave as misses.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path file) : file_(std::move(file)) { load(); }

    std::optional<std::vector<LlmResponse>> lookup(const std::string& fingerprint) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = records_.find(fingerprint);
        if (it == records_.end()) return std::nullopt;
        auto copy = it->second;
        for (auto& r : copy) r.cached = true;
        ++hits_;
        return copy;
    }

    void store(const std::string& fingerprint, const std::string& prompt,
               const GenerationParams& params, const std::vector<LlmResponse>& responses) {
        std::lock_guard<std::mutex> lock(mu_);
        if (records_.count(fingerprint)) return;
        nlohmann::json rec;
        rec["fingerprint"] = fingerprint;
        rec["prompt"] = prompt;
        rec["params"] = params_key(params);
        rec["created_at"] = now_iso8601();
        auto arr = nlohmann::json::array();
        for (const auto& r : responses)
            arr.push_back({{"text", r.text},
                           {"request_fingerprint", r.request_fingerprint},
                           {"latency_ms", r.latency_ms}});
        rec["responses"] = arr;

        std::filesystem::create_directories(file_.parent_path().empty() ? "." : file_.parent_path());
        std::ofstream out(file_, std::ios::app);
        if (!out) throw Error("cannot append to cache file " + file_.string());
        out << rec.dump() << "\n";
        records_[fingerprint] = responses;
    }

    std::size_t size() const { return records_.size(); }
    std::size_t corrupt_records() const { return corrupt_; }
    std::uint64_t hits() const { return hits_; }

private:
    void load() {
        std::ifstream in(file_);
        if (!in) return;
        std::string line;
        std::vector<std::string> bad;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto rec = nlohmann::json::parse(line);
                std::vector<LlmResponse> rs;
                for (const auto& jr : rec.at("responses")) {
                    LlmResponse r;
                    r.text = jr.at("text").get<std::string>();
                    r.request_fingerprint = jr.value("request_fingerprint", "");
                    r.latency_ms = jr.value("latency_ms", 0ll);
                    rs.push_back(std::move(r));
                }
                records_[rec.at("fingerprint").get<std::string>()] = std::move(rs);
            } catch (const std::exception&) {
                bad.push_back(line);
                ++corrupt_;
            }
        }
        if (!bad.empty()) {
            std::ofstream q(file_.string() + ".quarantine", std::ios::app);
            for (const auto& l : bad) q << l << "\n";
        }
    }

    // callers hold mu_, so the shared std::gmtime buffer is safe here
    static std::string now_iso8601() {
        auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        if (std::tm* tm = std::gmtime(&t))
            std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", tm);
        else
            buf[0] = '\0';
        return buf;
    }

    std::filesystem::path file_;
    std::map<std::string, std::vector<LlmResponse>> records_;
    std::size_t corrupt_ = 0;
    std::uint64_t hits_ = 0;
    std::mutex mu_;
};

/// Wraps any backend with the persistent cache: hits return stored responses
/// flagged cached=true and cost zero live calls, misses delegate and store.
class CachedBackend : public Backend {
public:
    CachedBackend(Backend& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}

    std::vector<LlmResponse> complete(const std::string& prompt,
                                      const GenerationParams& params) override {
        const std::string fp = request_fingerprint(inner_.id(), inner_.model_name(), prompt, params);
        if (auto hit = cache_.lookup(fp)) return *hit;
        auto responses = inner_.complete(prompt, params);
        cache_.store(fp, prompt, params, responses);
        return responses;
    }

    const std::string& id() const override { return inner_.id(); }
    const std::string& model_name() const override { return inner_.model_name(); }
    std::uint64_t live_calls() const override { return inner_.live_calls(); }

private:
    Backend& inner_;
    ResponseCache& cache_;
};

}  // namespace selfdetect
