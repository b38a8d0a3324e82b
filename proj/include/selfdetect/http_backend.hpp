#pragma once

// Live HTTP client for OpenAI-compatible chat-completion APIs: bearer auth
// from an environment variable, exponential-backoff retries on transport
// errors and 429/5xx, and token-bucket rate limiting.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <mutex>

#include <httplib.h>
#include <json.hpp>

#include "selfdetect/backend.hpp"

namespace selfdetect {

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 1000;
    double factor = 2.0;
};

/// Token bucket with injectable clock, refilled at requests_per_minute.
class TokenBucket {
public:
    using Clock = std::function<double()>;  // seconds, monotonic

    TokenBucket(double requests_per_minute, Clock clock = default_clock)
        : rate_per_sec_(requests_per_minute / 60.0), clock_(std::move(clock)) {
        tokens_ = burst_;
        last_ = clock_();
    }

    /// Consumes one token and returns how long the caller must wait before
    /// proceeding (0 when a token was available). Consumption may run the
    /// balance negative; the debt is repaid by the wait itself.
    double acquire() {
        std::lock_guard<std::mutex> lock(mu_);
        refill();
        tokens_ -= 1.0;
        return tokens_ >= 0.0 ? 0.0 : -tokens_ / rate_per_sec_;
    }

    double tokens() {
        std::lock_guard<std::mutex> lock(mu_);
        refill();
        return tokens_;
    }

private:
    void refill() {
        double now = clock_();
        tokens_ = std::min(burst_, tokens_ + (now - last_) * rate_per_sec_);
        last_ = now;
    }

    static double default_clock() {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    }

    double rate_per_sec_;
    double burst_ = 10.0;
    double tokens_;
    double last_;
    Clock clock_;
    std::mutex mu_;
};

struct HttpBackendConfig {
    std::string base_url;  // e.g. "https://api.openai.com" or "http://localhost:8089"
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    bool use_native_n = true;  // one request with n samples vs. sequential requests
    double requests_per_minute = 60.0;
    RetryPolicy retry;
    std::function<void(int)> sleep_ms = [](int ms) {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    };
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config)
        : config_(std::move(config)),
          id_("http:" + config_.base_url),
          limiter_(config_.requests_per_minute) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }

    std::vector<LlmResponse> complete(const std::string& prompt,
                                      const GenerationParams& params) override {
        if (prompt.empty()) throw Error("complete: empty prompt");
        if (params.num_samples < 1) throw Error("complete: num_samples must be >= 1");
        std::vector<LlmResponse> out;
        if (config_.use_native_n) {
            out = request(prompt, params, params.num_samples);
        }
        while (out.size() < static_cast<std::size_t>(params.num_samples)) {
            auto more = request(prompt, params, 1);
            out.insert(out.end(), more.begin(), more.end());
        }
        out.resize(static_cast<std::size_t>(params.num_samples));
        for (int k = 0; k < params.num_samples; ++k)
            out[static_cast<std::size_t>(k)].request_fingerprint =
                sample_fingerprint(id_, config_.model, prompt, params, k);
        live_calls_ += static_cast<std::uint64_t>(params.num_samples);
        return out;
    }

    const std::string& id() const override { return id_; }
    const std::string& model_name() const override { return config_.model; }
    std::uint64_t live_calls() const override { return live_calls_.load(); }

    struct Stats {
        std::uint64_t requests = 0;  // successful HTTP requests
        std::uint64_t attempts = 0;  // all HTTP attempts, retries included
    };
    Stats stats() const { return {requests_.load(), attempts_.load()}; }

private:
    std::vector<LlmResponse> request(const std::string& prompt, const GenerationParams& params,
                                     int n) {
        nlohmann::json body;
        body["model"] = config_.model;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
        body["temperature"] = params.temperature;
        body["max_tokens"] = params.max_tokens;
        if (n > 1) body["n"] = n;
        if (params.top_p) body["top_p"] = *params.top_p;
        const std::string payload = body.dump();

        httplib::Client cli(config_.base_url);
        cli.set_connection_timeout(30);
        cli.set_read_timeout(120);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
            if (attempt > 0) {
                int delay = static_cast<int>(config_.retry.base_delay_ms *
                                             std::pow(config_.retry.factor, attempt - 1));
                config_.sleep_ms(delay);
            }
            double wait = limiter_.acquire();
            if (wait > 0.0) config_.sleep_ms(static_cast<int>(wait * 1000.0));

            ++attempts_;
            auto t0 = std::chrono::steady_clock::now();
            auto res = cli.Post(config_.path, headers, payload, "application/json");
            auto elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();

            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "http " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) throw RequestRejected(res->status, res->body);

            ++requests_;
            return parse_completions(res->body, elapsed_ms);
        }
        throw BackendUnavailable("retry budget exhausted after " +
                                 std::to_string(config_.retry.max_attempts) +
                                 " attempts; last error: " + last_error);
    }

    static std::vector<LlmResponse> parse_completions(const std::string& body,
                                                      std::int64_t latency_ms) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const std::exception& e) {
            throw BackendUnavailable(std::string("malformed completion body: ") + e.what());
        }
        std::vector<LlmResponse> out;
        for (const auto& choice : j.at("choices")) {
            LlmResponse r;
            r.text = choice.at("message").at("content").get<std::string>();
            r.latency_ms = latency_ms;
            out.push_back(std::move(r));
        }
        if (out.empty()) throw BackendUnavailable("completion body had no choices");
        return out;
    }

    HttpBackendConfig config_;
    std::string id_;
    std::string api_key_;
    TokenBucket limiter_;
    std::atomic<std::uint64_t> live_calls_{0};
    std::atomic<std::uint64_t> requests_{0};
    std::atomic<std::uint64_t> attempts_{0};
};

}  // namespace selfdetect
