#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "selfdetect/backend.hpp"
#include "selfdetect/http_backend.hpp"
#include "test_support.hpp"

using namespace selfdetect;
using testsupport::ScriptBuilder;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("mock fixed entries replay verbatim") {
    auto script = ScriptBuilder().exact("PROMPT-X", "positive").build();
    MockBackend mock(std::move(script));
    GenerationParams p;
    p.num_samples = 3;
    auto rs = mock.complete("PROMPT-X", p);
    REQUIRE(rs.size() == 3);
    for (const auto& r : rs) {
        CHECK(r.text == "positive");
        CHECK_FALSE(r.cached);
    }
    CHECK(mock.live_calls() == 3);
    CHECK_THROWS_AS(mock.complete("unknown prompt", p), UnscriptedPrompt);
}

TEST_CASE("mock distribution draws hit the scripted frequencies") {
    auto script = ScriptBuilder()
                      .seed(1234)
                      .categorical({""}, {{"positive", 0.75}, {"negative", 0.25}})
                      .build();
    MockBackend mock(std::move(script));
    GenerationParams p;
    p.num_samples = 10000;
    auto rs = mock.complete("rate this film", p);
    double pos = 0;
    for (const auto& r : rs)
        if (r.text == "positive") pos += 1;
    double fraction = pos / 10000.0;
    CHECK(fraction == doctest::Approx(0.75).epsilon(0.027));  // within +-0.02 absolute
    CHECK(std::abs(fraction - 0.75) <= 0.02);
}

TEST_CASE("mock determinism: same script and seed give identical sequences") {
    auto make = [] {
        return ScriptBuilder()
            .seed(99)
            .categorical({"question"}, {{"a", 0.5}, {"b", 0.3}, {"c", 0.2}})
            .build();
    };
    MockBackend m1(make()), m2(make());
    GenerationParams p;
    p.num_samples = 50;
    auto r1 = m1.complete("question one", p);
    auto r2 = m2.complete("question one", p);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].text == r2[i].text);
        CHECK(r1[i].request_fingerprint == r2[i].request_fingerprint);
    }
    // Draws are partitioned per (prompt, sample index): re-asking reproduces them.
    auto r3 = m1.complete("question one", p);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i].text == r3[i].text);
}

TEST_CASE("per-sample-index script entries") {
    auto script = ScriptBuilder()
                      .fixed_at({"vote"}, 3, "negative")
                      .fixed({"vote"}, "positive")
                      .build();
    MockBackend mock(std::move(script));
    GenerationParams p;
    p.num_samples = 5;
    auto rs = mock.complete("vote now", p);
    CHECK(rs[0].text == "positive");
    CHECK(rs[3].text == "negative");
    CHECK(rs[4].text == "positive");
}

TEST_CASE("fingerprints are stable pure functions") {
    GenerationParams p;
    p.temperature = 0.7;
    p.num_samples = 2;
    auto fp1 = request_fingerprint("mock", "model-a", "hello", p);
    auto fp2 = request_fingerprint("mock", "model-a", "hello", p);
    CHECK(fp1 == fp2);
    CHECK(fp1.size() == 16);
    // frozen value: guards fingerprint stability across releases
    CHECK(fp1 == "1fc497bcfed37302");

    p.temperature = 0.8;
    CHECK(request_fingerprint("mock", "model-a", "hello", p) != fp1);
    CHECK(request_fingerprint("mock", "model-b", "hello", p) !=
          request_fingerprint("mock", "model-a", "hello", p));
    CHECK(sample_fingerprint("mock", "m", "x", p, 0) != sample_fingerprint("mock", "m", "x", p, 1));
}

TEST_CASE("cache hit avoids backend calls and marks responses") {
    auto file = temp_file("selfdetect_cache_test.jsonl");
    auto script = ScriptBuilder().fixed({""}, "positive").build();
    MockBackend mock(std::move(script));
    ResponseCache cache(file);
    CachedBackend cached(mock, cache);
    GenerationParams p;
    p.num_samples = 2;

    auto first = cached.complete("prompt", p);
    CHECK(mock.live_calls() == 2);
    CHECK_FALSE(first[0].cached);

    auto second = cached.complete("prompt", p);
    CHECK(mock.live_calls() == 2);  // zero new backend calls
    REQUIRE(second.size() == 2);
    CHECK(second[0].cached);
    CHECK(second[0].text == "positive");

    SUBCASE("different params fingerprint separately") {
        GenerationParams hot = p;
        hot.temperature = 1.0;
        cached.complete("prompt", hot);
        CHECK(mock.live_calls() == 4);
        CHECK(cache.size() == 2);
    }

    SUBCASE("cache persists across instances, deletion forces refetch") {
        ResponseCache reopened(file);
        CachedBackend cached2(mock, reopened);
        cached2.complete("prompt", p);
        CHECK(mock.live_calls() == 2);  // served from disk

        std::filesystem::remove(file);
        ResponseCache empty(file);
        CachedBackend cached3(mock, empty);
        auto refetched = cached3.complete("prompt", p);
        CHECK(mock.live_calls() == 4);  // miss, re-fetch
        CHECK_FALSE(refetched[0].cached);
        CHECK(std::filesystem::exists(file));  // re-stored
    }
    std::filesystem::remove(file);
}

TEST_CASE("corrupt cache records are quarantined and treated as misses") {
    auto file = temp_file("selfdetect_cache_corrupt.jsonl");
    {
        std::ofstream out(file);
        out << "{this is not json\n";
        out << R"({"fingerprint":"aaaa","prompt":"x","params":"p","responses":[{"text":"ok"}]})"
            << "\n";
    }
    ResponseCache cache(file);
    CHECK(cache.corrupt_records() == 1);
    CHECK(cache.size() == 1);
    CHECK(cache.lookup("aaaa").has_value());
    CHECK_FALSE(cache.lookup("bbbb").has_value());
    CHECK(std::filesystem::exists(file.string() + ".quarantine"));
    std::filesystem::remove(file);
    std::filesystem::remove(file.string() + ".quarantine");
}

TEST_CASE("token bucket paces requests") {
    double now = 0.0;
    TokenBucket bucket(60.0, [&] { return now; });  // 1/s, burst 10
    for (int i = 0; i < 10; ++i) CHECK(bucket.acquire() == 0.0);
    double wait = bucket.acquire();
    CHECK(wait == doctest::Approx(1.0));
    now += 5.0;
    CHECK(bucket.acquire() == 0.0);
}

#ifndef _WIN32

TEST_CASE("http backend against a local server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++hits;
        seen_auth = req.get_header_value("Authorization");
        auto body = nlohmann::json::parse(req.body);
        if (n <= 2 && body.at("messages")[0].at("content").get<std::string>() == "flaky") {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        int want = body.value("n", 1);
        nlohmann::json out;
        out["choices"] = nlohmann::json::array();
        for (int i = 0; i < want; ++i)
            out["choices"].push_back({{"message", {{"role", "assistant"}, {"content", "positive"}}}});
        res.set_content(out.dump(), "application/json");
    });

    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("SELFDETECT_TEST_KEY", "sk-test-123", 1);
    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model = "test-model";
    cfg.api_key_env = "SELFDETECT_TEST_KEY";
    cfg.retry.base_delay_ms = 1;  // keep the test fast
    cfg.requests_per_minute = 100000;

    SUBCASE("native n-sample request") {
        HttpBackend backend(cfg);
        GenerationParams p;
        p.num_samples = 3;
        auto rs = backend.complete("hello", p);
        REQUIRE(rs.size() == 3);
        CHECK(rs[0].text == "positive");
        CHECK(backend.live_calls() == 3);
        CHECK(backend.stats().requests == 1);
        CHECK(seen_auth == "Bearer sk-test-123");
    }

    SUBCASE("sequential fallback issues one request per sample") {
        auto seq = cfg;
        seq.use_native_n = false;
        HttpBackend backend(seq);
        GenerationParams p;
        p.num_samples = 3;
        auto rs = backend.complete("hello", p);
        REQUIRE(rs.size() == 3);
        CHECK(backend.stats().requests == 3);
        CHECK(backend.live_calls() == 3);
    }

    SUBCASE("429 twice then success retries through") {
        HttpBackend backend(cfg);
        GenerationParams p;
        auto rs = backend.complete("flaky", p);
        REQUIRE(rs.size() == 1);
        CHECK(rs[0].text == "positive");
        CHECK(backend.stats().attempts == 3);  // three attempts logged
        CHECK(backend.stats().requests == 1);
        CHECK(rs[0].latency_ms >= 0);
    }

    server.stop();
    server_thread.join();
}

TEST_CASE("http backend reports exhaustion as BackendUnavailable") {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("down", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model = "test-model";
    cfg.retry.max_attempts = 3;
    cfg.retry.base_delay_ms = 1;
    cfg.requests_per_minute = 100000;
    HttpBackend backend(cfg);
    GenerationParams p;
    CHECK_THROWS_AS(backend.complete("hello", p), BackendUnavailable);
    CHECK(backend.stats().attempts == 3);

    server.stop();
    server_thread.join();
}

TEST_CASE("http 4xx bodies surface in RequestRejected") {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content("invalid api key", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model = "test-model";
    cfg.retry.base_delay_ms = 1;
    cfg.requests_per_minute = 100000;
    HttpBackend backend(cfg);
    GenerationParams p;
    try {
        backend.complete("hello", p);
        CHECK(false);
    } catch (const RequestRejected& e) {
        CHECK(e.status() == 401);
        CHECK(e.body() == "invalid api key");
    }
    CHECK(backend.stats().attempts == 1);  // no retry on plain 4xx

    server.stop();
    server_thread.join();
}

#endif  // _WIN32
