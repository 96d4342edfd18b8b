#include <doctest.h>

#include "fixtures.hpp"

#include "linkguard/backends.hpp"
#include "linkguard/error.hpp"
#include "linkguard/extraction.hpp"
#include "linkguard/rewriter.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

using namespace linkguard;

namespace {

std::string golden_prompt() { return read_text_file(std::string(LINKGUARD_GOLDEN_DIR) + "/prompt_fixture.txt"); }

FlaggedSpan flagged(const TokenizedDocument& doc, std::size_t begin, std::size_t end) {
    FlaggedSpan f;
    f.span.tokens = {begin, end};
    f.span.n = static_cast<unsigned>(end - begin);
    f.span.chars = doc.key_char_range(begin, end);
    f.span.canonical = doc.canonical(begin, end);
    f.span.key = make_key(f.span.canonical, f.span.n);
    f.span.surface = doc.text.substr(f.span.chars.begin, f.span.chars.size());
    f.df = 1;
    return f;
}

ChunkSpan chunk_span(const std::string& text, const std::string& surface, unsigned n) {
    const auto pos = text.find(surface);
    REQUIRE(pos != std::string::npos);
    return {surface, surface, n, {pos, pos + surface.size()}};
}

// Replays canned completions in order, then repeats the last one.
class ScriptedBackend : public CompletionBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const std::string& prompt, double) override {
        std::lock_guard lock(mutex_);
        prompts.push_back(prompt);
        const auto i = std::min(calls_++, replies_.size() - 1);
        return replies_[i];
    }
    std::string identity() const override { return "scripted"; }
    std::vector<std::string> prompts;

private:
    std::mutex mutex_;
    std::vector<std::string> replies_;
    std::size_t calls_ = 0;
};

// Echoes the chunk text unchanged.
class EchoBackend : public CompletionBackend {
public:
    std::string complete(const std::string& prompt, double) override {
        ++calls;
        nlohmann::json j;
        j["edited_text"] = extract_prompt_slots(prompt)->text;
        return "No change needed.\n" + j.dump();
    }
    std::string identity() const override { return "echo"; }
    std::atomic<int> calls{0};
};

class FailingBackend : public CompletionBackend {
public:
    std::string complete(const std::string&, double) override { throw BackendError("connection refused"); }
    std::string identity() const override { return "failing"; }
};

struct LocalServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    LocalServer() = default;
    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace

TEST_CASE("prompt matches the golden transcription") {
    const auto prompt = build_prompt("The quick brown fox jumps over the lazy dog.", {"quick brown fox"});
    CHECK(prompt == golden_prompt());
    CHECK(prompt.find("EVERY span in the list is replaced") != std::string::npos);
    CHECK(prompt.find("avoid redacting article numbers") != std::string::npos);
    CHECK(prompt.find("you should replace it by [REDACTED]") != std::string::npos);
    CHECK(prompt.ends_with("Span(s) to replace: \"quick brown fox\""));

    Chunk chunk;
    chunk.text = "The quick brown fox jumps over the lazy dog.";
    chunk.spans = {chunk_span(chunk.text, "quick brown fox", 3)};
    CHECK(build_prompt(chunk) == prompt);
}

TEST_CASE("prompt span list keeps order and round-trips through the slots") {
    const auto prompt = build_prompt("A b c. D e.", {"b c", "D"});
    CHECK(prompt.ends_with("Text: A b c. D e.\n\nSpan(s) to replace: \"b c\", \"D\""));
    const auto slots = extract_prompt_slots(prompt);
    REQUIRE(slots);
    CHECK(slots->text == "A b c. D e.");
    CHECK(slots->spans == std::vector<std::string>{"b c", "D"});
    CHECK_THROWS_AS(build_prompt("text", {}), UsageError);
    CHECK_FALSE(extract_prompt_slots("unrelated"));
}

TEST_CASE("parse_response") {
    CHECK(parse_response("Reasoning: swap words.\n{\"edited_text\": \"The fast brown fox\"}") == "The fast brown fox");
    CHECK(parse_response("{\"edited_text\": \"first\"} then {\"edited_text\": \"second\"}") == "second");
    CHECK(parse_response("{\"edited_text\": \"kept\"} trailing {\"other\": 1}") == "kept");
    CHECK(parse_response("x {\"edited_text\": \"brace } and \\\"quote\\\" {\"} y") == "brace } and \"quote\" {");
    CHECK(parse_response("```json\n{\"edited_text\": \"fenced\", \"notes\": {\"a\": 1}}\n```") == "fenced");
    CHECK_THROWS_AS(parse_response("no json at all"), ParseFailure);
    CHECK_THROWS_AS(parse_response("{\"edited_text\": \"\"}"), ParseFailure);
    CHECK_THROWS_AS(parse_response("{\"edited_text\": 5}"), ParseFailure);
    CHECK_THROWS_AS(parse_response("{\"edited_text\": \"unterminated"), ParseFailure);
}

TEST_CASE("verify_chunk and redact_spans") {
    const std::string text = "The quick brown fox jumps.";
    const std::vector<ChunkSpan> spans = {chunk_span(text, "quick brown", 2), chunk_span(text, "jumps", 1)};
    CHECK(verify_chunk(text, spans, {}).size() == 2);
    CHECK(verify_chunk("The Quick Brown fox leaps.", spans, {}).empty());
    TokenizerConfig folded;
    folded.case_fold = true;
    auto folded_spans = spans;
    folded_spans[0].canonical = "quick brown";
    CHECK(verify_chunk("The Quick Brown fox leaps.", folded_spans, folded).size() == 1);
    // Punctuation does not separate a window; a sentence break does.
    CHECK(verify_chunk("The quick, brown fox.", spans, {}).size() == 1);
    CHECK(verify_chunk("The quick. Brown fox.", spans, {}).empty());

    CHECK(redact_spans(text, spans, {}) == "The [REDACTED] fox [REDACTED].");
    CHECK(redact_spans("quick brown quick brown", spans, {}) == "[REDACTED] [REDACTED]");
}

TEST_CASE("chunk_plan: single span in a long document") {
    std::string text;
    for (int s = 0; s < 10; ++s) text += "Sentence number " + std::to_string(s) + " here. ";
    const auto doc = tokenize(text, {});
    RewritePlan plan;
    plan.spans.push_back(flagged(doc, 3 * 4 + 2, 3 * 4 + 3));  // "3" in sentence 3
    const auto chunks = chunk_plan(doc, plan, {});
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].first_sentence == 3);
    CHECK(chunks[0].last_sentence == 3);
    CHECK(chunks[0].text == "Sentence number 3 here.");
    REQUIRE(chunks[0].spans.size() == 1);
    CHECK(chunks[0].text.substr(chunks[0].spans[0].chars.begin, chunks[0].spans[0].chars.size()) == "3");
}

TEST_CASE("chunk_plan: span cap splits one sentence into several chunks") {
    std::string text;
    for (int i = 0; i < 12; ++i) text += "word" + std::to_string(i) + " ";
    text += "end.";
    const auto doc = tokenize(text, {});
    RewritePlan plan;
    for (std::size_t i = 0; i < 12; ++i) plan.spans.push_back(flagged(doc, i, i + 1));
    const auto chunks = chunk_plan(doc, plan, {});
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].spans.size() == 8);
    CHECK(chunks[1].spans.size() == 4);
    CHECK(chunks[0].first_sentence == chunks[1].first_sentence);
    CHECK(chunks[0].doc_chars == chunks[1].doc_chars);
}

TEST_CASE("chunk_plan: random plans") {
    std::mt19937_64 rng(31);
    for (int round = 0; round < 300; ++round) {
        const auto synth_doc = synth::random_doc(rng, 5 + round % 60, 30, 6);
        const auto doc = tokenize(synth_doc.text(), {});
        RewritePlan plan;
        std::bernoulli_distribution take(0.3);
        for (std::size_t i = 0; i < doc.key_tokens.size(); ++i) {
            if (take(rng)) plan.spans.push_back(flagged(doc, i, i + 1));
        }
        RewriterConfig config;
        config.chunk_max_sentences = 1 + round % 5;
        config.chunk_max_spans = 1 + round % 8;
        const auto chunks = chunk_plan(doc, plan, config);

        std::multiset<std::size_t> covered;
        for (std::size_t c = 0; c < chunks.size(); ++c) {
            const auto& chunk = chunks[c];
            CHECK(chunk.spans.size() >= 1);
            CHECK(chunk.spans.size() <= config.chunk_max_spans);
            CHECK(chunk.last_sentence - chunk.first_sentence + 1 <= config.chunk_max_sentences);
            CHECK(chunk.text == doc.text.substr(chunk.doc_chars.begin, chunk.doc_chars.size()));
            for (const auto& s : chunk.spans) {
                CHECK(s.chars.end <= chunk.text.size());
                CHECK(chunk.text.substr(s.chars.begin, s.chars.size()) == s.surface);
                covered.insert(chunk.doc_chars.begin + s.chars.begin);
            }
            if (c > 0) {
                const auto& prev = chunks[c - 1];
                const bool same = prev.doc_chars == chunk.doc_chars;
                CHECK((same || prev.last_sentence < chunk.first_sentence));
            }
            // Every sentence in the chunk carries a span.
            for (auto s = chunk.first_sentence; s <= chunk.last_sentence; ++s) {
                const bool has = std::any_of(plan.spans.begin(), plan.spans.end(), [&](const FlaggedSpan& f) {
                    return doc.key_token(f.span.tokens.begin).sentence_index == s;
                });
                CHECK(has);
            }
        }
        CHECK(covered.size() == plan.spans.size());
        for (const auto& f : plan.spans) CHECK(covered.count(f.span.chars.begin) == 1);
    }
}

TEST_CASE("property: one iteration only changes chunk sentence ranges") {
    std::mt19937_64 rng(37);
    MockCompletionBackend mock;
    std::size_t untouched_bytes = 0;
    for (int round = 0; round < 60; ++round) {
        auto corpus = synth::random_corpus(rng, 30, 40, 15);
        const auto probe = synth::random_doc(rng, 20 + round, 40, 8);
        corpus.push_back(probe);
        const auto index = fixtures::index_of(corpus);
        const auto doc = tokenize(probe.text(), {});
        const auto plan = plan_iteration(doc, index, {});
        if (plan.empty()) continue;

        RewriterConfig config;
        config.max_iterations = 1;
        config.fallback_policy = FallbackPolicy::Keep;
        config.chunk_max_spans = 1000;
        config.chunk_max_sentences = 1 + round % 3;
        const auto chunks = chunk_plan(doc, plan, config);
        std::string expected = doc.text;
        for (auto c = chunks.rbegin(); c != chunks.rend(); ++c) {
            expected.replace(c->doc_chars.begin, c->doc_chars.size(), parse_response(mock.complete(build_prompt(*c), 0)));
        }
        const auto result = protect(doc, index, {}, config, mock);
        CHECK(result.final_text == expected);

        std::size_t outside = doc.text.size();
        for (const auto& c : chunks) outside -= c.doc_chars.size();
        untouched_bytes += outside;
    }
    CHECK(untouched_bytes > 0);
}

TEST_CASE("mock backend removes every requested span") {
    MockCompletionBackend mock(std::map<std::string, std::string>{{"quick brown fox", "fast brown fox"}});
    const auto prompt = build_prompt("The quick brown fox jumps over the lazy dog.", {"quick brown fox", "lazy"});
    const auto completion = mock.complete(prompt, 1.2);
    CHECK(completion.starts_with("Reasoning:"));
    CHECK(parse_response(completion) == "The fast brown fox jumps over the [REDACTED] dog.");
    // Token-aligned matches only.
    const auto partial = parse_response(mock.complete(build_prompt("lazy lazybones", {"lazy"}), 1.0));
    CHECK(partial == "[REDACTED] lazybones");
}

TEST_CASE("mock backend table file") {
    fixtures::TempDir dir;
    dir.write("t.json", "{\"fox\": \"dog\"}");
    auto mock = MockCompletionBackend::from_file(dir / "t.json", "[X]");
    CHECK(parse_response(mock.complete(build_prompt("a fox b", {"fox", "b"}), 0)) == "a dog [X]");
    dir.write("bad.json", "[1,2]");
    CHECK_THROWS_AS(MockCompletionBackend::from_file(dir / "bad.json", "[X]"), IoError);
}

TEST_CASE("protect: empty plan") {
    std::vector<synth::Doc> corpus(3, synth::Doc{{{"common", "words"}}});
    const auto index = fixtures::index_of(corpus);
    EchoBackend backend;
    const auto doc = tokenize("common words.", {});
    const auto result = protect(doc, index, {}, {}, backend);
    CHECK(result.success);
    CHECK(result.iterations_used == 1);
    CHECK(result.final_text == "common words.");
    CHECK(result.edits() == 0);
    CHECK(backend.calls == 0);
}

TEST_CASE("protect: mock backend resolves a unique document") {
    std::mt19937_64 rng(77);
    auto corpus = synth::random_corpus(rng, 30, 40, 40);
    const auto probe = synth::random_doc(rng, 40, 40);
    corpus.push_back(probe);
    const auto index = fixtures::index_of(corpus);
    MockCompletionBackend mock;
    const auto doc = tokenize(probe.text(), {});
    REQUIRE_FALSE(plan_iteration(doc, index, {}).empty());
    const auto result = protect(doc, index, {}, {}, mock);
    CHECK(result.success);
    CHECK(result.unresolved_spans.empty());
    CHECK(result.iterations_used <= 10);
    CHECK(plan_iteration(tokenize(result.final_text, {}), index, {}).empty());
    CHECK(result.edits() > 0);

    std::stringstream log;
    write_edit_log(log, result);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("iteration"));
        CHECK(j.contains("chunks"));
        ++lines;
    }
    CHECK(lines == result.edit_log.size());

    // Idempotence.
    const auto again = protect(tokenize(result.final_text, {}), index, {}, {}, mock);
    CHECK(again.edits() == 0);
    CHECK(again.final_text == result.final_text);
}

TEST_CASE("protect: stubborn backend, fallback policies") {
    std::vector<synth::Doc> corpus(3, synth::Doc{{{"shared", "text"}}});
    corpus.push_back({{{"only", "here"}}});
    const auto index = fixtures::index_of(corpus);
    const auto doc = tokenize("shared text. only here.", {});

    RewriterConfig config;
    config.max_iterations = 2;
    config.max_retries_per_chunk = 1;
    {
        EchoBackend echo;
        config.fallback_policy = FallbackPolicy::Redact;
        const auto result = protect(doc, index, {}, config, echo);
        CHECK(result.success);
        CHECK(result.unresolved_spans.empty());
        CHECK(result.iterations_used <= 2);
        CHECK(result.final_text == "shared text. [REDACTED] [REDACTED].");
        CHECK(echo.calls == 2);  // one chunk, one retry; the fallback needs no further calls
        REQUIRE_FALSE(result.edit_log.empty());
        CHECK(result.edit_log[0].chunks[0].attempts == 2);
        CHECK(result.edit_log[0].chunks[0].redacted.size() == 2);
    }
    {
        EchoBackend echo;
        config.fallback_policy = FallbackPolicy::Keep;
        const auto result = protect(doc, index, {}, config, echo);
        CHECK_FALSE(result.success);
        CHECK(result.iterations_used == 2);
        CHECK(result.final_text == doc.text);
        CHECK(result.unresolved_spans.size() == 2);
        CHECK(result.edit_log.size() == 2);
        CHECK(result.edit_log[0].chunks[0].kept.size() == 2);
    }
}

TEST_CASE("protect: retries on parse failures and keeps the best attempt") {
    std::vector<synth::Doc> corpus(3, synth::Doc{{{"shared", "text"}}});
    corpus.push_back({{{"only", "here"}}});
    const auto index = fixtures::index_of(corpus);
    const auto doc = tokenize("only here.", {});
    ScriptedBackend backend({"garbage", "{\"edited_text\": \"only there.\"}", "{\"edited_text\": \"nothing.\"}"});
    RewriterConfig config;
    config.max_retries_per_chunk = 3;
    const auto result = protect(doc, index, {}, config, backend);
    REQUIRE_FALSE(result.edit_log.empty());
    const auto& chunk = result.edit_log[0].chunks[0];
    CHECK(chunk.parse_failures == 1);
    CHECK(chunk.attempts == 3);
    CHECK(result.success);
    CHECK(result.final_text == "nothing.");
    CHECK(backend.prompts[0] == build_prompt("only here.", {"only", "here"}));
}

TEST_CASE("protect: transport failure aborts with the partial log") {
    std::vector<synth::Doc> corpus = {{{{"a"}}}, {{{"b"}}}};
    const auto index = fixtures::index_of(corpus);
    FailingBackend failing;
    try {
        protect(tokenize("a b.", {}), index, {}, {}, failing);
        FAIL("expected abort");
    } catch (const ProtectionAborted& e) {
        CHECK(e.partial().edit_log.size() == 1);
        CHECK(e.partial().final_text == "a b.");
        CHECK_FALSE(e.partial().success);
    }
}

TEST_CASE("protect: tokenizer mismatch and config validation") {
    std::vector<synth::Doc> corpus = {{{{"a"}}}, {{{"b"}}}};
    const auto index = fixtures::index_of(corpus);
    MockCompletionBackend mock;
    TokenizerConfig folded;
    folded.case_fold = true;
    CHECK_THROWS_AS(protect(tokenize("a b.", folded), index, {}, {}, mock), ConfigMismatch);
    RewriterConfig bad;
    bad.max_iterations = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = {};
    bad.temperature = -1;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = {};
    bad.chunk_max_spans = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("chat completion wire format against a local server") {
    LocalServer local;
    std::atomic<int> hits{0};
    nlohmann::json seen;
    std::string auth;
    local.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            return;
        }
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        nlohmann::json reply;
        reply["choices"] = {{{"message", {{"role", "assistant"}, {"content", "ok {\"edited_text\": \"done\"}"}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    local.server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    local.start();

    ChatCompletionBackend backend(local.url("/v1/chat/completions"), "test-model", "secret",
                                  std::chrono::milliseconds(5000));
    const auto reply = backend.complete("PROMPT", 1.2);
    CHECK(parse_response(reply) == "done");
    CHECK(hits == 2);
    CHECK(seen["model"] == "test-model");
    CHECK(seen["temperature"] == 1.2);
    CHECK(seen["messages"][0]["role"] == "user");
    CHECK(seen["messages"][0]["content"] == "PROMPT");
    CHECK(auth == "Bearer secret");

    ChatCompletionBackend broken(local.url("/broken"), "m", "", std::chrono::milliseconds(5000));
    CHECK_THROWS_AS(broken.complete("x", 1.0), BackendError);
    CHECK_THROWS_AS(ChatCompletionBackend::response_content("{}"), BackendError);
    CHECK_THROWS_AS(parse_http_url("ftp://host/x"), UsageError);
    const auto ep = parse_http_url("https://api.example.com/v1/chat");
    CHECK(ep.path == "/v1/chat");
}

TEST_CASE("unreachable backend is a backend error") {
    ChatCompletionBackend backend("http://127.0.0.1:1/v1/chat/completions", "m", "", std::chrono::milliseconds(500),
                                  1);
    CHECK_THROWS_AS(backend.complete("x", 1.0), BackendError);
    CHECK_THROWS_AS(make_completion_backend("http://127.0.0.1:1/", "", "LINKGUARD_API_KEY",
                                            std::chrono::milliseconds(100), "[REDACTED]"),
                    UsageError);
}
