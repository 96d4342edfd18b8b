#pragma once

#include "linkguard/linkage_eval.hpp"
#include "linkguard/rewriter.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

namespace linkguard {

/// Offline stand-in for an LLM. Reads the spans back out of the prompt and
/// replaces every whole-word occurrence of each with its entry from the
/// substitution table, or with the redaction marker when it has none.
/// Deterministic.
class MockCompletionBackend : public CompletionBackend {
public:
    explicit MockCompletionBackend(std::map<std::string, std::string> substitutions = {},
                                   std::string redaction_marker = "[REDACTED]");

    /// Table file: a JSON object mapping span text to its replacement.
    static MockCompletionBackend from_file(const std::filesystem::path& table, std::string redaction_marker);

    std::string complete(const std::string& prompt, double temperature) override;
    std::string identity() const override { return "mock"; }

private:
    std::map<std::string, std::string> substitutions_;
    std::string marker_;
};

struct HttpEndpoint {
    std::string scheme_host_port;  // e.g. "https://api.example.com:443"
    std::string path;              // e.g. "/v1/chat/completions"
};

/// Splits an http(s) URL. Throws UsageError on anything else.
HttpEndpoint parse_http_url(const std::string& url);

/// OpenAI-compatible chat-completion client: one user message carrying the
/// prompt; the answer is the first choice's message content.
class ChatCompletionBackend : public CompletionBackend {
public:
    ChatCompletionBackend(std::string url, std::string model, std::string api_key,
                          std::chrono::milliseconds timeout, unsigned transport_retries = 2);

    std::string complete(const std::string& prompt, double temperature) override;
    std::string identity() const override { return model_ + "@" + url_; }

    static std::string request_body(const std::string& model, const std::string& prompt, double temperature);
    static std::string response_content(const std::string& body);

private:
    std::string url_;
    HttpEndpoint endpoint_;
    std::string model_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
    unsigned transport_retries_;
};

/// `mock:` or `mock:<table.json>` selects MockCompletionBackend; http(s) URLs
/// select ChatCompletionBackend with the key read from `api_key_env`.
std::unique_ptr<CompletionBackend> make_completion_backend(const std::string& url, const std::string& model,
                                                           const std::string& api_key_env,
                                                           std::chrono::milliseconds timeout,
                                                           const std::string& redaction_marker);

/// POSTs `{"text": ...}` and accepts either a bare numeric array or an object
/// with an `embedding` array.
class HttpEmbeddingBackend : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(std::string url, std::chrono::milliseconds timeout);

    std::vector<double> embed(const std::string& text) override;
    std::string identity() const override { return url_; }

private:
    std::string url_;
    HttpEndpoint endpoint_;
    std::chrono::milliseconds timeout_;
};

/// Deterministic hashed bag-of-tokens vectors; offline stand-in for a
/// sentence-embedding model.
class HashingEmbeddingBackend : public EmbeddingBackend {
public:
    explicit HashingEmbeddingBackend(std::size_t dimension = 256) : dimension_(dimension) {}

    std::vector<double> embed(const std::string& text) override;
    std::string identity() const override { return "mock:hashing-" + std::to_string(dimension_); }

private:
    std::size_t dimension_;
};

std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& url, std::chrono::milliseconds timeout);

}  // namespace linkguard
