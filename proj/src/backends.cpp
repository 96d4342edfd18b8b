#include "linkguard/backends.hpp"

#include "linkguard/error.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <set>
#include <thread>

namespace linkguard {

MockCompletionBackend::MockCompletionBackend(std::map<std::string, std::string> substitutions,
                                             std::string redaction_marker)
    : substitutions_(std::move(substitutions)), marker_(std::move(redaction_marker)) {}

MockCompletionBackend MockCompletionBackend::from_file(const std::filesystem::path& table,
                                                       std::string redaction_marker) {
    auto parsed = nlohmann::json::parse(read_text_file(table), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
        throw IoError("substitution table '" + table.string() + "' must be a JSON object");
    }
    std::map<std::string, std::string> substitutions;
    for (const auto& [span, replacement] : parsed.items()) {
        if (!replacement.is_string()) throw IoError("substitution for '" + span + "' must be a string");
        substitutions.emplace(span, replacement.get<std::string>());
    }
    return MockCompletionBackend(std::move(substitutions), std::move(redaction_marker));
}

std::string MockCompletionBackend::complete(const std::string& prompt, double /*temperature*/) {
    const auto slots = extract_prompt_slots(prompt);
    if (!slots) return "I could not find the text to edit.";

    TokenizerConfig config;
    config.redaction_marker = marker_;
    const auto doc = tokenize(slots->text, config);
    std::set<std::size_t> starts;
    std::set<std::size_t> ends;
    for (const auto& tok : doc.tokens) {
        starts.insert(tok.char_start);
        ends.insert(tok.char_end);
    }

    struct Edit {
        std::size_t begin;
        std::size_t end;
        const std::string* replacement;
    };
    std::vector<Edit> edits;
    for (const auto& span : slots->spans) {
        if (span.empty()) continue;
        auto it = substitutions_.find(span);
        const std::string* replacement = it != substitutions_.end() ? &it->second : &marker_;
        for (auto pos = slots->text.find(span); pos != std::string::npos; pos = slots->text.find(span, pos + 1)) {
            if (starts.contains(pos) && ends.contains(pos + span.size())) {
                edits.push_back({pos, pos + span.size(), replacement});
            }
        }
    }
    std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end > b.end;
    });

    std::string edited;
    std::size_t cursor = 0;
    std::size_t applied = 0;
    for (const auto& e : edits) {
        if (e.begin < cursor) continue;
        edited.append(slots->text, cursor, e.begin - cursor);
        edited += *e.replacement;
        cursor = e.end;
        ++applied;
    }
    edited.append(slots->text, cursor);

    nlohmann::json answer;
    answer["edited_text"] = edited;
    return "Reasoning: substituted " + std::to_string(applied) + " span occurrence(s).\n" + answer.dump();
}

HttpEndpoint parse_http_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw UsageError("'" + url + "' is not an http(s) URL");
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw UsageError("unsupported URL scheme '" + scheme + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    HttpEndpoint endpoint;
    endpoint.scheme_host_port = url.substr(0, path_start);
    endpoint.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (endpoint.scheme_host_port.size() <= scheme_end + 3) throw UsageError("'" + url + "' has no host");
    return endpoint;
}

namespace {

std::string post_json(const HttpEndpoint& endpoint, const std::string& body, const httplib::Headers& headers,
                      std::chrono::milliseconds timeout, unsigned retries) {
    std::string last_error;
    for (unsigned attempt = 0; attempt <= retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(200) * (1u << (attempt - 1)));
        httplib::Client client(endpoint.scheme_host_port);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        auto res = client.Post(endpoint.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return res->body;
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        if (res->status != 429 && res->status < 500) break;
    }
    throw BackendError(endpoint.scheme_host_port + endpoint.path + ": " + last_error);
}

}  // namespace

ChatCompletionBackend::ChatCompletionBackend(std::string url, std::string model, std::string api_key,
                                             std::chrono::milliseconds timeout, unsigned transport_retries)
    : url_(std::move(url)),
      endpoint_(parse_http_url(url_)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      timeout_(timeout),
      transport_retries_(transport_retries) {}

std::string ChatCompletionBackend::request_body(const std::string& model, const std::string& prompt,
                                                double temperature) {
    nlohmann::ordered_json body;
    body["model"] = model;
    body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = temperature;
    return body.dump();
}

std::string ChatCompletionBackend::response_content(const std::string& body) {
    auto parsed = nlohmann::json::parse(body, nullptr, false);
    if (parsed.is_discarded()) throw BackendError("chat completion response is not JSON");
    try {
        const auto& content = parsed.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw BackendError("chat completion content is not a string");
        return content.get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw BackendError("chat completion response lacks choices[0].message.content");
    }
}

std::string ChatCompletionBackend::complete(const std::string& prompt, double temperature) {
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const auto body = post_json(endpoint_, request_body(model_, prompt, temperature), headers, timeout_,
                                transport_retries_);
    return response_content(body);
}

std::unique_ptr<CompletionBackend> make_completion_backend(const std::string& url, const std::string& model,
                                                           const std::string& api_key_env,
                                                           std::chrono::milliseconds timeout,
                                                           const std::string& redaction_marker) {
    if (url.starts_with("mock:")) {
        const auto table = url.substr(5);
        if (table.empty()) return std::make_unique<MockCompletionBackend>(std::map<std::string, std::string>{},
                                                                          redaction_marker);
        return std::make_unique<MockCompletionBackend>(MockCompletionBackend::from_file(table, redaction_marker));
    }
    if (model.empty()) throw UsageError("a model name is required for a remote backend");
    std::string key;
    if (const char* value = std::getenv(api_key_env.c_str())) key = value;
    return std::make_unique<ChatCompletionBackend>(url, model, std::move(key), timeout);
}

HttpEmbeddingBackend::HttpEmbeddingBackend(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), endpoint_(parse_http_url(url_)), timeout_(timeout) {}

std::vector<double> HttpEmbeddingBackend::embed(const std::string& text) {
    nlohmann::json request;
    request["text"] = text;
    const auto body = post_json(endpoint_, request.dump(), {}, timeout_, 2);
    auto parsed = nlohmann::json::parse(body, nullptr, false);
    const nlohmann::json* vector = nullptr;
    if (parsed.is_array()) {
        vector = &parsed;
    } else if (parsed.is_object() && parsed.contains("embedding")) {
        vector = &parsed["embedding"];
    }
    if (!vector || !vector->is_array()) throw BackendError("embedding response is not a numeric vector");
    std::vector<double> out;
    for (const auto& v : *vector) {
        if (!v.is_number()) throw BackendError("embedding response is not a numeric vector");
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<double> HashingEmbeddingBackend::embed(const std::string& text) {
    std::vector<double> out(dimension_, 0.0);
    TokenizerConfig config;
    config.case_fold = true;
    for (const auto& tok : tokenize(text, config).tokens) {
        const auto fp = fingerprint(tok.key);
        std::uint64_t h = 0;
        for (int i = 0; i < 8; ++i) h |= static_cast<std::uint64_t>(fp.bytes[i]) << (8 * i);
        out[h % dimension_] += 1.0;
    }
    return out;
}

std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& url, std::chrono::milliseconds timeout) {
    if (url.starts_with("mock:")) return std::make_unique<HashingEmbeddingBackend>();
    return std::make_unique<HttpEmbeddingBackend>(url, timeout);
}

}  // namespace linkguard
