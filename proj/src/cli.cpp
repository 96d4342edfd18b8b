#include "linkguard/cli.hpp"

#include "linkguard/backends.hpp"
#include "linkguard/corpus.hpp"
#include "linkguard/error.hpp"
#include "linkguard/extraction.hpp"
#include "linkguard/linkage_eval.hpp"
#include "linkguard/ngram_index.hpp"
#include "linkguard/rewriter.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <optional>
#include <ostream>
#include <set>

namespace linkguard::cli {

namespace {

struct RunConfig {
    TokenizerConfig tokenizer;
    ExtractionConfig extraction;
    RewriterConfig rewriter;
    std::string backend_url;
    std::string model;
    std::string api_key_env = "LINKGUARD_API_KEY";
    std::string embed_url;
    unsigned threads = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["k"] = extraction.k;
        j["n_max"] = extraction.n_max;
        j["n_min"] = extraction.n_min;
        j["max_arity"] = extraction.max_arity;
        j["combination_budget"] = extraction.combination_budget;
        j["case_fold"] = tokenizer.case_fold;
        j["redaction_marker"] = tokenizer.redaction_marker;
        j["include_punct_in_keys"] = tokenizer.include_punct_in_keys;
        j["temperature"] = rewriter.temperature;
        j["chunk_max_sentences"] = rewriter.chunk_max_sentences;
        j["chunk_max_spans"] = rewriter.chunk_max_spans;
        j["max_retries_per_chunk"] = rewriter.max_retries_per_chunk;
        j["max_iterations"] = rewriter.max_iterations;
        j["fallback"] = rewriter.fallback_policy == FallbackPolicy::Redact ? "redact" : "keep";
        j["request_timeout_ms"] = rewriter.request_timeout.count();
        j["max_in_flight"] = rewriter.max_in_flight;
        j["backend_url"] = backend_url;
        j["model"] = model;
        j["api_key_env"] = api_key_env;
        j["embed_url"] = embed_url;
        return j;
    }
};

const std::set<std::string> kConfigKeys = {
    "k", "n_max", "n_min", "max_arity", "combination_budget", "case_fold", "redaction_marker",
    "include_punct_in_keys", "temperature", "chunk_max_sentences", "chunk_max_spans", "max_retries_per_chunk",
    "max_iterations", "fallback", "request_timeout_ms", "max_in_flight", "backend_url", "model", "api_key_env",
    "embed_url", "threads"};

// Command-line values; unset ones fall back to the config file, then to
// built-in defaults.
struct Flags {
    std::string config_path;
    std::optional<std::uint32_t> k;
    std::optional<unsigned> n_max;
    std::optional<unsigned> n_min;
    std::optional<unsigned> max_arity;
    std::optional<std::size_t> combination_budget;
    bool case_fold = false;
    std::optional<std::string> redaction_marker;
    bool include_punct = false;
    std::optional<double> temperature;
    std::optional<unsigned> max_iterations;
    std::optional<unsigned> max_retries;
    std::optional<std::string> fallback;
    std::optional<std::string> backend_url;
    std::optional<std::string> model;
    std::optional<std::string> embed_url;
    std::optional<unsigned> threads;
};

template <typename T>
void pick(T& target, const std::optional<T>& flag, const nlohmann::json& file, const char* key) {
    if (flag) {
        target = *flag;
    } else if (file.contains(key)) {
        target = file.at(key).get<T>();
    }
}

RunConfig resolve(const Flags& flags) {
    nlohmann::json file = nlohmann::json::object();
    if (!flags.config_path.empty()) {
        file = nlohmann::json::parse(read_text_file(flags.config_path), nullptr, false);
        if (file.is_discarded() || !file.is_object()) {
            throw UsageError("config file '" + flags.config_path + "' must hold a JSON object");
        }
        for (const auto& [key, value] : file.items()) {
            if (!kConfigKeys.contains(key)) throw UsageError("unknown config key '" + key + "'");
        }
    }

    RunConfig rc;
    try {
        pick(rc.extraction.k, flags.k, file, "k");
        pick(rc.extraction.n_max, flags.n_max, file, "n_max");
        pick(rc.extraction.n_min, flags.n_min, file, "n_min");
        pick(rc.extraction.max_arity, flags.max_arity, file, "max_arity");
        pick(rc.extraction.combination_budget, flags.combination_budget, file, "combination_budget");
        rc.tokenizer.case_fold = flags.case_fold || file.value("case_fold", false);
        rc.tokenizer.include_punct_in_keys = flags.include_punct || file.value("include_punct_in_keys", false);
        pick(rc.tokenizer.redaction_marker, flags.redaction_marker, file, "redaction_marker");
        pick(rc.rewriter.temperature, flags.temperature, file, "temperature");
        pick(rc.rewriter.max_iterations, flags.max_iterations, file, "max_iterations");
        pick(rc.rewriter.max_retries_per_chunk, flags.max_retries, file, "max_retries_per_chunk");
        pick(rc.rewriter.chunk_max_sentences, std::optional<unsigned>{}, file, "chunk_max_sentences");
        pick(rc.rewriter.chunk_max_spans, std::optional<unsigned>{}, file, "chunk_max_spans");
        pick(rc.rewriter.max_in_flight, std::optional<unsigned>{}, file, "max_in_flight");
        if (file.contains("request_timeout_ms")) {
            rc.rewriter.request_timeout = std::chrono::milliseconds(file["request_timeout_ms"].get<long>());
        }
        std::string fallback = "redact";
        pick(fallback, flags.fallback, file, "fallback");
        if (fallback == "redact") {
            rc.rewriter.fallback_policy = FallbackPolicy::Redact;
        } else if (fallback == "keep") {
            rc.rewriter.fallback_policy = FallbackPolicy::Keep;
        } else {
            throw UsageError("--fallback must be 'redact' or 'keep'");
        }
        pick(rc.backend_url, flags.backend_url, file, "backend_url");
        pick(rc.model, flags.model, file, "model");
        pick(rc.api_key_env, std::optional<std::string>{}, file, "api_key_env");
        pick(rc.embed_url, flags.embed_url, file, "embed_url");
        pick(rc.threads, flags.threads, file, "threads");
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    }
    rc.tokenizer.validate();
    rc.extraction.validate();
    rc.rewriter.validate();
    return rc;
}

struct LoadedIndex {
    InvertedIndex index;
    std::string digest;
};

LoadedIndex open_index(const std::string& path, const TokenizerConfig& tokenizer) {
    const auto bytes = read_text_file(path);
    LoadedIndex loaded;
    loaded.index = deserialize_index(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    loaded.digest = to_hex(fingerprint(bytes));
    try {
        loaded.index.require_tokenizer(tokenizer.digest());
    } catch (const ConfigMismatch&) {
        throw ConfigMismatch("index '" + path +
                             "' was built with different tokenizer settings (check --case-fold and the config file)");
    }
    return loaded;
}

TokenizedDocument read_document(const std::string& path, const TokenizerConfig& tokenizer) {
    auto text = read_text_file(path);
    if (!is_valid_utf8(text)) throw IoError("cannot decode '" + path + "' as UTF-8");
    return tokenize(text, tokenizer);
}

class OutputFile {
public:
    OutputFile(const std::string& path, std::ostream& fallback) {
        if (path.empty()) {
            stream_ = &fallback;
        } else {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) throw IoError("cannot write '" + path + "'");
            stream_ = &file_;
        }
    }
    std::ostream& stream() { return *stream_; }

private:
    std::ofstream file_;
    std::ostream* stream_ = nullptr;
};

nlohmann::ordered_json provenance(const RunConfig& rc, const std::string& index_digest, const std::string& command) {
    nlohmann::ordered_json p;
    p["command"] = command;
    p["index_digest"] = index_digest;
    p["config"] = rc.to_json();
    return p;
}

void add_tokenizer_flags(CLI::App* cmd, Flags& f) {
    cmd->add_flag("--case-fold", f.case_fold, "Lower-case words in N-gram keys");
    cmd->add_flag("--punct-in-keys", f.include_punct, "Treat punctuation tokens as N-gram key units");
    cmd->add_option("--redaction-marker", f.redaction_marker, "Literal marking redacted spans");
    cmd->add_option("--config", f.config_path, "JSON config file (flags take precedence)");
}

void add_extraction_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--k", f.k, "Linkage threshold (default 2)");
    cmd->add_option("--n-max", f.n_max, "Longest N-gram considered (default 7)");
    cmd->add_option("--n-min", f.n_min, "Shortest N-gram considered (default 1)");
    cmd->add_option("--max-arity", f.max_arity, "Largest N-gram combination checked (default 3)");
    cmd->add_option("--combination-budget", f.combination_budget,
                    "Combinations evaluated per document and iteration (default 50000)");
}

void write_witnesses(std::ostream& out, const std::vector<Witness>& witnesses) {
    for (const auto& w : witnesses) {
        nlohmann::ordered_json record;
        record["keys"] = w.keys;
        record["surfaces"] = w.surfaces;
        record["doc_ids"] = w.doc_ids;
        out << record.dump() << '\n';
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Finds and rewrites the phrases of a de-identified text that a phrase search could link back "
                 "to its source document."};
    app.name("linkguard");
    app.require_subcommand(1);

    Flags flags;
    std::string corpus_path, index_path, doc_path, out_path, before_path, after_path;

    auto* index_cmd = app.add_subcommand("index", "Build the N-gram index of a document collection");
    index_cmd->add_option("--corpus", corpus_path, "Directory of .txt files or JSONL records")->required();
    index_cmd->add_option("--out", out_path, "Index file to write")->required();
    index_cmd->add_option("--n-max", flags.n_max, "Longest N-gram indexed (default 7)");
    index_cmd->add_option("--threads", flags.threads, "Worker threads (default: all cores)");
    add_tokenizer_flags(index_cmd, flags);

    auto* analyze_cmd = app.add_subcommand("analyze", "List the spans that need rephrasing");
    analyze_cmd->add_option("--index", index_path, "Index file built by the index command")->required();
    analyze_cmd->add_option("--doc", doc_path, "De-identified UTF-8 text file")->required();
    analyze_cmd->add_option("--out", out_path, "Plan file (default: stdout)");
    add_extraction_flags(analyze_cmd, flags);
    add_tokenizer_flags(analyze_cmd, flags);

    auto* protect_cmd = app.add_subcommand("protect", "Rewrite a document until no phrase search links it");
    protect_cmd->add_option("--index", index_path, "Index file built by the index command")->required();
    protect_cmd->add_option("--doc", doc_path, "De-identified UTF-8 text file")->required();
    protect_cmd->add_option("--out", out_path, "Protected text; .log.jsonl and .report.json are written beside it")
        ->required();
    protect_cmd->add_option("--backend-url", flags.backend_url, "mock:[table.json] or an OpenAI-compatible URL");
    protect_cmd->add_option("--model", flags.model, "Model name sent to the chat backend");
    protect_cmd->add_option("--temperature", flags.temperature, "Sampling temperature (default 1.2)");
    protect_cmd->add_option("--max-iterations", flags.max_iterations, "Plan/rewrite rounds (default 10)");
    protect_cmd->add_option("--max-retries", flags.max_retries, "Retries per chunk (default 3)");
    protect_cmd->add_option("--fallback", flags.fallback, "redact or keep (default redact)");
    protect_cmd->add_option("--embed-url", flags.embed_url, "Embedding endpoint for semantic similarity");
    add_extraction_flags(protect_cmd, flags);
    add_tokenizer_flags(protect_cmd, flags);

    auto* attack_cmd = app.add_subcommand("attack", "Run the phrase-search adversary against a document");
    attack_cmd->add_option("--index", index_path, "Index file built by the index command")->required();
    attack_cmd->add_option("--doc", doc_path, "De-identified UTF-8 text file")->required();
    attack_cmd->add_option("--out", out_path, "Witness listing (default: stdout)");
    add_extraction_flags(attack_cmd, flags);
    add_tokenizer_flags(attack_cmd, flags);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Residual linkage of a rewritten document");
    evaluate_cmd->add_option("--index", index_path, "Index file built by the index command")->required();
    evaluate_cmd->add_option("--before", before_path, "Text before rewriting")->required();
    evaluate_cmd->add_option("--after", after_path, "Text after rewriting")->required();
    evaluate_cmd->add_option("--out", out_path, "Report file (default: stdout)");
    evaluate_cmd->add_option("--embed-url", flags.embed_url, "Embedding endpoint for semantic similarity");
    add_extraction_flags(evaluate_cmd, flags);
    add_tokenizer_flags(evaluate_cmd, flags);

    std::vector<std::string> argv_storage{"linkguard"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "linkguard: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        const auto rc = resolve(flags);

        if (index_cmd->parsed()) {
            const auto corpus = ingest(corpus_path);
            std::vector<TokenizedDocument> docs;
            docs.reserve(corpus.documents.size());
            for (const auto& doc : corpus.documents) docs.push_back(tokenize(doc.text, rc.tokenizer));
            const auto index = build_index(docs, rc.extraction.n_max, rc.threads);
            save_index(index, out_path);
            write_manifest(out_path + ".manifest.jsonl", make_manifest(corpus));
            out << "doc_count " << index.meta().doc_count << '\n'
                << "term_count " << index.term_count() << '\n'
                << "n_max " << static_cast<unsigned>(index.meta().n_max) << '\n';
            return kExitOk;
        }

        const auto loaded = open_index(index_path, rc.tokenizer);

        if (analyze_cmd->parsed()) {
            const auto doc = read_document(doc_path, rc.tokenizer);
            const auto plan = plan_iteration(doc, loaded.index, rc.extraction);
            OutputFile file(out_path, out);
            write_plan(file.stream(), plan);
            if (plan.truncated) {
                err << "warning: combination budget exhausted after " << plan.combinations_evaluated
                    << " combinations; the plan may be incomplete\n";
            }
            return plan.empty() ? kExitOk : kExitLinkage;
        }

        if (attack_cmd->parsed()) {
            const auto doc = read_document(doc_path, rc.tokenizer);
            const auto witnesses = attack(loaded.index, doc, rc.extraction);
            OutputFile file(out_path, out);
            write_witnesses(file.stream(), witnesses);
            return witnesses.empty() ? kExitOk : kExitLinkage;
        }

        if (evaluate_cmd->parsed()) {
            const auto before = read_document(before_path, rc.tokenizer);
            const auto after = read_document(after_path, rc.tokenizer);
            std::unique_ptr<EmbeddingBackend> embedder;
            if (!rc.embed_url.empty()) embedder = make_embedding_backend(rc.embed_url, rc.rewriter.request_timeout);
            auto report = evaluate(before, after, loaded.index, rc.extraction, embedder.get());
            report.provenance = provenance(rc, loaded.digest, "evaluate");
            OutputFile file(out_path, out);
            file.stream() << report_to_json(report);
            return kExitOk;
        }

        if (protect_cmd->parsed()) {
            if (rc.backend_url.empty()) throw UsageError("protect needs --backend-url (or backend_url in --config)");
            const auto doc = read_document(doc_path, rc.tokenizer);
            auto backend = make_completion_backend(rc.backend_url, rc.model, rc.api_key_env,
                                                   rc.rewriter.request_timeout, rc.tokenizer.redaction_marker);
            std::unique_ptr<EmbeddingBackend> embedder;
            if (!rc.embed_url.empty()) embedder = make_embedding_backend(rc.embed_url, rc.rewriter.request_timeout);

            auto write_log = [&](const ProtectionResult& result) {
                std::ofstream log(out_path + ".log.jsonl", std::ios::binary | std::ios::trunc);
                if (!log) throw IoError("cannot write '" + out_path + ".log.jsonl'");
                write_edit_log(log, result);
            };
            ProtectionResult result;
            try {
                result = protect(doc, loaded.index, rc.extraction, rc.rewriter, *backend);
            } catch (const ProtectionAborted& e) {
                write_log(e.partial());
                err << "linkguard: backend failure: " << e.what() << '\n';
                return kExitBackend;
            }
            {
                OutputFile text(out_path, out);
                text.stream() << result.final_text;
            }
            write_log(result);
            const auto after = tokenize(result.final_text, rc.tokenizer);
            auto report = evaluate(doc, after, loaded.index, rc.extraction, embedder.get());
            report.provenance = provenance(rc, loaded.digest, "protect");
            report.provenance["backend"] = backend->identity();
            report.provenance["iterations_used"] = result.iterations_used;
            report.provenance["success"] = result.success;
            report.provenance["unresolved_spans"] = result.unresolved_spans.size();
            write_report(report, out_path + ".report.json");
            out << "iterations " << result.iterations_used << '\n'
                << "unresolved " << result.unresolved_spans.size() << '\n'
                << "rate_singles " << report.singles.rate << '\n'
                << "rate_combinations " << report.combinations.rate << '\n';
            return result.success ? kExitOk : kExitLinkage;
        }
    } catch (const BackendError& e) {
        err << "linkguard: backend failure: " << e.what() << '\n';
        return kExitBackend;
    } catch (const Error& e) {
        err << "linkguard: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "linkguard: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace linkguard::cli
