#pragma once

#include "linkguard/corpus.hpp"
#include "linkguard/error.hpp"
#include "linkguard/extraction.hpp"
#include "linkguard/ngram_index.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace linkguard {

enum class FallbackPolicy : std::uint8_t { Redact, Keep };

struct RewriterConfig {
    double temperature = 1.2;
    unsigned chunk_max_sentences = 5;
    unsigned chunk_max_spans = 8;
    unsigned max_retries_per_chunk = 3;
    unsigned max_iterations = 10;
    FallbackPolicy fallback_policy = FallbackPolicy::Redact;
    std::chrono::milliseconds request_timeout{60'000};
    unsigned max_in_flight = 4;

    void validate() const;
};

/// A span to rewrite, located relative to its chunk's text.
struct ChunkSpan {
    std::string surface;
    std::string canonical;
    unsigned n = 0;
    CharRange chars;
};

/// A few consecutive sentences holding at least one planned span.
struct Chunk {
    std::uint32_t first_sentence = 0;
    std::uint32_t last_sentence = 0;  // inclusive
    CharRange doc_chars;
    std::string text;
    std::vector<ChunkSpan> spans;
};

/// Text completion service. Implementations must be callable from several
/// threads at once.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const std::string& prompt, double temperature) = 0;
    virtual std::string identity() const = 0;
};

/// Groups the sentences that carry plan spans into chunks, splitting when a
/// chunk would exceed either cap. A sentence with more spans than
/// `chunk_max_spans` yields several chunks over the same sentence range.
std::vector<Chunk> chunk_plan(const TokenizedDocument& doc, const RewritePlan& plan, const RewriterConfig& config);

/// Fills the rewriting prompt with the chunk text and its spans.
std::string build_prompt(const Chunk& chunk);
std::string build_prompt(std::string_view text, const std::vector<std::string>& span_surfaces);

/// The TEXT and SPANS_LIST slots recovered from a prompt made by build_prompt.
struct PromptSlots {
    std::string text;
    std::vector<std::string> spans;
};
std::optional<PromptSlots> extract_prompt_slots(std::string_view prompt);

/// Value of `edited_text` in the last top-level JSON object of the
/// completion that has such a string field. Throws ParseFailure.
std::string parse_response(std::string_view completion);

/// Spans whose canonical key still occurs as a key-token window of
/// `edited_text`.
std::vector<ChunkSpan> verify_chunk(std::string_view edited_text, const std::vector<ChunkSpan>& spans,
                                    const TokenizerConfig& config);

/// Replaces every window of `text` matching one of the spans' keys with the
/// redaction marker.
std::string redact_spans(std::string_view text, const std::vector<ChunkSpan>& spans, const TokenizerConfig& config);

struct ChunkLog {
    std::uint32_t first_sentence = 0;
    std::uint32_t last_sentence = 0;
    std::vector<std::string> requested;
    std::vector<std::string> removed;
    std::vector<std::string> redacted;  // fallback REDACT
    std::vector<std::string> kept;      // fallback KEEP
    unsigned attempts = 0;
    unsigned parse_failures = 0;
};

struct IterationLog {
    unsigned iteration = 0;  // 0 marks a backend-free redaction sweep
    std::size_t planned_spans = 0;
    bool combinations_truncated = false;
    std::vector<ChunkLog> chunks;
};

struct ProtectionResult {
    std::string final_text;
    unsigned iterations_used = 0;
    bool success = false;  // the final re-check found an empty plan
    std::vector<FlaggedSpan> unresolved_spans;
    std::vector<IterationLog> edit_log;

    std::size_t edits() const;
};

/// Thrown when the backend keeps failing at the transport level; carries the
/// work done so far.
class ProtectionAborted : public BackendError {
public:
    ProtectionAborted(const std::string& what, ProtectionResult partial)
        : BackendError(what), partial_(std::move(partial)) {}

    const ProtectionResult& partial() const { return partial_; }

private:
    ProtectionResult partial_;
};

/// Plan, rewrite and re-check until the plan is empty or max_iterations is
/// reached. With FallbackPolicy::Redact, spans left over after the last
/// iteration are redacted without consulting the backend.
ProtectionResult protect(const TokenizedDocument& doc, const InvertedIndex& index,
                         const ExtractionConfig& extraction, const RewriterConfig& config,
                         CompletionBackend& backend);

void write_edit_log(std::ostream& out, const ProtectionResult& result);

}  // namespace linkguard
