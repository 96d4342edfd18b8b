#include "linkguard/rewriter.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>
#include <unordered_set>

namespace linkguard {

void RewriterConfig::validate() const {
    if (temperature < 0) throw UsageError("temperature must be >= 0");
    if (chunk_max_sentences < 1 || chunk_max_spans < 1 || max_retries_per_chunk < 1 || max_iterations < 1 ||
        max_in_flight < 1) {
        throw UsageError("rewriter limits must all be >= 1");
    }
}

std::size_t ProtectionResult::edits() const {
    std::size_t n = 0;
    for (const auto& it : edit_log) n += it.chunks.size();
    return n;
}

std::vector<Chunk> chunk_plan(const TokenizedDocument& doc, const RewritePlan& plan, const RewriterConfig& config) {
    const auto sentences = sentence_spans(doc.text);
    std::map<std::uint32_t, std::vector<const FlaggedSpan*>> by_sentence;
    for (const auto& f : plan.spans) by_sentence[doc.key_token(f.span.tokens.begin).sentence_index].push_back(&f);

    std::vector<Chunk> chunks;
    struct Pending {
        std::uint32_t first = 0;
        std::uint32_t last = 0;
        std::vector<const FlaggedSpan*> spans;
    };
    auto emit = [&](std::uint32_t first, std::uint32_t last, const std::vector<const FlaggedSpan*>& spans) {
        Chunk chunk;
        chunk.first_sentence = first;
        chunk.last_sentence = last;
        chunk.doc_chars = {sentences[first].begin, sentences[last].end};
        chunk.text = doc.text.substr(chunk.doc_chars.begin, chunk.doc_chars.size());
        for (const auto* f : spans) {
            chunk.spans.push_back({f->span.surface, f->span.canonical, f->span.n,
                                   {f->span.chars.begin - chunk.doc_chars.begin,
                                    f->span.chars.end - chunk.doc_chars.begin}});
        }
        chunks.push_back(std::move(chunk));
    };

    std::optional<Pending> pending;
    auto flush = [&] {
        if (pending) emit(pending->first, pending->last, pending->spans);
        pending.reset();
    };
    for (const auto& [sentence, spans] : by_sentence) {
        if (pending && (sentence != pending->last + 1 || sentence - pending->first + 1 > config.chunk_max_sentences ||
                        pending->spans.size() + spans.size() > config.chunk_max_spans)) {
            flush();
        }
        if (spans.size() > config.chunk_max_spans) {
            for (std::size_t i = 0; i < spans.size(); i += config.chunk_max_spans) {
                const auto end = std::min(spans.size(), i + config.chunk_max_spans);
                emit(sentence, sentence, {spans.begin() + static_cast<std::ptrdiff_t>(i),
                                          spans.begin() + static_cast<std::ptrdiff_t>(end)});
            }
            continue;
        }
        if (!pending) pending = Pending{sentence, sentence, {}};
        pending->last = sentence;
        pending->spans.insert(pending->spans.end(), spans.begin(), spans.end());
    }
    flush();
    return chunks;
}

namespace {

// Canonical strings of every window of the given lengths.
std::unordered_set<std::string> window_keys(const TokenizedDocument& doc, const std::set<unsigned>& lengths) {
    std::unordered_set<std::string> keys;
    const std::size_t count = doc.key_tokens.size();
    for (unsigned n : lengths) {
        for (std::size_t start = 0; start + n <= count; ++start) {
            if (doc.key_segments[start] != doc.key_segments[start + n - 1]) continue;
            keys.insert(doc.canonical(start, start + n));
        }
    }
    return keys;
}

}  // namespace

std::vector<ChunkSpan> verify_chunk(std::string_view edited_text, const std::vector<ChunkSpan>& spans,
                                    const TokenizerConfig& config) {
    std::set<unsigned> lengths;
    for (const auto& s : spans) lengths.insert(s.n);
    const auto keys = window_keys(tokenize(edited_text, config), lengths);
    std::vector<ChunkSpan> present;
    for (const auto& s : spans) {
        if (keys.contains(s.canonical)) present.push_back(s);
    }
    return present;
}

std::string redact_spans(std::string_view text, const std::vector<ChunkSpan>& spans, const TokenizerConfig& config) {
    const auto doc = tokenize(text, config);
    std::unordered_set<std::string> targets;
    std::set<unsigned> lengths;
    for (const auto& s : spans) {
        targets.insert(s.canonical);
        lengths.insert(s.n);
    }
    std::vector<CharRange> ranges;
    const std::size_t count = doc.key_tokens.size();
    for (unsigned n : lengths) {
        for (std::size_t start = 0; start + n <= count; ++start) {
            if (doc.key_segments[start] != doc.key_segments[start + n - 1]) continue;
            if (targets.contains(doc.canonical(start, start + n))) ranges.push_back(doc.key_char_range(start, start + n));
        }
    }
    std::sort(ranges.begin(), ranges.end(), [](const CharRange& a, const CharRange& b) { return a.begin < b.begin; });
    std::vector<CharRange> merged;
    for (const auto& r : ranges) {
        if (!merged.empty() && r.begin <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, r.end);
        } else {
            merged.push_back(r);
        }
    }
    std::string out(text);
    for (auto it = merged.rbegin(); it != merged.rend(); ++it) out.replace(it->begin, it->size(), config.redaction_marker);
    return out;
}

namespace {

std::vector<std::string> surfaces_of(const std::vector<ChunkSpan>& spans) {
    std::vector<std::string> out;
    out.reserve(spans.size());
    for (const auto& s : spans) out.push_back(s.surface);
    return out;
}

struct ChunkOutcome {
    std::string text;
    ChunkLog log;
};

ChunkOutcome rewrite_chunk(const std::string& text, const std::vector<ChunkSpan>& spans, const Chunk& chunk,
                           const TokenizerConfig& tokenizer, const RewriterConfig& config,
                           CompletionBackend& backend) {
    ChunkOutcome outcome;
    auto& log = outcome.log;
    log.first_sentence = chunk.first_sentence;
    log.last_sentence = chunk.last_sentence;
    log.requested = surfaces_of(spans);

    const auto prompt = build_prompt(text, log.requested);
    std::optional<std::string> best;
    std::vector<ChunkSpan> remaining = spans;
    for (unsigned attempt = 0; attempt <= config.max_retries_per_chunk; ++attempt) {
        ++log.attempts;
        const auto completion = backend.complete(prompt, config.temperature);
        std::string edited;
        try {
            edited = parse_response(completion);
        } catch (const ParseFailure&) {
            ++log.parse_failures;
            continue;
        }
        auto still = verify_chunk(edited, spans, tokenizer);
        if (!best || still.size() < remaining.size()) {
            best = std::move(edited);
            remaining = std::move(still);
        }
        if (remaining.empty()) break;
    }
    outcome.text = best.value_or(text);

    std::set<std::string> left;
    for (const auto& s : remaining) left.insert(s.canonical);
    for (const auto& s : spans) {
        if (!left.contains(s.canonical)) log.removed.push_back(s.surface);
    }
    if (!remaining.empty()) {
        if (config.fallback_policy == FallbackPolicy::Redact) {
            outcome.text = redact_spans(outcome.text, remaining, tokenizer);
            log.redacted = surfaces_of(remaining);
        } else {
            log.kept = surfaces_of(remaining);
        }
    }
    return outcome;
}

struct GroupOutcome {
    CharRange doc_chars;
    std::string text;
    std::vector<ChunkLog> logs;
};

// Chunks sharing one sentence range are applied one after another, each to
// the previous one's output; spans already gone by then are skipped.
GroupOutcome rewrite_group(const std::vector<const Chunk*>& group, const TokenizerConfig& tokenizer,
                           const RewriterConfig& config, CompletionBackend& backend) {
    GroupOutcome out;
    out.doc_chars = group.front()->doc_chars;
    out.text = group.front()->text;
    for (std::size_t i = 0; i < group.size(); ++i) {
        const auto& chunk = *group[i];
        auto spans = i == 0 ? chunk.spans : verify_chunk(out.text, chunk.spans, tokenizer);
        if (spans.empty()) continue;
        auto outcome = rewrite_chunk(out.text, spans, chunk, tokenizer, config, backend);
        out.text = std::move(outcome.text);
        out.logs.push_back(std::move(outcome.log));
    }
    return out;
}

std::string rewrite_chunks(const TokenizedDocument& doc, const std::vector<Chunk>& chunks,
                           const RewriterConfig& config, CompletionBackend& backend, IterationLog& log) {
    std::vector<std::vector<const Chunk*>> groups;
    for (const auto& chunk : chunks) {
        if (!groups.empty() && groups.back().front()->doc_chars == chunk.doc_chars) {
            groups.back().push_back(&chunk);
        } else {
            groups.push_back({&chunk});
        }
    }

    std::vector<std::optional<GroupOutcome>> outcomes(groups.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t g = next++; g < groups.size(); g = next++) {
            try {
                outcomes[g] = rewrite_group(groups[g], doc.config, config, backend);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = groups.size();
            }
        }
    };
    const auto workers = std::min<std::size_t>(config.max_in_flight, groups.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    for (const auto& outcome : outcomes) {
        if (!outcome) continue;
        log.chunks.insert(log.chunks.end(), outcome->logs.begin(), outcome->logs.end());
    }
    if (failure) std::rethrow_exception(failure);

    std::string text = doc.text;
    for (auto it = outcomes.rbegin(); it != outcomes.rend(); ++it) {
        text.replace((*it)->doc_chars.begin, (*it)->doc_chars.size(), (*it)->text);
    }
    return text;
}

// Redacts the plan's spans in place, without a backend.
std::string redact_plan(const TokenizedDocument& doc, const RewritePlan& plan, IterationLog& log) {
    std::string text = doc.text;
    ChunkLog sweep;
    sweep.first_sentence = doc.sentence_count;
    sweep.last_sentence = 0;
    for (auto it = plan.spans.rbegin(); it != plan.spans.rend(); ++it) {
        const auto sentence = doc.key_token(it->span.tokens.begin).sentence_index;
        sweep.first_sentence = std::min(sweep.first_sentence, sentence);
        sweep.last_sentence = std::max(sweep.last_sentence, sentence);
        text.replace(it->span.chars.begin, it->span.chars.size(), doc.config.redaction_marker);
    }
    for (const auto& f : plan.spans) {
        sweep.requested.push_back(f.span.surface);
        sweep.redacted.push_back(f.span.surface);
    }
    log.chunks.push_back(std::move(sweep));
    return text;
}

}  // namespace

ProtectionResult protect(const TokenizedDocument& doc, const InvertedIndex& index,
                         const ExtractionConfig& extraction, const RewriterConfig& config,
                         CompletionBackend& backend) {
    config.validate();
    extraction.validate();
    index.require_tokenizer(doc.config.digest());

    ProtectionResult result;
    TokenizedDocument current = doc;
    for (unsigned iteration = 1; iteration <= config.max_iterations; ++iteration) {
        const auto plan = plan_iteration(current, index, extraction);
        result.iterations_used = iteration;
        if (plan.empty()) {
            result.success = true;
            result.final_text = current.text;
            return result;
        }
        IterationLog log;
        log.iteration = iteration;
        log.planned_spans = plan.spans.size();
        log.combinations_truncated = plan.truncated;
        std::string text;
        try {
            text = rewrite_chunks(current, chunk_plan(current, plan, config), config, backend, log);
        } catch (const BackendError& e) {
            result.edit_log.push_back(std::move(log));
            result.final_text = current.text;
            throw ProtectionAborted(e.what(), std::move(result));
        }
        result.edit_log.push_back(std::move(log));
        current = tokenize(text, doc.config);
    }

    auto plan = plan_iteration(current, index, extraction);
    if (config.fallback_policy == FallbackPolicy::Redact) {
        // Every sweep turns at least one key token into a marker, so this ends.
        while (!plan.empty()) {
            IterationLog log;
            log.planned_spans = plan.spans.size();
            log.combinations_truncated = plan.truncated;
            current = tokenize(redact_plan(current, plan, log), doc.config);
            result.edit_log.push_back(std::move(log));
            plan = plan_iteration(current, index, extraction);
        }
    }
    result.success = plan.empty();
    result.unresolved_spans = std::move(plan.spans);
    result.final_text = current.text;
    return result;
}

void write_edit_log(std::ostream& out, const ProtectionResult& result) {
    for (const auto& iteration : result.edit_log) {
        nlohmann::ordered_json record;
        record["iteration"] = iteration.iteration;
        record["planned_spans"] = iteration.planned_spans;
        record["combinations_truncated"] = iteration.combinations_truncated;
        auto chunks = nlohmann::ordered_json::array();
        for (const auto& c : iteration.chunks) {
            nlohmann::ordered_json chunk;
            chunk["sentences"] = {c.first_sentence, c.last_sentence};
            chunk["requested"] = c.requested;
            chunk["removed"] = c.removed;
            chunk["redacted"] = c.redacted;
            chunk["kept"] = c.kept;
            chunk["attempts"] = c.attempts;
            chunk["parse_failures"] = c.parse_failures;
            chunks.push_back(std::move(chunk));
        }
        record["chunks"] = std::move(chunks);
        out << record.dump() << '\n';
    }
}

}  // namespace linkguard
