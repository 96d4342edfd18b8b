#pragma once

#include "linkguard/corpus.hpp"
#include "linkguard/ngram_index.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace linkguard {

struct ExtractionConfig {
    std::uint32_t k = 2;
    unsigned n_max = kDefaultNMax;
    unsigned n_min = 1;
    unsigned max_arity = 3;
    std::size_t combination_budget = 50'000;

    void validate() const;
};

/// Half-open interval over a document's key tokens.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool overlaps(const TokenRange& other) const { return begin < other.end && other.begin < end; }
    bool operator==(const TokenRange&) const = default;
};

struct SpanCandidate {
    TokenRange tokens;
    CharRange chars;
    unsigned n = 0;
    NgramKey key;
    std::string canonical;  // key string the fingerprint was taken of
    std::string surface;    // source bytes covered by `chars`
};

enum class Provenance : std::uint8_t { Single, Combination };

struct FlaggedSpan {
    SpanCandidate span;
    Provenance provenance = Provenance::Single;
    std::uint32_t df = 0;                // Single: document frequency
    std::vector<SpanCandidate> witness;  // Combination: every member of the rare combination
    std::uint32_t intersection = 0;      // Combination: |intersection|, always < k
};

struct CombinationScan {
    std::vector<FlaggedSpan> flagged;
    std::size_t evaluated = 0;
    bool truncated = false;
};

/// Spans flagged for rewriting in one iteration, sorted by position and
/// pairwise disjoint.
struct RewritePlan {
    std::vector<FlaggedSpan> spans;
    std::size_t combinations_evaluated = 0;
    bool truncated = false;  // combination budget ran out

    bool empty() const { return spans.empty(); }
};

/// Windows of n_min..n_max key tokens inside one segment, ordered by
/// (sentence, start, n).
std::vector<SpanCandidate> enumerate_candidates(const TokenizedDocument& doc, const ExtractionConfig& config);

/// Greedy non-overlapping selection: shortest first, then leftmost. Returns
/// the positions (into `candidates`) of the kept spans, in document order.
std::vector<std::size_t> select_minimal_indices(const std::vector<SpanCandidate>& candidates);

std::vector<SpanCandidate> select_minimal(const std::vector<SpanCandidate>& candidates);

/// Candidates whose document frequency d satisfies 1 <= d < k.
std::vector<FlaggedSpan> flag_rare_singles(const std::vector<SpanCandidate>& candidates, const InvertedIndex& index,
                                           const ExtractionConfig& config);

/// Rare combinations of arity 2..max_arity among members of the minimal set
/// with df >= k. Combinations are visited in ascending arity, then
/// lexicographic member order; a combination containing an already-flagged
/// member is skipped. For each combination whose intersection size r
/// satisfies 1 <= r < k the shortest member (leftmost on ties) is flagged.
CombinationScan flag_rare_combinations(const std::vector<SpanCandidate>& minimal_set, const InvertedIndex& index,
                                       const ExtractionConfig& config);

/// One extraction pass over a de-identified document.
RewritePlan plan_iteration(const TokenizedDocument& doc, const InvertedIndex& index, const ExtractionConfig& config);

/// Line-delimited JSON, one record per span.
void write_plan(std::ostream& out, const RewritePlan& plan);

struct PlanRecord {
    CharRange chars;
    std::string surface;
    unsigned n = 0;
    Provenance provenance = Provenance::Single;
    std::uint32_t df = 0;
    std::vector<std::string> witness;
    std::uint32_t intersection = 0;
};

std::vector<PlanRecord> read_plan(std::istream& in);

}  // namespace linkguard
