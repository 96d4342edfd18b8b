#pragma once

#include "linkguard/corpus.hpp"
#include "linkguard/extraction.hpp"
#include "linkguard/ngram_index.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace linkguard {

/// Maps text to a fixed-dimension vector. Same text, same vector within one
/// session. Must be callable from several threads.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<double> embed(const std::string& text) = 0;
    virtual std::string identity() const = 0;
};

/// A successful phrase search: the searched N-grams and the fewer-than-k
/// documents containing all of them.
struct Witness {
    std::vector<std::string> keys;      // canonical N-gram strings
    std::vector<std::string> surfaces;  // as they appear in the searched text
    std::vector<DocId> doc_ids;

    bool operator==(const Witness&) const = default;
};

/// Simulates the phrase-search adversary. Single N-grams with 1 <= df < k
/// are reported once per distinct key; for arity >= 2, the combinations the
/// extraction step would flag are reported with their matched documents.
std::vector<Witness> attack(const InvertedIndex& index, const TokenizedDocument& doc, const ExtractionConfig& config);

struct RateTriple {
    std::size_t before = 0;
    std::size_t after = 0;
    double rate = 0.0;  // after / before, or 0 when nothing was linkable

    bool operator==(const RateTriple&) const = default;
};

/// Share of the linking items of `before` (distinct keys for arity 1; also
/// distinct key sets of rare combinations when arity > 1) whose every key
/// still occurs as a window of `after`.
RateTriple residual_rate(const TokenizedDocument& before, const TokenizedDocument& after, const InvertedIndex& index,
                         const ExtractionConfig& config, unsigned arity);

/// Throws UsageError on dimension mismatch or a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct LinkageReport {
    std::uint32_t k = 2;
    unsigned max_arity = 3;
    RateTriple singles;
    RateTriple combinations;  // every arity up to max_arity, singles included
    std::vector<Witness> witnesses;  // residual linkages in the rewritten text
    std::optional<double> semantic_similarity;
    std::string embedding_endpoint;
    std::size_t embedding_dimension = 0;
    nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

    bool operator==(const LinkageReport&) const = default;
};

inline constexpr std::size_t kDefaultWitnessLimit = 10;

LinkageReport evaluate(const TokenizedDocument& before, const TokenizedDocument& after, const InvertedIndex& index,
                       const ExtractionConfig& config, EmbeddingBackend* embedder = nullptr,
                       std::size_t witness_limit = kDefaultWitnessLimit);

/// Fixed key order; rates and similarity carry 6 fractional digits.
std::string report_to_json(const LinkageReport& report);
LinkageReport report_from_json(const std::string& json);

void write_report(const LinkageReport& report, const std::filesystem::path& path);
LinkageReport read_report(const std::filesystem::path& path);

}  // namespace linkguard
