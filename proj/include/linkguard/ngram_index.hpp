#pragma once

#include "linkguard/corpus.hpp"
#include "linkguard/digest.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace linkguard {

inline constexpr unsigned kDefaultNMax = 7;
inline constexpr std::uint32_t kIndexFormatVersion = 1;

/// Identity of an N-gram: its word count and the fingerprint of its
/// canonical string (key forms joined by single spaces).
struct NgramKey {
    std::uint8_t n = 0;
    Fingerprint fp;

    bool operator==(const NgramKey&) const = default;
};

NgramKey make_key(std::string_view canonical, unsigned n);

struct IndexMeta {
    std::uint32_t format_version = kIndexFormatVersion;
    std::uint8_t n_max = kDefaultNMax;
    std::uint32_t doc_count = 0;
    std::uint32_t hash_algorithm = kHashBlake2b128;
    Fingerprint tokenizer_digest;
};

/// Number of documents common to all `lists`, capped at `limit`. Lists must
/// be strictly increasing. Stops as soon as `limit` matches are found.
std::uint32_t intersection_count(std::span<const std::span<const DocId>> lists, std::uint32_t limit);

/// Full intersection of sorted posting lists.
std::vector<DocId> intersect_postings(std::span<const std::span<const DocId>> lists);

/// Immutable document-level inverted index over all N-grams with
/// 1 <= n <= n_max. Safe to share between threads once built or loaded.
class InvertedIndex {
public:
    struct Term {
        Fingerprint fp;
        std::uint8_t n = 0;
        std::uint32_t df = 0;
        std::uint64_t offset = 0;  // into the flat postings array
    };

    InvertedIndex() = default;

    const IndexMeta& meta() const { return meta_; }
    std::size_t term_count() const { return terms_.size(); }
    std::span<const Term> terms() const { return terms_; }
    std::span<const DocId> postings_of(const Term& term) const {
        return std::span<const DocId>(postings_).subspan(term.offset, term.df);
    }

    /// Length of the key's posting list; 0 when absent. Throws UsageError
    /// when key.n exceeds n_max.
    std::uint32_t doc_frequency(const NgramKey& key) const;

    /// Stored posting list; empty when absent.
    std::span<const DocId> postings(const NgramKey& key) const;

    /// min(|intersection of the keys' postings|, limit).
    std::uint32_t intersect_df(std::span<const NgramKey> keys, std::uint32_t limit) const;

    /// Throws ConfigMismatch unless `digest` is the tokenizer digest the index
    /// was built with.
    void require_tokenizer(const Fingerprint& digest) const;

private:
    friend class IndexBuilder;
    friend InvertedIndex deserialize_index(std::span<const std::uint8_t>, const std::optional<Fingerprint>&);

    const Term* find(const NgramKey& key) const;

    IndexMeta meta_;
    std::vector<Term> terms_;  // sorted by fingerprint
    std::vector<DocId> postings_;
};

/// Accumulates per-document N-gram sets; documents may be added in any
/// order and the finished index does not depend on it.
class IndexBuilder {
public:
    IndexBuilder(unsigned n_max, const TokenizerConfig& config);

    void add(DocId doc_id, const TokenizedDocument& doc);

    /// Merges entries collected by another builder with the same settings.
    void merge(IndexBuilder&& other);

    /// Lower bound for the index's doc_count, for collections whose last
    /// documents contribute no keys.
    void set_doc_count(std::uint32_t doc_count) { doc_count_ = doc_count; }

    InvertedIndex finish() &&;

private:
    struct Entry {
        Fingerprint fp;
        std::uint8_t n;
        DocId doc;
    };

    unsigned n_max_;
    Fingerprint digest_;
    std::vector<Entry> entries_;
    std::vector<DocId> seen_docs_;
    std::uint32_t doc_count_ = 0;
};

/// Distinct N-gram keys of a document (windows inside one key segment).
std::vector<NgramKey> document_keys(const TokenizedDocument& doc, unsigned n_max);

/// Builds the index over `docs`, where a document's position is its doc id.
/// `threads == 0` picks the hardware concurrency.
InvertedIndex build_index(std::span<const TokenizedDocument> docs, unsigned n_max = kDefaultNMax,
                          unsigned threads = 0);

std::vector<std::uint8_t> serialize_index(const InvertedIndex& index);
InvertedIndex deserialize_index(std::span<const std::uint8_t> bytes,
                                const std::optional<Fingerprint>& expected_tokenizer = std::nullopt);

void save_index(const InvertedIndex& index, const std::filesystem::path& path);
InvertedIndex load_index(const std::filesystem::path& path,
                         const std::optional<Fingerprint>& expected_tokenizer = std::nullopt);

/// Fingerprint of the serialized form.
Fingerprint index_digest(const InvertedIndex& index);

}  // namespace linkguard
