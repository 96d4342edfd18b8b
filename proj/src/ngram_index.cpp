#include "linkguard/ngram_index.hpp"

#include "linkguard/error.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <thread>

namespace linkguard {

namespace {

constexpr char kMagic[4] = {'N', 'G', 'I', 'X'};
constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 4 + 4 + 16 + 8;
constexpr std::size_t kTermRecordSize = 16 + 1 + 4 + 8 + 4;

// Advances `cursor` to the first element >= target using exponential search.
std::size_t gallop(std::span<const DocId> list, std::size_t cursor, DocId target) {
    if (cursor >= list.size() || list[cursor] >= target) return cursor;
    std::size_t step = 1;
    std::size_t lo = cursor;
    while (cursor + step < list.size() && list[cursor + step] < target) {
        lo = cursor + step;
        step <<= 1;
    }
    const std::size_t hi = std::min(list.size(), cursor + step + 1);
    return static_cast<std::size_t>(std::lower_bound(list.begin() + lo, list.begin() + hi, target) - list.begin());
}

template <typename Sink>
void intersect_into(std::span<const std::span<const DocId>> lists, Sink&& sink) {
    if (lists.empty()) return;
    std::vector<std::span<const DocId>> ordered(lists.begin(), lists.end());
    std::sort(ordered.begin(), ordered.end(), [](auto a, auto b) { return a.size() < b.size(); });
    if (ordered.front().empty()) return;
    std::vector<std::size_t> cursors(ordered.size(), 0);
    for (DocId candidate : ordered.front()) {
        bool everywhere = true;
        for (std::size_t l = 1; l < ordered.size(); ++l) {
            cursors[l] = gallop(ordered[l], cursors[l], candidate);
            if (cursors[l] == ordered[l].size()) return;
            if (ordered[l][cursors[l]] != candidate) {
                everywhere = false;
                break;
            }
        }
        if (everywhere && !sink(candidate)) return;
    }
}

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    template <typename T>
    void le(T value) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
    void varint(std::uint32_t value) {
        while (value >= 0x80) {
            out_.push_back(static_cast<std::uint8_t>(value | 0x80));
            value >>= 7;
        }
        out_.push_back(static_cast<std::uint8_t>(value));
    }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

    template <typename T>
    T le() {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(data_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return value;
    }
    void bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw IndexFormatError(IndexFormatError::Kind::Truncated, "index file is truncated");
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_;
};

}  // namespace

NgramKey make_key(std::string_view canonical, unsigned n) {
    return {static_cast<std::uint8_t>(n), fingerprint(canonical)};
}

std::uint32_t intersection_count(std::span<const std::span<const DocId>> lists, std::uint32_t limit) {
    std::uint32_t count = 0;
    if (limit == 0) return 0;
    intersect_into(lists, [&](DocId) { return ++count < limit; });
    return count;
}

std::vector<DocId> intersect_postings(std::span<const std::span<const DocId>> lists) {
    std::vector<DocId> out;
    intersect_into(lists, [&](DocId id) {
        out.push_back(id);
        return true;
    });
    return out;
}

const InvertedIndex::Term* InvertedIndex::find(const NgramKey& key) const {
    if (key.n == 0 || key.n > meta_.n_max) {
        throw UsageError("query N-gram length " + std::to_string(key.n) + " is outside the index range 1.." +
                         std::to_string(meta_.n_max));
    }
    auto it = std::lower_bound(terms_.begin(), terms_.end(), key.fp,
                               [](const Term& t, const Fingerprint& fp) { return t.fp < fp; });
    if (it == terms_.end() || it->fp != key.fp) return nullptr;
    return &*it;
}

std::uint32_t InvertedIndex::doc_frequency(const NgramKey& key) const {
    const Term* term = find(key);
    return term ? term->df : 0;
}

std::span<const DocId> InvertedIndex::postings(const NgramKey& key) const {
    const Term* term = find(key);
    return term ? postings_of(*term) : std::span<const DocId>{};
}

std::uint32_t InvertedIndex::intersect_df(std::span<const NgramKey> keys, std::uint32_t limit) const {
    if (keys.empty()) throw UsageError("intersect_df needs at least one key");
    if (limit < 1) throw UsageError("intersect_df limit must be >= 1");
    std::vector<std::span<const DocId>> lists;
    lists.reserve(keys.size());
    for (const auto& key : keys) {
        auto list = postings(key);
        if (list.empty()) return 0;
        lists.push_back(list);
    }
    return intersection_count(lists, limit);
}

void InvertedIndex::require_tokenizer(const Fingerprint& digest) const {
    if (digest != meta_.tokenizer_digest) {
        throw ConfigMismatch("document tokenizer configuration (" + to_hex(digest) +
                             ") differs from the index's (" + to_hex(meta_.tokenizer_digest) + ")");
    }
}

std::vector<NgramKey> document_keys(const TokenizedDocument& doc, unsigned n_max) {
    std::vector<NgramKey> keys;
    const std::size_t count = doc.key_tokens.size();
    for (std::size_t start = 0; start < count; ++start) {
        std::string canonical;
        for (std::size_t n = 1; n <= n_max && start + n <= count; ++n) {
            const std::size_t last = start + n - 1;
            if (doc.key_segments[last] != doc.key_segments[start]) break;
            if (n > 1) canonical.push_back(' ');
            canonical += doc.key_token(last).key;
            keys.push_back(make_key(canonical, static_cast<unsigned>(n)));
        }
    }
    std::sort(keys.begin(), keys.end(), [](const NgramKey& a, const NgramKey& b) { return a.fp < b.fp; });
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

IndexBuilder::IndexBuilder(unsigned n_max, const TokenizerConfig& config)
    : n_max_(n_max), digest_(config.digest()) {
    if (n_max < 1 || n_max > 255) throw UsageError("n_max must be in [1, 255]");
}

void IndexBuilder::add(DocId doc_id, const TokenizedDocument& doc) {
    if (doc.config.digest() != digest_) {
        throw ConfigMismatch("document " + std::to_string(doc_id) + " was tokenized under a different configuration");
    }
    seen_docs_.push_back(doc_id);
    for (const auto& key : document_keys(doc, n_max_)) entries_.push_back({key.fp, key.n, doc_id});
}

void IndexBuilder::merge(IndexBuilder&& other) {
    if (other.n_max_ != n_max_ || other.digest_ != digest_) {
        throw ConfigMismatch("cannot merge index builders with different settings");
    }
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
    seen_docs_.insert(seen_docs_.end(), other.seen_docs_.begin(), other.seen_docs_.end());
    other.entries_.clear();
    other.seen_docs_.clear();
}

InvertedIndex IndexBuilder::finish() && {
    std::sort(seen_docs_.begin(), seen_docs_.end());
    if (std::adjacent_find(seen_docs_.begin(), seen_docs_.end()) != seen_docs_.end()) {
        throw UsageError("a document id was added to the index twice");
    }
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
        if (a.fp != b.fp) return a.fp < b.fp;
        return a.doc < b.doc;
    });

    InvertedIndex index;
    index.meta_.n_max = static_cast<std::uint8_t>(n_max_);
    index.meta_.doc_count = std::max(doc_count_, seen_docs_.empty() ? 0 : seen_docs_.back() + 1);
    index.meta_.tokenizer_digest = digest_;
    index.postings_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size();) {
        InvertedIndex::Term term{entries_[i].fp, entries_[i].n, 0, index.postings_.size()};
        for (; i < entries_.size() && entries_[i].fp == term.fp; ++i) index.postings_.push_back(entries_[i].doc);
        term.df = static_cast<std::uint32_t>(index.postings_.size() - term.offset);
        index.terms_.push_back(term);
    }
    entries_.clear();
    entries_.shrink_to_fit();
    return index;
}

InvertedIndex build_index(std::span<const TokenizedDocument> docs, unsigned n_max, unsigned threads) {
    TokenizerConfig config = docs.empty() ? TokenizerConfig{} : docs.front().config;
    const auto digest = config.digest();
    for (const auto& doc : docs) {
        if (doc.config.digest() != digest) throw ConfigMismatch("corpus mixes tokenizer configurations");
    }
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, docs.size())));

    std::vector<IndexBuilder> partials(threads, IndexBuilder(n_max, config));
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t d = w; d < docs.size(); d += threads) partials[w].add(static_cast<DocId>(d), docs[d]);
        });
    }
    workers.clear();

    IndexBuilder merged(n_max, config);
    for (auto& partial : partials) merged.merge(std::move(partial));
    merged.set_doc_count(static_cast<std::uint32_t>(docs.size()));
    return std::move(merged).finish();
}

std::vector<std::uint8_t> serialize_index(const InvertedIndex& index) {
    std::vector<std::uint8_t> postings;
    std::vector<std::pair<std::uint64_t, std::uint32_t>> extents;
    extents.reserve(index.term_count());
    {
        Writer w(postings);
        for (const auto& term : index.terms()) {
            const std::uint64_t begin = postings.size();
            DocId prev = 0;
            bool first = true;
            for (DocId id : index.postings_of(term)) {
                w.varint(first ? id : id - prev);
                prev = id;
                first = false;
            }
            extents.emplace_back(begin, static_cast<std::uint32_t>(postings.size() - begin));
        }
    }

    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + kTermRecordSize * index.term_count() + postings.size());
    Writer w(out);
    const auto& meta = index.meta();
    w.bytes(kMagic, 4);
    w.le<std::uint32_t>(meta.format_version);
    w.le<std::uint8_t>(meta.n_max);
    w.le<std::uint32_t>(meta.doc_count);
    w.le<std::uint32_t>(meta.hash_algorithm);
    w.bytes(meta.tokenizer_digest.bytes.data(), 16);
    w.le<std::uint64_t>(index.term_count());
    std::size_t t = 0;
    for (const auto& term : index.terms()) {
        w.bytes(term.fp.bytes.data(), 16);
        w.le<std::uint8_t>(term.n);
        w.le<std::uint32_t>(term.df);
        w.le<std::uint64_t>(extents[t].first);
        w.le<std::uint32_t>(extents[t].second);
        ++t;
    }
    out.insert(out.end(), postings.begin(), postings.end());
    return out;
}

InvertedIndex deserialize_index(std::span<const std::uint8_t> bytes,
                                const std::optional<Fingerprint>& expected_tokenizer) {
    using Kind = IndexFormatError::Kind;
    if (bytes.size() < 4) throw IndexFormatError(Kind::Truncated, "index file is truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IndexFormatError(Kind::BadMagic, "not an index file (bad magic)");
    Reader r(bytes, 4);
    InvertedIndex index;
    auto& meta = index.meta_;
    meta.format_version = r.le<std::uint32_t>();
    if (meta.format_version != kIndexFormatVersion) {
        throw IndexFormatError(Kind::VersionMismatch, "unsupported index format version " +
                                                          std::to_string(meta.format_version));
    }
    meta.n_max = r.le<std::uint8_t>();
    meta.doc_count = r.le<std::uint32_t>();
    meta.hash_algorithm = r.le<std::uint32_t>();
    r.bytes(meta.tokenizer_digest.bytes.data(), 16);
    const auto term_count = r.le<std::uint64_t>();
    if (meta.hash_algorithm != kHashBlake2b128) {
        throw IndexFormatError(Kind::Corrupt, "unknown hash algorithm id " + std::to_string(meta.hash_algorithm));
    }
    if (expected_tokenizer && *expected_tokenizer != meta.tokenizer_digest) {
        throw IndexFormatError(Kind::DigestMismatch, "index tokenizer digest " + to_hex(meta.tokenizer_digest) +
                                                         " does not match expected " + to_hex(*expected_tokenizer));
    }
    if (term_count > (bytes.size() - kHeaderSize) / kTermRecordSize) {
        throw IndexFormatError(Kind::Truncated, "index term table is truncated");
    }
    const std::size_t region = kHeaderSize + term_count * kTermRecordSize;
    const auto postings_region = bytes.subspan(region);

    index.terms_.reserve(term_count);
    for (std::uint64_t t = 0; t < term_count; ++t) {
        InvertedIndex::Term term;
        r.bytes(term.fp.bytes.data(), 16);
        term.n = r.le<std::uint8_t>();
        term.df = r.le<std::uint32_t>();
        const auto offset = r.le<std::uint64_t>();
        const auto length = r.le<std::uint32_t>();
        if (term.n == 0 || term.n > meta.n_max) throw IndexFormatError(Kind::Corrupt, "term length exceeds n_max");
        if (!index.terms_.empty() && !(index.terms_.back().fp < term.fp)) {
            throw IndexFormatError(Kind::Corrupt, "term table is not sorted by fingerprint");
        }
        if (offset > postings_region.size() || length > postings_region.size() - offset) {
            throw IndexFormatError(Kind::Truncated, "postings region is truncated");
        }
        term.offset = index.postings_.size();
        auto encoded = postings_region.subspan(offset, length);
        std::size_t pos = 0;
        DocId prev = 0;
        for (std::uint32_t i = 0; i < term.df; ++i) {
            std::uint64_t value = 0;
            unsigned shift = 0;
            while (true) {
                if (pos >= encoded.size() || shift > 28) throw IndexFormatError(Kind::Corrupt, "bad posting varint");
                const auto byte = encoded[pos++];
                value |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
                if (!(byte & 0x80)) break;
                shift += 7;
            }
            if (i > 0 && value == 0) throw IndexFormatError(Kind::Corrupt, "posting gap of zero");
            const std::uint64_t id = (i == 0) ? value : prev + value;
            if (id >= meta.doc_count) throw IndexFormatError(Kind::Corrupt, "posting beyond doc_count");
            prev = static_cast<DocId>(id);
            index.postings_.push_back(prev);
        }
        if (pos != encoded.size()) throw IndexFormatError(Kind::Corrupt, "posting list length disagrees with df");
        index.terms_.push_back(term);
    }
    return index;
}

void save_index(const InvertedIndex& index, const std::filesystem::path& path) {
    const auto bytes = serialize_index(index);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write '" + path.string() + "'");
}

InvertedIndex load_index(const std::filesystem::path& path, const std::optional<Fingerprint>& expected_tokenizer) {
    const auto data = read_text_file(path);
    return deserialize_index(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()),
                             expected_tokenizer);
}

Fingerprint index_digest(const InvertedIndex& index) {
    const auto bytes = serialize_index(index);
    return fingerprint(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace linkguard
