#pragma once

#include "linkguard/digest.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace linkguard {

using DocId = std::uint32_t;

/// One document of a collection. `doc_id` is dense and follows the
/// lexicographic order of `external_id`.
struct RawDocument {
    DocId doc_id = 0;
    std::string external_id;
    std::string text;
};

struct TokenizerConfig {
    bool case_fold = false;
    std::string redaction_marker = "[REDACTED]";
    bool include_punct_in_keys = false;

    /// Throws UsageError on an empty or whitespace-only marker.
    void validate() const;

    /// Identity of the configuration; indexes record it and reject queries
    /// tokenized under a different one.
    Fingerprint digest() const;
};

enum class TokenKind : std::uint8_t { Word, Punct, Redaction };

struct Token {
    std::string surface;  // bytes of the source text
    std::string key;      // normalised form used in N-gram keys
    TokenKind kind = TokenKind::Word;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    std::uint32_t sentence_index = 0;
};

struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const CharRange&) const = default;
};

/// Tokenized text plus the view of it that N-gram windows operate on.
///
/// `key_tokens` lists, in order, the indices of tokens that participate in
/// N-gram keys (WORD tokens, plus PUNCT when the config asks for it).
/// `key_segments[i]` identifies the maximal run that key token `i` belongs
/// to: runs break at sentence boundaries and at REDACTION tokens, so a window
/// is valid iff all its key tokens share one segment id.
struct TokenizedDocument {
    std::string text;
    TokenizerConfig config;
    std::vector<Token> tokens;
    std::uint32_t sentence_count = 0;
    std::vector<std::size_t> key_tokens;
    std::vector<std::uint32_t> key_segments;

    const Token& key_token(std::size_t i) const { return tokens[key_tokens[i]]; }

    /// Canonical string of key tokens [begin, end): key forms joined by a
    /// single space.
    std::string canonical(std::size_t begin, std::size_t end) const;

    /// Byte range from the first key token's start to the last one's end.
    CharRange key_char_range(std::size_t begin, std::size_t end) const;
};

/// Sentence ranges over `text`, trimmed of surrounding whitespace. A sentence
/// ends at '.', '!' or '?' followed by whitespace, at a blank line, or at the
/// end of the text.
std::vector<CharRange> sentence_spans(std::string_view text);

TokenizedDocument tokenize(std::string_view text, const TokenizerConfig& config);

/// True for code points the tokenizer treats as whitespace.
bool is_space_code_point(char32_t cp);

struct Corpus {
    std::vector<RawDocument> documents;
};

struct ManifestEntry {
    DocId doc_id = 0;
    std::string external_id;
    std::string digest;  // hex BLAKE2b-128 of the document text

    bool operator==(const ManifestEntry&) const = default;
};

/// Loads a directory of `.txt` files or a file of line-delimited
/// `{"id": ..., "text": ...}` records.
Corpus ingest(const std::filesystem::path& source);

/// Assigns doc ids from lexicographic external-id order. Rejects duplicate
/// ids, invalid UTF-8 and blank documents.
Corpus make_corpus(std::vector<RawDocument> documents);

std::vector<ManifestEntry> make_manifest(const Corpus& corpus);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& manifest);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Maps external ids to the doc ids a collection manifest assigned them, so
/// a subset drawn from a collection keeps the collection's numbering.
std::vector<DocId> resolve_doc_ids(const std::vector<ManifestEntry>& manifest,
                                   const std::vector<std::string>& external_ids);

bool is_valid_utf8(std::string_view bytes);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace linkguard
