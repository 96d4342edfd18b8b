#include "linkguard/corpus.hpp"

#include "linkguard/error.hpp"

#include <json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace linkguard {

namespace {

struct Decoded {
    char32_t cp;     // U+FFFD stands in for malformed sequences
    std::size_t next;
    bool valid;
};

Decoded decode_at(std::string_view s, std::size_t i) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
    const auto length = static_cast<std::int32_t>(s.size());
    auto offset = static_cast<std::int32_t>(i);
    UChar32 c = 0;
    U8_NEXT(bytes, offset, length, c);
    if (c < 0) return {U'�', static_cast<std::size_t>(offset), false};
    return {static_cast<char32_t>(c), static_cast<std::size_t>(offset), true};
}

bool is_word_char(char32_t cp) { return u_isalnum(static_cast<UChar32>(cp)) != 0; }

// Joiners allowed inside a word when flanked by word characters.
bool is_word_joiner(char32_t cp) {
    return cp == U'\'' || cp == U'’' || cp == U'-' || cp == U'‐' || cp == U'‑';
}

bool is_sentence_terminator(char32_t cp) { return cp == U'.' || cp == U'!' || cp == U'?'; }

void append_utf8(std::string& out, char32_t cp) {
    std::uint8_t buf[U8_MAX_LENGTH];
    std::int32_t len = 0;
    U8_APPEND_UNSAFE(buf, len, static_cast<UChar32>(cp));
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
}

std::string lower_case(std::string_view word) {
    std::string out;
    out.reserve(word.size());
    for (std::size_t i = 0; i < word.size();) {
        auto d = decode_at(word, i);
        if (d.valid) {
            append_utf8(out, static_cast<char32_t>(u_tolower(static_cast<UChar32>(d.cp))));
        } else {
            out.append(word.substr(i, d.next - i));
        }
        i = d.next;
    }
    return out;
}

bool is_blank(std::string_view text) {
    for (std::size_t i = 0; i < text.size();) {
        auto d = decode_at(text, i);
        if (!is_space_code_point(d.cp)) return false;
        i = d.next;
    }
    return true;
}

}  // namespace

bool is_space_code_point(char32_t cp) {
    if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' || cp == U'\f') return true;
    return cp > 0x7F && u_isUWhiteSpace(static_cast<UChar32>(cp));
}

bool is_valid_utf8(std::string_view bytes) {
    for (std::size_t i = 0; i < bytes.size();) {
        auto d = decode_at(bytes, i);
        if (!d.valid) return false;
        i = d.next;
    }
    return true;
}

void TokenizerConfig::validate() const {
    if (redaction_marker.empty() || is_blank(redaction_marker)) {
        throw UsageError("redaction marker must contain non-whitespace characters");
    }
}

Fingerprint TokenizerConfig::digest() const {
    std::string canonical = "linkguard-tokenizer/1";
    canonical.push_back('\0');
    canonical += case_fold ? "case_fold=1" : "case_fold=0";
    canonical.push_back('\0');
    canonical += include_punct_in_keys ? "punct=1" : "punct=0";
    canonical.push_back('\0');
    canonical += "marker=" + redaction_marker;
    return fingerprint(canonical);
}

std::string TokenizedDocument::canonical(std::size_t begin, std::size_t end) const {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i != begin) out.push_back(' ');
        out += key_token(i).key;
    }
    return out;
}

CharRange TokenizedDocument::key_char_range(std::size_t begin, std::size_t end) const {
    return {key_token(begin).char_start, key_token(end - 1).char_end};
}

std::vector<CharRange> sentence_spans(std::string_view text) {
    std::vector<CharRange> spans;
    constexpr auto npos = std::string_view::npos;
    std::size_t start = npos;
    std::size_t last_end = 0;

    auto close = [&] {
        if (start != npos) spans.push_back({start, last_end});
        start = npos;
    };

    for (std::size_t i = 0; i < text.size();) {
        auto d = decode_at(text, i);
        if (is_space_code_point(d.cp)) {
            if (d.cp == U'\n' && start != npos) {
                for (std::size_t j = d.next; j < text.size();) {
                    auto ahead = decode_at(text, j);
                    if (!is_space_code_point(ahead.cp)) break;
                    if (ahead.cp == U'\n') {
                        close();
                        break;
                    }
                    j = ahead.next;
                }
            }
            i = d.next;
            continue;
        }
        if (start == npos) start = i;
        last_end = d.next;
        if (is_sentence_terminator(d.cp)) {
            if (d.next >= text.size() || is_space_code_point(decode_at(text, d.next).cp)) close();
        }
        i = d.next;
    }
    close();
    return spans;
}

TokenizedDocument tokenize(std::string_view text, const TokenizerConfig& config) {
    config.validate();
    TokenizedDocument doc;
    doc.text = std::string(text);
    doc.config = config;

    const auto sentences = sentence_spans(text);
    doc.sentence_count = static_cast<std::uint32_t>(sentences.size());
    const std::string_view marker = config.redaction_marker;
    auto marker_at = [&](std::size_t i) { return text.compare(i, marker.size(), marker) == 0; };

    std::size_t sentence = 0;
    auto push = [&](TokenKind kind, std::size_t begin, std::size_t end) {
        while (sentence + 1 < sentences.size() && sentences[sentence].end <= begin) ++sentence;
        Token tok;
        tok.surface = std::string(text.substr(begin, end - begin));
        tok.kind = kind;
        tok.char_start = begin;
        tok.char_end = end;
        tok.sentence_index = static_cast<std::uint32_t>(sentence);
        tok.key = (kind == TokenKind::Word && config.case_fold) ? lower_case(tok.surface) : tok.surface;
        doc.tokens.push_back(std::move(tok));
    };

    for (std::size_t i = 0; i < text.size();) {
        if (marker_at(i)) {
            push(TokenKind::Redaction, i, i + marker.size());
            i += marker.size();
            continue;
        }
        auto d = decode_at(text, i);
        if (is_space_code_point(d.cp)) {
            i = d.next;
            continue;
        }
        if (!d.valid || !is_word_char(d.cp)) {
            push(TokenKind::Punct, i, d.next);
            i = d.next;
            continue;
        }
        std::size_t end = d.next;
        while (end < text.size() && !marker_at(end)) {
            auto c = decode_at(text, end);
            if (c.valid && is_word_char(c.cp)) {
                end = c.next;
                continue;
            }
            if (c.valid && is_word_joiner(c.cp) && c.next < text.size() && !marker_at(c.next)) {
                auto after = decode_at(text, c.next);
                if (after.valid && is_word_char(after.cp)) {
                    end = after.next;
                    continue;
                }
            }
            break;
        }
        push(TokenKind::Word, i, end);
        i = end;
    }

    std::uint32_t segment = 0;
    bool broken = false;
    std::uint32_t prev_sentence = 0;
    for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
        const auto& tok = doc.tokens[t];
        if (tok.kind == TokenKind::Redaction) {
            broken = true;
            continue;
        }
        if (tok.kind == TokenKind::Punct && !config.include_punct_in_keys) continue;
        if (!doc.key_tokens.empty() && (broken || tok.sentence_index != prev_sentence)) ++segment;
        broken = false;
        prev_sentence = tok.sentence_index;
        doc.key_tokens.push_back(t);
        doc.key_segments.push_back(segment);
    }
    return doc;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("cannot read '" + path.string() + "'");
    return buf.str();
}

Corpus make_corpus(std::vector<RawDocument> documents) {
    if (documents.empty()) throw IoError("empty corpus");
    std::sort(documents.begin(), documents.end(),
              [](const RawDocument& a, const RawDocument& b) { return a.external_id < b.external_id; });
    for (std::size_t i = 0; i < documents.size(); ++i) {
        auto& doc = documents[i];
        if (i > 0 && documents[i - 1].external_id == doc.external_id) {
            throw IoError("duplicate document id '" + doc.external_id + "'");
        }
        if (!is_valid_utf8(doc.text)) throw IoError("'" + doc.external_id + "' is not valid UTF-8");
        if (is_blank(doc.text)) throw IoError("document '" + doc.external_id + "' is empty");
        doc.doc_id = static_cast<DocId>(i);
    }
    return Corpus{std::move(documents)};
}

Corpus ingest(const std::filesystem::path& source) {
    namespace fs = std::filesystem;
    std::vector<RawDocument> docs;
    if (fs::is_directory(source)) {
        for (const auto& entry : fs::directory_iterator(source)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
            RawDocument doc;
            doc.external_id = entry.path().filename().string();
            doc.text = read_text_file(entry.path());
            if (!is_valid_utf8(doc.text)) {
                throw IoError("cannot decode '" + entry.path().string() + "' as UTF-8");
            }
            docs.push_back(std::move(doc));
        }
    } else {
        std::ifstream in(source, std::ios::binary);
        if (!in) throw IoError("cannot open '" + source.string() + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (is_blank(line)) continue;
            const auto where = source.string() + ":" + std::to_string(line_no);
            if (!is_valid_utf8(line)) throw IoError("cannot decode " + where + " as UTF-8");
            auto record = nlohmann::json::parse(line, nullptr, false);
            if (record.is_discarded() || !record.is_object() || !record.contains("id") ||
                !record.contains("text") || !record["id"].is_string() || !record["text"].is_string()) {
                throw IoError("malformed record at " + where + " (expected {\"id\": string, \"text\": string})");
            }
            docs.push_back({0, record["id"].get<std::string>(), record["text"].get<std::string>()});
        }
    }
    return make_corpus(std::move(docs));
}

std::vector<ManifestEntry> make_manifest(const Corpus& corpus) {
    std::vector<ManifestEntry> out;
    out.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        out.push_back({doc.doc_id, doc.external_id, to_hex(fingerprint(doc.text))});
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    for (const auto& entry : manifest) {
        nlohmann::ordered_json record;
        record["doc_id"] = entry.doc_id;
        record["external_id"] = entry.external_id;
        record["digest"] = entry.digest;
        out << record.dump() << '\n';
    }
    if (!out) throw IoError("cannot write '" + path.string() + "'");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto record = nlohmann::json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) {
            throw IoError("malformed manifest line in '" + path.string() + "'");
        }
        try {
            out.push_back({record.at("doc_id").get<DocId>(), record.at("external_id").get<std::string>(),
                           record.at("digest").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed manifest record in '" + path.string() + "': " + e.what());
        }
    }
    return out;
}

std::vector<DocId> resolve_doc_ids(const std::vector<ManifestEntry>& manifest,
                                   const std::vector<std::string>& external_ids) {
    std::unordered_map<std::string, DocId> by_name;
    for (const auto& entry : manifest) by_name.emplace(entry.external_id, entry.doc_id);
    std::vector<DocId> out;
    out.reserve(external_ids.size());
    for (const auto& id : external_ids) {
        auto it = by_name.find(id);
        if (it == by_name.end()) throw UsageError("'" + id + "' is not listed in the manifest");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace linkguard
