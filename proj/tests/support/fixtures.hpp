#pragma once

#include "synthetic.hpp"

#include "linkguard/corpus.hpp"
#include "linkguard/ngram_index.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

inline std::vector<linkguard::TokenizedDocument> tokenize_all(const std::vector<synth::Doc>& docs,
                                                              const linkguard::TokenizerConfig& config = {}) {
    std::vector<linkguard::TokenizedDocument> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(linkguard::tokenize(d.text(), config));
    return out;
}

inline linkguard::InvertedIndex index_of(const std::vector<synth::Doc>& docs, unsigned n_max = 7,
                                         unsigned threads = 1) {
    const auto tokenized = tokenize_all(docs);
    return linkguard::build_index(tokenized, n_max, threads);
}

inline linkguard::NgramKey key_of(const std::string& phrase) {
    unsigned n = 1;
    for (char c : phrase) n += c == ' ';
    return linkguard::make_key(phrase, n);
}

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("linkguard-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

    std::filesystem::path write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::filesystem::create_directories(p.parent_path());
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
