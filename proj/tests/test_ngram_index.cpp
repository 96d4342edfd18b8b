#include <doctest.h>

#include "fixtures.hpp"

#include "linkguard/error.hpp"
#include "linkguard/ngram_index.hpp"

#include <fstream>
#include <random>

using namespace linkguard;
using fixtures::key_of;

namespace {

std::vector<DocId> as_vector(std::span<const DocId> s) { return {s.begin(), s.end()}; }
std::vector<DocId> as_vector(const synth::DocSet& s) { return {s.begin(), s.end()}; }

void check_against_oracle(const std::vector<synth::Doc>& corpus, const InvertedIndex& index, unsigned n_max) {
    const synth::Oracle oracle(corpus, n_max);
    CHECK(index.term_count() == oracle.all().size());
    for (const auto& [phrase, docs] : oracle.all()) {
        const auto key = key_of(phrase);
        REQUIRE(index.doc_frequency(key) == docs.size());
        REQUIRE(as_vector(index.postings(key)) == as_vector(docs));
    }
}

}  // namespace

TEST_CASE("index matches a naive window scan") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 5; ++round) {
        const auto corpus = synth::random_corpus(rng, 60, 120, 30, 0.05);
        const auto index = fixtures::index_of(corpus, 7, 3);
        CHECK(index.meta().doc_count == 60);
        check_against_oracle(corpus, index, 7);
    }
}

TEST_CASE("index respects n_max and rejects longer queries") {
    std::mt19937_64 rng(5);
    const auto corpus = synth::random_corpus(rng, 20, 40, 10);
    const auto index = fixtures::index_of(corpus, 3);
    check_against_oracle(corpus, index, 3);
    CHECK_THROWS_AS(index.doc_frequency(key_of("w1 w2 w3 w4")), UsageError);
    CHECK_THROWS_AS(index.doc_frequency(make_key("", 0)), UsageError);
}

TEST_CASE("absent keys and small examples") {
    std::vector<synth::Doc> corpus(10);
    for (auto& d : corpus) d.sentences = {{"filler"}};
    corpus[0].sentences = {{"alpha", "beta"}};
    corpus[4].sentences = {{"alpha"}, {"beta", "gamma"}};
    corpus[9].sentences = {{"alpha", "beta", "gamma"}};
    const auto index = fixtures::index_of(corpus);
    CHECK(as_vector(index.postings(key_of("alpha"))) == std::vector<DocId>{0, 4, 9});
    CHECK(index.postings(key_of("zeta")).empty());
    CHECK(index.doc_frequency(key_of("zeta")) == 0);
    // Sentence boundaries block windows.
    CHECK(as_vector(index.postings(key_of("alpha beta"))) == std::vector<DocId>{0, 9});
    CHECK(index.doc_frequency(key_of("filler")) == 7);
}

TEST_CASE("intersection_count agrees with set intersection") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> len(0, 60);
    std::uniform_int_distribution<DocId> id(0, 120);
    std::uniform_int_distribution<std::uint32_t> lim(1, 6);
    for (int round = 0; round < 3000; ++round) {
        const int arity = 1 + round % 3;
        std::vector<std::vector<DocId>> lists(arity);
        std::vector<synth::DocSet> sets(arity);
        for (int i = 0; i < arity; ++i) {
            const int n = len(rng);
            for (int j = 0; j < n; ++j) sets[i].insert(id(rng));
            lists[i].assign(sets[i].begin(), sets[i].end());
        }
        synth::DocSet acc = sets[0];
        for (int i = 1; i < arity; ++i) {
            synth::DocSet next;
            std::set_intersection(acc.begin(), acc.end(), sets[i].begin(), sets[i].end(),
                                  std::inserter(next, next.end()));
            acc = next;
        }
        std::vector<std::span<const DocId>> spans(lists.begin(), lists.end());
        const auto limit = lim(rng);
        REQUIRE(intersection_count(spans, limit) == std::min<std::size_t>(acc.size(), limit));
        REQUIRE(intersect_postings(spans) == as_vector(acc));
    }
}

TEST_CASE("intersect_df on index keys") {
    std::mt19937_64 rng(21);
    const auto corpus = synth::random_corpus(rng, 80, 100, 25);
    const auto index = fixtures::index_of(corpus);
    const synth::Oracle oracle(corpus, 7);
    std::vector<std::string> phrases;
    for (const auto& [p, _] : oracle.all()) phrases.push_back(p);
    phrases.push_back("never seen");
    std::uniform_int_distribution<std::size_t> pick(0, phrases.size() - 1);
    for (int round = 0; round < 2000; ++round) {
        std::vector<std::string> chosen;
        std::vector<NgramKey> keys;
        for (int i = 0; i <= round % 3; ++i) {
            chosen.push_back(phrases[pick(rng)]);
            keys.push_back(key_of(chosen.back()));
        }
        const std::uint32_t k = 2 + round % 3;
        const auto expected = std::min<std::size_t>(oracle.intersect(chosen).size(), k);
        REQUIRE(index.intersect_df(keys, k) == expected);
        // Saturation: below k exactly when the true intersection is below k.
        CHECK((index.intersect_df(keys, k) < k) == (oracle.intersect(chosen).size() < k));
    }
    CHECK_THROWS_AS(index.intersect_df({}, 2), UsageError);
    const std::vector<NgramKey> one{key_of("w1")};
    CHECK_THROWS_AS(index.intersect_df(one, 0), UsageError);
}

TEST_CASE("property: df shrinks under containment and added keys") {
    std::mt19937_64 rng(27);
    const auto corpus = synth::random_corpus(rng, 60, 80, 12);
    const auto index = fixtures::index_of(corpus);
    const synth::Oracle oracle(corpus, 7);
    std::vector<std::string> phrases;
    for (const auto& [p, _] : oracle.all()) phrases.push_back(p);
    for (const auto& phrase : phrases) {
        const auto space = phrase.find(' ');
        if (space == std::string::npos) continue;
        const auto last = phrase.rfind(' ');
        const auto df = index.doc_frequency(key_of(phrase));
        REQUIRE(index.doc_frequency(key_of(phrase.substr(space + 1))) >= df);
        REQUIRE(index.doc_frequency(key_of(phrase.substr(0, last))) >= df);
    }
    std::uniform_int_distribution<std::size_t> pick(0, phrases.size() - 1);
    for (int round = 0; round < 2000; ++round) {
        std::vector<NgramKey> keys{key_of(phrases[pick(rng)])};
        for (int i = 0; i < round % 3; ++i) keys.push_back(key_of(phrases[pick(rng)]));
        const std::uint32_t k = 1 + round % 6;
        const auto base = index.intersect_df(keys, k);
        keys.push_back(key_of(phrases[pick(rng)]));
        CHECK(index.intersect_df(keys, k) <= base);
    }
}

TEST_CASE("build is independent of thread count and document order") {
    std::mt19937_64 rng(8);
    const auto corpus = synth::random_corpus(rng, 50, 80, 20);
    const auto tokenized = fixtures::tokenize_all(corpus);
    const auto one = serialize_index(build_index(tokenized, 7, 1));
    const auto many = serialize_index(build_index(tokenized, 7, 8));
    CHECK(one == many);

    IndexBuilder reversed(7, TokenizerConfig{});
    for (std::size_t i = tokenized.size(); i-- > 0;) reversed.add(static_cast<DocId>(i), tokenized[i]);
    CHECK(serialize_index(std::move(reversed).finish()) == one);
}

TEST_CASE("builder rejects a foreign tokenizer config and duplicate documents") {
    TokenizerConfig folded;
    folded.case_fold = true;
    IndexBuilder builder(7, TokenizerConfig{});
    CHECK_THROWS_AS(builder.add(0, tokenize("Some text.", folded)), ConfigMismatch);
    builder.add(0, tokenize("Some text.", {}));
    builder.add(0, tokenize("Other text.", {}));
    CHECK_THROWS(std::move(builder).finish());
}

TEST_CASE("persistence round trip and determinism") {
    std::mt19937_64 rng(13);
    const auto corpus = synth::random_corpus(rng, 40, 100, 30);
    const auto index = fixtures::index_of(corpus);
    fixtures::TempDir dir;
    save_index(index, dir / "a.idx");
    save_index(fixtures::index_of(corpus, 7, 4), dir / "b.idx");
    CHECK(read_text_file(dir / "a.idx") == read_text_file(dir / "b.idx"));

    const auto loaded = load_index(dir / "a.idx", TokenizerConfig{}.digest());
    CHECK(loaded.meta().doc_count == index.meta().doc_count);
    CHECK(loaded.meta().n_max == 7);
    CHECK(loaded.meta().hash_algorithm == kHashBlake2b128);
    CHECK(index_digest(loaded) == index_digest(index));
    check_against_oracle(corpus, loaded, 7);
}

TEST_CASE("load errors are distinguished") {
    std::mt19937_64 rng(17);
    const auto index = fixtures::index_of(synth::random_corpus(rng, 10, 30, 10));
    const auto bytes = serialize_index(index);

    auto kind_of = [](std::vector<std::uint8_t> b, std::optional<Fingerprint> expected = std::nullopt) {
        try {
            deserialize_index(b, expected);
        } catch (const IndexFormatError& e) {
            return e.kind();
        }
        FAIL("no error");
        return IndexFormatError::Kind::Corrupt;
    };

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(kind_of(bad_magic) == IndexFormatError::Kind::BadMagic);

    auto version = bytes;
    version[4] = 9;
    CHECK(kind_of(version) == IndexFormatError::Kind::VersionMismatch);

    CHECK(kind_of({bytes.begin(), bytes.begin() + 20}) == IndexFormatError::Kind::Truncated);
    CHECK(kind_of({bytes.begin(), bytes.end() - 1}) == IndexFormatError::Kind::Truncated);

    TokenizerConfig folded;
    folded.case_fold = true;
    CHECK(kind_of(bytes, folded.digest()) == IndexFormatError::Kind::DigestMismatch);

    CHECK_NOTHROW(deserialize_index(bytes, TokenizerConfig{}.digest()));
    CHECK_THROWS_AS(index.require_tokenizer(folded.digest()), ConfigMismatch);
}

TEST_CASE("fingerprints are stable") {
    // BLAKE2b with a 16-byte output of the empty string.
    CHECK(to_hex(fingerprint("")) == "cae66941d9efbd404e4d88758ea67670");
    CHECK(fingerprint("a b") != fingerprint("a  b"));
    CHECK(make_key("a b", 2) == make_key("a b", 2));
}
