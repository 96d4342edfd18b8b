#include "linkguard/linkage_eval.hpp"

#include "linkguard/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

namespace linkguard {

namespace {

using LinkingItem = std::vector<std::pair<std::string, unsigned>>;  // sorted (canonical, n)

std::vector<LinkingItem> linking_items(const TokenizedDocument& doc, const InvertedIndex& index,
                                       const ExtractionConfig& config) {
    const auto candidates = enumerate_candidates(doc, config);
    std::set<LinkingItem> items;
    for (const auto& f : flag_rare_singles(candidates, index, config)) {
        items.insert({{f.span.canonical, f.span.n}});
    }
    if (config.max_arity >= 2) {
        for (const auto& f : flag_rare_combinations(select_minimal(candidates), index, config).flagged) {
            LinkingItem item;
            for (const auto& member : f.witness) item.emplace_back(member.canonical, member.n);
            std::sort(item.begin(), item.end());
            item.erase(std::unique(item.begin(), item.end()), item.end());
            items.insert(std::move(item));
        }
    }
    return {items.begin(), items.end()};
}

std::unordered_set<std::string> all_windows(const TokenizedDocument& doc, unsigned n_max) {
    std::unordered_set<std::string> out;
    const std::size_t count = doc.key_tokens.size();
    for (std::size_t start = 0; start < count; ++start) {
        std::string canonical;
        for (std::size_t n = 1; n <= n_max && start + n <= count; ++n) {
            if (doc.key_segments[start + n - 1] != doc.key_segments[start]) break;
            if (n > 1) canonical.push_back(' ');
            canonical += doc.key_token(start + n - 1).key;
            out.insert(canonical);
        }
    }
    return out;
}

void check_inputs(const InvertedIndex& index, const TokenizedDocument& doc, const ExtractionConfig& config) {
    config.validate();
    index.require_tokenizer(doc.config.digest());
    if (config.n_max > index.meta().n_max) throw UsageError("n_max exceeds the index's");
}

std::string fixed6(double value) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out << std::fixed << std::setprecision(6) << value;
    return out.str();
}

}  // namespace

std::vector<Witness> attack(const InvertedIndex& index, const TokenizedDocument& doc, const ExtractionConfig& config) {
    check_inputs(index, doc, config);
    const auto candidates = enumerate_candidates(doc, config);
    std::vector<Witness> out;
    std::set<std::vector<std::string>> seen;
    for (const auto& f : flag_rare_singles(candidates, index, config)) {
        if (!seen.insert({f.span.canonical}).second) continue;
        const auto postings = index.postings(f.span.key);
        out.push_back({{f.span.canonical}, {f.span.surface}, {postings.begin(), postings.end()}});
    }
    if (config.max_arity >= 2) {
        for (const auto& f : flag_rare_combinations(select_minimal(candidates), index, config).flagged) {
            Witness w;
            std::vector<std::span<const DocId>> lists;
            for (const auto& member : f.witness) {
                w.keys.push_back(member.canonical);
                w.surfaces.push_back(member.surface);
                lists.push_back(index.postings(member.key));
            }
            auto sorted_keys = w.keys;
            std::sort(sorted_keys.begin(), sorted_keys.end());
            if (!seen.insert(sorted_keys).second) continue;
            w.doc_ids = intersect_postings(lists);
            out.push_back(std::move(w));
        }
    }
    return out;
}

RateTriple residual_rate(const TokenizedDocument& before, const TokenizedDocument& after, const InvertedIndex& index,
                         const ExtractionConfig& config, unsigned arity) {
    check_inputs(index, before, config);
    index.require_tokenizer(after.config.digest());
    auto scoped = config;
    scoped.max_arity = std::max(1u, arity);
    const auto items = linking_items(before, index, scoped);
    const auto present = all_windows(after, config.n_max);

    RateTriple triple;
    triple.before = items.size();
    for (const auto& item : items) {
        const bool survives = std::all_of(item.begin(), item.end(),
                                          [&](const auto& member) { return present.contains(member.first); });
        if (survives) ++triple.after;
    }
    triple.rate = triple.before > 0 ? static_cast<double>(triple.after) / static_cast<double>(triple.before) : 0.0;
    return triple;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw UsageError("cosine similarity needs vectors of equal dimension");
    double dot = 0;
    double nu = 0;
    double nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0 || nv == 0) throw UsageError("cosine similarity is undefined for a zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

LinkageReport evaluate(const TokenizedDocument& before, const TokenizedDocument& after, const InvertedIndex& index,
                       const ExtractionConfig& config, EmbeddingBackend* embedder, std::size_t witness_limit) {
    LinkageReport report;
    report.k = config.k;
    report.max_arity = config.max_arity;
    report.singles = residual_rate(before, after, index, config, 1);
    report.combinations = residual_rate(before, after, index, config, config.max_arity);
    report.witnesses = attack(index, after, config);
    if (report.witnesses.size() > witness_limit) report.witnesses.resize(witness_limit);
    if (embedder) {
        const auto u = embedder->embed(before.text);
        const auto v = embedder->embed(after.text);
        report.semantic_similarity = cosine_similarity(u, v);
        report.embedding_endpoint = embedder->identity();
        report.embedding_dimension = u.size();
    }
    return report;
}

std::string report_to_json(const LinkageReport& report) {
    using nlohmann::ordered_json;
    auto witnesses = ordered_json::array();
    for (const auto& w : report.witnesses) {
        ordered_json item;
        item["keys"] = w.keys;
        item["surfaces"] = w.surfaces;
        item["doc_ids"] = w.doc_ids;
        witnesses.push_back(std::move(item));
    }
    std::string embedding = "null";
    if (report.semantic_similarity) {
        ordered_json e;
        e["endpoint"] = report.embedding_endpoint;
        e["dimension"] = report.embedding_dimension;
        embedding = e.dump();
    }

    std::ostringstream out;
    out << "{\n"
        << "  \"k\": " << report.k << ",\n"
        << "  \"max_arity\": " << report.max_arity << ",\n"
        << "  \"counting\": \"types\",\n"
        << "  \"linking_singles_before\": " << report.singles.before << ",\n"
        << "  \"linking_singles_after\": " << report.singles.after << ",\n"
        << "  \"rate_singles\": " << fixed6(report.singles.rate) << ",\n"
        << "  \"linking_combinations_before\": " << report.combinations.before << ",\n"
        << "  \"linking_combinations_after\": " << report.combinations.after << ",\n"
        << "  \"rate_combinations\": " << fixed6(report.combinations.rate) << ",\n"
        << "  \"witnesses\": " << witnesses.dump() << ",\n"
        << "  \"semantic_similarity\": "
        << (report.semantic_similarity ? fixed6(*report.semantic_similarity) : std::string("null")) << ",\n"
        << "  \"embedding\": " << embedding << ",\n"
        << "  \"provenance\": " << report.provenance.dump() << "\n"
        << "}\n";
    return out.str();
}

LinkageReport report_from_json(const std::string& json) {
    try {
        const auto doc = nlohmann::ordered_json::parse(json);
        LinkageReport report;
        report.k = doc.at("k").get<std::uint32_t>();
        report.max_arity = doc.at("max_arity").get<unsigned>();
        report.singles = {doc.at("linking_singles_before").get<std::size_t>(),
                          doc.at("linking_singles_after").get<std::size_t>(), doc.at("rate_singles").get<double>()};
        report.combinations = {doc.at("linking_combinations_before").get<std::size_t>(),
                               doc.at("linking_combinations_after").get<std::size_t>(),
                               doc.at("rate_combinations").get<double>()};
        for (const auto& w : doc.at("witnesses")) {
            report.witnesses.push_back({w.at("keys").get<std::vector<std::string>>(),
                                        w.at("surfaces").get<std::vector<std::string>>(),
                                        w.at("doc_ids").get<std::vector<DocId>>()});
        }
        if (!doc.at("semantic_similarity").is_null()) {
            report.semantic_similarity = doc["semantic_similarity"].get<double>();
            report.embedding_endpoint = doc.at("embedding").at("endpoint").get<std::string>();
            report.embedding_dimension = doc.at("embedding").at("dimension").get<std::size_t>();
        }
        report.provenance = doc.at("provenance");
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed linkage report: ") + e.what());
    }
}

void write_report(const LinkageReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << report_to_json(report);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
}

LinkageReport read_report(const std::filesystem::path& path) { return report_from_json(read_text_file(path)); }

}  // namespace linkguard
