#include "linkguard/extraction.hpp"

#include "linkguard/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

namespace linkguard {

void ExtractionConfig::validate() const {
    if (k < 2) throw UsageError("k must be >= 2");
    if (n_min < 1 || n_min > n_max) throw UsageError("need 1 <= n_min <= n_max");
    if (max_arity < 1) throw UsageError("max_arity must be >= 1");
}

std::vector<SpanCandidate> enumerate_candidates(const TokenizedDocument& doc, const ExtractionConfig& config) {
    std::vector<SpanCandidate> out;
    const std::size_t count = doc.key_tokens.size();
    for (std::size_t start = 0; start < count; ++start) {
        std::string canonical;
        for (std::size_t n = 1; n <= config.n_max && start + n <= count; ++n) {
            const std::size_t last = start + n - 1;
            if (doc.key_segments[last] != doc.key_segments[start]) break;
            if (n > 1) canonical.push_back(' ');
            canonical += doc.key_token(last).key;
            if (n < config.n_min) continue;
            SpanCandidate c;
            c.tokens = {start, start + n};
            c.chars = doc.key_char_range(start, start + n);
            c.n = static_cast<unsigned>(n);
            c.key = make_key(canonical, c.n);
            c.canonical = canonical;
            c.surface = doc.text.substr(c.chars.begin, c.chars.size());
            out.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<std::size_t> select_minimal_indices(const std::vector<SpanCandidate>& candidates) {
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = candidates[a];
        const auto& y = candidates[b];
        if (x.n != y.n) return x.n < y.n;
        return x.tokens.begin < y.tokens.begin;
    });

    std::size_t extent = 0;
    for (const auto& c : candidates) extent = std::max(extent, c.tokens.end);
    std::vector<bool> taken(extent, false);
    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        const auto& range = candidates[idx].tokens;
        bool free = true;
        for (std::size_t t = range.begin; t < range.end && free; ++t) free = !taken[t];
        if (!free) continue;
        for (std::size_t t = range.begin; t < range.end; ++t) taken[t] = true;
        kept.push_back(idx);
    }
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        return candidates[a].tokens.begin < candidates[b].tokens.begin;
    });
    return kept;
}

std::vector<SpanCandidate> select_minimal(const std::vector<SpanCandidate>& candidates) {
    std::vector<SpanCandidate> out;
    for (std::size_t idx : select_minimal_indices(candidates)) out.push_back(candidates[idx]);
    return out;
}

std::vector<FlaggedSpan> flag_rare_singles(const std::vector<SpanCandidate>& candidates, const InvertedIndex& index,
                                           const ExtractionConfig& config) {
    std::vector<FlaggedSpan> out;
    for (const auto& c : candidates) {
        const auto df = index.doc_frequency(c.key);
        if (df >= 1 && df < config.k) {
            FlaggedSpan f;
            f.span = c;
            f.provenance = Provenance::Single;
            f.df = df;
            out.push_back(std::move(f));
        }
    }
    return out;
}

namespace {

class CombinationSearch {
public:
    CombinationSearch(const std::vector<SpanCandidate>& minimal_set, const InvertedIndex& index,
                      const ExtractionConfig& config)
        : config_(config) {
        for (const auto& member : minimal_set) {
            auto list = index.postings(member.key);
            if (list.size() >= config.k) {
                members_.push_back(&member);
                lists_.push_back(list);
            }
        }
        flagged_.assign(members_.size(), false);
    }

    CombinationScan run() {
        for (unsigned arity = 2; arity <= config_.max_arity && !scan_.truncated; ++arity) {
            chosen_.clear();
            descend(0, arity);
        }
        return std::move(scan_);
    }

private:
    bool prefix_flagged() const {
        return std::any_of(chosen_.begin(), chosen_.end(), [&](std::size_t i) { return flagged_[i]; });
    }

    // Returns false once the budget is exhausted.
    bool descend(std::size_t from, unsigned arity) {
        if (chosen_.size() == arity) return evaluate();
        const std::size_t remaining = arity - chosen_.size();
        for (std::size_t i = from; i + remaining <= members_.size(); ++i) {
            if (flagged_[i]) continue;
            chosen_.push_back(i);
            const bool go_on = descend(i + 1, arity);
            chosen_.pop_back();
            if (!go_on) return false;
            if (prefix_flagged()) return true;
        }
        return true;
    }

    bool evaluate() {
        if (scan_.evaluated >= config_.combination_budget) {
            scan_.truncated = true;
            return false;
        }
        ++scan_.evaluated;
        lists_buf_.clear();
        for (std::size_t i : chosen_) lists_buf_.push_back(lists_[i]);
        const auto r = intersection_count(lists_buf_, config_.k);
        if (r >= 1 && r < config_.k) {
            std::size_t shortest = chosen_.front();
            for (std::size_t i : chosen_) {
                if (members_[i]->n < members_[shortest]->n) shortest = i;
            }
            flagged_[shortest] = true;
            FlaggedSpan f;
            f.span = *members_[shortest];
            f.provenance = Provenance::Combination;
            for (std::size_t i : chosen_) f.witness.push_back(*members_[i]);
            f.intersection = r;
            scan_.flagged.push_back(std::move(f));
        }
        return true;
    }

    const ExtractionConfig& config_;
    std::vector<const SpanCandidate*> members_;
    std::vector<std::span<const DocId>> lists_;
    std::vector<bool> flagged_;
    std::vector<std::size_t> chosen_;
    std::vector<std::span<const DocId>> lists_buf_;
    CombinationScan scan_;
};

}  // namespace

CombinationScan flag_rare_combinations(const std::vector<SpanCandidate>& minimal_set, const InvertedIndex& index,
                                       const ExtractionConfig& config) {
    if (config.max_arity < 2) return {};
    return CombinationSearch(minimal_set, index, config).run();
}

RewritePlan plan_iteration(const TokenizedDocument& doc, const InvertedIndex& index, const ExtractionConfig& config) {
    config.validate();
    index.require_tokenizer(doc.config.digest());
    if (config.n_max > index.meta().n_max) {
        throw UsageError("n_max " + std::to_string(config.n_max) + " exceeds the index's " +
                         std::to_string(index.meta().n_max));
    }
    const auto candidates = enumerate_candidates(doc, config);

    // Rarity is tested before overlap filtering so a rare window can never
    // hide behind a frequent overlapping one.
    auto rare = flag_rare_singles(candidates, index, config);
    std::vector<SpanCandidate> rare_spans;
    rare_spans.reserve(rare.size());
    for (const auto& f : rare) rare_spans.push_back(f.span);

    RewritePlan plan;
    for (std::size_t idx : select_minimal_indices(rare_spans)) plan.spans.push_back(std::move(rare[idx]));

    auto scan = flag_rare_combinations(select_minimal(candidates), index, config);
    plan.combinations_evaluated = scan.evaluated;
    plan.truncated = scan.truncated;
    const std::size_t singles = plan.spans.size();
    for (auto& f : scan.flagged) {
        const bool clashes = std::any_of(plan.spans.begin(), plan.spans.begin() + static_cast<std::ptrdiff_t>(singles),
                                         [&](const FlaggedSpan& s) { return s.span.tokens.overlaps(f.span.tokens); });
        if (!clashes) plan.spans.push_back(std::move(f));
    }
    std::sort(plan.spans.begin(), plan.spans.end(), [](const FlaggedSpan& a, const FlaggedSpan& b) {
        return a.span.chars.begin < b.span.chars.begin;
    });
    return plan;
}

void write_plan(std::ostream& out, const RewritePlan& plan) {
    for (const auto& f : plan.spans) {
        nlohmann::ordered_json record;
        record["char_start"] = f.span.chars.begin;
        record["char_end"] = f.span.chars.end;
        record["surface"] = f.span.surface;
        record["n"] = f.span.n;
        if (f.provenance == Provenance::Single) {
            record["provenance"] = "single";
            record["df"] = f.df;
        } else {
            record["provenance"] = "combination";
            auto witness = nlohmann::ordered_json::array();
            for (const auto& member : f.witness) witness.push_back(member.canonical);
            record["witness"] = std::move(witness);
            record["intersection"] = f.intersection;
        }
        out << record.dump() << '\n';
    }
}

std::vector<PlanRecord> read_plan(std::istream& in) {
    std::vector<PlanRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto record = nlohmann::json::parse(line);
            PlanRecord r;
            r.chars = {record.at("char_start").get<std::size_t>(), record.at("char_end").get<std::size_t>()};
            r.surface = record.at("surface").get<std::string>();
            r.n = record.at("n").get<unsigned>();
            const auto kind = record.at("provenance").get<std::string>();
            if (kind == "single") {
                r.provenance = Provenance::Single;
                r.df = record.at("df").get<std::uint32_t>();
            } else if (kind == "combination") {
                r.provenance = Provenance::Combination;
                r.witness = record.at("witness").get<std::vector<std::string>>();
                r.intersection = record.at("intersection").get<std::uint32_t>();
            } else {
                throw IoError("unknown provenance '" + kind + "' in plan");
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("malformed plan record: ") + e.what());
        }
    }
    return out;
}

}  // namespace linkguard
