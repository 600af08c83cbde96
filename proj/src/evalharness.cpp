#include "simmer/evalharness.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "simmer/error.hpp"
#include "simmer/random.hpp"

namespace simmer {

EvalDirection parse_eval_direction(std::string_view text) {
    if (text == "i2r") return EvalDirection::i2r;
    if (text == "r2i") return EvalDirection::r2i;
    if (text == "both") return EvalDirection::both;
    throw UsageError("unknown direction '" + std::string(text) + "' (expected i2r|r2i|both)");
}

std::size_t rank_of_truth(const EmbeddingVector& query, const EmbeddingDump& candidates, const std::string& truth_id) {
    const auto norms = nonzero_norms(candidates);
    const double qnorm = l2_norm(query.values);
    if (!(qnorm > 0.0)) throw NumericError("zero-norm query '" + query.id + "'");
    if (query.dim() != candidates.dim) throw DataError("query '" + query.id + "' dim differs from candidates");
    std::size_t truth = candidates.size();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (candidates.entries[c].id == truth_id) {
            truth = c;
            break;
        }
    }
    if (truth == candidates.size()) throw DataError("truth id '" + truth_id + "' not among candidates");
    const double truth_score = cosine_with_norms(query.values, qnorm, candidates.entries[truth].values, norms[truth]);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (c == truth) continue;
        const double s = cosine_with_norms(query.values, qnorm, candidates.entries[c].values, norms[c]);
        if (ranks_before(s, candidates.entries[c].id, truth_score, truth_id)) ++rank;
    }
    return rank;
}

double median(std::vector<double> values) {
    if (values.empty()) throw DataError("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

Metrics metrics_from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks) {
    Metrics m;
    m.median_rank = median(std::vector<double>(ranks.begin(), ranks.end()));
    for (auto k : ks) {
        const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
        m.recall_at[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    return m;
}

Metrics average_metrics(const std::vector<Metrics>& per_repeat) {
    if (per_repeat.empty()) throw DataError("no repeats to average");
    Metrics out;
    const double n = static_cast<double>(per_repeat.size());
    double med = 0.0;
    for (const auto& m : per_repeat) med += m.median_rank;
    out.median_rank = med / n;
    for (const auto& [k, _] : per_repeat.front().recall_at) {
        double sum = 0.0;
        for (const auto& m : per_repeat) sum += m.recall_at.at(k);
        out.recall_at[k] = sum / n;
    }
    return out;
}

namespace {

void check_config(const EvalConfig& config, std::size_t population) {
    if (config.pool_size == 0) throw UsageError("pool size must be positive");
    if (config.repeats == 0) throw UsageError("repeats must be positive");
    if (config.ks.empty()) throw UsageError("at least one k is required");
    for (std::size_t i = 0; i < config.ks.size(); ++i) {
        if (config.ks[i] == 0) throw UsageError("k values must be positive");
        if (i && config.ks[i] <= config.ks[i - 1]) throw UsageError("k values must be strictly ascending");
    }
    if (config.pool_size > population) {
        throw DataError("pool size " + std::to_string(config.pool_size) + " exceeds the " + std::to_string(population) +
                        " available pairs");
    }
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t per = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * per;
        const std::size_t end = std::min(n, begin + per);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
}

}  // namespace

DirectionReport evaluate_population(const ScoredPopulation& pop, const EvalConfig& config, Direction direction) {
    check_config(config, pop.pairs.size());
    DirectionReport report;
    report.direction = direction;
    for (std::size_t r = 0; r < config.repeats; ++r) {
        Rng rng(config.seed ^ static_cast<std::uint64_t>(r));
        const auto drawn = sample_without_replacement(pop.pairs.size(), config.pool_size, rng);

        std::vector<std::size_t> pool;
        pool.reserve(drawn.size());
        for (auto p : drawn) pool.push_back(pop.pairs[p].second);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

        std::vector<std::size_t> ranks(drawn.size());
        parallel_for(drawn.size(), config.threads, [&](std::size_t i) {
            const auto [query, truth] = pop.pairs[drawn[i]];
            const double truth_score = pop.score(query, truth);
            const auto& truth_id = pop.candidate_ids[truth];
            std::size_t rank = 1;
            for (auto c : pool) {
                if (c == truth) continue;
                if (ranks_before(pop.score(query, c), pop.candidate_ids[c], truth_score, truth_id)) ++rank;
            }
            ranks[i] = rank;
        });
        report.per_repeat.push_back(metrics_from_ranks(ranks, config.ks));
    }
    report.mean = average_metrics(report.per_repeat);
    return report;
}

EvalReport evaluate(const EmbeddingDump& queries, const EmbeddingDump& candidates, const Pairing& pairing,
                    const EvalConfig& config) {
    if (queries.dim != candidates.dim) {
        throw DataError("query dim " + std::to_string(queries.dim) + " differs from candidate dim " +
                        std::to_string(candidates.dim));
    }
    const auto qnorms = nonzero_norms(queries);
    const auto cnorms = nonzero_norms(candidates);
    std::unordered_map<std::string_view, std::size_t> cand_row;
    for (std::size_t c = 0; c < candidates.size(); ++c) cand_row.emplace(candidates.entries[c].id, c);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& id = queries.entries[q].id;
        auto p = pairing.find(id);
        if (p == pairing.end()) throw DataError("no pairing entry for query '" + id + "'");
        auto c = cand_row.find(p->second);
        if (c == cand_row.end()) throw DataError("truth '" + p->second + "' of query '" + id + "' not among candidates");
        pairs.emplace_back(q, c->second);
    }

    std::vector<std::string> qids, cids;
    for (const auto& e : queries.entries) qids.push_back(e.id);
    for (const auto& e : candidates.entries) cids.push_back(e.id);

    EvalReport report;
    report.config = config;
    const Direction forward_dir =
        config.direction == EvalDirection::r2i ? Direction::recipe_to_image : Direction::image_to_recipe;
    ScoredPopulation forward{qids, cids, pairs, [&](std::size_t q, std::size_t c) {
                                 return cosine_with_norms(queries.entries[q].values, qnorms[q],
                                                          candidates.entries[c].values, cnorms[c]);
                             }};
    report.directions.push_back(evaluate_population(forward, config, forward_dir));

    if (config.direction == EvalDirection::both) {
        std::vector<std::pair<std::size_t, std::size_t>> reversed;
        std::vector<bool> used(candidates.size(), false);
        for (auto [q, c] : pairs) {
            if (used[c]) {
                throw DataError("reverse evaluation needs a one-to-one pairing; '" + cids[c] + "' is the truth of several queries");
            }
            used[c] = true;
            reversed.emplace_back(c, q);
        }
        ScoredPopulation backward{cids, qids, reversed, [&](std::size_t c, std::size_t q) {
                                      return cosine_with_norms(candidates.entries[c].values, cnorms[c],
                                                               queries.entries[q].values, qnorms[q]);
                                  }};
        report.directions.push_back(evaluate_population(backward, config, Direction::recipe_to_image));
    }
    return report;
}

Pairing load_pairs_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open pairs file '" + path.string() + "'");
    Pairing pairing;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'query_id<TAB>truth_id'");
        }
        auto [it, inserted] = pairing.emplace(line.substr(0, tab), line.substr(tab + 1));
        if (!inserted) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate query id '" + it->first + "'");
        }
    }
    return pairing;
}

void save_pairs_tsv(const Pairing& pairing, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write pairs file '" + path.string() + "'");
    for (const auto& [q, t] : pairing) out << q << '\t' << t << '\n';
}

namespace {

nlohmann::ordered_json metrics_json(const Metrics& m) {
    nlohmann::ordered_json obj;
    obj["medR"] = m.median_rank;
    nlohmann::ordered_json recall;
    for (const auto& [k, v] : m.recall_at) recall["R@" + std::to_string(k)] = v;
    obj["recall"] = recall;
    return obj;
}

}  // namespace

std::string serialize_report(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& d : report.directions) {
        nlohmann::ordered_json summary;
        summary["record"] = "summary";
        summary["direction"] = to_string(d.direction);
        summary["pool"] = report.config.pool_size;
        summary["repeats"] = report.config.repeats;
        summary["seed"] = report.config.seed;
        summary["ks"] = report.config.ks;
        summary.update(metrics_json(d.mean));
        out << summary.dump() << '\n';
        for (std::size_t r = 0; r < d.per_repeat.size(); ++r) {
            nlohmann::ordered_json rec;
            rec["record"] = "repeat";
            rec["direction"] = to_string(d.direction);
            rec["repeat"] = r;
            rec.update(metrics_json(d.per_repeat[r]));
            out << rec.dump() << '\n';
        }
    }
    return out.str();
}

}  // namespace simmer
