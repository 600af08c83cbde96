#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "simmer/index.hpp"
#include "simmer/prompting.hpp"

namespace simmer {

enum class EvalDirection { i2r, r2i, both };

EvalDirection parse_eval_direction(std::string_view text);

struct EvalConfig {
    std::size_t pool_size = 1000;
    std::size_t repeats = 10;
    std::vector<std::size_t> ks = {1, 5, 10};
    std::uint64_t seed = 0;
    EvalDirection direction = EvalDirection::i2r;
    unsigned threads = 1;
};

struct Metrics {
    double median_rank = 0.0;
    std::map<std::size_t, double> recall_at;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct DirectionReport {
    Direction direction = Direction::image_to_recipe;
    Metrics mean;
    std::vector<Metrics> per_repeat;
};

struct EvalReport {
    EvalConfig config;
    std::vector<DirectionReport> directions;
};

/// query id -> ground-truth candidate id
using Pairing = std::map<std::string, std::string>;

/// 1-based rank of `truth_id` under descending cosine with the id tie rule.
std::size_t rank_of_truth(const EmbeddingVector& query, const EmbeddingDump& candidates, const std::string& truth_id);

/// Median; an even count averages the two central values.
double median(std::vector<double> values);

/// medR and R@k for one set of ranks.
Metrics metrics_from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks);

/// Arithmetic mean of per-repeat metrics.
Metrics average_metrics(const std::vector<Metrics>& per_repeat);

/// Score of (query row, candidate row).
using ScoreFn = std::function<double(std::size_t query, std::size_t candidate)>;

struct ScoredPopulation {
    std::vector<std::string> query_ids;
    std::vector<std::string> candidate_ids;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query row, truth candidate row)
    ScoreFn score;
};

/// Repeated pool sampling over an arbitrary score function. Repeat r draws
/// pool_size pairs without replacement from an mt19937_64 seeded with seed ^ r;
/// the candidate pool is the truths of the drawn pairs.
DirectionReport evaluate_population(const ScoredPopulation& population, const EvalConfig& config,
                                    Direction direction);

/// Cosine evaluation. The population is every query in dump order, each of
/// which must have a pairing entry whose truth exists among the candidates.
/// `both` also evaluates the reverse direction on the same sampled pairs.
EvalReport evaluate(const EmbeddingDump& queries, const EmbeddingDump& candidates, const Pairing& pairing,
                    const EvalConfig& config);

Pairing load_pairs_tsv(const std::filesystem::path& path);
void save_pairs_tsv(const Pairing& pairing, const std::filesystem::path& path);

/// One JSON record per direction summary followed by its per-repeat records.
std::string serialize_report(const EvalReport& report);

}  // namespace simmer
