#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simmer/corpus.hpp"
#include "simmer/encoder.hpp"
#include "simmer/matrix.hpp"
#include "simmer/prompting.hpp"

namespace simmer {

struct TrainPair {
    PromptedSample query;
    PromptedSample candidate;
    std::string pair_id;

    friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

struct TrainConfig {
    std::size_t batch_size = 128;
    double temperature = 0.02;
    double learning_rate = 1e-4;
    std::size_t steps = 2000;
    std::size_t chunk_size = 128;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool augment = true;
    bool grad_cache = true;
    UpdateMode update_mode = UpdateMode::adapter_only;
};

/// Throws UsageError for a zero batch, non-positive temperature or a chunk
/// size that does not divide the batch.
void validate_config(const TrainConfig& config);

struct DirectionDatasets {
    std::vector<TrainPair> i2r;  // image query -> recipe candidate
    std::vector<TrainPair> r2i;  // recipe query -> image candidate
};

/// One pair per recipe (variant) per direction. With augmentation every
/// recipe contributes its four variants to both directions.
DirectionDatasets build_direction_datasets(const PairedCorpus& corpus, bool augment);

struct InfoNceResult {
    double loss = 0.0;
    double accuracy = 0.0;  // fraction of rows whose positive has the top logit
    Matrix query_grad;      // B x d
    Matrix candidate_grad;  // B x d
};

/// Rows are embeddings. Mean over rows of -log softmax(sim / tau)[i][i],
/// with cosine similarity and per-row max subtraction.
double info_nce(const Matrix& queries, const Matrix& candidates, double tau);
InfoNceResult info_nce_with_grad(const Matrix& queries, const Matrix& candidates, double tau);

double info_nce(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> candidates, double tau);
InfoNceResult info_nce_grad(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> candidates,
                            double tau);

/// Tracks live bytes of retained forward traces and their peak.
class WorkspaceMeter {
public:
    void acquire(std::size_t bytes) noexcept {
        live_ += bytes;
        if (live_ > peak_) peak_ = live_;
    }
    void release(std::size_t bytes) noexcept { live_ -= bytes; }
    std::size_t live() const noexcept { return live_; }
    std::size_t peak() const noexcept { return peak_; }
    void reset() noexcept { live_ = peak_ = 0; }

private:
    std::size_t live_ = 0;
    std::size_t peak_ = 0;
};

struct StepGradients {
    double loss = 0.0;
    double accuracy = 0.0;
    EncoderGrads grads;
};

/// Loss and parameter gradients for one batch, retaining every trace.
StepGradients compute_gradients_full(const EncoderParams& params, std::span<const TrainPair> batch,
                                     const PairedCorpus& corpus, const TrainConfig& config, std::uint64_t step_seed,
                                     WorkspaceMeter* meter = nullptr);

/// Same result via two passes: embeddings only, then chunk-wise re-encoding
/// chained with the cached embedding gradients.
StepGradients compute_gradients_cached(const EncoderParams& params, std::span<const TrainPair> batch,
                                       const PairedCorpus& corpus, const TrainConfig& config, std::uint64_t step_seed,
                                       WorkspaceMeter* meter = nullptr);

struct AdamState {
    std::size_t step = 0;
    EncoderGrads first_moment;
    EncoderGrads second_moment;
};

AdamState init_adam(const EncoderParams& params, UpdateMode mode);
void adam_update(EncoderParams& params, AdamState& state, EncoderGrads& grads, const TrainConfig& config);

struct TrainState {
    EncoderParams params;
    AdamState adam;
};

TrainState init_train_state(EncoderParams params, UpdateMode mode);

struct StepResult {
    double loss = 0.0;  // before the update
    double accuracy = 0.0;
};

StepResult train_step_full(TrainState& state, std::span<const TrainPair> batch, const PairedCorpus& corpus,
                           const TrainConfig& config, std::uint64_t step_seed);
StepResult train_step_cached(TrainState& state, std::span<const TrainPair> batch, const PairedCorpus& corpus,
                             const TrainConfig& config, std::uint64_t step_seed);

struct TrainLogEntry {
    std::size_t step = 0;
    Direction direction = Direction::image_to_recipe;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    EncoderParams params;
    std::vector<TrainLogEntry> log;
};

/// Alternates i2r (even steps) and r2i (odd steps) batches, each direction
/// walking its own reshuffled epochs without replacement.
TrainResult train(const PairedCorpus& corpus, const TrainConfig& config, EncoderParams initial);

}  // namespace simmer
