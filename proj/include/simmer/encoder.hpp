#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simmer/embedding.hpp"
#include "simmer/matrix.hpp"
#include "simmer/prompting.hpp"
#include "simmer/random.hpp"

namespace simmer {

struct EncoderConfig {
    std::size_t dim = 256;            // output embedding dimension d
    std::size_t hash_buckets = 4096;  // V
    std::size_t feature_dim = 0;      // F, width of precomputed image features
    bool adapter_enabled = true;
    std::size_t adapter_rank = 16;
    double adapter_alpha = 64.0;
    double adapter_dropout = 0.1;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Low-rank update (alpha / rank) * up * down added to a frozen map.
/// `down` is rank x in, `up` is out x rank and starts at zero.
struct LowRankAdapter {
    Matrix down;
    Matrix up;
    double alpha = 64.0;
    double dropout_rate = 0.1;

    std::size_t rank() const noexcept { return down.rows(); }
    double scale() const noexcept { return alpha / static_cast<double>(rank()); }

    friend bool operator==(const LowRankAdapter&, const LowRankAdapter&) = default;
};

struct EncoderParams {
    EncoderConfig config;
    Matrix text_weights;   // d x V
    Matrix image_weights;  // d x F
    LowRankAdapter text_adapter;
    LowRankAdapter image_adapter;

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Random base weights and adapter down-projections, zero up-projections.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// Throws DataError if matrix shapes disagree with the config.
void validate_params(const EncoderParams& params);

/// Sparse input vector with strictly increasing indices.
struct SparseInput {
    std::vector<std::uint32_t> index;
    std::vector<double> value;

    std::size_t nnz() const noexcept { return index.size(); }
    friend bool operator==(const SparseInput&, const SparseInput&) = default;
};

/// Whitespace tokens of `text`.
std::vector<std::string_view> tokenize(std::string_view text);

/// Bag of token counts, each token bucketed by token_hash(token) % buckets.
SparseInput hash_tokens(std::string_view text, std::size_t buckets);

/// Dense features as a sparse input covering every coordinate.
SparseInput dense_input(std::span<const double> features);

/// Everything the backward pass needs from one forward pass.
struct EncodeTrace {
    Modality modality = Modality::recipe;
    SparseInput input;              // x
    std::vector<double> dropped;    // adapter-path input values after dropout
    std::vector<double> hidden;     // down * dropped, length rank
    std::vector<double> embedding;  // output, length d

    std::size_t bytes() const noexcept;
};

/// Forward pass. Image samples read `image_features`; recipe samples hash
/// their prompt text. Dropout on the adapter input (inverted scaling) is
/// drawn from `rng` only when `train_mode` is set.
EncodeTrace encode_traced(const EncoderParams& params, const PromptedSample& sample,
                          const EmbeddingVector* image_features, bool train_mode, Rng& rng);

EmbeddingVector encode(const EncoderParams& params, const PromptedSample& sample,
                       const EmbeddingVector* image_features, bool train_mode, Rng& rng);

/// Parameter gradients with the same shapes as EncoderParams. Matrices of
/// frozen parameters stay empty.
struct EncoderGrads {
    Matrix text_weights;
    Matrix image_weights;
    Matrix text_down;
    Matrix text_up;
    Matrix image_down;
    Matrix image_up;

    friend bool operator==(const EncoderGrads&, const EncoderGrads&) = default;
};

enum class UpdateMode { adapter_only, full };

/// Zero gradients for the parameters trainable under `mode`.
EncoderGrads zero_grads(const EncoderParams& params, UpdateMode mode);

/// Accumulates dL/dparams given dL/d(embedding) for one traced forward pass.
void accumulate_grads(const EncoderParams& params, const EncodeTrace& trace, std::span<const double> embedding_grad,
                      EncoderGrads& grads);

/// Visits (param, grad) pairs for every trainable matrix in a fixed order.
template <typename Fn>
void for_each_trainable(EncoderParams& params, EncoderGrads& grads, Fn&& fn) {
    auto visit = [&](Matrix& p, Matrix& g) {
        if (!g.empty()) fn(p, g);
    };
    visit(params.text_weights, grads.text_weights);
    visit(params.image_weights, grads.image_weights);
    visit(params.text_adapter.down, grads.text_down);
    visit(params.text_adapter.up, grads.text_up);
    visit(params.image_adapter.down, grads.image_down);
    visit(params.image_adapter.up, grads.image_up);
}

// Params file: "SIMRPRM1", a little-endian config block (u32 dim, buckets,
// feature_dim, rank; f64 alpha, dropout; u32 flags), then row-major f32
// matrices: text W, image W, text A, text B, image A, image B.
inline constexpr std::string_view kParamsMagic = "SIMRPRM1";

std::string serialize_params(const EncoderParams& params);
/// Throws DataError on bad magic/truncation, NumericError on non-finite values.
EncoderParams parse_params(std::string_view bytes);
void save_params(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

}  // namespace simmer
