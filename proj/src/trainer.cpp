#include "simmer/trainer.hpp"

#include <array>
#include <cmath>
#include <numeric>

#include "simmer/error.hpp"
#include "simmer/hashing.hpp"

namespace simmer {

void validate_config(const TrainConfig& config) {
    if (config.batch_size == 0) throw UsageError("batch size must be positive");
    if (config.chunk_size == 0 || config.chunk_size > config.batch_size || config.batch_size % config.chunk_size != 0) {
        throw UsageError("chunk size " + std::to_string(config.chunk_size) + " must divide batch size " +
                         std::to_string(config.batch_size));
    }
    if (!(config.temperature > 0.0)) throw UsageError("temperature must be positive");
    if (!(config.learning_rate >= 0.0)) throw UsageError("learning rate must be non-negative");
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
        throw UsageError("adam betas must lie in [0, 1)");
    }
    if (!(config.epsilon > 0.0)) throw UsageError("adam epsilon must be positive");
}

DirectionDatasets build_direction_datasets(const PairedCorpus& corpus, bool augment_flag) {
    if (corpus.recipes.empty()) throw DataError("cannot build training datasets from an empty corpus");
    DirectionDatasets out;
    const std::size_t per_recipe = augment_flag ? kAugmentationMasks.size() : 1;
    out.i2r.reserve(corpus.size() * per_recipe);
    out.r2i.reserve(corpus.size() * per_recipe);
    for (const auto& recipe : corpus.recipes) {
        std::vector<RecipeVariant> variants;
        if (augment_flag) {
            variants = augment(recipe);
        } else {
            variants.push_back(as_variant(recipe));
        }
        const auto image_query = render_image_prompt(recipe.image_ref, Role::query, recipe.id);
        const auto image_candidate = render_image_prompt(recipe.image_ref, Role::candidate, recipe.id);
        for (const auto& variant : variants) {
            const auto id = variant.variant_id();
            out.i2r.push_back({image_query, render_recipe_prompt(variant, Role::candidate), id});
            out.r2i.push_back({render_recipe_prompt(variant, Role::query), image_candidate, id});
        }
    }
    return out;
}

namespace {

Matrix rows_of(std::span<const EmbeddingVector> embs) {
    if (embs.empty()) return {};
    Matrix m(embs.size(), embs[0].dim());
    for (std::size_t i = 0; i < embs.size(); ++i) {
        if (embs[i].dim() != m.cols()) throw DataError("info_nce: embedding '" + embs[i].id + "' has inconsistent dim");
        std::copy(embs[i].values.begin(), embs[i].values.end(), m.row(i).begin());
    }
    return m;
}

std::vector<double> row_norms(const Matrix& m, const char* side) {
    std::vector<double> norms(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        norms[i] = l2_norm(m.row(i));
        if (!(norms[i] > 0.0)) {
            throw NumericError(std::string("info_nce: zero-norm ") + side + " embedding at row " + std::to_string(i));
        }
    }
    return norms;
}

struct Logits {
    Matrix sim;  // cosine similarities
    std::vector<double> qnorm, cnorm;
    double loss = 0.0;
    double accuracy = 0.0;
    Matrix prob;  // row softmax of sim / tau
};

Logits forward(const Matrix& q, const Matrix& c, double tau) {
    if (q.rows() != c.rows()) {
        throw DataError("info_nce: " + std::to_string(q.rows()) + " queries vs " + std::to_string(c.rows()) + " candidates");
    }
    if (q.rows() == 0) throw DataError("info_nce: empty batch");
    if (q.cols() != c.cols()) throw DataError("info_nce: query and candidate dims differ");
    if (!(tau > 0.0)) throw UsageError("info_nce: temperature must be positive");
    const std::size_t n = q.rows();
    Logits out;
    out.qnorm = row_norms(q, "query");
    out.cnorm = row_norms(c, "candidate");
    out.sim = Matrix(n, n);
    out.prob = Matrix(n, n);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            const double s = cosine_with_norms(q.row(i), out.qnorm[i], c.row(j), out.cnorm[j]);
            out.sim(i, j) = s;
            row_max = std::max(row_max, s / tau);
        }
        double denom = 0.0;
        bool top = true;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(out.sim(i, j) / tau - row_max);
            out.prob(i, j) = e;
            denom += e;
            if (j != i && !(out.sim(i, j) < out.sim(i, i))) top = false;
        }
        for (std::size_t j = 0; j < n; ++j) out.prob(i, j) /= denom;
        const double log_sum_exp = row_max + std::log(denom);
        total += log_sum_exp - out.sim(i, i) / tau;
        if (top) ++correct;
    }
    out.loss = total / static_cast<double>(n);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!std::isfinite(out.loss)) throw NumericError("info_nce: non-finite loss");
    return out;
}

}  // namespace

double info_nce(const Matrix& queries, const Matrix& candidates, double tau) {
    return forward(queries, candidates, tau).loss;
}

InfoNceResult info_nce_with_grad(const Matrix& q, const Matrix& c, double tau) {
    auto f = forward(q, c, tau);
    const std::size_t n = q.rows();
    const std::size_t d = q.cols();
    InfoNceResult out;
    out.loss = f.loss;
    out.accuracy = f.accuracy;
    out.query_grad = Matrix(n, d);
    out.candidate_grad = Matrix(n, d);

    // dL/dsim_ij = (P_ij - [i == j]) / (n * tau)
    Matrix g(n, n);
    const double inv = 1.0 / (static_cast<double>(n) * tau);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) g(i, j) = (f.prob(i, j) - (i == j ? 1.0 : 0.0)) * inv;
    }
    // d sim_ij / d q_i = (c_j / |c_j| - sim_ij * q_i / |q_i|) / |q_i|, symmetric for c_j.
    for (std::size_t i = 0; i < n; ++i) {
        auto gq = out.query_grad.row(i);
        const auto qi = q.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double w = g(i, j);
            if (w == 0.0) continue;
            const auto cj = c.row(j);
            const double a = w / (f.qnorm[i] * f.cnorm[j]);
            const double b = w * f.sim(i, j) / (f.qnorm[i] * f.qnorm[i]);
            for (std::size_t k = 0; k < d; ++k) gq[k] += a * cj[k] - b * qi[k];
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        auto gc = out.candidate_grad.row(j);
        const auto cj = c.row(j);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = g(i, j);
            if (w == 0.0) continue;
            const auto qi = q.row(i);
            const double a = w / (f.qnorm[i] * f.cnorm[j]);
            const double b = w * f.sim(i, j) / (f.cnorm[j] * f.cnorm[j]);
            for (std::size_t k = 0; k < d; ++k) gc[k] += a * qi[k] - b * cj[k];
        }
    }
    return out;
}

double info_nce(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> candidates, double tau) {
    if (queries.size() != candidates.size()) throw DataError("info_nce: length mismatch");
    return info_nce(rows_of(queries), rows_of(candidates), tau);
}

InfoNceResult info_nce_grad(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> candidates,
                            double tau) {
    if (queries.size() != candidates.size()) throw DataError("info_nce: length mismatch");
    return info_nce_with_grad(rows_of(queries), rows_of(candidates), tau);
}

namespace {

enum Side : std::uint64_t { query_side = 0, candidate_side = 1 };

// Per-sample dropout stream so that re-encoding reproduces the same masks.
Rng sample_rng(std::uint64_t step_seed, std::size_t index, Side side) {
    return Rng(mix64(step_seed ^ mix64(2 * static_cast<std::uint64_t>(index) + side)));
}

const EmbeddingVector* features_of(const PromptedSample& s, const PairedCorpus& corpus) {
    if (s.modality != Modality::image) return nullptr;
    if (!s.image_ref) throw DataError("image sample '" + s.source_id + "' has no image reference");
    return &corpus.features_for(*s.image_ref);
}

EncodeTrace trace_sample(const EncoderParams& params, const PromptedSample& s, const PairedCorpus& corpus,
                         std::uint64_t step_seed, std::size_t index, Side side) {
    auto rng = sample_rng(step_seed, index, side);
    return encode_traced(params, s, features_of(s, corpus), true, rng);
}

}  // namespace

StepGradients compute_gradients_full(const EncoderParams& params, std::span<const TrainPair> batch,
                                     const PairedCorpus& corpus, const TrainConfig& config, std::uint64_t step_seed,
                                     WorkspaceMeter* meter) {
    const std::size_t n = batch.size();
    const std::size_t d = params.config.dim;
    std::vector<EncodeTrace> qt, ct;
    qt.reserve(n);
    ct.reserve(n);
    Matrix q(n, d), c(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        qt.push_back(trace_sample(params, batch[i].query, corpus, step_seed, i, query_side));
        ct.push_back(trace_sample(params, batch[i].candidate, corpus, step_seed, i, candidate_side));
        if (meter) meter->acquire(qt.back().bytes() + ct.back().bytes());
        std::copy(qt[i].embedding.begin(), qt[i].embedding.end(), q.row(i).begin());
        std::copy(ct[i].embedding.begin(), ct[i].embedding.end(), c.row(i).begin());
    }
    auto nce = info_nce_with_grad(q, c, config.temperature);
    StepGradients out;
    out.loss = nce.loss;
    out.accuracy = nce.accuracy;
    out.grads = zero_grads(params, config.update_mode);
    for (std::size_t i = 0; i < n; ++i) {
        accumulate_grads(params, qt[i], nce.query_grad.row(i), out.grads);
        accumulate_grads(params, ct[i], nce.candidate_grad.row(i), out.grads);
    }
    if (meter) {
        for (std::size_t i = 0; i < n; ++i) meter->release(qt[i].bytes() + ct[i].bytes());
    }
    return out;
}

StepGradients compute_gradients_cached(const EncoderParams& params, std::span<const TrainPair> batch,
                                       const PairedCorpus& corpus, const TrainConfig& config, std::uint64_t step_seed,
                                       WorkspaceMeter* meter) {
    const std::size_t n = batch.size();
    const std::size_t d = params.config.dim;
    const std::size_t chunk = config.chunk_size;
    if (chunk == 0 || n % chunk != 0) throw UsageError("chunk size must divide the batch size");

    // Pass 1: embeddings only.
    Matrix q(n, d), c(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (Side side : {query_side, candidate_side}) {
            const auto& sample = side == query_side ? batch[i].query : batch[i].candidate;
            auto t = trace_sample(params, sample, corpus, step_seed, i, side);
            if (meter) meter->acquire(t.bytes());
            auto row = side == query_side ? q.row(i) : c.row(i);
            std::copy(t.embedding.begin(), t.embedding.end(), row.begin());
            if (meter) meter->release(t.bytes());
        }
    }
    auto nce = info_nce_with_grad(q, c, config.temperature);

    // Pass 2: re-encode chunk by chunk and chain the cached embedding gradients.
    StepGradients out;
    out.loss = nce.loss;
    out.accuracy = nce.accuracy;
    out.grads = zero_grads(params, config.update_mode);
    std::vector<EncodeTrace> qt, ct;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        qt.clear();
        ct.clear();
        for (std::size_t i = begin; i < begin + chunk; ++i) {
            qt.push_back(trace_sample(params, batch[i].query, corpus, step_seed, i, query_side));
            ct.push_back(trace_sample(params, batch[i].candidate, corpus, step_seed, i, candidate_side));
            if (meter) meter->acquire(qt.back().bytes() + ct.back().bytes());
        }
        for (std::size_t k = 0; k < chunk; ++k) {
            accumulate_grads(params, qt[k], nce.query_grad.row(begin + k), out.grads);
            accumulate_grads(params, ct[k], nce.candidate_grad.row(begin + k), out.grads);
        }
        if (meter) {
            for (std::size_t k = 0; k < chunk; ++k) meter->release(qt[k].bytes() + ct[k].bytes());
        }
    }
    return out;
}

namespace {

std::array<Matrix*, 6> slots(EncoderGrads& g) {
    return {&g.text_weights, &g.image_weights, &g.text_down, &g.text_up, &g.image_down, &g.image_up};
}

std::array<Matrix*, 6> slots(EncoderParams& p) {
    return {&p.text_weights, &p.image_weights, &p.text_adapter.down, &p.text_adapter.up, &p.image_adapter.down,
            &p.image_adapter.up};
}

}  // namespace

AdamState init_adam(const EncoderParams& params, UpdateMode mode) {
    AdamState s;
    s.first_moment = zero_grads(params, mode);
    s.second_moment = zero_grads(params, mode);
    return s;
}

void adam_update(EncoderParams& params, AdamState& state, EncoderGrads& grads, const TrainConfig& config) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    auto ps = slots(params);
    auto gs = slots(grads);
    auto ms = slots(state.first_moment);
    auto vs = slots(state.second_moment);
    for (std::size_t s = 0; s < ps.size(); ++s) {
        if (gs[s]->empty()) continue;
        if (ms[s]->size() != gs[s]->size() || vs[s]->size() != gs[s]->size() || ps[s]->size() != gs[s]->size()) {
            throw DataError("adam: optimizer state does not match gradient shapes");
        }
        auto p = ps[s]->data();
        auto g = gs[s]->data();
        auto m = ms[s]->data();
        auto v = vs[s]->data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

TrainState init_train_state(EncoderParams params, UpdateMode mode) {
    validate_params(params);
    if (mode == UpdateMode::adapter_only && !params.config.adapter_enabled) {
        throw UsageError("adapter-only training requires an enabled adapter");
    }
    TrainState state{std::move(params), {}};
    state.adam = init_adam(state.params, mode);
    return state;
}

StepResult train_step_full(TrainState& state, std::span<const TrainPair> batch, const PairedCorpus& corpus,
                           const TrainConfig& config, std::uint64_t step_seed) {
    auto g = compute_gradients_full(state.params, batch, corpus, config, step_seed);
    adam_update(state.params, state.adam, g.grads, config);
    return {g.loss, g.accuracy};
}

StepResult train_step_cached(TrainState& state, std::span<const TrainPair> batch, const PairedCorpus& corpus,
                             const TrainConfig& config, std::uint64_t step_seed) {
    auto g = compute_gradients_cached(state.params, batch, corpus, config, step_seed);
    adam_update(state.params, state.adam, g.grads, config);
    return {g.loss, g.accuracy};
}

namespace {

class EpochCursor {
public:
    EpochCursor(std::size_t size, std::uint64_t seed) : seed_(seed), order_(size) { reshuffle(); }

    /// Indices of the next full batch; a new shuffled epoch starts whenever
    /// the remainder is too short.
    std::span<const std::size_t> next(std::size_t batch) {
        if (pos_ + batch > order_.size()) {
            ++epoch_;
            reshuffle();
        }
        std::span<const std::size_t> out(order_.data() + pos_, batch);
        pos_ += batch;
        return out;
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(mix64(seed_ ^ epoch_));
        shuffle_in_place(order_, rng);
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace

TrainResult train(const PairedCorpus& corpus, const TrainConfig& config, EncoderParams initial) {
    validate_config(config);
    auto state = init_train_state(std::move(initial), config.update_mode);
    TrainResult result;
    if (config.steps == 0) {
        result.params = std::move(state.params);
        return result;
    }
    const auto datasets = build_direction_datasets(corpus, config.augment);
    if (datasets.i2r.size() < config.batch_size) {
        throw UsageError("training set has " + std::to_string(datasets.i2r.size()) + " pairs per direction, fewer than batch size " +
                         std::to_string(config.batch_size) + "; use a smaller --batch-size");
    }
    EpochCursor i2r_cursor(datasets.i2r.size(), derive_seed(config.seed, "shuffle-i2r"));
    EpochCursor r2i_cursor(datasets.r2i.size(), derive_seed(config.seed, "shuffle-r2i"));
    const std::uint64_t step_base = derive_seed(config.seed, "step");

    std::vector<TrainPair> batch;
    batch.reserve(config.batch_size);
    result.log.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const bool i2r = step % 2 == 0;
        const auto& data = i2r ? datasets.i2r : datasets.r2i;
        auto indices = (i2r ? i2r_cursor : r2i_cursor).next(config.batch_size);
        batch.clear();
        for (auto i : indices) batch.push_back(data[i]);
        const std::uint64_t step_seed = mix64(step_base ^ step);
        const auto r = config.grad_cache ? train_step_cached(state, batch, corpus, config, step_seed)
                                         : train_step_full(state, batch, corpus, config, step_seed);
        if (!std::isfinite(r.loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
        result.log.push_back({step, i2r ? Direction::image_to_recipe : Direction::recipe_to_image, r.loss, r.accuracy});
    }
    result.params = std::move(state.params);
    return result;
}

}  // namespace simmer
