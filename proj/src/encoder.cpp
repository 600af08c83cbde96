#include "simmer/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "binary_io.hpp"
#include "simmer/error.hpp"
#include "simmer/hashing.hpp"

namespace simmer {

namespace {

void fill_normal(Matrix& m, double stddev, Rng& rng) {
    for (double& v : m.data()) v = stddev * standard_normal(rng);
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw DataError(std::string("encoder parameter '") + name + "' has shape " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

bool is_space(char c) {
    return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
    if (config.dim == 0 || config.hash_buckets == 0) throw UsageError("encoder dim and hash buckets must be positive");
    if (config.adapter_enabled && config.adapter_rank == 0) throw UsageError("adapter rank must be positive");
    if (!(config.adapter_alpha > 0.0)) throw UsageError("adapter alpha must be positive");
    if (!(config.adapter_dropout >= 0.0 && config.adapter_dropout < 1.0)) {
        throw UsageError("adapter dropout must lie in [0, 1)");
    }
    Rng rng(derive_seed(seed, "encoder-init"));
    EncoderParams p;
    p.config = config;
    p.text_weights = Matrix(config.dim, config.hash_buckets);
    p.image_weights = Matrix(config.dim, config.feature_dim);
    fill_normal(p.text_weights, 1.0 / std::sqrt(static_cast<double>(config.dim)), rng);
    if (config.feature_dim) fill_normal(p.image_weights, 1.0 / std::sqrt(static_cast<double>(config.feature_dim)), rng);

    const std::size_t rank = config.adapter_enabled ? config.adapter_rank : 0;
    for (auto* adapter : {&p.text_adapter, &p.image_adapter}) {
        adapter->alpha = config.adapter_alpha;
        adapter->dropout_rate = config.adapter_dropout;
    }
    p.text_adapter.down = Matrix(rank, config.hash_buckets);
    p.text_adapter.up = Matrix(config.dim, rank);
    p.image_adapter.down = Matrix(rank, config.feature_dim);
    p.image_adapter.up = Matrix(config.dim, rank);
    fill_normal(p.text_adapter.down, 1.0 / std::sqrt(static_cast<double>(config.hash_buckets)), rng);
    if (config.feature_dim) {
        fill_normal(p.image_adapter.down, 1.0 / std::sqrt(static_cast<double>(config.feature_dim)), rng);
    }
    return p;
}

void validate_params(const EncoderParams& params) {
    const auto& c = params.config;
    if (c.dim == 0) throw DataError("encoder dim must be positive");
    require_shape(params.text_weights, c.dim, c.hash_buckets, "text_weights");
    require_shape(params.image_weights, c.dim, c.feature_dim, "image_weights");
    const std::size_t rank = c.adapter_enabled ? c.adapter_rank : 0;
    require_shape(params.text_adapter.down, rank, c.hash_buckets, "text_adapter.down");
    require_shape(params.text_adapter.up, c.dim, rank, "text_adapter.up");
    require_shape(params.image_adapter.down, rank, c.feature_dim, "image_adapter.down");
    require_shape(params.image_adapter.up, c.dim, rank, "image_adapter.up");
}

std::vector<std::string_view> tokenize(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) tokens.push_back(text.substr(start, i - start));
    }
    return tokens;
}

SparseInput hash_tokens(std::string_view text, std::size_t buckets) {
    std::map<std::uint32_t, double> counts;
    for (auto token : tokenize(text)) counts[static_cast<std::uint32_t>(token_hash(token) % buckets)] += 1.0;
    SparseInput out;
    out.index.reserve(counts.size());
    out.value.reserve(counts.size());
    for (const auto& [bucket, count] : counts) {
        out.index.push_back(bucket);
        out.value.push_back(count);
    }
    return out;
}

SparseInput dense_input(std::span<const double> features) {
    SparseInput out;
    out.index.resize(features.size());
    out.value.assign(features.begin(), features.end());
    for (std::size_t i = 0; i < features.size(); ++i) out.index[i] = static_cast<std::uint32_t>(i);
    return out;
}

std::size_t EncodeTrace::bytes() const noexcept {
    return input.index.size() * sizeof(std::uint32_t) +
           (input.value.size() + dropped.size() + hidden.size() + embedding.size()) * sizeof(double);
}

EncodeTrace encode_traced(const EncoderParams& params, const PromptedSample& sample,
                          const EmbeddingVector* image_features, bool train_mode, Rng& rng) {
    const auto& cfg = params.config;
    EncodeTrace trace;
    trace.modality = sample.modality;
    const Matrix* base = nullptr;
    const LowRankAdapter* adapter = nullptr;
    if (sample.modality == Modality::image) {
        if (!image_features) throw DataError("encode: missing image features for '" + sample.source_id + "'");
        if (image_features->dim() != cfg.feature_dim) {
            throw DataError("encode: image features for '" + sample.source_id + "' have dim " +
                            std::to_string(image_features->dim()) + ", expected " + std::to_string(cfg.feature_dim));
        }
        trace.input = dense_input(image_features->values);
        base = &params.image_weights;
        adapter = &params.image_adapter;
    } else {
        if (sample.text.empty()) throw DataError("encode: empty recipe text for '" + sample.source_id + "'");
        trace.input = hash_tokens(sample.text, cfg.hash_buckets);
        base = &params.text_weights;
        adapter = &params.text_adapter;
    }

    const auto& x = trace.input;
    trace.embedding.assign(cfg.dim, 0.0);
    for (std::size_t o = 0; o < cfg.dim; ++o) {
        const auto w = base->row(o);
        double sum = 0.0;
        for (std::size_t k = 0; k < x.nnz(); ++k) sum += w[x.index[k]] * x.value[k];
        trace.embedding[o] = sum;
    }

    if (!cfg.adapter_enabled) return trace;

    const double p = adapter->dropout_rate;
    if (train_mode && p > 0.0) {
        trace.dropped.resize(x.nnz());
        const double keep_scale = 1.0 / (1.0 - p);
        for (std::size_t k = 0; k < x.nnz(); ++k) {
            trace.dropped[k] = uniform01(rng) < p ? 0.0 : x.value[k] * keep_scale;
        }
    } else {
        trace.dropped = x.value;
    }

    const std::size_t rank = adapter->rank();
    trace.hidden.assign(rank, 0.0);
    for (std::size_t r = 0; r < rank; ++r) {
        const auto a = adapter->down.row(r);
        double sum = 0.0;
        for (std::size_t k = 0; k < x.nnz(); ++k) sum += a[x.index[k]] * trace.dropped[k];
        trace.hidden[r] = sum;
    }
    const double scale = adapter->scale();
    for (std::size_t o = 0; o < cfg.dim; ++o) {
        const auto b = adapter->up.row(o);
        double sum = 0.0;
        for (std::size_t r = 0; r < rank; ++r) sum += b[r] * trace.hidden[r];
        trace.embedding[o] += scale * sum;
    }
    return trace;
}

EmbeddingVector encode(const EncoderParams& params, const PromptedSample& sample,
                       const EmbeddingVector* image_features, bool train_mode, Rng& rng) {
    auto trace = encode_traced(params, sample, image_features, train_mode, rng);
    return {sample.source_id, std::move(trace.embedding)};
}

EncoderGrads zero_grads(const EncoderParams& params, UpdateMode mode) {
    EncoderGrads g;
    if (mode == UpdateMode::full) {
        g.text_weights = Matrix(params.text_weights.rows(), params.text_weights.cols());
        g.image_weights = Matrix(params.image_weights.rows(), params.image_weights.cols());
    }
    if (params.config.adapter_enabled) {
        g.text_down = Matrix(params.text_adapter.down.rows(), params.text_adapter.down.cols());
        g.text_up = Matrix(params.text_adapter.up.rows(), params.text_adapter.up.cols());
        g.image_down = Matrix(params.image_adapter.down.rows(), params.image_adapter.down.cols());
        g.image_up = Matrix(params.image_adapter.up.rows(), params.image_adapter.up.cols());
    }
    return g;
}

void accumulate_grads(const EncoderParams& params, const EncodeTrace& trace, std::span<const double> embedding_grad,
                      EncoderGrads& grads) {
    const bool image = trace.modality == Modality::image;
    const auto& x = trace.input;
    const std::size_t dim = params.config.dim;
    Matrix& g_base = image ? grads.image_weights : grads.text_weights;
    if (!g_base.empty()) {
        for (std::size_t o = 0; o < dim; ++o) {
            auto row = g_base.row(o);
            const double go = embedding_grad[o];
            for (std::size_t k = 0; k < x.nnz(); ++k) row[x.index[k]] += go * x.value[k];
        }
    }
    if (!params.config.adapter_enabled) return;

    const LowRankAdapter& adapter = image ? params.image_adapter : params.text_adapter;
    Matrix& g_down = image ? grads.image_down : grads.text_down;
    Matrix& g_up = image ? grads.image_up : grads.text_up;
    const std::size_t rank = adapter.rank();
    const double scale = adapter.scale();

    if (!g_up.empty()) {
        for (std::size_t o = 0; o < dim; ++o) {
            auto row = g_up.row(o);
            const double go = scale * embedding_grad[o];
            for (std::size_t r = 0; r < rank; ++r) row[r] += go * trace.hidden[r];
        }
    }
    if (!g_down.empty()) {
        std::vector<double> upstream(rank, 0.0);  // scale * up^T g
        for (std::size_t o = 0; o < dim; ++o) {
            const auto b = adapter.up.row(o);
            for (std::size_t r = 0; r < rank; ++r) upstream[r] += b[r] * embedding_grad[o];
        }
        for (std::size_t r = 0; r < rank; ++r) {
            auto row = g_down.row(r);
            const double ur = scale * upstream[r];
            for (std::size_t k = 0; k < x.nnz(); ++k) row[x.index[k]] += ur * trace.dropped[k];
        }
    }
}

namespace {

void put_matrix(std::string& out, const Matrix& m, const char* name) {
    for (double v : m.data()) {
        const auto f = static_cast<float>(v);
        if (!std::isfinite(f)) throw NumericError(std::string("params: non-finite value in ") + name);
        detail::put(out, f);
    }
}

Matrix get_matrix(detail::Reader& in, std::size_t rows, std::size_t cols, const char* name) {
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        const auto f = in.get<float>();
        if (!std::isfinite(f)) throw NumericError(std::string("params: non-finite value in ") + name);
        v = f;
    }
    return m;
}

}  // namespace

std::string serialize_params(const EncoderParams& params) {
    validate_params(params);
    const auto& c = params.config;
    std::string out(kParamsMagic);
    detail::put(out, static_cast<std::uint32_t>(c.dim));
    detail::put(out, static_cast<std::uint32_t>(c.hash_buckets));
    detail::put(out, static_cast<std::uint32_t>(c.feature_dim));
    detail::put(out, static_cast<std::uint32_t>(c.adapter_rank));
    detail::put(out, c.adapter_alpha);
    detail::put(out, c.adapter_dropout);
    detail::put(out, static_cast<std::uint32_t>(c.adapter_enabled ? 1u : 0u));
    put_matrix(out, params.text_weights, "text_weights");
    put_matrix(out, params.image_weights, "image_weights");
    put_matrix(out, params.text_adapter.down, "text_adapter.down");
    put_matrix(out, params.text_adapter.up, "text_adapter.up");
    put_matrix(out, params.image_adapter.down, "image_adapter.down");
    put_matrix(out, params.image_adapter.up, "image_adapter.up");
    return out;
}

EncoderParams parse_params(std::string_view bytes) {
    detail::Reader in(bytes, "params file");
    if (in.take(std::min(bytes.size(), kParamsMagic.size())) != kParamsMagic) {
        throw DataError("params file: bad magic (expected '" + std::string(kParamsMagic) + "')");
    }
    EncoderConfig c;
    c.dim = in.get<std::uint32_t>();
    c.hash_buckets = in.get<std::uint32_t>();
    c.feature_dim = in.get<std::uint32_t>();
    c.adapter_rank = in.get<std::uint32_t>();
    c.adapter_alpha = in.get<double>();
    c.adapter_dropout = in.get<double>();
    const auto flags = in.get<std::uint32_t>();
    if (flags > 1) throw DataError("params file: unknown flags " + std::to_string(flags));
    c.adapter_enabled = flags & 1u;
    if (c.dim == 0 || c.hash_buckets == 0) throw DataError("params file: zero dimension");
    if (!std::isfinite(c.adapter_alpha) || !std::isfinite(c.adapter_dropout)) {
        throw NumericError("params file: non-finite adapter config");
    }

    const std::size_t rank = c.adapter_enabled ? c.adapter_rank : 0;
    const std::size_t expected = (c.dim * c.hash_buckets + c.dim * c.feature_dim + rank * c.hash_buckets +
                                  c.dim * rank + rank * c.feature_dim + c.dim * rank) * sizeof(float);
    if (in.remaining() != expected) {
        throw DataError("params file: payload is " + std::to_string(in.remaining()) + " bytes, expected " +
                        std::to_string(expected));
    }
    EncoderParams p;
    p.config = c;
    p.text_weights = get_matrix(in, c.dim, c.hash_buckets, "text_weights");
    p.image_weights = get_matrix(in, c.dim, c.feature_dim, "image_weights");
    p.text_adapter.down = get_matrix(in, rank, c.hash_buckets, "text_adapter.down");
    p.text_adapter.up = get_matrix(in, c.dim, rank, "text_adapter.up");
    p.image_adapter.down = get_matrix(in, rank, c.feature_dim, "image_adapter.down");
    p.image_adapter.up = get_matrix(in, c.dim, rank, "image_adapter.up");
    for (auto* a : {&p.text_adapter, &p.image_adapter}) {
        a->alpha = c.adapter_alpha;
        a->dropout_rate = c.adapter_dropout;
    }
    return p;
}

void save_params(const EncoderParams& params, const std::filesystem::path& path) {
    detail::write_file(path, serialize_params(params));
}

EncoderParams load_params(const std::filesystem::path& path) {
    return parse_params(detail::read_file(path));
}

}  // namespace simmer
