#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "simmer/error.hpp"
#include "simmer/synthetic.hpp"
#include "simmer/trainer.hpp"

using namespace simmer;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = standard_normal(rng);
    return m;
}

oracle::WideMatrix widen(const Matrix& m) {
    oracle::WideMatrix out(m.rows(), std::vector<oracle::Wide>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
    }
    return out;
}

bool close_rel(double a, double b, double rel, double abs_floor) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

PairedCorpus small_corpus(std::size_t pairs = 16, std::size_t feature_dim = 5) {
    return make_planted_corpus({pairs, 4, feature_dim, 11});
}

EncoderParams small_params(const PairedCorpus& corpus, std::uint64_t seed, bool random_up = true) {
    EncoderConfig cfg{8, 64, corpus.feature_dim(), true, 3, 6.0, 0.1};
    auto p = init_params(cfg, seed);
    if (random_up) {
        Rng rng(seed ^ 0x5eedULL);
        p.text_adapter.up = random_matrix(8, 3, rng);
        p.image_adapter.up = random_matrix(8, 3, rng);
    }
    return p;
}

TrainConfig small_config(std::size_t batch, std::size_t chunk, UpdateMode mode = UpdateMode::full) {
    TrainConfig c;
    c.batch_size = batch;
    c.chunk_size = chunk;
    c.learning_rate = 1e-2;
    c.update_mode = mode;
    c.augment = false;
    return c;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    double worst = 0;
    for (std::size_t k = 0; k < a.data().size(); ++k) {
        const double x = a.data()[k];
        const double y = b.data()[k];
        const double scale = std::max({std::abs(x), std::abs(y), 1e-300});
        if (x != y) worst = std::max(worst, std::abs(x - y) / scale);
    }
    return worst;
}

std::vector<const Matrix*> matrices(const EncoderGrads& g) {
    return {&g.text_weights, &g.image_weights, &g.text_down, &g.text_up, &g.image_down, &g.image_up};
}

std::vector<const Matrix*> matrices(const EncoderParams& p) {
    return {&p.text_weights, &p.image_weights, &p.text_adapter.down, &p.text_adapter.up, &p.image_adapter.down,
            &p.image_adapter.up};
}

}  // namespace

TEST_CASE("direction datasets") {
    const auto corpus = small_corpus(10);
    const auto plain = build_direction_datasets(corpus, false);
    CHECK(plain.i2r.size() == 10);
    CHECK(plain.r2i.size() == 10);
    const auto aug = build_direction_datasets(corpus, true);
    CHECK(aug.i2r.size() == 40);
    CHECK(aug.r2i.size() == 40);

    for (const auto& p : aug.i2r) {
        CHECK(p.query.modality == Modality::image);
        CHECK(p.query.role == Role::query);
        CHECK(p.candidate.modality == Modality::recipe);
        CHECK(p.candidate.role == Role::candidate);
        CHECK(p.query.direction == Direction::image_to_recipe);
    }
    for (const auto& p : aug.r2i) {
        CHECK(p.query.modality == Modality::recipe);
        CHECK(p.candidate.modality == Modality::image);
        CHECK(p.query.direction == Direction::recipe_to_image);
    }
    // Each recipe contributes one complete and three single-component variants.
    std::size_t complete = 0;
    for (const auto& p : aug.i2r) complete += p.pair_id.find('#') == std::string::npos;
    CHECK(complete == 10);
}

TEST_CASE("info_nce closed forms") {
    Rng rng(3);
    SUBCASE("single pair is exactly zero") {
        const auto q = random_matrix(1, 8, rng);
        const auto c = random_matrix(1, 8, rng);
        CHECK(info_nce(q, c, 0.02) == 0.0);
        const auto r = info_nce_with_grad(q, c, 0.02);
        CHECK(r.loss == 0.0);
        for (double v : r.query_grad.data()) CHECK(v == 0.0);
        for (double v : r.candidate_grad.data()) CHECK(v == 0.0);
    }
    SUBCASE("equal similarities give ln B") {
        for (std::size_t b : {2u, 4u, 8u, 128u}) {
            Matrix q(b, 4), c(b, 4);
            for (std::size_t i = 0; i < b; ++i) {
                q(i, 0) = 1.0 + static_cast<double>(i);  // cosine ignores the scale
                c(i, 0) = 2.0;
            }
            CHECK(std::abs(info_nce(q, c, 0.02) - std::log(static_cast<double>(b))) <= 1e-12);
        }
    }
    SUBCASE("two orthogonal pairs") {
        Matrix q(2, 2), c(2, 2);
        q(0, 0) = c(0, 0) = 1;
        q(1, 1) = c(1, 1) = 1;
        const double tau = 0.5;
        CHECK(std::abs(info_nce(q, c, tau) - std::log(1 + std::exp(-1 / tau))) <= 1e-12);
    }
}

TEST_CASE("info_nce matches a wide-precision oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_matrix(6, 8, rng);
        const auto c = random_matrix(6, 8, rng);
        for (double tau : {0.02, 0.1, 1.0}) {
            const double want = static_cast<double>(oracle::info_nce(widen(q), widen(c), tau));
            CHECK(close_rel(info_nce(q, c, tau), want, 1e-10, 1e-12));
        }
    }
}

TEST_CASE("info_nce gradient matches central differences") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_matrix(4, 8, rng);
        const auto c = random_matrix(4, 8, rng);
        const double tau = 0.02;
        const auto r = info_nce_with_grad(q, c, tau);
        const auto [fq, fc] = oracle::info_nce_fd(widen(q), widen(c), tau, 1e-5L);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t k = 0; k < 8; ++k) {
                CHECK(close_rel(r.query_grad(i, k), static_cast<double>(fq[i][k]), 1e-4, 1e-9));
                CHECK(close_rel(r.candidate_grad(i, k), static_cast<double>(fc[i][k]), 1e-4, 1e-9));
            }
        }
    }
}

TEST_CASE("info_nce properties") {
    Rng rng(23);
    const auto q = random_matrix(5, 6, rng);
    const auto c = random_matrix(5, 6, rng);
    const double base = info_nce(q, c, 0.1);
    CHECK(base >= 0.0);

    SUBCASE("positive rescaling of one embedding") {
        auto q2 = q;
        for (double& v : q2.row(2)) v *= 37.5;
        auto c2 = c;
        for (double& v : c2.row(4)) v *= 0.003;
        CHECK(std::abs(info_nce(q2, c2, 0.1) - base) <= 1e-10);
    }
    SUBCASE("moving a query toward its positive lowers the loss") {
        const auto r = info_nce_with_grad(q, c, 0.1);
        auto q2 = q;
        for (std::size_t k = 0; k < 6; ++k) q2(0, k) -= 1e-3 * r.query_grad(0, k);
        CHECK(info_nce(q2, c, 0.1) < base);
    }
    SUBCASE("duplicated positive splits the probability") {
        // Row 0's positive appears twice, so its softmax mass halves; row 1 sees two equal logits.
        Matrix a(2, 2), b(2, 2);
        a(0, 0) = 1;
        a(1, 1) = 1;
        b(0, 0) = 1;
        b(1, 0) = 3;
        CHECK(std::abs(info_nce(a, b, 0.05) - std::log(2.0)) <= 1e-12);
    }
    SUBCASE("accuracy counts rows whose positive wins") {
        Matrix a(3, 3), b(3, 3);
        for (std::size_t i = 0; i < 3; ++i) a(i, i) = b(i, i) = 1;
        b(2, 2) = -1;  // row 2's positive now scores below every negative
        const auto r = info_nce_with_grad(a, b, 0.1);
        CHECK(r.accuracy == doctest::Approx(2.0 / 3.0));
    }
}

TEST_CASE("span overloads agree with the matrix forms") {
    Rng rng(29);
    const auto q = random_matrix(3, 4, rng);
    const auto c = random_matrix(3, 4, rng);
    std::vector<EmbeddingVector> qe, ce;
    for (std::size_t i = 0; i < 3; ++i) {
        qe.push_back({"q" + std::to_string(i), {q.row(i).begin(), q.row(i).end()}});
        ce.push_back({"c" + std::to_string(i), {c.row(i).begin(), c.row(i).end()}});
    }
    CHECK(info_nce(qe, ce, 0.05) == info_nce(q, c, 0.05));
    CHECK(info_nce_grad(qe, ce, 0.05).query_grad == info_nce_with_grad(q, c, 0.05).query_grad);
}

TEST_CASE("info_nce errors") {
    Matrix q(2, 3), c(2, 3);
    q(0, 0) = q(1, 1) = c(0, 0) = c(1, 1) = 1;
    CHECK_THROWS_AS(info_nce(q, c, 0.0), UsageError);
    CHECK_THROWS_AS(info_nce(q, Matrix(3, 3), 0.1), DataError);
    CHECK_THROWS_AS(info_nce(Matrix(0, 3), Matrix(0, 3), 0.1), DataError);
    Matrix z = c;
    z.row(1)[1] = 0;
    CHECK_THROWS_AS(info_nce(q, z, 0.1), NumericError);
}

TEST_CASE("parameter gradients match central differences end to end") {
    const auto corpus = small_corpus(8);
    const auto data = build_direction_datasets(corpus, false);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto& pairs = seed % 2 ? data.r2i : data.i2r;
        std::span<const TrainPair> batch(pairs.data() + seed, 4);
        auto params = small_params(corpus, seed);
        auto cfg = small_config(4, 4);
        cfg.temperature = 0.02;
        const std::uint64_t step_seed = 1234 + seed;
        const auto analytic = compute_gradients_full(params, batch, corpus, cfg, step_seed);

        std::vector<Matrix*> ps = {&params.text_weights, &params.image_weights, &params.text_adapter.down,
                                   &params.text_adapter.up, &params.image_adapter.down, &params.image_adapter.up};
        const auto gs = matrices(analytic.grads);
        std::size_t checked = 0;
        for (std::size_t m = 0; m < ps.size(); ++m) {
            auto data_ref = ps[m]->data();
            for (std::size_t k = 0; k < data_ref.size(); ++k) {
                const double g = gs[m]->data()[k];
                const double saved = data_ref[k];
                const double fd = oracle::five_point(
                    [&](double t) {
                        data_ref[k] = saved + t;
                        return compute_gradients_full(params, batch, corpus, cfg, step_seed).loss;
                    },
                    1e-3);
                data_ref[k] = saved;
                CHECK_MESSAGE(close_rel(g, fd, 1e-3, 1e-7), "matrix ", m, " coord ", k, ": ", g, " vs ", fd);
                checked += g != 0.0;
            }
        }
        CHECK(checked > 100);
    }
}

TEST_CASE("adapter-only mode leaves base gradients empty") {
    const auto corpus = small_corpus(8);
    const auto data = build_direction_datasets(corpus, false);
    const auto params = small_params(corpus, 1);
    const auto g = compute_gradients_full(params, std::span(data.i2r).first(4), corpus,
                                          small_config(4, 4, UpdateMode::adapter_only), 9);
    CHECK(g.grads.text_weights.empty());
    CHECK(g.grads.image_weights.empty());
    CHECK_FALSE(g.grads.text_up.empty());
    CHECK_FALSE(g.grads.image_down.empty());
}

TEST_CASE("cached gradients equal full-batch gradients for every chunk size") {
    const auto corpus = small_corpus(16);
    const auto data = build_direction_datasets(corpus, false);
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const auto& pairs = trial % 2 ? data.r2i : data.i2r;
        std::span<const TrainPair> batch(pairs.data() + trial % 8, 8);
        const auto params = small_params(corpus, 100 + trial);
        const auto full = compute_gradients_full(params, batch, corpus, small_config(8, 8), trial);
        for (std::size_t chunk : {1u, 2u, 4u, 8u}) {
            const auto cached = compute_gradients_cached(params, batch, corpus, small_config(8, chunk), trial);
            CHECK(cached.loss == full.loss);
            const auto a = matrices(full.grads);
            const auto b = matrices(cached.grads);
            for (std::size_t m = 0; m < a.size(); ++m) CHECK(max_rel_diff(*a[m], *b[m]) <= 1e-9);
        }
        const auto same = compute_gradients_cached(params, batch, corpus, small_config(8, 8), trial);
        CHECK(same.grads == full.grads);
    }
}

TEST_CASE("cached and full steps produce the same update") {
    const auto corpus = small_corpus(16);
    const auto data = build_direction_datasets(corpus, false);
    std::span<const TrainPair> batch(data.i2r.data(), 8);
    for (std::size_t chunk : {1u, 2u, 4u, 8u}) {
        const auto cfg = small_config(8, chunk);
        auto a = init_train_state(small_params(corpus, 3), cfg.update_mode);
        auto b = a;
        const auto ra = train_step_full(a, batch, corpus, cfg, 77);
        const auto rb = train_step_cached(b, batch, corpus, cfg, 77);
        CHECK(ra.loss == rb.loss);
        const auto pa = matrices(a.params);
        const auto pb = matrices(b.params);
        for (std::size_t m = 0; m < pa.size(); ++m) CHECK(max_rel_diff(*pa[m], *pb[m]) <= 1e-9);
    }
}

TEST_CASE("pass-two workspace scales with the chunk, not the batch") {
    const auto corpus = make_planted_corpus({128, 8, 16, 3});
    const auto data = build_direction_datasets(corpus, false);
    EncoderConfig ecfg{16, 256, 16, true, 4, 8.0, 0.1};
    const auto params = init_params(ecfg, 1);

    auto peak = [&](std::size_t batch_size, bool cached) {
        WorkspaceMeter meter;
        std::span<const TrainPair> batch(data.i2r.data(), batch_size);
        const auto cfg = small_config(batch_size, 8);
        if (cached) {
            compute_gradients_cached(params, batch, corpus, cfg, 5, &meter);
        } else {
            compute_gradients_full(params, batch, corpus, cfg, 5, &meter);
        }
        CHECK(meter.live() == 0);
        return meter.peak();
    };
    const auto small = peak(8, true);
    const auto large = peak(128, true);
    CHECK(small > 0);
    // Same traced sample shapes per chunk; allow slack for differing token counts.
    CHECK(static_cast<double>(large) <= 1.5 * static_cast<double>(small));
    CHECK(peak(128, false) >= 8 * large);
}

TEST_CASE("adam with zero learning rate leaves params unchanged") {
    const auto corpus = small_corpus(8);
    const auto data = build_direction_datasets(corpus, false);
    auto cfg = small_config(4, 2);
    cfg.learning_rate = 0.0;
    auto state = init_train_state(small_params(corpus, 2), cfg.update_mode);
    const auto before = state.params;
    const auto r = train_step_cached(state, std::span(data.i2r).first(4), corpus, cfg, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(state.params == before);
}

TEST_CASE("adam first step moves each coordinate by about the learning rate") {
    const auto corpus = small_corpus(8);
    const auto data = build_direction_datasets(corpus, false);
    auto cfg = small_config(4, 4);
    cfg.learning_rate = 1e-3;
    auto state = init_train_state(small_params(corpus, 4), cfg.update_mode);
    const auto before = state.params;
    const auto g = compute_gradients_full(state.params, std::span(data.i2r).first(4), corpus, cfg, 3);
    train_step_full(state, std::span(data.i2r).first(4), corpus, cfg, 3);
    const auto pb = matrices(before);
    const auto pa = matrices(state.params);
    const auto gm = matrices(g.grads);
    for (std::size_t m = 0; m < pa.size(); ++m) {
        for (std::size_t k = 0; k < pa[m]->data().size(); ++k) {
            const double gk = gm[m]->data()[k];
            const double step = pa[m]->data()[k] - pb[m]->data()[k];
            // m_hat = g and v_hat = g^2 after one step, so the move is -lr * g / (|g| + eps).
            const double want = -cfg.learning_rate * gk / (std::abs(gk) + cfg.epsilon);
            CHECK(std::abs(step - want) <= 1e-15 + 1e-9 * std::abs(want));
        }
    }
}

TEST_CASE("repeated steps on one separable batch decrease the loss") {
    const auto corpus = small_corpus(8);
    const auto data = build_direction_datasets(corpus, false);
    const auto batch = std::span(data.i2r).first(2);
    auto cfg = small_config(2, 1, UpdateMode::adapter_only);
    cfg.learning_rate = 1e-2;
    auto params = small_params(corpus, 6, false);
    params.text_adapter.dropout_rate = params.image_adapter.dropout_rate = 0.0;
    auto state = init_train_state(params, cfg.update_mode);
    double prev = train_step_cached(state, batch, corpus, cfg, 0).loss;
    for (int k = 1; k <= 5; ++k) {
        const double now = train_step_cached(state, batch, corpus, cfg, 0).loss;
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("train loop") {
    const auto corpus = small_corpus(32);
    auto cfg = small_config(8, 4, UpdateMode::adapter_only);
    cfg.seed = 9;

    SUBCASE("zero steps returns the initial params") {
        cfg.steps = 0;
        const auto init = small_params(corpus, 1, false);
        const auto r = train(corpus, cfg, init);
        CHECK(r.params == init);
        CHECK(r.log.empty());
    }
    SUBCASE("log covers every step and alternates directions") {
        cfg.steps = 7;
        const auto r = train(corpus, cfg, small_params(corpus, 1, false));
        REQUIRE(r.log.size() == 7);
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(r.log[i].step == i);
            CHECK(r.log[i].direction == (i % 2 ? Direction::recipe_to_image : Direction::image_to_recipe));
            CHECK(std::isfinite(r.log[i].loss));
        }
    }
    SUBCASE("adapter-only training freezes the base weights") {
        cfg.steps = 10;
        const auto init = small_params(corpus, 1, false);
        const auto r = train(corpus, cfg, init);
        CHECK(r.params.text_weights == init.text_weights);
        CHECK(r.params.image_weights == init.image_weights);
        CHECK_FALSE(r.params.text_adapter.up == init.text_adapter.up);
    }
    SUBCASE("bit-reproducible given seed, config and corpus") {
        cfg.steps = 12;
        cfg.augment = true;
        const auto a = train(corpus, cfg, small_params(corpus, 1, false));
        const auto b = train(corpus, cfg, small_params(corpus, 1, false));
        CHECK(a.params == b.params);
        REQUIRE(a.log.size() == b.log.size());
        for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
        cfg.seed = 10;
        const auto c = train(corpus, cfg, small_params(corpus, 1, false));
        CHECK_FALSE(c.params == a.params);
    }
    SUBCASE("grad cache on or off gives the same run") {
        cfg.steps = 6;
        const auto a = train(corpus, cfg, small_params(corpus, 1, false));
        cfg.grad_cache = false;
        const auto b = train(corpus, cfg, small_params(corpus, 1, false));
        const auto pa = matrices(a.params);
        const auto pb = matrices(b.params);
        for (std::size_t m = 0; m < pa.size(); ++m) CHECK(max_rel_diff(*pa[m], *pb[m]) <= 1e-9);
    }
    SUBCASE("errors") {
        cfg.batch_size = 64;
        cfg.chunk_size = 8;
        cfg.steps = 1;
        CHECK_THROWS_AS(train(corpus, cfg, small_params(corpus, 1)), UsageError);
        cfg.batch_size = 8;
        cfg.chunk_size = 3;
        CHECK_THROWS_AS(validate_config(cfg), UsageError);
        cfg.chunk_size = 4;
        cfg.temperature = -1;
        CHECK_THROWS_AS(validate_config(cfg), UsageError);
    }
}

TEST_CASE("planted corpus training reaches high in-batch accuracy") {
    const auto corpus = make_planted_corpus({});
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.chunk_size = 32;
    cfg.steps = 500;
    cfg.temperature = 0.02;
    cfg.learning_rate = 3e-3;
    cfg.seed = 7;
    cfg.augment = false;
    EncoderConfig ecfg{64, 4096, corpus.feature_dim(), true, 16, 64.0, 0.1};
    const auto r = train(corpus, cfg, init_params(ecfg, 7));
    double tail = 0;
    for (std::size_t i = r.log.size() - 20; i < r.log.size(); ++i) tail += r.log[i].accuracy;
    CHECK(tail / 20.0 > 0.95);
}
