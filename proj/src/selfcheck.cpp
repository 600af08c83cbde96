#include "simmer/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "simmer/encoder.hpp"
#include "simmer/error.hpp"
#include "simmer/evalharness.hpp"
#include "simmer/hashing.hpp"
#include "simmer/index.hpp"
#include "simmer/synthetic.hpp"
#include "simmer/trainer.hpp"

namespace simmer {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = standard_normal(rng);
    return m;
}

double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

CheckResult check_closed_forms() {
    CheckResult r{"info_nce closed forms", true, {}};
    Rng rng(1);
    const auto one = random_matrix(1, 5, rng);
    if (info_nce(one, random_matrix(1, 5, rng), 0.02) != 0.0) {
        r.passed = false;
        r.detail = "B=1 loss is not exactly zero";
    }
    for (std::size_t b : {2u, 4u, 8u}) {
        Matrix q = random_matrix(b, 3, rng);
        Matrix c(b, 3, 1.0);
        const double err = std::abs(info_nce(q, c, 0.02) - std::log(static_cast<double>(b)));
        if (err > 1e-12) {
            r.passed = false;
            r.detail = "equal-similarity batch deviates from ln B by " + std::to_string(err);
        }
    }
    return r;
}

CheckResult check_gradient(std::uint64_t seed) {
    CheckResult r{"info_nce gradient vs finite differences", true, {}};
    Rng rng(derive_seed(seed, "selfcheck-grad"));
    const double tau = 0.1;
    const double h = 1e-5;
    Matrix q = random_matrix(3, 5, rng);
    Matrix c = random_matrix(3, 5, rng);
    const auto g = info_nce_with_grad(q, c, tau);
    double worst = 0.0;
    for (int side = 0; side < 2; ++side) {
        Matrix& m = side == 0 ? q : c;
        const Matrix& analytic = side == 0 ? g.query_grad : g.candidate_grad;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double saved = m.data()[i];
            m.data()[i] = saved + h;
            const double up = info_nce(q, c, tau);
            m.data()[i] = saved - h;
            const double down = info_nce(q, c, tau);
            m.data()[i] = saved;
            worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2 * h), 1e-6));
        }
    }
    if (worst > 1e-4) {
        r.passed = false;
        r.detail = "worst relative error " + std::to_string(worst);
    }
    return r;
}

CheckResult check_grad_cache(std::uint64_t seed) {
    CheckResult r{"grad-cache equivalence", true, {}};
    SyntheticSpec spec{8, 4, 6, seed};
    const auto corpus = make_planted_corpus(spec);
    EncoderConfig ec{8, 64, spec.feature_dim, true, 2, 4.0, 0.1};
    auto params = init_params(ec, seed);
    Rng rng(derive_seed(seed, "selfcheck-up"));
    for (auto* up : {&params.text_adapter.up, &params.image_adapter.up}) {
        for (double& v : up->data()) v = 0.1 * standard_normal(rng);
    }
    const auto data = build_direction_datasets(corpus, false);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.update_mode = UpdateMode::full;
    const auto full = compute_gradients_full(params, data.i2r, corpus, tc, 99);
    double worst = 0.0;
    for (std::size_t chunk : {1u, 2u, 4u, 8u}) {
        tc.chunk_size = chunk;
        auto cached = compute_gradients_cached(params, data.i2r, corpus, tc, 99);
        const auto& a = full.grads;
        const std::array<const Matrix*, 6> x = {&a.text_weights, &a.image_weights, &a.text_down,
                                                &a.text_up, &a.image_down, &a.image_up};
        const std::array<const Matrix*, 6> y = {&cached.grads.text_weights, &cached.grads.image_weights,
                                                &cached.grads.text_down, &cached.grads.text_up,
                                                &cached.grads.image_down, &cached.grads.image_up};
        for (std::size_t s = 0; s < x.size(); ++s) {
            for (std::size_t i = 0; i < x[s]->size(); ++i) {
                worst = std::max(worst, rel_err(x[s]->data()[i], y[s]->data()[i], 1e-300));
            }
        }
    }
    if (worst > 1e-9) {
        r.passed = false;
        r.detail = "worst relative difference " + std::to_string(worst);
    }
    return r;
}

CheckResult check_metrics(std::uint64_t seed) {
    CheckResult r{"metric oracle", true, {}};
    Rng rng(derive_seed(seed, "selfcheck-metrics"));
    EmbeddingDump q{4, {}, "selfcheck"}, c{4, {}, "selfcheck"};
    Pairing pairing;
    for (int i = 0; i < 40; ++i) {
        const auto id = "p" + std::to_string(i);
        EmbeddingVector a{id, std::vector<double>(4)}, b{id, std::vector<double>(4)};
        for (std::size_t k = 0; k < 4; ++k) {
            a.values[k] = standard_normal(rng);
            b.values[k] = a.values[k] + 0.8 * standard_normal(rng);
        }
        q.entries.push_back(std::move(a));
        c.entries.push_back(std::move(b));
        pairing[id] = id;
    }
    EvalConfig cfg;
    cfg.pool_size = 40;
    cfg.repeats = 1;
    const auto report = evaluate(q, c, pairing, cfg);
    std::vector<double> ranks;
    for (const auto& e : q.entries) {
        // full sort of every candidate, then locate the truth
        std::vector<std::pair<double, std::string>> scored;
        for (const auto& cand : c.entries) scored.emplace_back(cosine(e, cand), cand.id);
        std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            return x.first != y.first ? x.first > y.first : x.second < y.second;
        });
        for (std::size_t p = 0; p < scored.size(); ++p) {
            if (scored[p].second == e.id) ranks.push_back(static_cast<double>(p + 1));
        }
    }
    std::sort(ranks.begin(), ranks.end());
    const double med = (ranks[19] + ranks[20]) / 2.0;
    const auto& got = report.directions.front().mean;
    if (got.median_rank != med) {
        r.passed = false;
        r.detail = "medR " + std::to_string(got.median_rank) + " vs oracle " + std::to_string(med);
    }
    for (std::size_t k : {1u, 5u, 10u}) {
        const double expect =
            static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](double x) { return x <= k; })) / 40.0;
        if (got.recall_at.at(k) != expect) {
            r.passed = false;
            r.detail = "R@" + std::to_string(k) + " disagrees with oracle";
        }
    }
    return r;
}

CheckResult check_formats(std::uint64_t seed) {
    CheckResult r{"format round trip", true, {}};
    Rng rng(derive_seed(seed, "selfcheck-format"));
    EmbeddingDump dump{6, {}, "selfcheck"};
    for (int i = 0; i < 10; ++i) {
        EmbeddingVector e{"e" + std::to_string(i), std::vector<double>(6)};
        for (double& v : e.values) v = static_cast<float>(standard_normal(rng));
        dump.entries.push_back(std::move(e));
    }
    const auto bytes = serialize_dump(dump);
    const auto back = parse_dump(bytes);
    if (back.entries != dump.entries || serialize_dump(back) != bytes) {
        r.passed = false;
        r.detail = "embedding dump round trip is not exact";
    }
    const auto params = init_params(EncoderConfig{4, 16, 3, true, 2, 4.0, 0.1}, seed);
    const auto pbytes = serialize_params(params);
    if (serialize_params(parse_params(pbytes)) != pbytes) {
        r.passed = false;
        r.detail = "params round trip is not exact";
    }
    return r;
}

CheckResult check_params_file(const std::filesystem::path& path) {
    CheckResult r{"params file finiteness (" + path.string() + ")", true, {}};
    try {
        const auto p = load_params(path);
        validate_params(p);
    } catch (const Error& e) {
        r.passed = false;
        r.detail = e.what();
    }
    return r;
}

template <typename Fn>
CheckResult guarded(const std::string& name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return {name, false, e.what()};
    }
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options) {
    std::vector<CheckResult> out;
    out.push_back(guarded("info_nce closed forms", check_closed_forms));
    out.push_back(guarded("info_nce gradient", [&] { return check_gradient(options.seed); }));
    out.push_back(guarded("grad-cache equivalence", [&] { return check_grad_cache(options.seed); }));
    out.push_back(guarded("metric oracle", [&] { return check_metrics(options.seed); }));
    out.push_back(guarded("format round trip", [&] { return check_formats(options.seed); }));
    if (options.params_file) {
        out.push_back(guarded("params file", [&] { return check_params_file(*options.params_file); }));
    }
    return out;
}

}  // namespace simmer
