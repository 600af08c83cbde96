#include "simmer/synthetic.hpp"

#include "simmer/error.hpp"
#include "simmer/hashing.hpp"
#include "simmer/random.hpp"

namespace simmer {

PairedCorpus make_planted_corpus(const SyntheticSpec& spec) {
    if (spec.pairs == 0 || spec.classes == 0 || spec.feature_dim == 0) {
        throw UsageError("synthetic corpus needs positive pairs, classes and feature dim");
    }
    Rng rng(derive_seed(spec.seed, "synthetic"));
    std::vector<std::vector<double>> centroids(spec.classes, std::vector<double>(spec.feature_dim));
    for (auto& c : centroids) {
        for (double& v : c) v = standard_normal(rng);
    }

    PairedCorpus corpus;
    corpus.recipes.reserve(spec.pairs);
    for (std::size_t i = 0; i < spec.pairs; ++i) {
        const std::size_t cls = i % spec.classes;
        const auto c = std::to_string(cls);
        const auto n = std::to_string(i);

        Recipe r;
        r.id = "r" + n;
        r.image_ref = "img" + n;
        r.title = "dish" + n + " of style" + c;
        r.ingredients = {"base" + c, "herb" + c, "extra" + n};
        r.instructions = {"prepare" + c + " carefully.", "finish" + n + " and serve."};

        EmbeddingVector f{r.image_ref, std::vector<double>(spec.feature_dim)};
        for (std::size_t k = 0; k < spec.feature_dim; ++k) f.values[k] = centroids[cls][k] + standard_normal(rng);
        corpus.image_features.emplace(r.image_ref, std::move(f));
        corpus.recipes.push_back(std::move(r));
    }
    validate_corpus(corpus);
    return corpus;
}

}  // namespace simmer
