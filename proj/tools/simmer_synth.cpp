// Writes a planted-class synthetic corpus: a recipes file and a SIMMEREM
// image-feature dump.

#include <iostream>

#include <CLI11.hpp>

#include "simmer/error.hpp"
#include "simmer/index.hpp"
#include "simmer/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic image/recipe corpus with planted classes", "simmer-synth"};
    simmer::SyntheticSpec spec;
    std::string recipes_out, features_out;
    app.add_option("--pairs", spec.pairs, "Number of image/recipe pairs")->capture_default_str();
    app.add_option("--classes", spec.classes, "Number of latent classes")->capture_default_str();
    app.add_option("--feature-dim", spec.feature_dim, "Image feature width")->capture_default_str();
    app.add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    app.add_option("--recipes-out", recipes_out, "Recipes file to write")->required();
    app.add_option("--features-out", features_out, "Feature dump to write")->required();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        const auto corpus = simmer::make_planted_corpus(spec);
        simmer::save_recipes(corpus.recipes, recipes_out);
        simmer::EmbeddingDump dump{spec.feature_dim, {}, "synthetic"};
        for (const auto& r : corpus.recipes) dump.entries.push_back(corpus.image_features.at(r.image_ref));
        simmer::save_dump(dump, features_out);
    } catch (const simmer::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    }
    return 0;
}
