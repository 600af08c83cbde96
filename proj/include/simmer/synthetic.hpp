#pragma once

#include <cstdint>

#include "simmer/corpus.hpp"

namespace simmer {

struct SyntheticSpec {
    std::size_t pairs = 256;
    std::size_t classes = 32;
    std::size_t feature_dim = 64;
    std::uint64_t seed = 7;
};

/// Image/recipe pairs with a planted latent class. Pair i of class c gets
/// image features centroid_c + signature_i and a recipe whose title,
/// ingredients and instructions each mix class tokens with a pair token.
PairedCorpus make_planted_corpus(const SyntheticSpec& spec);

}  // namespace simmer
