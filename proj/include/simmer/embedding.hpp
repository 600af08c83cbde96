#pragma once

#include <span>
#include <string>
#include <vector>

namespace simmer {

/// A fixed-dimension embedding with the id of the item it encodes.
/// Stored unnormalized; similarity normalizes on the fly.
struct EmbeddingVector {
    std::string id;
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2_norm(std::span<const double> a) noexcept;

/// Cosine similarity. Throws NumericError on a zero-norm input and DataError
/// on a dimension mismatch.
double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

/// Cosine given precomputed norms; identical arithmetic to cosine().
inline double cosine_with_norms(std::span<const double> a, double norm_a, std::span<const double> b, double norm_b) noexcept {
    return dot(a, b) / (norm_a * norm_b);
}

/// Throws NumericError naming `id` if any entry is NaN or infinite.
void require_finite(std::span<const double> values, const std::string& id);

}  // namespace simmer
