#include "simmer/embedding.hpp"

#include <cmath>

#include "simmer/error.hpp"

namespace simmer {

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double l2_norm(std::span<const double> a) noexcept {
    return std::sqrt(dot(a, a));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DataError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine: zero-norm input");
    return cosine_with_norms(a, na, b, nb);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw DataError("cosine: dimension mismatch between '" + a.id + "' and '" + b.id + "'");
    }
    const double na = l2_norm(a.values);
    const double nb = l2_norm(b.values);
    if (!(na > 0.0)) throw NumericError("cosine: zero-norm embedding '" + a.id + "'");
    if (!(nb > 0.0)) throw NumericError("cosine: zero-norm embedding '" + b.id + "'");
    return cosine_with_norms(a.values, na, b.values, nb);
}

void require_finite(std::span<const double> values, const std::string& id) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in '" + id + "'");
    }
}

}  // namespace simmer
