#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "simmer/embedding.hpp"

namespace simmer {

struct EmbeddingDump {
    std::size_t dim = 0;
    std::vector<EmbeddingVector> entries;
    std::string source_tag = "external";  // in-memory only; not persisted

    std::size_t size() const noexcept { return entries.size(); }
};

/// Checks dimension uniformity, id uniqueness and finiteness.
void validate_dump(const EmbeddingDump& dump);

// SIMMEREM v1, little-endian:
//   "SIMMEREM" | u32 version | u32 dim | u32 count
//   count x ( u16 id_len | id bytes | dim x f32 )
inline constexpr std::string_view kDumpMagic = "SIMMEREM";
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderBytes = 20;

std::string serialize_dump(const EmbeddingDump& dump);
EmbeddingDump parse_dump(std::string_view bytes);
void save_dump(const EmbeddingDump& dump, const std::filesystem::path& path);
EmbeddingDump load_dump(const std::filesystem::path& path);

/// Tie rule shared by search and evaluation: higher score first, equal
/// scores ordered by id bytes ascending.
inline bool ranks_before(double score_a, std::string_view id_a, double score_b, std::string_view id_b) noexcept {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

struct Hit {
    std::string candidate_id;
    double score = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

struct RankedResult {
    std::string query_id;
    std::vector<Hit> hits;
    std::size_t k = 0;

    friend bool operator==(const RankedResult&, const RankedResult&) = default;
};

/// Exact cosine top-k for every query; output is independent of `threads`.
std::vector<RankedResult> top_k(const EmbeddingDump& queries, const EmbeddingDump& candidates, std::size_t k,
                                unsigned threads = 1);

/// Norms of every entry; throws NumericError naming the first zero-norm id.
std::vector<double> nonzero_norms(const EmbeddingDump& dump);

}  // namespace simmer
