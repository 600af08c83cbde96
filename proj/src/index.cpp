#include "simmer/index.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_set>

#include "binary_io.hpp"
#include "simmer/error.hpp"

namespace simmer {

void validate_dump(const EmbeddingDump& dump) {
    std::unordered_set<std::string_view> ids;
    ids.reserve(dump.entries.size());
    for (const auto& e : dump.entries) {
        if (e.dim() != dump.dim) {
            throw DataError("dump entry '" + e.id + "' has dim " + std::to_string(e.dim()) + ", expected " +
                            std::to_string(dump.dim));
        }
        if (!ids.insert(e.id).second) throw DataError("duplicate dump id '" + e.id + "'");
        require_finite(e.values, e.id);
    }
}

std::string serialize_dump(const EmbeddingDump& dump) {
    validate_dump(dump);
    if (dump.dim > UINT32_MAX || dump.entries.size() > UINT32_MAX) throw DataError("dump too large for SIMMEREM v1");
    std::string out(kDumpMagic);
    out.reserve(kDumpHeaderBytes + dump.entries.size() * (2 + 16 + dump.dim * sizeof(float)));
    detail::put(out, kDumpVersion);
    detail::put(out, static_cast<std::uint32_t>(dump.dim));
    detail::put(out, static_cast<std::uint32_t>(dump.entries.size()));
    for (const auto& e : dump.entries) {
        if (e.id.size() > UINT16_MAX) throw DataError("dump id longer than 65535 bytes");
        detail::put(out, static_cast<std::uint16_t>(e.id.size()));
        out += e.id;
        for (double v : e.values) {
            const auto f = static_cast<float>(v);
            if (!std::isfinite(f)) throw NumericError("value of '" + e.id + "' overflows 32-bit float");
            detail::put(out, f);
        }
    }
    return out;
}

EmbeddingDump parse_dump(std::string_view bytes) {
    detail::Reader in(bytes, "embedding dump");
    if (bytes.size() < kDumpMagic.size() || bytes.substr(0, kDumpMagic.size()) != kDumpMagic) {
        throw DataError("embedding dump: bad magic (expected '" + std::string(kDumpMagic) + "')");
    }
    in.take(kDumpMagic.size());
    const auto version = in.get<std::uint32_t>();
    if (version != kDumpVersion) {
        throw DataError("embedding dump: unsupported version " + std::to_string(version) + " (expected " +
                        std::to_string(kDumpVersion) + ")");
    }
    EmbeddingDump dump;
    dump.dim = in.get<std::uint32_t>();
    const auto count = in.get<std::uint32_t>();
    if (dump.dim == 0 && count > 0) throw DataError("embedding dump: zero dimension with nonempty entries");
    dump.entries.reserve(std::min<std::size_t>(count, in.remaining() / (2 + dump.dim * sizeof(float)) + 1));
    for (std::uint32_t i = 0; i < count; ++i) {
        EmbeddingVector e;
        const auto len = in.get<std::uint16_t>();
        e.id = std::string(in.take(len));
        e.values.resize(dump.dim);
        for (double& v : e.values) v = in.get<float>();
        dump.entries.push_back(std::move(e));
    }
    if (in.remaining() != 0) {
        throw DataError("embedding dump: " + std::to_string(in.remaining()) + " trailing bytes after " +
                        std::to_string(count) + " entries");
    }
    validate_dump(dump);
    return dump;
}

void save_dump(const EmbeddingDump& dump, const std::filesystem::path& path) {
    detail::write_file(path, serialize_dump(dump));
}

EmbeddingDump load_dump(const std::filesystem::path& path) {
    try {
        return parse_dump(detail::read_file(path));
    } catch (const NumericError& e) {
        throw NumericError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<double> nonzero_norms(const EmbeddingDump& dump) {
    std::vector<double> norms;
    norms.reserve(dump.entries.size());
    for (const auto& e : dump.entries) {
        const double n = l2_norm(e.values);
        if (!(n > 0.0)) throw NumericError("zero-norm embedding '" + e.id + "'");
        norms.push_back(n);
    }
    return norms;
}

std::vector<RankedResult> top_k(const EmbeddingDump& queries, const EmbeddingDump& candidates, std::size_t k,
                                unsigned threads) {
    if (k == 0) throw UsageError("top_k: k must be positive");
    if (queries.dim != candidates.dim && !queries.entries.empty() && !candidates.entries.empty()) {
        throw DataError("top_k: query dim " + std::to_string(queries.dim) + " differs from candidate dim " +
                        std::to_string(candidates.dim));
    }
    const auto qnorms = nonzero_norms(queries);
    const auto cnorms = nonzero_norms(candidates);
    const std::size_t keep = std::min(k, candidates.size());

    std::vector<RankedResult> results(queries.size());
    auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> order(candidates.size());
        std::vector<double> scores(candidates.size());
        for (std::size_t qi = begin; qi < end; ++qi) {
            const auto& q = queries.entries[qi];
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                scores[c] = cosine_with_norms(q.values, qnorms[qi], candidates.entries[c].values, cnorms[c]);
                order[c] = c;
            }
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  return ranks_before(scores[a], candidates.entries[a].id, scores[b],
                                                      candidates.entries[b].id);
                              });
            RankedResult& out = results[qi];
            out.query_id = q.id;
            out.k = k;
            out.hits.reserve(keep);
            for (std::size_t r = 0; r < keep; ++r) out.hits.push_back({candidates.entries[order[r]].id, scores[order[r]]});
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(queries.size(), 1));
    if (workers == 1) {
        run(0, queries.size());
    } else {
        std::vector<std::jthread> pool;
        const std::size_t per = (queries.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * per;
            const std::size_t end = std::min(queries.size(), begin + per);
            if (begin < end) pool.emplace_back(run, begin, end);
        }
    }
    return results;
}

}  // namespace simmer
