#include <doctest.h>

#include <cstring>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "simmer/cli.hpp"
#include "simmer/corpus.hpp"
#include "simmer/encoder.hpp"
#include "simmer/evalharness.hpp"
#include "simmer/index.hpp"
#include "simmer/synthetic.hpp"
#include "test_support.hpp"

using namespace simmer;
using testsupport::TempDir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string str(const std::filesystem::path& p) { return p.string(); }

void write_synthetic(const TempDir& dir, const SyntheticSpec& spec = {}) {
    const auto corpus = make_planted_corpus(spec);
    save_recipes(corpus.recipes, dir / "recipes.jsonl");
    EmbeddingDump features{spec.feature_dim, {}, "synthetic"};
    for (const auto& r : corpus.recipes) features.entries.push_back(corpus.image_features.at(r.image_ref));
    save_dump(features, dir / "features.bin");
}

/// augment -> train -> encode (both modalities) -> eval, all under `dir`.
void run_pipeline(const TempDir& dir) {
    const auto recipes = str(dir / "recipes.jsonl");
    const auto features = str(dir / "features.bin");
    REQUIRE(run({"augment", "--recipes", recipes, "--out", str(dir / "variants.jsonl")}).code == 0);
    const auto t = run({"train", "--recipes", recipes, "--features", features, "--steps", "500", "--batch-size", "32",
                        "--tau", "0.02", "--lr", "3e-3", "--augment", "off", "--seed", "7", "--out",
                        str(dir / "params.bin"), "--log", str(dir / "train.jsonl")});
    REQUIRE_MESSAGE(t.code == 0, t.err);
    REQUIRE(run({"encode", "--params", str(dir / "params.bin"), "--recipes", recipes, "--features", features,
                 "--modality", "image", "--role", "query", "--out", str(dir / "images.bin"), "--pairs-out",
                 str(dir / "pairs.tsv")})
                .code == 0);
    REQUIRE(run({"encode", "--params", str(dir / "params.bin"), "--recipes", recipes, "--features", features,
                 "--modality", "recipe", "--role", "candidate", "--out", str(dir / "recipes.bin")})
                .code == 0);
    const auto e = run({"eval", "--queries", str(dir / "images.bin"), "--candidates", str(dir / "recipes.bin"),
                        "--pairs", str(dir / "pairs.tsv"), "--pool", "256", "--repeats", "10", "--direction", "both",
                        "--seed", "7", "--report", str(dir / "report.jsonl")});
    REQUIRE_MESSAGE(e.code == 0, e.err);
}

std::vector<nlohmann::json> json_lines(const std::filesystem::path& p) {
    std::istringstream in(testsupport::read_file(p));
    std::vector<nlohmann::json> out;
    for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
    return out;
}

/// One pipeline run shared by the test cases that only inspect its outputs.
const TempDir& shared_pipeline() {
    static const TempDir dir("cli-pipeline");
    static const bool ready = [] {
        write_synthetic(dir);
        run_pipeline(dir);
        return true;
    }();
    (void)ready;
    return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
    SUBCASE("eval --help lists every eval flag") {
        const auto r = run({"eval", "--help"});
        CHECK(r.code == 0);
        for (const char* flag : {"--queries", "--candidates", "--pairs", "--pool", "--repeats", "--ks", "--direction",
                                 "--report", "--seed", "--threads", "--manifest"}) {
            CHECK_MESSAGE(r.out.find(flag) != std::string::npos, flag);
        }
    }
    SUBCASE("missing required flag names it") {
        const auto r = run({"train", "--features", "f.bin", "--out", "p.bin"});
        CHECK(r.code == 1);
        CHECK(r.err.find("--recipes") != std::string::npos);
    }
    SUBCASE("unknown subcommand") {
        CHECK(run({"frobnicate"}).code == 1);
    }
    SUBCASE("no subcommand") {
        CHECK(run({}).code == 1);
    }
    SUBCASE("bad enum value") {
        CHECK(run({"eval", "--queries", "q", "--candidates", "c", "--pairs", "p", "--direction", "sideways"}).code ==
              1);
    }
}

TEST_CASE("data errors exit 2") {
    TempDir dir("cli-data");
    testsupport::write_file(dir / "bad.jsonl", "{\"id\": \"r1\", \"title\": 5}\n");
    const auto r = run({"augment", "--recipes", str(dir / "bad.jsonl"), "--out", str(dir / "o.jsonl")});
    CHECK(r.code == 2);
    CHECK(r.err.find("bad.jsonl:1") != std::string::npos);
    CHECK(run({"index", "--in", str(dir / "missing.bin")}).code == 2);
}

TEST_CASE("augment writes four variants per recipe") {
    TempDir dir("cli-augment");
    write_synthetic(dir, {10, 2, 4, 1});
    REQUIRE(run({"augment", "--recipes", str(dir / "recipes.jsonl"), "--out", str(dir / "v.jsonl")}).code == 0);
    std::istringstream in(testsupport::read_file(dir / "v.jsonl"));
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 40);
}

TEST_CASE("prompt records") {
    TempDir dir("cli-prompt");
    write_synthetic(dir, {3, 1, 4, 1});
    REQUIRE(run({"prompt", "--recipes", str(dir / "recipes.jsonl"), "--out", str(dir / "p.jsonl")}).code == 0);
    const auto recs = json_lines(dir / "p.jsonl");
    // Per recipe: image query, image candidate, recipe query, recipe candidate.
    REQUIRE(recs.size() == 12);
    for (const auto& r : recs) {
        CHECK(r.contains("source_id"));
        CHECK(r.contains("role"));
        CHECK(r.contains("direction"));
        CHECK(r.contains("text"));
    }
    REQUIRE(run({"prompt", "--recipes", str(dir / "recipes.jsonl"), "--out", str(dir / "pa.jsonl"), "--augment",
                 "on"})
                .code == 0);
    CHECK(json_lines(dir / "pa.jsonl").size() == 3 * (2 + 2 * 4));
}

TEST_CASE("full pipeline on the planted corpus") {
    const auto& dir = shared_pipeline();

    const auto report = json_lines(dir / "report.jsonl");
    std::size_t summaries = 0;
    for (const auto& rec : report) {
        if (rec["record"] != "summary") continue;
        ++summaries;
        CHECK(rec["recall"]["R@1"].get<double>() >= 0.95);
        CHECK(rec["medR"].get<double>() == 1.0);
    }
    CHECK(summaries == 2);
    CHECK(json_lines(dir / "train.jsonl").size() == 500);

    SUBCASE("manifests describe each run") {
        const auto m = nlohmann::json::parse(testsupport::read_file(dir / "params.bin.manifest.json"));
        CHECK(m["subcommand"] == "train");
        CHECK(m["seed"] == 7);
        CHECK(m["tool_version"] == kToolVersion);
        CHECK(m["inputs"][str(dir / "recipes.jsonl")] == content_digest(dir / "recipes.jsonl"));
        CHECK(m.contains("timestamp"));
    }
    SUBCASE("search returns the paired recipe first") {
        const auto r = run({"search", "--index", str(dir / "recipes.bin"), "--query", str(dir / "images.bin"),
                            "--topk", "3", "--manifest", str(dir / "search.manifest.json")});
        REQUIRE(r.code == 0);
        std::istringstream in(r.out);
        std::string line;
        std::size_t correct = 0, queries = 0;
        while (std::getline(in, line)) {
            std::istringstream fields(line);
            std::string q, rank, cand;
            fields >> q >> rank >> cand;
            if (rank != "1") continue;
            ++queries;
            correct += cand == q;  // image entries carry their recipe id
        }
        CHECK(queries == 256);
        CHECK(correct >= 243);
    }
    SUBCASE("index validates and merges dumps") {
        REQUIRE(run({"index", "--in", str(dir / "recipes.bin"), "--out", str(dir / "merged.bin")}).code == 0);
        CHECK(load_dump(dir / "merged.bin").size() == 256);
        // Image and recipe entries share recipe ids, so merging them is a data error.
        CHECK(run({"index", "--in", str(dir / "images.bin"), "--in", str(dir / "recipes.bin"), "--out",
                   str(dir / "dup.bin")})
                  .code == 2);
    }
}

TEST_CASE("pipeline is byte-reproducible") {
    const auto& a = shared_pipeline();
    TempDir b("cli-det-b");
    write_synthetic(b);
    run_pipeline(b);
    for (const char* f : {"variants.jsonl", "params.bin", "train.jsonl", "images.bin", "recipes.bin", "pairs.tsv",
                          "report.jsonl"}) {
        CHECK_MESSAGE(testsupport::read_file(a / f) == testsupport::read_file(b / f), f);
    }
}

TEST_CASE("selfcheck") {
    TempDir dir("cli-selfcheck");
    const auto first = run({"selfcheck", "--seed", "3", "--manifest", str(dir / "m.json")});
    CHECK(first.code == 0);
    CHECK(first.out.find("FAIL") == std::string::npos);
    CHECK(run({"selfcheck", "--seed", "3", "--manifest", str(dir / "m.json")}).out == first.out);

    SUBCASE("non-finite params fail the finiteness check with exit 3") {
        const auto corpus = make_planted_corpus({4, 2, 4, 1});
        save_params(init_params({8, 16, 4, true, 2, 4.0, 0.0}, 1), dir / "p.bin");
        auto bytes = testsupport::read_file(dir / "p.bin");
        const float nan = std::numeric_limits<float>::quiet_NaN();
        // First text weight follows the 44-byte header.
        std::memcpy(bytes.data() + 44, &nan, sizeof nan);
        testsupport::write_file(dir / "p.bin", bytes);
        const auto r = run({"selfcheck", "--params", str(dir / "p.bin"), "--manifest", str(dir / "m.json")});
        CHECK(r.code == 3);
        CHECK(r.out.find("FAIL") != std::string::npos);
    }
}
