#include "simmer/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "simmer/corpus.hpp"
#include "simmer/encoder.hpp"
#include "simmer/error.hpp"
#include "simmer/evalharness.hpp"
#include "simmer/hashing.hpp"
#include "simmer/index.hpp"
#include "simmer/prompting.hpp"
#include "simmer/selfcheck.hpp"
#include "simmer/trainer.hpp"

namespace simmer {

std::string content_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "' for digest");
    std::uint64_t h = kFnvOffsetBasis;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

std::string serialize_manifest(const RunManifest& m) {
    nlohmann::ordered_json obj;
    obj["subcommand"] = m.subcommand;
    obj["flags"] = m.flags;
    obj["inputs"] = m.input_digests;
    obj["tool_version"] = m.tool_version;
    obj["seed"] = m.seed;
    obj["timestamp"] = m.timestamp;
    return obj.dump(2) + "\n";
}

namespace {

struct Common {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string manifest;
};

unsigned default_threads() {
    if (const char* env = std::getenv("SIMMER_THREADS")) {
        try {
            const long n = std::stol(env);
            if (n > 0) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

bool on_off(const std::string& v) {
    return v == "on";
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

class ManifestWriter {
public:
    ManifestWriter(const CLI::App& sub, const Common& common) : sub_(sub), common_(common) {}

    void input(const std::string& path) {
        if (!path.empty()) inputs_.push_back(path);
    }

    /// Writes <primary>.manifest.json, or --manifest when given, or
    /// simmer-<subcommand>.manifest.json in the working directory.
    void write(const std::string& primary_output) const {
        RunManifest m;
        m.subcommand = sub_.get_name();
        m.seed = common_.seed;
        m.timestamp = utc_timestamp();
        for (const CLI::Option* opt : sub_.get_options()) {
            if (opt == sub_.get_help_ptr() || opt->get_name().empty()) continue;
            std::string value;
            if (opt->count() > 0) {
                const auto& res = opt->results();
                for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
                if (value.empty()) value = "true";
            } else {
                value = opt->get_default_str();
            }
            m.flags[opt->get_name()] = value;
        }
        for (const auto& in : inputs_) m.input_digests[in] = content_digest(in);
        std::filesystem::path target;
        if (!common_.manifest.empty()) {
            target = common_.manifest;
        } else if (!primary_output.empty()) {
            target = primary_output + ".manifest.json";
        } else {
            target = "simmer-" + m.subcommand + ".manifest.json";
        }
        write_text(target, serialize_manifest(m));
    }

private:
    const CLI::App& sub_;
    const Common& common_;
    std::vector<std::string> inputs_;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Run seed; every stochastic stage derives its stream from it")->capture_default_str();
    sub->add_option("--threads", c.threads, "Worker threads (1 = bit-reproducible); falls back to SIMMER_THREADS")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--manifest", c.manifest, "Run manifest path (default: beside the primary output)");
}

Validation validation(bool permissive) {
    return permissive ? Validation::permissive : Validation::strict;
}

std::vector<RecipeVariant> variants_of(const Recipe& r, bool augment_flag) {
    if (augment_flag) return augment(r);
    return {as_variant(r)};
}

std::string variant_record(const RecipeVariant& v) {
    nlohmann::ordered_json obj;
    obj["id"] = v.variant_id();
    obj["title"] = v.recipe.title;
    obj["ingredients"] = v.recipe.ingredients;
    obj["instructions"] = v.recipe.instructions;
    obj["image"] = v.recipe.image_ref;
    obj["base_id"] = v.base_id;
    obj["mask"] = v.present.to_string();
    return obj.dump();
}

std::vector<std::size_t> parse_ks(const std::string& text) {
    std::vector<std::size_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            ks.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw UsageError("--ks expects comma-separated positive integers, got '" + text + "'");
        }
    }
    if (ks.empty()) throw UsageError("--ks must list at least one value");
    return ks;
}

std::string format_score(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-modal recipe retrieval toolkit: prompting, contrastive training, exact search, evaluation",
                 "simmer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Common common;
    common.threads = default_threads();

    // augment
    struct {
        std::string recipes, out;
    } aug;
    auto* augment_cmd = app.add_subcommand("augment", "Expand complete recipes into their four component variants");
    augment_cmd->add_option("--recipes", aug.recipes, "Recipes file (one JSON object per line)")->required();
    augment_cmd->add_option("--out", aug.out, "Output variants file")->required();
    add_common(augment_cmd, common);

    // prompt
    struct {
        std::string recipes, out, augment = "off";
        bool permissive = false;
    } pr;
    auto* prompt_cmd = app.add_subcommand("prompt", "Render query/candidate prompt records for both modalities");
    prompt_cmd->add_option("--recipes", pr.recipes, "Recipes file")->required();
    prompt_cmd->add_option("--out", pr.out, "Output prompt records file")->required();
    prompt_cmd->add_option("--augment", pr.augment, "Render all four component variants")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    prompt_cmd->add_flag("--permissive", pr.permissive, "Accept partial recipes and unknown fields");
    add_common(prompt_cmd, common);

    // encode
    struct {
        std::string params, recipes, features, modality = "recipe", role = "candidate", augment = "off", out, pairs_out;
        bool permissive = false;
    } enc;
    auto* encode_cmd = app.add_subcommand("encode", "Encode recipes or images into an embedding dump");
    encode_cmd->add_option("--params", enc.params, "Params file written by train")->required();
    encode_cmd->add_option("--recipes", enc.recipes, "Recipes file")->required();
    encode_cmd->add_option("--features", enc.features, "Image feature dump")->required();
    encode_cmd->add_option("--modality", enc.modality, "What to encode")
        ->check(CLI::IsMember({"image", "recipe"}))
        ->capture_default_str();
    encode_cmd->add_option("--role", enc.role, "Prompt role")
        ->check(CLI::IsMember({"query", "candidate"}))
        ->capture_default_str();
    encode_cmd->add_option("--augment", enc.augment, "Encode all four recipe variants")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    encode_cmd->add_flag("--permissive", enc.permissive, "Accept partial recipes and unknown fields");
    encode_cmd->add_option("--out", enc.out, "Output SIMMEREM dump")->required();
    encode_cmd->add_option("--pairs-out", enc.pairs_out, "Also write 'entry id<TAB>paired image/recipe id' lines");
    add_common(encode_cmd, common);

    // train
    TrainConfig tc;
    EncoderConfig ec;
    struct {
        std::string recipes, features, out, log, augment = "on", update = "adapter";
        std::size_t chunk = 0;
        bool no_grad_cache = false;
    } tr;
    auto* train_cmd = app.add_subcommand("train", "Contrastive training of the toy encoders");
    train_cmd->add_option("--recipes", tr.recipes, "Recipes file")->required();
    train_cmd->add_option("--features", tr.features, "Image feature dump")->required();
    train_cmd->add_option("--steps", tc.steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--batch-size", tc.batch_size, "Pairs per batch")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--chunk-size", tr.chunk, "Grad-cache chunk size (default: batch size)");
    train_cmd->add_option("--tau", tc.temperature, "Softmax temperature")->capture_default_str();
    train_cmd->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--augment", tr.augment, "Component-aware augmentation")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    train_cmd->add_option("--update", tr.update, "Trainable parameters")
        ->check(CLI::IsMember({"adapter", "full"}))
        ->capture_default_str();
    train_cmd->add_flag("--no-grad-cache", tr.no_grad_cache, "Single-pass full-batch gradients");
    train_cmd->add_option("--dim", ec.dim, "Embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--buckets", ec.hash_buckets, "Token hash buckets")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--rank", ec.adapter_rank, "Adapter rank")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--alpha", ec.adapter_alpha, "Adapter scaling factor")->capture_default_str();
    train_cmd->add_option("--dropout", ec.adapter_dropout, "Adapter input dropout")->capture_default_str();
    train_cmd->add_option("--out", tr.out, "Output params file")->required();
    train_cmd->add_option("--log", tr.log, "Per-step loss log (JSON lines)");
    add_common(train_cmd, common);

    // index
    struct {
        std::vector<std::string> inputs;
        std::string out;
    } ix;
    auto* index_cmd = app.add_subcommand("index", "Validate and optionally merge embedding dumps");
    index_cmd->add_option("--in", ix.inputs, "Input dump (repeatable)")->required();
    index_cmd->add_option("--out", ix.out, "Merged output dump");
    add_common(index_cmd, common);

    // search
    struct {
        std::string index, query, out;
        std::size_t topk = 10;
    } se;
    auto* search_cmd = app.add_subcommand("search", "Exact cosine top-k search");
    search_cmd->add_option("--index", se.index, "Candidate dump")->required();
    search_cmd->add_option("--query", se.query, "Query dump")->required();
    search_cmd->add_option("--topk", se.topk, "Hits per query")->capture_default_str()->check(CLI::PositiveNumber);
    search_cmd->add_option("--out", se.out, "Output TSV (default: stdout)");
    add_common(search_cmd, common);

    // eval
    struct {
        std::string queries, candidates, pairs, ks = "1,5,10", direction = "i2r", report;
        std::size_t pool = 1000, repeats = 10;
    } ev;
    auto* eval_cmd = app.add_subcommand("eval", "medR and Recall@k over repeated candidate pools");
    eval_cmd->add_option("--queries", ev.queries, "Query dump")->required();
    eval_cmd->add_option("--candidates", ev.candidates, "Candidate dump")->required();
    eval_cmd->add_option("--pairs", ev.pairs, "TSV of query_id<TAB>truth_id")->required();
    eval_cmd->add_option("--pool", ev.pool, "Pairs per sampled pool (1000, 10000 or any N)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--repeats", ev.repeats, "Sampling repeats")->capture_default_str()->check(CLI::PositiveNumber);
    eval_cmd->add_option("--ks", ev.ks, "Recall cutoffs")->capture_default_str();
    eval_cmd->add_option("--direction", ev.direction, "Direction label; both adds the reverse direction")
        ->check(CLI::IsMember({"i2r", "r2i", "both"}))
        ->capture_default_str();
    eval_cmd->add_option("--report", ev.report, "Report file (JSON lines; default: stdout)");
    add_common(eval_cmd, common);

    // selfcheck
    std::string corrupt_params;
    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "Run the embedded oracle suite");
    selfcheck_cmd->add_option("--params", corrupt_params)->group("");
    add_common(selfcheck_cmd, common);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        err << "Run with --help for usage.\n";
        return static_cast<int>(ErrorKind::usage);
    }

    try {
        if (augment_cmd->parsed()) {
            ManifestWriter manifest(*augment_cmd, common);
            manifest.input(aug.recipes);
            const auto recipes = load_recipes(aug.recipes, Validation::strict);
            std::ofstream o(aug.out, std::ios::binary | std::ios::trunc);
            if (!o) throw DataError("cannot write '" + aug.out + "'");
            for (const auto& r : recipes) {
                for (const auto& v : augment(r)) o << variant_record(v) << '\n';
            }
            o.close();
            manifest.write(aug.out);
            out << recipes.size() * kAugmentationMasks.size() << " variants written to " << aug.out << "\n";
        } else if (prompt_cmd->parsed()) {
            ManifestWriter manifest(*prompt_cmd, common);
            manifest.input(pr.recipes);
            const auto recipes = load_recipes(pr.recipes, validation(pr.permissive));
            std::ofstream o(pr.out, std::ios::binary | std::ios::trunc);
            if (!o) throw DataError("cannot write '" + pr.out + "'");
            std::size_t n = 0;
            for (const auto& r : recipes) {
                for (Role role : {Role::query, Role::candidate}) {
                    o << serialize_prompt_record(render_image_prompt(r.image_ref, role, r.id)) << '\n';
                    ++n;
                }
                for (const auto& v : variants_of(r, on_off(pr.augment))) {
                    for (Role role : {Role::query, Role::candidate}) {
                        o << serialize_prompt_record(render_recipe_prompt(v, role)) << '\n';
                        ++n;
                    }
                }
            }
            o.close();
            manifest.write(pr.out);
            out << n << " prompt records written to " << pr.out << "\n";
        } else if (encode_cmd->parsed()) {
            ManifestWriter manifest(*encode_cmd, common);
            for (const auto& p : {enc.params, enc.recipes, enc.features}) manifest.input(p);
            const auto params = load_params(enc.params);
            const auto corpus = load_corpus(enc.recipes, enc.features, validation(enc.permissive));
            const Role role = parse_role(enc.role);
            EmbeddingDump dump{params.config.dim, {}, "toy-v1"};
            Pairing pairs;
            Rng unused(0);
            for (const auto& r : corpus.recipes) {
                if (parse_modality(enc.modality) == Modality::image) {
                    const auto sample = render_image_prompt(r.image_ref, role, r.id);
                    dump.entries.push_back(encode(params, sample, &corpus.features_for(r.image_ref), false, unused));
                    pairs[r.id] = r.id;
                } else {
                    for (const auto& v : variants_of(r, on_off(enc.augment))) {
                        const auto sample = render_recipe_prompt(v, role);
                        dump.entries.push_back(encode(params, sample, nullptr, false, unused));
                        pairs[sample.source_id] = r.id;
                    }
                }
            }
            save_dump(dump, enc.out);
            if (!enc.pairs_out.empty()) save_pairs_tsv(pairs, enc.pairs_out);
            manifest.write(enc.out);
            out << dump.size() << " embeddings (dim " << dump.dim << ") written to " << enc.out << "\n";
        } else if (train_cmd->parsed()) {
            ManifestWriter manifest(*train_cmd, common);
            manifest.input(tr.recipes);
            manifest.input(tr.features);
            tc.seed = common.seed;
            tc.chunk_size = tr.chunk ? tr.chunk : tc.batch_size;
            tc.augment = on_off(tr.augment);
            tc.grad_cache = !tr.no_grad_cache;
            tc.update_mode = tr.update == "full" ? UpdateMode::full : UpdateMode::adapter_only;
            validate_config(tc);
            const auto corpus = load_corpus(tr.recipes, tr.features, Validation::strict);
            ec.feature_dim = corpus.feature_dim();
            const auto result = train(corpus, tc, init_params(ec, derive_seed(common.seed, "init")));
            save_params(result.params, tr.out);
            if (!tr.log.empty()) {
                std::ofstream log(tr.log, std::ios::binary | std::ios::trunc);
                if (!log) throw DataError("cannot write '" + tr.log + "'");
                for (const auto& e : result.log) {
                    nlohmann::ordered_json rec;
                    rec["step"] = e.step;
                    rec["direction"] = to_string(e.direction);
                    rec["loss"] = e.loss;
                    rec["accuracy"] = e.accuracy;
                    log << rec.dump() << '\n';
                }
            }
            manifest.write(tr.out);
            if (!result.log.empty()) {
                out << "trained " << result.log.size() << " steps; final loss " << result.log.back().loss
                    << ", in-batch accuracy " << result.log.back().accuracy << "\n";
            }
        } else if (index_cmd->parsed()) {
            ManifestWriter manifest(*index_cmd, common);
            EmbeddingDump merged;
            bool first = true;
            for (const auto& in : ix.inputs) {
                manifest.input(in);
                auto d = load_dump(in);
                if (first) {
                    merged.dim = d.dim;
                    first = false;
                } else if (d.dim != merged.dim && d.size() > 0) {
                    throw DataError("'" + in + "' has dim " + std::to_string(d.dim) + ", expected " +
                                    std::to_string(merged.dim));
                }
                for (auto& e : d.entries) merged.entries.push_back(std::move(e));
            }
            validate_dump(merged);
            if (!ix.out.empty()) save_dump(merged, ix.out);
            manifest.write(ix.out);
            out << merged.size() << " entries, dim " << merged.dim << "\n";
        } else if (search_cmd->parsed()) {
            ManifestWriter manifest(*search_cmd, common);
            manifest.input(se.index);
            manifest.input(se.query);
            const auto results = top_k(load_dump(se.query), load_dump(se.index), se.topk, common.threads);
            std::ostringstream tsv;
            for (const auto& r : results) {
                for (std::size_t i = 0; i < r.hits.size(); ++i) {
                    tsv << r.query_id << '\t' << (i + 1) << '\t' << r.hits[i].candidate_id << '\t'
                        << format_score(r.hits[i].score) << '\n';
                }
            }
            if (se.out.empty()) {
                out << tsv.str();
            } else {
                write_text(se.out, tsv.str());
            }
            manifest.write(se.out);
        } else if (eval_cmd->parsed()) {
            ManifestWriter manifest(*eval_cmd, common);
            for (const auto& p : {ev.queries, ev.candidates, ev.pairs}) manifest.input(p);
            EvalConfig cfg;
            cfg.pool_size = ev.pool;
            cfg.repeats = ev.repeats;
            cfg.ks = parse_ks(ev.ks);
            cfg.seed = common.seed;
            cfg.direction = parse_eval_direction(ev.direction);
            cfg.threads = common.threads;
            const auto report = evaluate(load_dump(ev.queries), load_dump(ev.candidates), load_pairs_tsv(ev.pairs), cfg);
            const auto text = serialize_report(report);
            if (ev.report.empty()) {
                out << text;
            } else {
                write_text(ev.report, text);
                for (const auto& d : report.directions) {
                    out << to_string(d.direction) << ": medR " << d.mean.median_rank;
                    for (const auto& [k, v] : d.mean.recall_at) out << ", R@" << k << " " << v;
                    out << "\n";
                }
            }
            manifest.write(ev.report);
        } else if (selfcheck_cmd->parsed()) {
            ManifestWriter manifest(*selfcheck_cmd, common);
            SelfcheckOptions opts;
            opts.seed = common.seed;
            if (!corrupt_params.empty()) opts.params_file = corrupt_params;
            const auto results = run_selfcheck(opts);
            bool ok = true;
            for (const auto& r : results) {
                out << (r.passed ? "PASS " : "FAIL ") << r.name;
                if (!r.detail.empty()) out << ": " << r.detail;
                out << "\n";
                ok = ok && r.passed;
            }
            manifest.write("");
            if (!ok) return static_cast<int>(ErrorKind::numeric);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::data);
    }
    return 0;
}

}  // namespace simmer
