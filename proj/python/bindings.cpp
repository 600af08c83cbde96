#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/operators.h>
#include <pybind11/stl/filesystem.h>

#include "simmer/cli.hpp"
#include "simmer/corpus.hpp"
#include "simmer/encoder.hpp"
#include "simmer/error.hpp"
#include "simmer/evalharness.hpp"
#include "simmer/index.hpp"
#include "simmer/prompting.hpp"
#include "simmer/synthetic.hpp"
#include "simmer/trainer.hpp"

#include <sstream>

namespace py = pybind11;
using namespace simmer;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols()) throw DataError("ragged embedding rows");
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

std::vector<std::vector<double>> to_rows(const Matrix& m) {
    std::vector<std::vector<double>> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
    return out;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["medR"] = m.median_rank;
    py::dict recall;
    for (const auto& [k, v] : m.recall_at) recall[py::int_(k)] = v;
    d["recall"] = recall;
    return d;
}

}  // namespace

PYBIND11_MODULE(_simmer, m) {
    m.doc() = "Cross-modal recipe retrieval: prompting, contrastive training, exact search and evaluation";

    static py::exception<Error> base_error(m, "SimmerError");
    static py::exception<UsageError> usage_error(m, "UsageError", base_error.ptr());
    static py::exception<DataError> data_error(m, "DataError", base_error.ptr());
    static py::exception<NumericError> numeric_error(m, "NumericError", base_error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const UsageError& e) {
            usage_error(e.what());
        } catch (const DataError& e) {
            data_error(e.what());
        } catch (const NumericError& e) {
            numeric_error(e.what());
        }
    });

    py::class_<Recipe>(m, "Recipe")
        .def(py::init<>())
        .def(py::init([](std::string id, std::string title, std::vector<std::string> ingredients,
                         std::vector<std::string> instructions, std::string image_ref) {
                 return Recipe{std::move(id), std::move(title), std::move(ingredients), std::move(instructions),
                               std::move(image_ref)};
             }),
             py::arg("id"), py::arg("title"), py::arg("ingredients"), py::arg("instructions"), py::arg("image_ref"))
        .def_readwrite("id", &Recipe::id)
        .def_readwrite("title", &Recipe::title)
        .def_readwrite("ingredients", &Recipe::ingredients)
        .def_readwrite("instructions", &Recipe::instructions)
        .def_readwrite("image_ref", &Recipe::image_ref)
        .def("is_complete", &Recipe::is_complete)
        .def("serialize", &serialize_recipe)
        .def(py::self == py::self);

    py::class_<RecipeVariant>(m, "RecipeVariant")
        .def_readonly("base_id", &RecipeVariant::base_id)
        .def_readonly("recipe", &RecipeVariant::recipe)
        .def_property_readonly("mask", [](const RecipeVariant& v) { return v.present.to_string(); })
        .def_property_readonly("variant_id", &RecipeVariant::variant_id);

    py::class_<PromptedSample>(m, "PromptedSample")
        .def_readonly("source_id", &PromptedSample::source_id)
        .def_property_readonly("role", [](const PromptedSample& s) { return std::string(to_string(s.role)); })
        .def_property_readonly("direction", [](const PromptedSample& s) { return std::string(to_string(s.direction)); })
        .def_property_readonly("modality", [](const PromptedSample& s) { return std::string(to_string(s.modality)); })
        .def_readonly("text", &PromptedSample::text)
        .def_readonly("image_ref", &PromptedSample::image_ref)
        .def("to_record", &serialize_prompt_record);

    m.def("augment", &augment, py::arg("recipe"), "Complete, title-only, ingredients-only and instructions-only variants");
    m.def(
        "make_variant",
        [](const Recipe& r, const std::string& mask) {
            if (mask.size() != 3 || mask.find_first_not_of("01") != std::string::npos) {
                throw UsageError("mask must be three 0/1 characters, e.g. '101'");
            }
            const auto bits = static_cast<std::uint8_t>(std::stoi(mask, nullptr, 2));
            return make_variant(r, ComponentMask(bits));
        },
        py::arg("recipe"), py::arg("mask"));
    m.def(
        "render_image_prompt",
        [](const std::string& image_ref, const std::string& role, const std::string& source_id) {
            return render_image_prompt(image_ref, parse_role(role), source_id);
        },
        py::arg("image_ref"), py::arg("role"), py::arg("source_id") = "");
    m.def(
        "render_recipe_prompt",
        [](const RecipeVariant& v, const std::string& role) { return render_recipe_prompt(v, parse_role(role)); },
        py::arg("variant"), py::arg("role"));
    m.def("parse_prompt_record", &parse_prompt_record, py::arg("line"));

    m.def(
        "cosine", [](const std::vector<double>& a, const std::vector<double>& b) { return cosine(a, b); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "info_nce",
        [](const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& c, double tau) {
            return info_nce(to_matrix(q), to_matrix(c), tau);
        },
        py::arg("queries"), py::arg("candidates"), py::arg("tau") = 0.02);
    m.def(
        "info_nce_grad",
        [](const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& c, double tau) {
            auto r = info_nce_with_grad(to_matrix(q), to_matrix(c), tau);
            return py::make_tuple(r.loss, to_rows(r.query_grad), to_rows(r.candidate_grad));
        },
        py::arg("queries"), py::arg("candidates"), py::arg("tau") = 0.02,
        "Returns (loss, dL/dqueries, dL/dcandidates)");

    py::class_<EmbeddingVector>(m, "EmbeddingVector")
        .def(py::init<std::string, std::vector<double>>(), py::arg("id"), py::arg("values"))
        .def_readwrite("id", &EmbeddingVector::id)
        .def_readwrite("values", &EmbeddingVector::values);

    py::class_<EmbeddingDump>(m, "EmbeddingDump")
        .def(py::init([](std::size_t dim, std::vector<EmbeddingVector> entries) {
                 return EmbeddingDump{dim, std::move(entries), "python"};
             }),
             py::arg("dim"), py::arg("entries"))
        .def_readonly("dim", &EmbeddingDump::dim)
        .def_readonly("entries", &EmbeddingDump::entries)
        .def_property_readonly("ids", [](const EmbeddingDump& d) {
            std::vector<std::string> ids;
            for (const auto& e : d.entries) ids.push_back(e.id);
            return ids;
        })
        .def("__len__", &EmbeddingDump::size);
    m.def("load_dump", &load_dump, py::arg("path"));
    m.def("save_dump", &save_dump, py::arg("dump"), py::arg("path"));

    m.def(
        "top_k",
        [](const EmbeddingDump& q, const EmbeddingDump& c, std::size_t k) {
            py::list out;
            for (const auto& r : top_k(q, c, k)) {
                py::list hits;
                for (const auto& h : r.hits) hits.append(py::make_tuple(h.candidate_id, h.score));
                out.append(py::make_tuple(r.query_id, hits));
            }
            return out;
        },
        py::arg("queries"), py::arg("candidates"), py::arg("k"));

    m.def(
        "evaluate",
        [](const EmbeddingDump& q, const EmbeddingDump& c, const Pairing& pairing, std::size_t pool,
           std::size_t repeats, std::vector<std::size_t> ks, std::uint64_t seed, const std::string& direction) {
            EvalConfig cfg;
            cfg.pool_size = pool;
            cfg.repeats = repeats;
            cfg.ks = std::move(ks);
            cfg.seed = seed;
            cfg.direction = parse_eval_direction(direction);
            const auto report = evaluate(q, c, pairing, cfg);
            py::dict out;
            for (const auto& d : report.directions) {
                auto entry = metrics_dict(d.mean);
                py::list per;
                for (const auto& r : d.per_repeat) per.append(metrics_dict(r));
                entry["per_repeat"] = per;
                out[py::str(std::string(to_string(d.direction)))] = entry;
            }
            return out;
        },
        py::arg("queries"), py::arg("candidates"), py::arg("pairing"), py::arg("pool") = 1000,
        py::arg("repeats") = 10, py::arg("ks") = std::vector<std::size_t>{1, 5, 10}, py::arg("seed") = 0,
        py::arg("direction") = "i2r");

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = dispatch(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr)");

    m.def(
        "write_synthetic_corpus",
        [](const std::filesystem::path& recipes, const std::filesystem::path& features, std::size_t pairs,
           std::size_t classes, std::size_t feature_dim, std::uint64_t seed) {
            const auto corpus = make_planted_corpus({pairs, classes, feature_dim, seed});
            save_recipes(corpus.recipes, recipes);
            EmbeddingDump dump{feature_dim, {}, "synthetic"};
            for (const auto& r : corpus.recipes) dump.entries.push_back(corpus.image_features.at(r.image_ref));
            save_dump(dump, features);
        },
        py::arg("recipes"), py::arg("features"), py::arg("pairs") = 256, py::arg("classes") = 32,
        py::arg("feature_dim") = 64, py::arg("seed") = 7);

    m.attr("__version__") = "0.1.0";
}
