#include "simmer/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "simmer/error.hpp"
#include "simmer/index.hpp"

namespace simmer {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string trim_trailing(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n' ||
                          s.back() == '\f' || s.back() == '\v')) {
        s.pop_back();
    }
    return s;
}

bool has_control_chars(std::string_view s) {
    for (unsigned char c : s) {
        if (c < 0x20 || c == 0x7f) return true;
    }
    return false;
}

std::string read_string(const ordered_json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing field '") + key + "'");
    if (!it->is_string()) throw DataError(std::string("field '") + key + "' must be a string");
    auto value = trim_trailing(it->get<std::string>());
    if (has_control_chars(value)) throw DataError(std::string("control character in field '") + key + "'");
    return value;
}

std::vector<std::string> read_list(const ordered_json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing field '") + key + "'");
    if (!it->is_array()) throw DataError(std::string("field '") + key + "' must be an array of strings");
    std::vector<std::string> out;
    out.reserve(it->size());
    for (const auto& item : *it) {
        if (!item.is_string()) throw DataError(std::string("field '") + key + "' must be an array of strings");
        auto value = trim_trailing(item.get<std::string>());
        if (has_control_chars(value)) throw DataError(std::string("control character in field '") + key + "'");
        out.push_back(std::move(value));
    }
    return out;
}

bool all_nonempty(const std::vector<std::string>& items) {
    for (const auto& s : items) {
        if (s.empty()) return false;
    }
    return true;
}

}  // namespace

bool Recipe::is_complete() const noexcept {
    return has_title() && has_ingredients() && has_instructions() && all_nonempty(ingredients) &&
           all_nonempty(instructions);
}

std::string ComponentMask::to_string() const {
    return {title() ? '1' : '0', ingredients() ? '1' : '0', instructions() ? '1' : '0'};
}

std::string ComponentMask::id_suffix() const {
    std::string out;
    if (title()) out += "#title";
    if (ingredients()) out += "#ingredients";
    if (instructions()) out += "#instructions";
    return out;
}

RecipeVariant make_variant(const Recipe& recipe, ComponentMask mask) {
    RecipeVariant v;
    v.base_id = recipe.id;
    v.present = mask;
    v.recipe.id = recipe.id;
    v.recipe.image_ref = recipe.image_ref;
    if (mask.title()) v.recipe.title = recipe.title;
    if (mask.ingredients()) v.recipe.ingredients = recipe.ingredients;
    if (mask.instructions()) v.recipe.instructions = recipe.instructions;
    return v;
}

RecipeVariant as_variant(const Recipe& recipe) {
    std::uint8_t bits = 0;
    if (recipe.has_title()) bits |= ComponentMask::kTitle;
    if (recipe.has_ingredients()) bits |= ComponentMask::kIngredients;
    if (recipe.has_instructions()) bits |= ComponentMask::kInstructions;
    return make_variant(recipe, ComponentMask(bits));
}

std::vector<RecipeVariant> augment(const Recipe& recipe) {
    if (!recipe.is_complete()) {
        throw DataError("augment: recipe '" + recipe.id + "' is missing a component");
    }
    std::vector<RecipeVariant> out;
    out.reserve(kAugmentationMasks.size());
    for (auto mask : kAugmentationMasks) out.push_back(make_variant(recipe, mask));
    return out;
}

std::size_t PairedCorpus::feature_dim() const noexcept {
    return image_features.empty() ? 0 : image_features.begin()->second.dim();
}

const EmbeddingVector& PairedCorpus::features_for(const std::string& image_ref) const {
    auto it = image_features.find(image_ref);
    if (it == image_features.end()) throw DataError("dangling image reference '" + image_ref + "'");
    return it->second;
}

Recipe parse_recipe_line(const std::string& line, Validation mode) {
    ordered_json obj;
    try {
        obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("malformed record: ") + e.what());
    }
    if (!obj.is_object()) throw DataError("malformed record: expected an object");
    if (mode == Validation::strict) {
        static const std::set<std::string> known = {"id", "title", "ingredients", "instructions", "image"};
        for (const auto& [key, _] : obj.items()) {
            if (!known.count(key)) throw DataError("unknown field '" + key + "'");
        }
    }
    Recipe r;
    r.id = read_string(obj, "id");
    r.title = read_string(obj, "title");
    r.ingredients = read_list(obj, "ingredients");
    r.instructions = read_list(obj, "instructions");
    r.image_ref = read_string(obj, "image");
    if (r.id.empty()) throw DataError("empty id");
    if (mode == Validation::strict && !r.is_complete()) {
        throw DataError("recipe '" + r.id + "' is incomplete (strict mode requires title, ingredients and instructions)");
    }
    return r;
}

std::string serialize_recipe(const Recipe& recipe) {
    ordered_json obj;
    obj["id"] = recipe.id;
    obj["title"] = recipe.title;
    obj["ingredients"] = recipe.ingredients;
    obj["instructions"] = recipe.instructions;
    obj["image"] = recipe.image_ref;
    return obj.dump();
}

std::vector<Recipe> load_recipes(const std::filesystem::path& path, Validation mode) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open recipes file '" + path.string() + "'");
    std::vector<Recipe> out;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        Recipe r;
        try {
            r = parse_recipe_line(line, mode);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto [it, inserted] = seen.emplace(r.id, line_no);
        if (!inserted) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + r.id +
                            "' (first seen on line " + std::to_string(it->second) + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_recipes(const std::vector<Recipe>& recipes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write recipes file '" + path.string() + "'");
    for (const auto& r : recipes) out << serialize_recipe(r) << '\n';
}

void validate_corpus(const PairedCorpus& corpus) {
    std::set<std::string_view> ids;
    for (const auto& r : corpus.recipes) {
        if (!ids.insert(r.id).second) throw DataError("duplicate id '" + r.id + "'");
    }
    const std::size_t dim = corpus.feature_dim();
    for (const auto& [ref, features] : corpus.image_features) {
        if (features.dim() != dim) {
            throw DataError("feature dimension mismatch for '" + ref + "': " + std::to_string(features.dim()) +
                            " vs " + std::to_string(dim));
        }
    }
    for (const auto& r : corpus.recipes) {
        if (!corpus.image_features.count(r.image_ref)) {
            throw DataError("recipe '" + r.id + "' references missing image '" + r.image_ref + "'");
        }
    }
}

PairedCorpus load_corpus(const std::filesystem::path& recipes_path, const std::filesystem::path& features_path,
                         Validation mode) {
    PairedCorpus corpus;
    corpus.recipes = load_recipes(recipes_path, mode);
    auto dump = load_dump(features_path);
    for (auto& e : dump.entries) {
        auto id = e.id;
        corpus.image_features.emplace(std::move(id), std::move(e));
    }
    validate_corpus(corpus);
    return corpus;
}

}  // namespace simmer
