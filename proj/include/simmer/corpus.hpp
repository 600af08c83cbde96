#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "simmer/embedding.hpp"

namespace simmer {

struct Recipe {
    std::string id;
    std::string title;
    std::vector<std::string> ingredients;
    std::vector<std::string> instructions;
    std::string image_ref;

    bool has_title() const noexcept { return !title.empty(); }
    bool has_ingredients() const noexcept { return !ingredients.empty(); }
    bool has_instructions() const noexcept { return !instructions.empty(); }
    /// All three components present and every list entry nonempty.
    bool is_complete() const noexcept;

    friend bool operator==(const Recipe&, const Recipe&) = default;
};

/// Which recipe components a variant keeps. Bits read title, ingredients,
/// instructions from most to least significant, so "100" is title-only.
class ComponentMask {
public:
    static constexpr std::uint8_t kTitle = 0b100;
    static constexpr std::uint8_t kIngredients = 0b010;
    static constexpr std::uint8_t kInstructions = 0b001;

    constexpr ComponentMask() = default;
    constexpr explicit ComponentMask(std::uint8_t bits) : bits_(bits & 0b111) {}

    static constexpr ComponentMask all() { return ComponentMask(0b111); }
    static constexpr ComponentMask title_only() { return ComponentMask(kTitle); }
    static constexpr ComponentMask ingredients_only() { return ComponentMask(kIngredients); }
    static constexpr ComponentMask instructions_only() { return ComponentMask(kInstructions); }

    constexpr std::uint8_t bits() const noexcept { return bits_; }
    constexpr bool title() const noexcept { return bits_ & kTitle; }
    constexpr bool ingredients() const noexcept { return bits_ & kIngredients; }
    constexpr bool instructions() const noexcept { return bits_ & kInstructions; }
    constexpr bool empty() const noexcept { return bits_ == 0; }

    /// "111", "100", ...
    std::string to_string() const;
    /// Suffix appended to the base id for partial variants: "", "#title", ...
    std::string id_suffix() const;

    friend constexpr bool operator==(ComponentMask, ComponentMask) = default;

private:
    std::uint8_t bits_ = 0;
};

/// The four training patterns, in emission order.
inline constexpr std::array<ComponentMask, 4> kAugmentationMasks = {
    ComponentMask::all(), ComponentMask::title_only(), ComponentMask::ingredients_only(),
    ComponentMask::instructions_only()};

struct RecipeVariant {
    std::string base_id;
    ComponentMask present;
    Recipe recipe;  // absent components emptied; recipe.id == base_id

    /// base_id for the complete variant, base_id + mask suffix otherwise.
    std::string variant_id() const { return base_id + (present == ComponentMask::all() ? "" : present.id_suffix()); }

    friend bool operator==(const RecipeVariant&, const RecipeVariant&) = default;
};

/// Four variants in the order complete, title-only, ingredients-only,
/// instructions-only. Throws DataError unless the recipe is complete.
std::vector<RecipeVariant> augment(const Recipe& recipe);

/// Projects a recipe onto the components listed in `mask`.
RecipeVariant make_variant(const Recipe& recipe, ComponentMask mask);

/// Variant carrying whichever components the recipe actually has.
RecipeVariant as_variant(const Recipe& recipe);

enum class Validation {
    strict,     // unknown fields and incomplete recipes rejected
    permissive  // unknown fields ignored, partial recipes accepted
};

struct PairedCorpus {
    std::vector<Recipe> recipes;
    std::map<std::string, EmbeddingVector> image_features;

    std::size_t size() const noexcept { return recipes.size(); }
    /// Uniform feature dimension (0 if there are no features).
    std::size_t feature_dim() const noexcept;
    /// Throws DataError for a dangling reference.
    const EmbeddingVector& features_for(const std::string& image_ref) const;
};

/// Parses one recipes-file line. Trailing whitespace is trimmed per field.
Recipe parse_recipe_line(const std::string& line, Validation mode);
/// Canonical single-line serialization (no trailing newline).
std::string serialize_recipe(const Recipe& recipe);

std::vector<Recipe> load_recipes(const std::filesystem::path& path, Validation mode);
void save_recipes(const std::vector<Recipe>& recipes, const std::filesystem::path& path);

/// Checks id uniqueness and that every image_ref resolves with a uniform dim.
void validate_corpus(const PairedCorpus& corpus);

PairedCorpus load_corpus(const std::filesystem::path& recipes_path, const std::filesystem::path& features_path,
                         Validation mode = Validation::strict);

}  // namespace simmer
