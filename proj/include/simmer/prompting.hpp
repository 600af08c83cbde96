#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "simmer/corpus.hpp"

namespace simmer {

enum class Role { query, candidate };
enum class Direction { image_to_recipe, recipe_to_image };
enum class Modality { image, recipe };

std::string_view to_string(Role role) noexcept;
std::string_view to_string(Direction direction) noexcept;  // "i2r" / "r2i"
std::string_view to_string(Modality modality) noexcept;
Role parse_role(std::string_view text);
Direction parse_direction(std::string_view text);
Modality parse_modality(std::string_view text);

inline constexpr std::string_view kImagePlaceholder = "<|image_1|>";

inline constexpr std::string_view kImageQueryInstruction = "Find a cooking recipe describing the given food image.";
inline constexpr std::string_view kImageCandidateInstruction = "Represent the given food image for recipe prediction.";
inline constexpr std::string_view kRecipeQueryPrefix = "Find me a food image that matches the given cooking recipe: ";
inline constexpr std::string_view kRecipeCandidatePrefix = "A cooking recipe: ";

struct PromptedSample {
    std::string source_id;
    Role role = Role::query;
    Direction direction = Direction::image_to_recipe;
    Modality modality = Modality::image;
    std::string text;
    std::optional<std::string> image_ref;

    friend bool operator==(const PromptedSample&, const PromptedSample&) = default;
};

/// Image queries belong to i2r, image candidates to r2i.
Direction direction_for(Modality modality, Role role) noexcept;

/// "<|image_1|>\n" followed by the role's instruction. `source_id` defaults
/// to the image reference. Throws DataError on an empty reference.
PromptedSample render_image_prompt(const std::string& image_ref, Role role, std::string source_id = {});

/// Role prefix followed by the present segments ("Title: ...",
/// "Ingredients: a, b", "Instructions: s1 s2") joined by ", ".
/// Absent components contribute neither label nor separator.
/// source_id is the variant id. Throws DataError for an empty mask.
PromptedSample render_recipe_prompt(const RecipeVariant& variant, Role role);

/// The payload after the role prefix, e.g. "Title: Pasta, Ingredients: salt".
std::string recipe_payload(const RecipeVariant& variant);

/// Checks the modality/placeholder/role/direction invariants.
bool is_well_formed(const PromptedSample& sample) noexcept;

/// Line-delimited record {source_id, role, direction, text, image_ref}.
std::string serialize_prompt_record(const PromptedSample& sample);
PromptedSample parse_prompt_record(const std::string& line);

}  // namespace simmer
