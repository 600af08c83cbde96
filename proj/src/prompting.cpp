#include "simmer/prompting.hpp"

#include <json.hpp>

#include "simmer/error.hpp"

namespace simmer {

namespace {

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

}  // namespace

std::string_view to_string(Role role) noexcept {
    return role == Role::query ? "query" : "candidate";
}

std::string_view to_string(Direction direction) noexcept {
    return direction == Direction::image_to_recipe ? "i2r" : "r2i";
}

std::string_view to_string(Modality modality) noexcept {
    return modality == Modality::image ? "image" : "recipe";
}

Role parse_role(std::string_view text) {
    if (text == "query") return Role::query;
    if (text == "candidate") return Role::candidate;
    throw UsageError("unknown role '" + std::string(text) + "' (expected query|candidate)");
}

Direction parse_direction(std::string_view text) {
    if (text == "i2r") return Direction::image_to_recipe;
    if (text == "r2i") return Direction::recipe_to_image;
    throw UsageError("unknown direction '" + std::string(text) + "' (expected i2r|r2i)");
}

Modality parse_modality(std::string_view text) {
    if (text == "image") return Modality::image;
    if (text == "recipe") return Modality::recipe;
    throw UsageError("unknown modality '" + std::string(text) + "' (expected image|recipe)");
}

Direction direction_for(Modality modality, Role role) noexcept {
    const bool image_query_side = (modality == Modality::image) == (role == Role::query);
    return image_query_side ? Direction::image_to_recipe : Direction::recipe_to_image;
}

PromptedSample render_image_prompt(const std::string& image_ref, Role role, std::string source_id) {
    if (image_ref.empty()) throw DataError("render_image_prompt: empty image reference");
    PromptedSample s;
    s.source_id = source_id.empty() ? image_ref : std::move(source_id);
    s.role = role;
    s.modality = Modality::image;
    s.direction = direction_for(Modality::image, role);
    s.text.reserve(kImagePlaceholder.size() + 1 + kImageQueryInstruction.size());
    s.text += kImagePlaceholder;
    s.text += '\n';
    s.text += role == Role::query ? kImageQueryInstruction : kImageCandidateInstruction;
    s.image_ref = image_ref;
    return s;
}

std::string recipe_payload(const RecipeVariant& variant) {
    const auto& r = variant.recipe;
    std::string out;
    auto segment = [&out](std::string_view label, const std::string& body) {
        if (!out.empty()) out += ", ";
        out += label;
        out += body;
    };
    if (variant.present.title()) segment("Title: ", r.title);
    if (variant.present.ingredients()) segment("Ingredients: ", join(r.ingredients, ", "));
    if (variant.present.instructions()) segment("Instructions: ", join(r.instructions, " "));
    return out;
}

PromptedSample render_recipe_prompt(const RecipeVariant& variant, Role role) {
    if (variant.present.empty()) {
        throw DataError("render_recipe_prompt: variant of '" + variant.base_id + "' has no components");
    }
    PromptedSample s;
    s.source_id = variant.variant_id();
    s.role = role;
    s.modality = Modality::recipe;
    s.direction = direction_for(Modality::recipe, role);
    s.text = std::string(role == Role::query ? kRecipeQueryPrefix : kRecipeCandidatePrefix) + recipe_payload(variant);
    return s;
}

bool is_well_formed(const PromptedSample& sample) noexcept {
    if (sample.direction != direction_for(sample.modality, sample.role)) return false;
    const auto placeholders = count_occurrences(sample.text, kImagePlaceholder);
    if (sample.modality == Modality::image) return placeholders == 1 && sample.image_ref.has_value();
    return placeholders == 0 && !sample.image_ref.has_value() && !sample.text.empty();
}

std::string serialize_prompt_record(const PromptedSample& sample) {
    nlohmann::ordered_json obj;
    obj["source_id"] = sample.source_id;
    obj["role"] = to_string(sample.role);
    obj["direction"] = to_string(sample.direction);
    obj["text"] = sample.text;
    if (sample.image_ref) {
        obj["image_ref"] = *sample.image_ref;
    } else {
        obj["image_ref"] = nullptr;
    }
    return obj.dump();
}

PromptedSample parse_prompt_record(const std::string& line) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line);
        PromptedSample s;
        s.source_id = obj.at("source_id").get<std::string>();
        s.role = parse_role(obj.at("role").get<std::string>());
        s.direction = parse_direction(obj.at("direction").get<std::string>());
        s.text = obj.at("text").get<std::string>();
        const auto& ref = obj.at("image_ref");
        if (!ref.is_null()) s.image_ref = ref.get<std::string>();
        s.modality = s.image_ref ? Modality::image : Modality::recipe;
        if (!is_well_formed(s)) throw DataError("prompt record violates role/direction/modality invariants");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed prompt record: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("malformed prompt record: ") + e.what());
    }
}

}  // namespace simmer
