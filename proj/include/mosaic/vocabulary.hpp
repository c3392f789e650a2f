#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mosaic/error.hpp"

namespace mosaic {

struct PropertyCategory {
  std::string name;                 // e.g. "Hardness"
  std::string word;                 // surface form used in text, e.g. "hardness"
  std::vector<std::string> values;  // descriptive words
};

// The eleven property categories with their descriptive words.
inline const std::vector<PropertyCategory>& property_table() {
  static const std::vector<PropertyCategory> table = {
      {"Color", "color",
       {"brown", "blue", "pink", "red", "white", "orange", "yellow", "green", "purple",
        "multicolored"}},
      {"Deformability", "deformability", {"deformable", "rigid", "brittle"}},
      {"Hardness", "hardness", {"soft", "squishy", "hard"}},
      {"Material", "material",
       {"plastic", "wicker", "aluminum", "foam", "metal", "rubber", "paper", "styrofoam",
        "wood"}},
      {"State", "state", {"closed", "full", "empty", "open"}},
      {"Reflection", "reflection", {"shiny", "dull"}},
      {"Shape", "shape", {"cylindrical", "wide", "rectangular", "block", "box", "cone", "round"}},
      {"Size", "size", {"small", "short", "big", "large", "tall"}},
      {"Transparency", "transparency", {"transparent", "opaque", "translucent", "see-through"}},
      {"Usage", "usage", {"container", "toy"}},
      {"Weight", "weight", {"light", "heavy"}},
  };
  return table;
}

inline const PropertyCategory* find_property_category(std::string_view name) {
  const auto& table = property_table();
  auto it = std::find_if(table.begin(), table.end(),
                         [&](const PropertyCategory& c) { return c.name == name; });
  return it == table.end() ? nullptr : &*it;
}

inline const PropertyCategory& property_category(std::string_view name) {
  const auto* cat = find_property_category(name);
  require(cat != nullptr, ErrorKind::kVocabulary,
          "unknown property category '" + std::string(name) + "'");
  return *cat;
}

inline bool is_property_value(std::string_view category, std::string_view value) {
  const auto* cat = find_property_category(category);
  return cat != nullptr &&
         std::find(cat->values.begin(), cat->values.end(), value) != cat->values.end();
}

// Object categories of the 100-object household set (5 objects each).
inline const std::vector<std::string>& object_category_names() {
  static const std::vector<std::string> names = {
      "ball",   "basket", "bigstuffedanimal", "bottle", "bowl",
      "box",    "can",    "cone",             "cup",    "egg",
      "eggcoloringcup", "medicine", "noodle", "pasta", "pvc",
      "smallstuffedanimal", "sponge", "timber", "tin", "weight"};
  return names;
}

// Exploratory behaviors; only "look" is non-interactive.
inline const std::vector<std::string>& behavior_names() {
  static const std::vector<std::string> names = {"look", "press", "grasp", "hold", "lift",
                                                 "drop", "poke",  "push",  "shake", "tap"};
  return names;
}

inline constexpr std::string_view kLookBehavior = "look";

// Namespaced token keys, so that e.g. the "weight" category, the "Weight"
// property category and a value never collide.
namespace token {
inline std::string value(std::string_view v) { return "value:" + std::string(v); }
inline std::string category(std::string_view c) { return "category:" + std::string(c); }
inline std::string property(std::string_view p) { return "property:" + std::string(p); }
inline std::string behavior(std::string_view b) { return "behavior:" + std::string(b); }
}  // namespace token

}  // namespace mosaic
