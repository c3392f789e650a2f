#pragma once

// Deterministic synthetic datasets: property-driven pseudo-embeddings,
// haptic time series, and randomized text descriptions. Token vectors shared
// between modalities and text give the contrastive objective recoverable
// structure without any pretrained model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "mosaic/datamodel.hpp"
#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"
#include "mosaic/preprocess.hpp"
#include "mosaic/random.hpp"
#include "mosaic/vocabulary.hpp"

namespace mosaic {

// Coin-flip rates for the optional parts of a description.
struct DescriptionStyle {
  double category_rate = 0.7;
  double property_word_rate = 0.5;
};

struct SyntheticConfig {
  std::size_t objects_per_category = 5;
  std::size_t categories = 5;
  std::vector<std::string> behaviors = {"look", "lift", "tap"};
  std::size_t d_z = 32;
  std::size_t trials = 5;
  double noise_level = 0.0;
  std::uint64_t seed = 7;
  std::size_t descriptions = 100;
  std::size_t haptic_channels = 7;
  // Per object and property: chance the property is absent, and chance it is
  // redrawn uniformly instead of copied from the category prototype.
  double property_dropout = 0.1;
  double property_redraw = 0.6;
  DescriptionStyle style;
};

// Stand-in synonym lists. Every value maps to at least itself; synonyms share
// the canonical token for embedding purposes.
inline const std::map<std::string, std::vector<std::string>>& synonym_table() {
  static const std::map<std::string, std::vector<std::string>> table = [] {
    std::map<std::string, std::vector<std::string>> t;
    for (const auto& cat : property_table())
      for (const auto& v : cat.values) t[v] = {v};
    const std::map<std::string, std::vector<std::string>> extra = {
        {"soft", {"plush", "cushy"}},       {"hard", {"firm", "solid"}},
        {"squishy", {"spongy", "mushy"}},   {"small", {"little", "tiny"}},
        {"big", {"huge"}},                  {"large", {"sizable"}},
        {"tall", {"high"}},                 {"short", {"stubby"}},
        {"round", {"spherical"}},           {"wide", {"broad"}},
        {"heavy", {"weighty", "hefty"}},    {"light", {"lightweight", "featherweight"}},
        {"shiny", {"glossy", "reflective"}}, {"dull", {"matte"}},
        {"rigid", {"stiff"}},               {"deformable", {"bendable", "flexible"}},
        {"brittle", {"fragile"}},           {"empty", {"vacant"}},
        {"full", {"filled"}},               {"open", {"uncovered"}},
        {"closed", {"sealed", "shut"}},     {"transparent", {"clear"}},
        {"multicolored", {"colorful"}},     {"metal", {"metallic"}},
        {"wood", {"wooden"}},               {"container", {"receptacle", "holder"}},
        {"toy", {"plaything"}},             {"cylindrical", {"tubular"}},
    };
    for (const auto& [v, syn] : extra) t[v].insert(t[v].end(), syn.begin(), syn.end());
    return t;
  }();
  return table;
}

inline const std::vector<std::string>& synonyms_of(const std::string& value) {
  const auto& t = synonym_table();
  auto it = t.find(value);
  require(it != t.end(), ErrorKind::kVocabulary, "no synonym entry for '" + value + "'");
  return it->second;
}

// Every token the synthetic text encoder knows, in deterministic order.
inline std::vector<std::string> vocabulary_tokens() {
  std::vector<std::string> tokens;
  for (const auto& cat : property_table()) {
    tokens.push_back(token::property(cat.name));
    for (const auto& v : cat.values) tokens.push_back(token::value(v));
  }
  for (const auto& c : object_category_names()) tokens.push_back(token::category(c));
  for (const auto& b : behavior_names()) tokens.push_back(token::behavior(b));
  return tokens;
}

// Unit vectors drawn once from a seeded isotropic Gaussian.
inline WordTable make_latent_word_table(std::size_t d_z, std::uint64_t seed) {
  require(d_z > 0, ErrorKind::kConfiguration, "d_z must be positive");
  WordTable table;
  table.d_z = d_z;
  for (const auto& tok : vocabulary_tokens()) {
    Rng rng = SeedSeq(seed).mix("word").mix(tok).rng();
    std::vector<double> v(d_z);
    double ss = 0.0;
    for (double& x : v) {
      x = standard_normal(rng);
      ss += x * x;
    }
    const double norm = std::sqrt(ss);
    for (double& x : v) x /= norm;
    table.vectors[tok] = std::move(v);
  }
  return table;
}

// l2-normalized sum of token vectors, as a 1 x D_Z row.
inline Tensor embed_description(const std::vector<std::string>& tokens, const WordTable& table) {
  require(!tokens.empty(), ErrorKind::kVocabulary, "cannot embed an empty token list");
  std::vector<double> acc(table.d_z, 0.0);
  for (const auto& tok : tokens) {
    const auto& v = table.at(tok);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  auto tape = Tape::inference();
  return l2_normalize_rows(tape, Tensor::row(std::move(acc)));
}

struct Description {
  std::string text;
  std::vector<std::string> tokens;  // canonical tokens actually mentioned
};

// The random choices behind one description.
struct DescriptionChoices {
  bool include_category = false;
  struct Item {
    std::string property;  // property-category name
    std::string surface;   // value or one of its synonyms
    bool include_property_word = false;
  };
  std::vector<Item> items;
};

inline std::string with_article(const std::string& noun) {
  const bool vowel = !noun.empty() && std::string_view("aeiou").find(noun[0]) != std::string_view::npos;
  return (vowel ? "an " : "a ") + noun;
}

inline Description render_description(const ObjectMeta& obj, const std::string& behavior,
                                      const DescriptionChoices& choices) {
  require(!choices.items.empty(), ErrorKind::kGeneration,
          "a description needs at least one property");
  Description d;
  d.tokens.push_back(token::behavior(behavior));
  d.text = "Performing " + behavior + " action on ";
  if (choices.include_category) {
    d.text += with_article(obj.category);
    d.tokens.push_back(token::category(obj.category));
  } else {
    d.text += "an object";
  }
  d.text += " with properties: ";
  for (std::size_t i = 0; i < choices.items.size(); ++i) {
    const auto& item = choices.items[i];
    auto it = obj.properties.find(item.property);
    require(it != obj.properties.end(), ErrorKind::kGeneration,
            "object '" + obj.object_id + "' has no " + item.property + " property");
    const auto& syn = synonyms_of(it->second);
    require(std::find(syn.begin(), syn.end(), item.surface) != syn.end(), ErrorKind::kGeneration,
            "'" + item.surface + "' is not a synonym of '" + it->second + "'");
    if (i) d.text += ", ";
    d.text += item.surface;
    d.tokens.push_back(token::value(it->second));
    if (item.include_property_word) {
      d.text += " " + property_category(item.property).word;
      d.tokens.push_back(token::property(item.property));
    }
  }
  return d;
}

// Random subset of 1..n valued properties in random order, each possibly
// swapped for a synonym; category and property-category words included by
// coin flip.
inline Description generate_description(const ObjectMeta& obj, const std::string& behavior,
                                        Rng& rng, const DescriptionStyle& style = {}) {
  require(!obj.properties.empty(), ErrorKind::kGeneration,
          "object '" + obj.object_id + "' has no valued properties to describe");
  std::vector<std::string> props;
  for (const auto& [cat, value] : obj.properties) props.push_back(cat);
  std::shuffle(props.begin(), props.end(), rng);
  const std::size_t count = 1 + uniform_index(rng, props.size());
  DescriptionChoices choices;
  choices.include_category = uniform01(rng) < style.category_rate;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& syn = synonyms_of(obj.properties.at(props[i]));
    choices.items.push_back({props[i], syn[uniform_index(rng, syn.size())], uniform01(rng) < style.property_word_rate});
  }
  return render_description(obj, behavior, choices);
}

// Draws `count` descriptions, preferring distinct texts; objects with few
// properties cannot supply that many distinct ones, so repeats fill the rest.
inline std::shared_ptr<TextPool> generate_text_pool(const ObjectMeta& obj,
                                                    const std::string& behavior,
                                                    const WordTable& table, std::size_t count,
                                                    Rng& rng, const DescriptionStyle& style = {}) {
  require(count > 0, ErrorKind::kConfiguration, "description count must be positive");
  std::vector<Description> picked;
  std::set<std::string> seen;
  for (std::size_t attempt = 0; attempt < 50 * count && picked.size() < count; ++attempt) {
    auto d = generate_description(obj, behavior, rng, style);
    if (seen.insert(d.text).second) picked.push_back(std::move(d));
  }
  while (picked.size() < count) picked.push_back(generate_description(obj, behavior, rng, style));

  auto pool = std::make_shared<TextPool>();
  std::vector<double> flat;
  flat.reserve(count * table.d_z);
  for (const auto& d : picked) {
    pool->descriptions.push_back(d.text);
    const auto e = embed_description(d.tokens, table);
    flat.insert(flat.end(), e.values().begin(), e.values().end());
  }
  pool->embeddings = Tensor::matrix(count, table.d_z, std::move(flat));
  return pool;
}

// Which properties each frozen modality "perceives".
inline std::vector<std::string> vision_tokens(const ObjectMeta& obj) {
  std::vector<std::string> tokens = {token::category(obj.category)};
  for (const char* p : {"Color", "Material", "Reflection", "Shape", "Size", "State", "Transparency"}) {
    auto it = obj.properties.find(p);
    if (it != obj.properties.end()) tokens.push_back(token::value(it->second));
  }
  return tokens;
}

inline std::vector<std::string> audio_tokens(const ObjectMeta& obj, const std::string& behavior) {
  std::vector<std::string> tokens = {token::behavior(behavior)};
  for (const char* p : {"Deformability", "Hardness", "Material", "State", "Weight"}) {
    auto it = obj.properties.find(p);
    if (it != obj.properties.end()) tokens.push_back(token::value(it->second));
  }
  return tokens;
}

// Haptic generative rule: amplitude from weight, oscillation frequency from
// hardness, decay rate from deformability.
struct HapticProfile {
  double amplitude = 1.5;
  double frequency_hz = 2.0;
  double decay_per_s = 0.5;
};

inline HapticProfile haptic_profile(const ObjectMeta& obj, const std::string& behavior) {
  HapticProfile p;
  auto get = [&](const char* cat) -> std::string {
    auto it = obj.properties.find(cat);
    return it == obj.properties.end() ? std::string() : it->second;
  };
  const auto weight = get("Weight");
  if (weight == "heavy") p.amplitude = 2.0;
  if (weight == "light") p.amplitude = 1.0;
  const auto hardness = get("Hardness");
  if (hardness == "hard") p.frequency_hz = 4.0;
  if (hardness == "squishy") p.frequency_hz = 2.5;
  if (hardness == "soft") p.frequency_hz = 1.5;
  const auto deform = get("Deformability");
  if (deform == "rigid") p.decay_per_s = 0.2;
  if (deform == "brittle") p.decay_per_s = 0.8;
  if (deform == "deformable") p.decay_per_s = 1.6;
  if (behavior == "lift" || behavior == "hold") p.amplitude *= 1.5;
  return p;
}

// Nominal image count per behavior at 10 fps.
inline std::size_t nominal_image_count(const std::string& behavior) {
  static const std::map<std::string, std::size_t> counts = {
      {"look", 8},  {"press", 12}, {"grasp", 14}, {"hold", 12}, {"lift", 16},
      {"drop", 10}, {"poke", 10},  {"push", 14},  {"shake", 18}, {"tap", 10}};
  auto it = counts.find(behavior);
  return it == counts.end() ? 12 : it->second;
}

// Per-trial image count: nominal +/- 2, seeded by (seed, behavior, trial).
inline std::size_t trial_image_count(std::uint64_t seed, const std::string& behavior,
                                     std::size_t trial_index) {
  Rng rng = SeedSeq(seed).mix("images").mix(behavior).mix(trial_index).rng();
  return nominal_image_count(behavior) - 2 + uniform_index(rng, 5);
}

struct SynthContext {
  const WordTable& table;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  std::size_t haptic_channels = 7;
};

namespace detail {

inline std::vector<double> token_sum_unit(const std::vector<std::string>& tokens,
                                          const WordTable& table) {
  const auto e = embed_description(tokens, table);
  return {e.values().begin(), e.values().end()};
}

}  // namespace detail

inline TrialRecord generate_trial(const ObjectMeta& obj, const Behavior& behavior,
                                  std::size_t trial_index, std::size_t image_count,
                                  const SynthContext& ctx,
                                  std::shared_ptr<const TextPool> text_pool) {
  require(ctx.noise_level >= 0.0, ErrorKind::kConfiguration, "noise_level must be non-negative");
  require(image_count >= 2, ErrorKind::kData, "a trial needs at least 2 images");
  const std::size_t d = ctx.table.d_z;
  Rng noise = SeedSeq(ctx.seed).mix("noise").mix(obj.object_id).mix(behavior.name).mix(trial_index).rng();
  const double noise_scale = ctx.noise_level / std::sqrt(static_cast<double>(d));

  TrialRecord t;
  t.object_id = obj.object_id;
  t.behavior = behavior.name;
  t.trial_index = trial_index;
  t.text_pool = std::move(text_pool);

  // Raw frames (D x images) resampled to the behavior's aligned frame count.
  const auto base = detail::token_sum_unit(vision_tokens(obj), ctx.table);
  std::vector<double> raw(d * image_count);
  for (std::size_t f = 0; f < image_count; ++f)
    for (std::size_t j = 0; j < d; ++j)
      raw[j * image_count + f] = base[j] + noise_scale * standard_normal(noise);
  const Tensor aligned = resample_linear(Tensor::matrix(d, image_count, std::move(raw)),
                                         behavior.vision_frames);
  std::vector<double> frames(behavior.vision_frames * d);
  for (std::size_t f = 0; f < behavior.vision_frames; ++f)
    for (std::size_t j = 0; j < d; ++j) frames[f * d + j] = aligned.at(j, f);
  t.vision_frames = Tensor::matrix(behavior.vision_frames, d, std::move(frames));

  if (behavior.has_audio) {
    auto a = detail::token_sum_unit(audio_tokens(obj, behavior.name), ctx.table);
    for (double& x : a) x += noise_scale * standard_normal(noise);
    t.audio = Tensor::row(std::move(a));
  }

  if (behavior.has_haptic) {
    const auto profile = haptic_profile(obj, behavior.name);
    Rng phase_rng = SeedSeq(ctx.seed).mix("phase").mix(behavior.name).mix(trial_index).rng();
    const double phase = 2.0 * std::numbers::pi * uniform01(phase_rng);
    const double duration = static_cast<double>(image_count) / kCameraFrameRate;
    const std::size_t n_raw = std::max<std::size_t>(2, round_frames(duration * kRawHapticRate));
    const std::size_t channels = ctx.haptic_channels;
    std::vector<double> h(channels * n_raw);
    for (std::size_t j = 0; j < channels; ++j) {
      const double gain = 1.0 + 0.15 * static_cast<double>(j);
      for (std::size_t s = 0; s < n_raw; ++s) {
        const double tau = static_cast<double>(s) / kRawHapticRate;
        const double wave = std::sin(2.0 * std::numbers::pi * profile.frequency_hz * tau + phase +
                                     0.4 * static_cast<double>(j)) *
                            std::exp(-profile.decay_per_s * tau);
        h[j * n_raw + s] = profile.amplitude * gain * (0.5 + wave) +
                           0.1 * ctx.noise_level * standard_normal(noise);
      }
    }
    t.haptic = resample_linear(Tensor::matrix(channels, n_raw, std::move(h)), behavior.haptic_frames);
  }
  return t;
}

// Objects drawn around a per-category prototype; see property_dropout and
// property_redraw.
inline std::vector<ObjectMeta> generate_objects(const SyntheticConfig& config) {
  const auto& names = object_category_names();
  require(config.categories >= 1 && config.categories <= names.size(), ErrorKind::kConfiguration,
          "categories must be between 1 and " + std::to_string(names.size()));
  require(config.objects_per_category >= 1, ErrorKind::kConfiguration,
          "objects_per_category must be positive");
  require(config.property_dropout >= 0.0 && config.property_redraw >= 0.0 &&
              config.property_dropout + config.property_redraw <= 1.0,
          ErrorKind::kConfiguration, "property_dropout + property_redraw must lie in [0, 1]");
  std::vector<ObjectMeta> objects;
  for (std::size_t c = 0; c < config.categories; ++c) {
    const std::string& cat = names[c];
    Rng rng = SeedSeq(config.seed).mix("category").mix(cat).rng();
    std::map<std::string, std::string> prototype;
    for (const auto& pc : property_table())
      prototype[pc.name] = pc.values[uniform_index(rng, pc.values.size())];
    for (std::size_t k = 0; k < config.objects_per_category; ++k) {
      ObjectMeta obj{cat + "_" + std::to_string(k), cat, {}};
      for (const auto& pc : property_table()) {
        const double u = uniform01(rng);
        if (u < config.property_dropout) continue;
        obj.properties[pc.name] = u < config.property_dropout + config.property_redraw
                                      ? pc.values[uniform_index(rng, pc.values.size())]
                                      : prototype[pc.name];
      }
      if (obj.properties.empty()) obj.properties["Usage"] = prototype["Usage"];
      objects.push_back(std::move(obj));
    }
  }
  return objects;
}

inline Dataset generate_dataset(const SyntheticConfig& config) {
  require(config.d_z > 0, ErrorKind::kConfiguration, "d_z must be positive");
  require(config.trials >= 1, ErrorKind::kConfiguration, "trials must be positive");
  require(!config.behaviors.empty(), ErrorKind::kConfiguration, "no behaviors configured");
  const auto& known = behavior_names();
  for (const auto& b : config.behaviors) {
    require(std::find(known.begin(), known.end(), b) != known.end(), ErrorKind::kConfiguration,
            "unknown behavior '" + b + "'");
  }

  Dataset ds;
  ds.d_z = config.d_z;
  ds.haptic_channels = config.haptic_channels;
  ds.words = make_latent_word_table(config.d_z, config.seed);
  ds.objects = generate_objects(config);

  const std::map<std::string, double> rates = {{"vision", kCameraFrameRate},
                                               {"haptic", kHapticRate}};
  std::set<std::string> unique(config.behaviors.begin(), config.behaviors.end());
  for (const auto& name : unique) {
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < ds.objects.size(); ++i)
      for (std::size_t r = 0; r < config.trials; ++r)
        counts.push_back(trial_image_count(config.seed, name, r));
    const auto timing = compute_timing(name, counts, rates);
    ds.behaviors.push_back(name == kLookBehavior
                               ? Behavior::look(timing.target_frames.at("vision"))
                               : Behavior::interaction(name, timing.target_frames.at("vision"),
                                                       timing.target_frames.at("haptic")));
  }

  const SynthContext ctx{*ds.words, config.noise_level, config.seed, config.haptic_channels};
  for (const auto& obj : ds.objects) {
    for (const auto& b : ds.behaviors) {
      Rng text_rng = SeedSeq(config.seed).mix("text").mix(obj.object_id).mix(b.name).rng();
      std::shared_ptr<const TextPool> pool =
          generate_text_pool(obj, b.name, *ds.words, config.descriptions, text_rng, config.style);
      ds.text_pools[{obj.object_id, b.name}] = pool;
      for (std::size_t r = 0; r < config.trials; ++r) {
        ds.trials.push_back(
            generate_trial(obj, b, r, trial_image_count(config.seed, b.name, r), ctx, pool));
      }
    }
  }
  ds.finalize();
  return ds;
}

}  // namespace mosaic
