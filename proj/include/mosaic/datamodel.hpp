#pragma once

// Objects, behaviors, trials and their frozen embeddings; the on-disk
// embedding archive; object-based fold splitting.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"
#include "mosaic/random.hpp"
#include "mosaic/vocabulary.hpp"

namespace mosaic {

struct ObjectMeta {
  std::string object_id;
  std::string category;
  // Property-category name -> value. Categories may be missing.
  std::map<std::string, std::string> properties;

  bool has(std::string_view category_name, std::string_view value) const {
    auto it = properties.find(std::string(category_name));
    return it != properties.end() && it->second == value;
  }

  bool operator==(const ObjectMeta&) const = default;
};

enum class Modality { kVision, kAudio, kHaptic };

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kVision: return "vision";
    case Modality::kAudio: return "audio";
    case Modality::kHaptic: return "haptic";
  }
  return "?";
}

struct Behavior {
  std::string name;
  bool interactive = true;
  bool has_audio = true;
  bool has_haptic = true;
  std::size_t vision_frames = 1;
  std::size_t haptic_frames = 0;  // 0 when the behavior records no haptics

  static Behavior look(std::size_t vision_frames) {
    return {std::string(kLookBehavior), false, false, false, vision_frames, 0};
  }
  static Behavior interaction(std::string name, std::size_t vision_frames,
                              std::size_t haptic_frames) {
    return {std::move(name), true, true, true, vision_frames, haptic_frames};
  }

  bool operator==(const Behavior&) const = default;
};

struct TextPool {
  std::vector<std::string> descriptions;
  Tensor embeddings;  // descriptions.size() x D_Z
};

struct TrialRecord {
  std::string object_id;
  std::string behavior;
  std::size_t trial_index = 0;
  Tensor vision_frames;  // t_v x D_Z
  Tensor audio;          // 1 x D_Z, undefined when absent
  Tensor haptic;         // d x t_h, undefined when absent
  std::shared_ptr<const TextPool> text_pool;
};

// Token -> vector table used to embed commands and descriptions.
struct WordTable {
  std::size_t d_z = 0;
  std::map<std::string, std::vector<double>> vectors;

  const std::vector<double>& at(const std::string& tok) const {
    auto it = vectors.find(tok);
    require(it != vectors.end(), ErrorKind::kVocabulary, "unknown token '" + tok + "'");
    return it->second;
  }
};

using PoolKey = std::pair<std::string, std::string>;  // (object, behavior)

class Dataset {
 public:
  std::size_t d_z = 0;
  std::size_t haptic_channels = 7;
  std::vector<Behavior> behaviors;
  std::vector<ObjectMeta> objects;
  std::vector<TrialRecord> trials;
  std::map<PoolKey, std::shared_ptr<const TextPool>> text_pools;
  std::optional<WordTable> words;

  // Sorts everything into canonical order, rebuilds lookups and checks every
  // invariant. Must be called after construction or mutation.
  void finalize() {
    std::sort(behaviors.begin(), behaviors.end(),
              [](const Behavior& a, const Behavior& b) { return a.name < b.name; });
    std::sort(objects.begin(), objects.end(), [](const ObjectMeta& a, const ObjectMeta& b) {
      return a.object_id < b.object_id;
    });
    std::sort(trials.begin(), trials.end(), [](const TrialRecord& a, const TrialRecord& b) {
      return std::tie(a.object_id, a.behavior, a.trial_index) <
             std::tie(b.object_id, b.behavior, b.trial_index);
    });
    index_.clear();
    for (std::size_t i = 0; i < trials.size(); ++i) {
      index_[{trials[i].object_id, trials[i].behavior}].push_back(i);
    }
    validate();
  }

  const ObjectMeta& object(const std::string& id) const {
    auto it = std::lower_bound(objects.begin(), objects.end(), id,
                               [](const ObjectMeta& o, const std::string& k) {
                                 return o.object_id < k;
                               });
    require(it != objects.end() && it->object_id == id, ErrorKind::kData,
            "unknown object '" + id + "'");
    return *it;
  }

  const Behavior& behavior(const std::string& name) const {
    auto it = std::find_if(behaviors.begin(), behaviors.end(),
                           [&](const Behavior& b) { return b.name == name; });
    require(it != behaviors.end(), ErrorKind::kData, "unknown behavior '" + name + "'");
    return *it;
  }

  bool has_behavior(const std::string& name) const {
    return std::any_of(behaviors.begin(), behaviors.end(),
                       [&](const Behavior& b) { return b.name == name; });
  }

  std::vector<const TrialRecord*> trials_of(const std::string& object_id,
                                            const std::string& behavior_name) const {
    std::vector<const TrialRecord*> out;
    auto it = index_.find({object_id, behavior_name});
    if (it != index_.end())
      for (std::size_t i : it->second) out.push_back(&trials[i]);
    return out;
  }

  // Sorted distinct object categories.
  std::vector<std::string> categories() const {
    std::set<std::string> cats;
    for (const auto& o : objects) cats.insert(o.category);
    return {cats.begin(), cats.end()};
  }

  std::size_t category_index(const std::string& category) const {
    const auto cats = categories();
    auto it = std::lower_bound(cats.begin(), cats.end(), category);
    require(it != cats.end() && *it == category, ErrorKind::kData,
            "unknown category '" + category + "'");
    return static_cast<std::size_t>(it - cats.begin());
  }

  void validate() const {
    require(d_z > 0, ErrorKind::kFormat, "d_z must be positive");
    for (const auto& b : behaviors) {
      require(b.vision_frames >= 1, ErrorKind::kFormat,
              "behavior '" + b.name + "' declares no vision frames");
      require(b.has_audio == b.has_haptic, ErrorKind::kFormat,
              "behavior '" + b.name + "' must carry both audio and haptic or neither");
      if (b.name == kLookBehavior) {
        require(!b.interactive && !b.has_audio, ErrorKind::kFormat,
                "look must be non-interactive and vision-only");
      }
      if (b.interactive) {
        require(b.has_audio && b.has_haptic && b.haptic_frames >= 1, ErrorKind::kFormat,
                "interactive behavior '" + b.name + "' must carry vision, audio and haptic");
      }
    }
    std::set<std::string> ids;
    for (const auto& o : objects) {
      require(ids.insert(o.object_id).second, ErrorKind::kFormat,
              "duplicate object '" + o.object_id + "'");
      require(!o.category.empty(), ErrorKind::kFormat,
              "object '" + o.object_id + "' has no category");
      for (const auto& [cat, value] : o.properties) {
        require(find_property_category(cat) != nullptr, ErrorKind::kVocabulary,
                "object '" + o.object_id + "': unknown property category '" + cat + "'");
        require(is_property_value(cat, value), ErrorKind::kVocabulary,
                "object '" + o.object_id + "': '" + value +
                    "' is not a known value of property " + cat);
      }
    }
    for (const auto& [key, pool] : text_pools) {
      require(pool != nullptr && !pool->descriptions.empty(), ErrorKind::kFormat,
              "empty text pool for (" + key.first + ", " + key.second + ")");
      require(pool->embeddings.rank() == 2 && pool->embeddings.rows() == pool->descriptions.size() &&
                  pool->embeddings.cols() == d_z,
              ErrorKind::kFormat,
              "text pool for (" + key.first + ", " + key.second + ") has wrong embedding shape");
    }
    const TrialRecord* prev = nullptr;
    for (const auto& t : trials) {
      const std::string where =
          "trial (" + t.object_id + ", " + t.behavior + ", " + std::to_string(t.trial_index) + ")";
      object(t.object_id);
      const Behavior& b = behavior(t.behavior);
      if (prev != nullptr) {
        require(std::tie(prev->object_id, prev->behavior, prev->trial_index) !=
                    std::tie(t.object_id, t.behavior, t.trial_index),
                ErrorKind::kFormat, "duplicate " + where);
      }
      prev = &t;
      require(t.vision_frames.defined() &&
                  t.vision_frames.shape() == Shape{b.vision_frames, d_z},
              ErrorKind::kFormat, where + ": vision frames do not match the declared shape");
      require(t.audio.defined() == b.has_audio, ErrorKind::kFormat,
              where + ": audio presence does not match behavior");
      if (b.has_audio) {
        require(t.audio.shape() == Shape{1, d_z}, ErrorKind::kFormat,
                where + ": audio embedding has wrong shape");
      }
      require(t.haptic.defined() == b.has_haptic, ErrorKind::kFormat,
              where + ": haptic presence does not match behavior");
      if (b.has_haptic) {
        require(t.haptic.shape() == Shape{haptic_channels, b.haptic_frames}, ErrorKind::kFormat,
                where + ": haptic matrix has wrong shape");
      }
      require(t.text_pool != nullptr, ErrorKind::kFormat, where + ": missing text pool");
      auto pool = text_pools.find({t.object_id, t.behavior});
      require(pool != text_pools.end() && pool->second == t.text_pool, ErrorKind::kFormat,
              where + ": text pool not registered for its (object, behavior)");
    }
  }

 private:
  std::map<PoolKey, std::vector<std::size_t>> index_;
};

// ---------------------------------------------------------------------------
// Embedding archive: manifest.json + little-endian float32 blobs, one per
// modality. Offsets in the manifest count float elements.

inline constexpr int kArchiveSchemaVersion = 1;

namespace detail {

inline void append_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xffu));
}

inline void append_tensor(std::string& out, const Tensor& t) {
  for (double v : t.values()) append_f32(out, v);
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::vector<double> decode_f32(const std::string& bytes, std::string_view what) {
  require(bytes.size() % 4 == 0, ErrorKind::kFormat,
          "blob '" + std::string(what) + "' length is not a multiple of 4 bytes");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

// A blob plus bookkeeping of which element ranges the manifest claims.
struct BlobReader {
  std::string name;
  std::vector<double> data;
  std::size_t claimed = 0;

  std::vector<double> take(std::size_t offset, std::size_t count) {
    require(offset + count <= data.size(), ErrorKind::kFormat,
            "blob '" + name + "' is truncated: entry at offset " + std::to_string(offset) +
                " needs " + std::to_string(count) + " floats but the blob holds " +
                std::to_string(data.size()));
    claimed += count;
    return {data.begin() + static_cast<std::ptrdiff_t>(offset),
            data.begin() + static_cast<std::ptrdiff_t>(offset + count)};
  }

  void finish() const {
    require(claimed == data.size(), ErrorKind::kFormat,
            "blob '" + name + "' holds " + std::to_string(data.size()) +
                " floats but the manifest declares " + std::to_string(claimed));
  }
};

}  // namespace detail

inline void write_archive(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create directory '" + dir.string() + "'");

  using nlohmann::json;
  json manifest;
  manifest["schema_version"] = kArchiveSchemaVersion;
  manifest["d_z"] = dataset.d_z;
  manifest["haptic_channels"] = dataset.haptic_channels;

  json behaviors = json::array();
  for (const auto& b : dataset.behaviors) {
    json modalities = json::array({"vision"});
    json frames = {{"vision", b.vision_frames}};
    if (b.has_audio) modalities.push_back("audio");
    if (b.has_haptic) {
      modalities.push_back("haptic");
      frames["haptic"] = b.haptic_frames;
    }
    behaviors.push_back({{"name", b.name},
                         {"interactive", b.interactive},
                         {"modalities", modalities},
                         {"frames", frames}});
  }
  manifest["behaviors"] = behaviors;

  json objects = json::array();
  for (const auto& o : dataset.objects) {
    objects.push_back({{"id", o.object_id}, {"category", o.category}, {"properties", o.properties}});
  }
  manifest["objects"] = objects;

  std::string vision, audio, haptic, text;
  json trials = json::array();
  for (const auto& t : dataset.trials) {
    json offsets = {{"vision", vision.size() / 4}};
    detail::append_tensor(vision, t.vision_frames);
    if (t.audio.defined()) {
      offsets["audio"] = audio.size() / 4;
      detail::append_tensor(audio, t.audio);
    }
    if (t.haptic.defined()) {
      offsets["haptic"] = haptic.size() / 4;
      detail::append_tensor(haptic, t.haptic);
    }
    trials.push_back({{"object", t.object_id},
                      {"behavior", t.behavior},
                      {"trial", t.trial_index},
                      {"offsets", offsets}});
  }
  manifest["trials"] = trials;

  json pools = json::array();
  for (const auto& [key, pool] : dataset.text_pools) {
    pools.push_back({{"object", key.first},
                     {"behavior", key.second},
                     {"offset", text.size() / 4},
                     {"descriptions", pool->descriptions}});
    detail::append_tensor(text, pool->embeddings);
  }
  manifest["text"] = pools;

  if (dataset.words) {
    std::string words;
    json tokens = json::array();
    for (const auto& [tok, vec] : dataset.words->vectors) {
      tokens.push_back(tok);
      for (double v : vec) detail::append_f32(words, v);
    }
    manifest["words"] = {{"tokens", tokens}};
    detail::write_file(dir / "words.f32", words);
  }

  detail::write_file(dir / "vision.f32", vision);
  detail::write_file(dir / "audio.f32", audio);
  detail::write_file(dir / "haptic.f32", haptic);
  detail::write_file(dir / "text.f32", text);
  detail::write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

inline Dataset load_archive(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::exists(manifest_path), ErrorKind::kIo,
          "missing archive manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    manifest = json::parse(detail::read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "manifest does not parse: " + std::string(e.what()));
  }

  auto blob = [&](const std::string& name) {
    const auto path = dir / (name + ".f32");
    require(std::filesystem::exists(path), ErrorKind::kIo,
            "missing " + name + " blob '" + path.string() + "'");
    return detail::BlobReader{name, detail::decode_f32(detail::read_file(path), name), 0};
  };

  Dataset ds;
  try {
    require(manifest.at("schema_version").get<int>() == kArchiveSchemaVersion, ErrorKind::kFormat,
            "unsupported archive schema version " + manifest.at("schema_version").dump());
    ds.d_z = manifest.at("d_z").get<std::size_t>();
    ds.haptic_channels = manifest.at("haptic_channels").get<std::size_t>();
    require(ds.d_z > 0, ErrorKind::kFormat, "d_z must be positive");

    for (const auto& jb : manifest.at("behaviors")) {
      Behavior b;
      b.name = jb.at("name").get<std::string>();
      b.interactive = jb.at("interactive").get<bool>();
      const auto mods = jb.at("modalities").get<std::vector<std::string>>();
      const auto has = [&](const char* m) {
        return std::find(mods.begin(), mods.end(), m) != mods.end();
      };
      require(has("vision"), ErrorKind::kFormat, "behavior '" + b.name + "' lacks vision");
      for (const auto& m : mods) {
        require(m == "vision" || m == "audio" || m == "haptic", ErrorKind::kFormat,
                "behavior '" + b.name + "': unknown modality '" + m + "'");
      }
      b.has_audio = has("audio");
      b.has_haptic = has("haptic");
      b.vision_frames = jb.at("frames").at("vision").get<std::size_t>();
      b.haptic_frames = b.has_haptic ? jb.at("frames").at("haptic").get<std::size_t>() : 0;
      ds.behaviors.push_back(std::move(b));
    }
    for (const auto& jo : manifest.at("objects")) {
      ds.objects.push_back({jo.at("id").get<std::string>(), jo.at("category").get<std::string>(),
                            jo.at("properties").get<std::map<std::string, std::string>>()});
    }
    // Property values are checked before any blob is touched so a vocabulary
    // problem is reported as such.
    for (const auto& o : ds.objects)
      for (const auto& [cat, value] : o.properties)
        require(is_property_value(cat, value), ErrorKind::kVocabulary,
                "object '" + o.object_id + "': unknown property value '" + value + "' for " + cat);

    auto vision = blob("vision");
    auto audio = blob("audio");
    auto haptic = blob("haptic");
    auto text = blob("text");
    const std::size_t d = ds.d_z;

    for (const auto& jp : manifest.at("text")) {
      auto pool = std::make_shared<TextPool>();
      pool->descriptions = jp.at("descriptions").get<std::vector<std::string>>();
      const std::size_t n = pool->descriptions.size();
      require(n > 0, ErrorKind::kFormat, "empty text pool in manifest");
      pool->embeddings =
          Tensor::matrix(n, d, text.take(jp.at("offset").get<std::size_t>(), n * d));
      ds.text_pools[{jp.at("object").get<std::string>(), jp.at("behavior").get<std::string>()}] =
          std::move(pool);
    }

    for (const auto& jt : manifest.at("trials")) {
      TrialRecord t;
      t.object_id = jt.at("object").get<std::string>();
      t.behavior = jt.at("behavior").get<std::string>();
      t.trial_index = jt.at("trial").get<std::size_t>();
      const Behavior& b = ds.behavior(t.behavior);
      const auto& off = jt.at("offsets");
      t.vision_frames = Tensor::matrix(b.vision_frames, d,
                                       vision.take(off.at("vision").get<std::size_t>(),
                                                   b.vision_frames * d));
      if (b.has_audio) {
        t.audio = Tensor::row(audio.take(off.at("audio").get<std::size_t>(), d));
      }
      if (b.has_haptic) {
        t.haptic = Tensor::matrix(
            ds.haptic_channels, b.haptic_frames,
            haptic.take(off.at("haptic").get<std::size_t>(), ds.haptic_channels * b.haptic_frames));
      }
      auto pool = ds.text_pools.find({t.object_id, t.behavior});
      require(pool != ds.text_pools.end(), ErrorKind::kFormat,
              "no text pool for (" + t.object_id + ", " + t.behavior + ")");
      t.text_pool = pool->second;
      ds.trials.push_back(std::move(t));
    }
    vision.finish();
    audio.finish();
    haptic.finish();
    text.finish();

    if (manifest.contains("words")) {
      auto words = blob("words");
      WordTable table;
      table.d_z = d;
      std::size_t offset = 0;
      for (const auto& tok : manifest.at("words").at("tokens")) {
        table.vectors[tok.get<std::string>()] = words.take(offset, d);
        offset += d;
      }
      words.finish();
      ds.words = std::move(table);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed manifest: " + std::string(e.what()));
  }
  ds.finalize();
  return ds;
}

// ---------------------------------------------------------------------------
// Object-based k-fold splitting

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_object_ids;
  std::vector<std::string> test_object_ids;
};

// Each category must hold exactly k objects; fold f tests the f-th object of
// every category's seeded permutation, so every object is tested exactly once.
inline std::vector<FoldSplit> split_folds(const std::vector<ObjectMeta>& objects, std::size_t k,
                                          std::uint64_t seed) {
  require(k >= 2, ErrorKind::kConfiguration, "fold count must be at least 2");
  std::map<std::string, std::vector<std::string>> by_category;
  for (const auto& o : objects) by_category[o.category].push_back(o.object_id);
  for (auto& [cat, ids] : by_category) {
    require(ids.size() == k, ErrorKind::kConfiguration,
            "category '" + cat + "' has " + std::to_string(ids.size()) + " objects; " +
                std::to_string(k) + "-fold splitting needs exactly " + std::to_string(k));
    std::sort(ids.begin(), ids.end());
    Rng rng = SeedSeq(seed).mix("folds").mix(cat).rng();
    std::shuffle(ids.begin(), ids.end(), rng);
  }
  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    folds[f].fold_index = f;
    for (const auto& [cat, ids] : by_category) {
      for (std::size_t j = 0; j < k; ++j) {
        (j == f ? folds[f].test_object_ids : folds[f].train_object_ids).push_back(ids[j]);
      }
    }
    std::sort(folds[f].train_object_ids.begin(), folds[f].train_object_ids.end());
    std::sort(folds[f].test_object_ids.begin(), folds[f].test_object_ids.end());
  }
  return folds;
}

}  // namespace mosaic
