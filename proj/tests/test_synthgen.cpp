#include <set>

#include <gtest/gtest.h>

#include "mosaic/datamodel.hpp"
#include "mosaic/model.hpp"
#include "mosaic/synthgen.hpp"
#include "support.hpp"

using namespace mosaic;
using mosaic::testing::TempDir;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double cosine_of(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i], na += a[i] * a[i], nb += b[i] * b[i];
  return d / std::sqrt(na * nb);
}

ObjectMeta toy_ball() {
  return {"ball_0",
          "ball",
          {{"Shape", "round"}, {"Color", "yellow"}, {"Size", "small"}, {"Hardness", "soft"}, {"Usage", "toy"}}};
}

}  // namespace

TEST(Vocabulary, PropertyTableRows) {
  const std::map<std::string, std::vector<std::string>> expected = {
      {"Color", {"brown", "blue", "pink", "red", "white", "orange", "yellow", "green", "purple", "multicolored"}},
      {"Deformability", {"deformable", "rigid", "brittle"}},
      {"Hardness", {"soft", "squishy", "hard"}},
      {"Material", {"plastic", "wicker", "aluminum", "foam", "metal", "rubber", "paper", "styrofoam", "wood"}},
      {"State", {"closed", "full", "empty", "open"}},
      {"Reflection", {"shiny", "dull"}},
      {"Shape", {"cylindrical", "wide", "rectangular", "block", "box", "cone", "round"}},
      {"Size", {"small", "short", "big", "large", "tall"}},
      {"Transparency", {"transparent", "opaque", "translucent", "see-through"}},
      {"Usage", {"container", "toy"}},
      {"Weight", {"light", "heavy"}},
  };
  ASSERT_EQ(property_table().size(), expected.size());
  for (const auto& pc : property_table()) EXPECT_EQ(pc.values, expected.at(pc.name)) << pc.name;
}

TEST(Vocabulary, EveryValueListsItselfAsSynonym) {
  for (const auto& pc : property_table())
    for (const auto& v : pc.values) {
      const auto& syn = synonyms_of(v);
      ASSERT_FALSE(syn.empty());
      EXPECT_EQ(syn.front(), v);
    }
}

TEST(Vocabulary, FixedCounts) {
  EXPECT_EQ(object_category_names().size(), 20u);
  EXPECT_EQ(behavior_names().size(), 10u);
}

TEST(WordTable, DeterministicUnitVectors) {
  const auto a = make_latent_word_table(16, 3), b = make_latent_word_table(16, 3);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_EQ(a.vectors.size(), vocabulary_tokens().size());
  for (const auto& [tok, v] : a.vectors) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    EXPECT_NEAR(ss, 1.0, 1e-12) << tok;
  }
  EXPECT_NE(a.vectors, make_latent_word_table(16, 4).vectors);
}

TEST(Description, FullItemListExample) {
  DescriptionChoices choices;
  choices.include_category = true;
  for (const char* p : {"Shape", "Color", "Size", "Hardness", "Usage"})
    choices.items.push_back({p, toy_ball().properties.at(p), false});
  const auto d = render_description(toy_ball(), "tap", choices);
  EXPECT_EQ(d.text, "Performing tap action on a ball with properties: round, yellow, small, soft, toy");
  EXPECT_EQ(d.tokens, (std::vector<std::string>{"behavior:tap", "category:ball", "value:round", "value:yellow",
                                                "value:small", "value:soft", "value:toy"}));
}

TEST(Description, SinglePropertyAlwaysIncluded) {
  const ObjectMeta obj{"cup_0", "cup", {{"Material", "metal"}}};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto d = generate_description(obj, "lift", rng);
    EXPECT_NE(std::find(d.tokens.begin(), d.tokens.end(), "value:metal"), d.tokens.end());
  }
}

TEST(Description, BoundsAndBehaviorName) {
  Rng rng(2);
  const ObjectMeta obj = toy_ball();
  for (int i = 0; i < 500; ++i) {
    const auto d = generate_description(obj, "shake", rng);
    EXPECT_NE(d.text.find("shake"), std::string::npos);
    std::size_t values = 0;
    for (const auto& t : d.tokens) values += t.rfind("value:", 0) == 0;
    EXPECT_GE(values, 1u);
    EXPECT_LE(values, obj.properties.size());
  }
}

TEST(Description, NoPropertiesIsGenerationError) {
  Rng rng(3);
  try {
    generate_description({"x_0", "ball", {}}, "tap", rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kGeneration);
  }
}

TEST(Description, PoolHoldsRequestedCount) {
  Rng rng(4);
  const auto table = make_latent_word_table(8, 1);
  const auto pool = generate_text_pool(toy_ball(), "tap", table, 100, rng);
  EXPECT_EQ(pool->descriptions.size(), 100u);
  EXPECT_EQ(pool->embeddings.rows(), 100u);
  EXPECT_EQ(std::set<std::string>(pool->descriptions.begin(), pool->descriptions.end()).size(), 100u);
}

TEST(Embedding, SingleTokenIsItsVector) {
  const auto table = make_latent_word_table(8, 1);
  EXPECT_EQ(vals(embed_description({"value:red"}, table)), table.at("value:red"));
}

TEST(Embedding, OrderInvariant) {
  const auto table = make_latent_word_table(8, 1);
  EXPECT_EQ(vals(embed_description({"value:red", "category:cup"}, table)),
            vals(embed_description({"category:cup", "value:red"}, table)));
}

TEST(Embedding, MatchesSumThenNormalize) {
  const auto table = make_latent_word_table(12, 5);
  const std::vector<std::string> toks = {"value:red", "value:soft", "behavior:tap", "property:Hardness"};
  std::vector<double> s(12, 0.0);
  for (const auto& t : toks)
    for (std::size_t i = 0; i < 12; ++i) s[i] += table.at(t)[i];
  double n = 0.0;
  for (double x : s) n += x * x;
  const auto got = vals(embed_description(toks, table));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(got[i], s[i] / std::sqrt(n), 1e-14);
}

TEST(Embedding, UnknownTokenIsVocabularyError) {
  const auto table = make_latent_word_table(8, 1);
  try {
    embed_description({"value:chartreuse"}, table);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVocabulary);
  }
}

TEST(Trial, ZeroNoiseTrialsShareEmbeddingsButNotHapticPhase) {
  const auto table = make_latent_word_table(16, 1);
  const SynthContext ctx{table, 0.0, 9, 7};
  const auto b = Behavior::interaction("tap", 10, 50);
  const auto t0 = generate_trial(toy_ball(), b, 0, 10, ctx, nullptr);
  const auto t1 = generate_trial(toy_ball(), b, 1, 10, ctx, nullptr);
  EXPECT_EQ(vals(t0.vision_frames), vals(t1.vision_frames));
  EXPECT_EQ(vals(t0.audio), vals(t1.audio));
  EXPECT_NE(vals(t0.haptic), vals(t1.haptic));
  EXPECT_EQ(t0.haptic.shape(), (Shape{7, 50}));
}

TEST(Trial, HeavierObjectLiftsHarder) {
  const auto table = make_latent_word_table(16, 1);
  const SynthContext ctx{table, 0.0, 9, 7};
  const auto b = Behavior::interaction("lift", 16, 80);
  auto mean_abs = [&](const std::string& weight) {
    ObjectMeta obj = toy_ball();
    obj.properties["Weight"] = weight;
    const auto t = generate_trial(obj, b, 0, 16, ctx, nullptr);
    double s = 0.0;
    for (double x : t.haptic.values()) s += std::abs(x);
    return s / static_cast<double>(t.haptic.numel());
  };
  EXPECT_GT(mean_abs("heavy"), mean_abs("light"));
}

TEST(Dataset, DeskScaleArchiveLoadsAndValidates) {
  SyntheticConfig c;
  c.objects_per_category = 4;
  c.behaviors = {"look", "lift", "tap"};
  const Dataset ds = generate_dataset(c);
  EXPECT_EQ(ds.objects.size(), 20u);
  EXPECT_EQ(ds.categories().size(), 5u);
  TempDir dir("desk");
  write_archive(ds, dir.path());
  const Dataset back = load_archive(dir.path());
  EXPECT_NO_THROW(back.validate());
  EXPECT_EQ(back.trials.size(), 20u * 3 * 5);
  for (const auto& t : back.trials) EXPECT_EQ(t.text_pool->descriptions.size(), 100u);
}

TEST(Dataset, IdenticalSeedsGiveByteIdenticalArchives) {
  SyntheticConfig c;
  c.categories = 2;
  c.descriptions = 5;
  TempDir dir("det");
  write_archive(generate_dataset(c), dir.path() / "a");
  write_archive(generate_dataset(c), dir.path() / "b");
  for (const char* f : {"manifest.json", "vision.f32", "audio.f32", "haptic.f32", "text.f32", "words.f32"})
    EXPECT_EQ(detail::read_file(dir.path() / "a" / f), detail::read_file(dir.path() / "b" / f)) << f;
  c.seed += 1;
  write_archive(generate_dataset(c), dir.path() / "c");
  EXPECT_NE(detail::read_file(dir.path() / "a" / "vision.f32"),
            detail::read_file(dir.path() / "c" / "vision.f32"));
}

// With zero noise, an object's text pool sits closer on average to its own
// modality embeddings than to those of an object sharing no property value.
TEST(Dataset, TextIsCloserToOwnModalitiesThanToDisjointObjects) {
  SyntheticConfig c;
  c.categories = 5;
  c.behaviors = {"tap"};
  c.descriptions = 30;
  c.trials = 1;
  c.d_z = 512;
  const Dataset ds = generate_dataset(c);
  auto modality_sum = [&](const TrialRecord& t) {
    auto tape = Tape::inference();
    const auto v = vals(pool_vision(tape, t.vision_frames));
    auto a = vals(t.audio);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += v[i];
    return a;
  };
  std::size_t pairs = 0;
  for (const auto& ta : ds.trials)
    for (const auto& tb : ds.trials) {
      const auto& a = ds.object(ta.object_id);
      const auto& b = ds.object(tb.object_id);
      if (a.category == b.category) continue;
      bool disjoint = true;
      for (const auto& [cat, value] : a.properties)
        for (const auto& [cat2, value2] : b.properties) disjoint &= value != value2;
      if (!disjoint) continue;
      ++pairs;
      const auto own = modality_sum(ta), other = modality_sum(tb);
      const auto& pool = ta.text_pool->embeddings;
      double margin = 0.0;
      for (std::size_t r = 0; r < pool.rows(); ++r) {
        const auto e = pool.values().subspan(r * ds.d_z, ds.d_z);
        margin += cosine_of(e, own) - cosine_of(e, other);
      }
      EXPECT_GT(margin / static_cast<double>(pool.rows()), 0.05) << a.object_id << " vs " << b.object_id;
    }
  EXPECT_GT(pairs, 0u);
}
