#pragma once

// Downstream tasks over frozen unified representations: the category probe,
// behavior combination, the zero-shot fetch task, and a 2-D linear
// autoencoder projection for plotting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mosaic/datamodel.hpp"
#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"
#include "mosaic/model.hpp"
#include "mosaic/random.hpp"
#include "mosaic/synthgen.hpp"
#include "mosaic/vocabulary.hpp"

namespace mosaic {

// Row-major n x d block of representations.
struct RepMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  void push(std::span<const double> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    require(r.size() == cols, ErrorKind::kDimension,
            "representation of length " + std::to_string(r.size()) + " added to a block of width " +
                std::to_string(cols));
    values.insert(values.end(), r.begin(), r.end());
    ++rows;
  }
  Tensor tensor() const {
    require(rows > 0, ErrorKind::kContract, "empty representation block");
    return Tensor::matrix(rows, cols, values);
  }
};

inline std::size_t argmax_lowest(std::span<const double> v) {
  require(!v.empty(), ErrorKind::kContract, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Category probe

struct ProbeConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::size_t batch_size = 1;
  std::size_t hidden = 0;  // 0 = D_Z
  std::uint64_t seed = 1;
};

class ProbeClassifier {
 public:
  ProbeClassifier(std::size_t input, std::size_t hidden, std::size_t classes, std::uint64_t seed)
      : classes_(classes) {
    require(input > 0 && hidden > 0, ErrorKind::kConfiguration, "probe widths must be positive");
    require(classes >= 2, ErrorKind::kConfiguration, "probe needs at least 2 categories");
    Rng rng = SeedSeq(seed).mix("probe-init").rng();
    auto weight = [&](std::size_t fan_in, std::size_t fan_out) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::vector<double> v(fan_in * fan_out);
      for (double& x : v) x = (2.0 * uniform01(rng) - 1.0) * bound;
      return Tensor::parameter({fan_in, fan_out}, std::move(v));
    };
    w1_ = weight(input, hidden);
    b1_ = Tensor::parameter({1, hidden}, std::vector<double>(hidden, 0.0));
    w2_ = weight(hidden, classes);
    b2_ = Tensor::parameter({1, classes}, std::vector<double>(classes, 0.0));
  }

  std::size_t classes() const { return classes_; }
  std::vector<Tensor> parameters() const { return {w1_, b1_, w2_, b2_}; }

  Tensor logits(Tape& tape, const Tensor& x) const {
    const Tensor h = relu(tape, add_row_bias(tape, matmul(tape, x, w1_), b1_));
    return add_row_bias(tape, matmul(tape, h, w2_), b2_);
  }

  // n x C class probabilities.
  std::vector<std::vector<double>> probabilities(const RepMatrix& x) const {
    auto tape = Tape::inference();
    const Tensor p = softmax(tape, logits(tape, x.tensor()), 1);
    std::vector<std::vector<double>> out(x.rows, std::vector<double>(classes_));
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t c = 0; c < classes_; ++c) out[i][c] = p.at(i, c);
    return out;
  }

  std::vector<std::size_t> predict(const RepMatrix& x) const {
    std::vector<std::size_t> out;
    for (const auto& p : probabilities(x)) out.push_back(argmax_lowest(p));
    return out;
  }

 private:
  std::size_t classes_;
  Tensor w1_, b1_, w2_, b2_;
};

inline ProbeClassifier train_probe(const RepMatrix& reps, const std::vector<std::size_t>& labels,
                                   std::size_t classes, const ProbeConfig& config) {
  require(reps.rows == labels.size() && reps.rows > 0, ErrorKind::kDimension,
          "probe: " + std::to_string(reps.rows) + " representations but " +
              std::to_string(labels.size()) + " labels");
  require(config.batch_size >= 1 && config.epochs >= 1 && config.learning_rate > 0.0,
          ErrorKind::kConfiguration, "probe: epochs, batch_size and learning_rate must be positive");
  std::set<std::size_t> present(labels.begin(), labels.end());
  require(present.size() >= 2, ErrorKind::kConfiguration,
          "probe: training data covers a single category");
  for (std::size_t l : labels)
    require(l < classes, ErrorKind::kIndex, "probe: label " + std::to_string(l) + " out of range");

  ProbeClassifier probe(reps.cols, config.hidden ? config.hidden : reps.cols, classes, config.seed);
  Adam adam(probe.parameters(), config.learning_rate);
  Rng rng = SeedSeq(config.seed).mix("probe-order").rng();
  std::vector<std::size_t> order(reps.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      RepMatrix batch;
      std::vector<std::size_t> y;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push(reps.row(order[i]));
        y.push_back(labels[order[i]]);
      }
      Tape tape;
      const Tensor loss = cross_entropy(tape, probe.logits(tape, batch.tensor()), y);
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
  }
  return probe;
}

// Percentage of correct top-1 predictions.
inline double probe_accuracy(const std::vector<std::size_t>& predicted,
                             const std::vector<std::size_t>& labels) {
  require(predicted.size() == labels.size() && !labels.empty(), ErrorKind::kDimension,
          "probe_accuracy: prediction and label counts differ or are empty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double probe_accuracy(const ProbeClassifier& probe, const RepMatrix& reps,
                             const std::vector<std::size_t>& labels) {
  return probe_accuracy(probe.predict(reps), labels);
}

// probs[b][i][c]: behavior b's probability of category c for example i.
// Weights are the behaviors' train accuracies normalized to sum to one.
inline std::vector<std::size_t> combine_behaviors(
    const std::vector<std::vector<std::vector<double>>>& probs,
    const std::vector<double>& train_accuracy) {
  require(!probs.empty(), ErrorKind::kConfiguration, "combine_behaviors: no behaviors");
  require(probs.size() == train_accuracy.size(), ErrorKind::kDimension,
          "combine_behaviors: " + std::to_string(probs.size()) + " behaviors but " +
              std::to_string(train_accuracy.size()) + " weights");
  double total = 0.0;
  for (double w : train_accuracy) {
    require(w >= 0.0, ErrorKind::kConfiguration, "combine_behaviors: negative weight");
    total += w;
  }
  require(total > 0.0, ErrorKind::kConfiguration, "combine_behaviors: all weights are zero");
  const std::size_t n = probs[0].size();
  const std::size_t c = n ? probs[0][0].size() : 0;
  for (const auto& pb : probs) {
    require(pb.size() == n, ErrorKind::kDimension, "combine_behaviors: example counts differ");
    for (const auto& row : pb)
      require(row.size() == c, ErrorKind::kDimension, "combine_behaviors: class counts differ");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> acc(c, 0.0);
    for (std::size_t b = 0; b < probs.size(); ++b)
      for (std::size_t k = 0; k < c; ++k) acc[k] += train_accuracy[b] / total * probs[b][i][k];
    out.push_back(argmax_lowest(acc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fetch task

// A commanded attribute. Level 1 commands the object category, using
// property "category".
struct Requirement {
  std::string property;
  std::string value;
  bool operator==(const Requirement&) const = default;
};

inline constexpr const char* kCategoryRequirement = "category";

inline bool satisfies(const ObjectMeta& obj, const Requirement& r) {
  if (r.property == kCategoryRequirement) return obj.category == r.value;
  return obj.has(r.property, r.value);
}

struct FetchEpisode {
  int level = 1;
  std::string property_category;  // level 5 only
  std::string command_text;
  std::vector<std::string> command_tokens;
  std::vector<double> command_embedding;
  std::vector<Requirement> requirements;
  std::string target;
  std::vector<std::string> distractors;
  std::size_t fold_index = 0;
  std::size_t episode_index = 0;
};

// Target meets every commanded attribute; each distractor misses at least one.
inline bool episode_sound(const FetchEpisode& ep, const Dataset& dataset) {
  if (ep.requirements.empty() || ep.target.empty()) return false;
  const auto& target = dataset.object(ep.target);
  for (const auto& r : ep.requirements)
    if (!satisfies(target, r)) return false;
  const std::size_t want = ep.level == 4 ? 2 : 1;
  if (ep.distractors.size() != want) return false;
  std::set<std::string> seen{ep.target};
  for (const auto& id : ep.distractors) {
    if (!seen.insert(id).second) return false;
    const auto& d = dataset.object(id);
    if (std::all_of(ep.requirements.begin(), ep.requirements.end(),
                    [&](const Requirement& r) { return satisfies(d, r); }))
      return false;
  }
  return true;
}

namespace detail {

inline std::string command_text(int level, const std::vector<Requirement>& reqs) {
  if (level == 1) return "fetch " + with_article(reqs[0].value);
  std::string s = "bring an object that is " + reqs[0].value;
  if (reqs.size() > 1) s += " and " + reqs[1].value;
  return s;
}

inline std::vector<std::string> command_tokens(const std::vector<Requirement>& reqs) {
  std::vector<std::string> tokens;
  for (const auto& r : reqs)
    tokens.push_back(r.property == kCategoryRequirement ? token::category(r.value)
                                                        : token::value(r.value));
  return tokens;
}

// Every (requirements) choice a test object can serve as target for.
inline std::vector<std::vector<Requirement>> requirement_options(int level,
                                                                 const std::string& property,
                                                                 const ObjectMeta& obj) {
  std::vector<std::vector<Requirement>> out;
  if (level == 1) {
    out.push_back({{kCategoryRequirement, obj.category}});
  } else if (level == 2) {
    for (const auto& [p, v] : obj.properties) out.push_back({{p, v}});
  } else if (level == 5) {
    auto it = obj.properties.find(property);
    if (it != obj.properties.end()) out.push_back({{property, it->second}});
  } else {
    for (auto a = obj.properties.begin(); a != obj.properties.end(); ++a)
      for (auto b = std::next(a); b != obj.properties.end(); ++b)
        out.push_back({{a->first, a->second}, {b->first, b->second}});
  }
  return out;
}

}  // namespace detail

// `property` names the property category for level 5 and is ignored
// otherwise. Command embeddings come from `words`.
inline std::vector<FetchEpisode> generate_episodes(int level, const std::string& property,
                                                   const FoldSplit& fold, const Dataset& dataset,
                                                   const WordTable& words, std::size_t count,
                                                   Rng& rng) {
  require(level >= 1 && level <= 5, ErrorKind::kConfiguration,
          "fetch level must be 1..5, got " + std::to_string(level));
  if (level == 5) {
    require(find_property_category(property) != nullptr, ErrorKind::kConfiguration,
            "level 5 needs a property category, got '" + property + "'");
  }
  require(count >= 1, ErrorKind::kConfiguration, "episode count must be positive");
  const std::string where = "level " + std::to_string(level) +
                            (level == 5 ? " (" + property + ")" : std::string()) + ", fold " +
                            std::to_string(fold.fold_index);
  const std::size_t need = level == 4 ? 2 : 1;

  struct Option {
    std::string target;
    std::vector<Requirement> reqs;
    std::vector<std::string> pool;  // eligible distractors
  };
  std::vector<Option> options;
  for (const auto& tid : fold.test_object_ids) {
    const auto& target = dataset.object(tid);
    for (auto& reqs : detail::requirement_options(level, property, target)) {
      Option opt{tid, std::move(reqs), {}};
      for (const auto& oid : fold.test_object_ids) {
        if (oid == tid) continue;
        const auto& o = dataset.object(oid);
        if (!std::all_of(opt.reqs.begin(), opt.reqs.end(),
                         [&](const Requirement& r) { return satisfies(o, r); }))
          opt.pool.push_back(oid);
      }
      if (opt.pool.size() >= need) options.push_back(std::move(opt));
    }
  }
  require(!options.empty(), ErrorKind::kEpisode, "no valid target/distractor set for " + where);

  std::vector<FetchEpisode> out;
  for (std::size_t e = 0; e < count; ++e) {
    const Option& opt = options[uniform_index(rng, options.size())];
    FetchEpisode ep;
    ep.level = level;
    ep.property_category = level == 5 ? property : "";
    ep.requirements = opt.reqs;
    ep.target = opt.target;
    std::vector<std::string> pool = opt.pool;
    for (std::size_t k = 0; k < need; ++k) {
      const std::size_t pick = k + uniform_index(rng, pool.size() - k);
      std::swap(pool[k], pool[pick]);
      ep.distractors.push_back(pool[k]);
    }
    ep.command_text = detail::command_text(level, ep.requirements);
    ep.command_tokens = detail::command_tokens(ep.requirements);
    const Tensor emb = embed_description(ep.command_tokens, words);
    ep.command_embedding.assign(emb.values().begin(), emb.values().end());
    ep.fold_index = fold.fold_index;
    ep.episode_index = e;
    out.push_back(std::move(ep));
  }
  return out;
}

// Cached unified representations, keyed by (model, trial).
class RepresentationCache {
 public:
  const std::vector<double>& get(const TrialRecord& trial, const FusionModel& model) {
    auto key = std::pair{&model, &trial};
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, represent(trial, model)).first;
    return it->second;
  }

 private:
  std::map<std::pair<const FusionModel*, const TrialRecord*>, std::vector<double>> cache_;
};

struct FetchOutcome {
  std::vector<std::string> presented;  // [target, distractors...]
  std::vector<double> scores;          // cumulative cosine per presented object
  std::size_t selected = 0;            // index into presented
  const std::string& selected_id() const { return presented[selected]; }
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kDimension, "cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorKind::kDegenerate, "cosine of a zero vector");
  return dot / std::sqrt(na * nb);
}

// Highest cumulative score wins; ties go to the lowest index.
inline std::size_t select_by_scores(std::span<const double> scores) { return argmax_lowest(scores); }

// One random trial per (object, behavior); cosine to the command summed over
// behaviors.
inline FetchOutcome fetch(const FetchEpisode& episode,
                          const std::map<std::string, const FusionModel*>& models,
                          const std::vector<std::string>& behaviors, const Dataset& dataset,
                          Rng& rng, RepresentationCache* cache = nullptr) {
  require(!behaviors.empty(), ErrorKind::kConfiguration, "fetch: no behaviors");
  RepresentationCache local;
  RepresentationCache& reps = cache ? *cache : local;
  FetchOutcome out;
  out.presented.push_back(episode.target);
  out.presented.insert(out.presented.end(), episode.distractors.begin(), episode.distractors.end());
  for (const auto& oid : out.presented) {
    double similarity = 0.0;
    for (const auto& b : behaviors) {
      auto m = models.find(b);
      require(m != models.end() && m->second != nullptr, ErrorKind::kConfiguration,
              "fetch: no model for behavior '" + b + "'");
      const auto trials = dataset.trials_of(oid, b);
      require(!trials.empty(), ErrorKind::kData,
              "fetch: no trials for (" + oid + ", " + b + ")");
      const TrialRecord& t = *trials[uniform_index(rng, trials.size())];
      similarity += cosine(episode.command_embedding, reps.get(t, *m->second));
    }
    out.scores.push_back(similarity);
  }
  out.selected = select_by_scores(out.scores);
  return out;
}

// Selection percentage per presentation slot (0 = target, k = distractor k).
inline std::vector<double> selection_percentage(const std::vector<FetchEpisode>& episodes,
                                                const std::vector<FetchOutcome>& outcomes) {
  require(episodes.size() == outcomes.size() && !episodes.empty(), ErrorKind::kDimension,
          "selection_percentage: episode and outcome counts differ or are empty");
  std::size_t slots = 0;
  for (const auto& ep : episodes) slots = std::max(slots, 1 + ep.distractors.size());
  std::vector<std::size_t> counts(slots, 0);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    require(outcomes[i].presented.size() == 1 + episodes[i].distractors.size(),
            ErrorKind::kDimension, "selection_percentage: outcome does not match its episode");
    ++counts[outcomes[i].selected];
  }
  std::vector<double> pct;
  for (std::size_t c : counts)
    pct.push_back(100.0 * static_cast<double>(c) / static_cast<double>(outcomes.size()));
  return pct;
}

// ---------------------------------------------------------------------------
// 2-D linear autoencoder projection

struct VisualizationConfig {
  std::size_t steps = 3000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 1;
};

struct Projection {
  std::vector<std::array<double, 2>> coords;
  double reconstruction_error = 0.0;  // mean over points of squared error
};

// Full-batch Adam on the squared reconstruction error of centered inputs.
inline Projection linear_autoencoder(const RepMatrix& reps, const VisualizationConfig& config) {
  require(reps.rows >= 3, ErrorKind::kVisualization,
          "visualization needs at least 3 points, got " + std::to_string(reps.rows));
  const std::size_t n = reps.rows, d = reps.cols;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += reps.values[i * d + j] / static_cast<double>(n);
  std::vector<double> centered(n * d);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      centered[i * d + j] = reps.values[i * d + j] - mean[j];
      ss += centered[i * d + j] * centered[i * d + j];
    }
  require(ss > 1e-24, ErrorKind::kVisualization, "visualization input points are all identical");
  // Unit RMS keeps one step size valid across inputs; undone on the error.
  const double rms = std::sqrt(ss / static_cast<double>(n));
  for (double& x : centered) x /= rms;
  const Tensor x = Tensor::matrix(n, d, centered);

  Rng rng = SeedSeq(config.seed).mix("autoencoder").rng();
  auto weight = [&](std::size_t rows, std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::vector<double> v(rows * cols);
    for (double& e : v) e = (2.0 * uniform01(rng) - 1.0) * bound;
    return Tensor::parameter({rows, cols}, std::move(v));
  };
  const Tensor enc = weight(d, 2), dec = weight(2, d);
  const Tensor enc_b = Tensor::parameter({1, 2}, {0.0, 0.0});
  const Tensor dec_b = Tensor::parameter({1, d}, std::vector<double>(d, 0.0));
  Adam adam({enc, enc_b, dec, dec_b}, config.learning_rate);

  auto forward = [&](Tape& tape, Tensor* code) {
    const Tensor z = add_row_bias(tape, matmul(tape, x, enc), enc_b);
    if (code) *code = z;
    const Tensor diff = sub(tape, add_row_bias(tape, matmul(tape, z, dec), dec_b), x);
    return scale(tape, sum(tape, mul(tape, diff, diff)), 1.0 / static_cast<double>(n));
  };
  for (std::size_t s = 0; s < config.steps; ++s) {
    Tape tape;
    const Tensor loss = forward(tape, nullptr);
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
  }
  auto tape = Tape::inference();
  Tensor z;
  const Tensor loss = forward(tape, &z);
  Projection out;
  out.reconstruction_error = loss.item() * rms * rms;
  for (std::size_t i = 0; i < n; ++i) out.coords.push_back({z.at(i, 0), z.at(i, 1)});
  return out;
}

struct VisualizationRow {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

inline std::vector<VisualizationRow> export_visualization(const RepMatrix& reps,
                                                          const std::vector<std::string>& labels,
                                                          const VisualizationConfig& config) {
  require(labels.size() == reps.rows, ErrorKind::kVisualization,
          "visualization: " + std::to_string(reps.rows) + " points but " +
              std::to_string(labels.size()) + " labels");
  const Projection p = linear_autoencoder(reps, config);
  std::vector<VisualizationRow> rows;
  for (std::size_t i = 0; i < reps.rows; ++i) rows.push_back({p.coords[i][0], p.coords[i][1], labels[i]});
  return rows;
}

}  // namespace mosaic
