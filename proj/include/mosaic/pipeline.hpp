#pragma once

// Per-fold, per-behavior orchestration over an archive: training runs,
// probe and fetch reports, and visualization export. Reports are plain text
// tables plus JSON-lines records; both carry the resolved config and seed.
// Wall-clock numbers go only to timing files so reports stay byte-stable.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mosaic/config.hpp"
#include "mosaic/datamodel.hpp"
#include "mosaic/error.hpp"
#include "mosaic/evaluation.hpp"
#include "mosaic/model.hpp"
#include "mosaic/training.hpp"

namespace mosaic {

enum class Ablation { kWithSa, kWithoutSa };

inline std::string ablation_name(Ablation a) {
  return a == Ablation::kWithSa ? "with-sa" : "without-sa";
}

inline std::vector<Ablation> parse_ablation(const std::string& s) {
  if (s == "with-sa") return {Ablation::kWithSa};
  if (s == "without-sa") return {Ablation::kWithoutSa};
  if (s == "both") return {Ablation::kWithoutSa, Ablation::kWithSa};
  fail(ErrorKind::kConfiguration, "ablation must be with-sa, without-sa or both, got '" + s + "'");
}

enum class Condition { kLook, kInteractive };

inline std::string condition_name(Condition c) {
  return c == Condition::kLook ? "look" : "interactive";
}

inline std::vector<Condition> parse_condition(const std::string& s) {
  if (s == "look") return {Condition::kLook};
  if (s == "interactive") return {Condition::kInteractive};
  if (s == "both") return {Condition::kLook, Condition::kInteractive};
  fail(ErrorKind::kConfiguration, "condition must be look, interactive or both, got '" + s + "'");
}

inline constexpr const char* kSharedModelName = "shared";

// Worker cap from MOSAIC_THREADS; defaults to 1.
inline std::size_t worker_count() {
  const char* env = std::getenv("MOSAIC_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  require(end != env && *end == '\0' && n >= 1, ErrorKind::kConfiguration,
          "MOSAIC_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(n);
}

// Runs fn(0..n-1) on up to `threads` workers. The first error (lowest job
// index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Exclusive marker file in an output directory, removed on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".mosaic.lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorKind::kIo, "cannot create output directory '" + dir.string() + "'");
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    require(f != nullptr, ErrorKind::kIo,
            "output directory '" + dir.string() + "' is locked by another run (" +
                path_.string() + ")");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunPlan {
  RunConfig config;
  std::vector<std::string> behaviors;  // empty = every behavior in the archive
  std::vector<Ablation> ablations = {Ablation::kWithoutSa, Ablation::kWithSa};
  std::vector<Condition> conditions = {Condition::kLook, Condition::kInteractive};
};

inline std::vector<std::string> resolve_behaviors(const Dataset& ds, const RunPlan& plan) {
  std::vector<std::string> out;
  if (plan.behaviors.empty()) {
    for (const auto& b : ds.behaviors) out.push_back(b.name);
  } else {
    for (const auto& b : plan.behaviors) {
      require(ds.has_behavior(b), ErrorKind::kConfiguration,
              "behavior '" + b + "' is not in the archive");
      out.push_back(b);
    }
  }
  // Look first, then the rest in name order.
  std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
    const bool la = a == kLookBehavior, lb = b == kLookBehavior;
    return la != lb ? la : a < b;
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  require(!out.empty(), ErrorKind::kConfiguration, "no behaviors selected");
  return out;
}

inline std::vector<FoldSplit> plan_folds(const Dataset& ds, const RunConfig& c) {
  return split_folds(ds.objects, c.folds, c.seed);
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& root, Ablation a,
                                             std::size_t fold, const std::string& model_name) {
  return root / ablation_name(a) / ("fold" + std::to_string(fold)) / model_name;
}

inline std::string model_name_for(const RunConfig& c, const std::string& behavior) {
  return c.shared_model ? kSharedModelName : behavior;
}

inline nlohmann::json run_header(const RunPlan& plan, const std::vector<std::string>& behaviors) {
  nlohmann::json abl = nlohmann::json::array(), cond = nlohmann::json::array();
  for (auto a : plan.ablations) abl.push_back(ablation_name(a));
  for (auto c : plan.conditions) cond.push_back(condition_name(c));
  return {{"config", config_json(plan.config)},
          {"seed", plan.config.seed},
          {"behaviors", behaviors},
          {"ablations", abl},
          {"conditions", cond}};
}

// ---------------------------------------------------------------------------
// Training

struct TrainJob {
  Ablation ablation;
  std::size_t fold;
  std::string model_name;
  std::vector<std::string> behaviors;
};

struct TrainOutputs {
  std::vector<std::string> records;  // JSON lines, deterministic
  std::vector<std::string> timing;   // JSON lines, wall clock
};

inline TrainOutputs run_training(const Dataset& ds, const RunPlan& plan,
                                 const std::filesystem::path& checkpoint_root) {
  const RunConfig& c = plan.config;
  const auto behaviors = resolve_behaviors(ds, plan);
  const auto folds = plan_folds(ds, c);
  std::vector<TrainJob> jobs;
  for (auto a : plan.ablations)
    for (const auto& f : folds) {
      if (c.shared_model) {
        jobs.push_back({a, f.fold_index, kSharedModelName, behaviors});
      } else {
        for (const auto& b : behaviors) jobs.push_back({a, f.fold_index, b, {b}});
      }
    }
  std::vector<TrainReport> reports(jobs.size());
  parallel_for(jobs.size(), worker_count(), [&](std::size_t i) {
    const TrainJob& job = jobs[i];
    ModelConfig mc = c.model;
    mc.d_z = ds.d_z;
    mc.haptic_channels = ds.haptic_channels;
    mc.use_self_attention = job.ablation == Ablation::kWithSa;
    TrainConfig tc = c.train;
    tc.seed = SeedSeq(c.seed).mix("train").mix(job.fold).mix(job.model_name).value();
    tc.checkpoint_dir = checkpoint_path(checkpoint_root, job.ablation, job.fold, job.model_name);
    reports[i] = train(ds, folds[job.fold], job.behaviors, mc, tc).report;
  });

  TrainOutputs out;
  out.records.push_back(nlohmann::json{{"record", "run"}, {"run", run_header(plan, behaviors)}}.dump());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (const auto& e : reports[i].epochs) {
      out.records.push_back(nlohmann::json{{"record", "epoch"},
                                           {"ablation", ablation_name(jobs[i].ablation)},
                                           {"fold", jobs[i].fold},
                                           {"model", jobs[i].model_name},
                                           {"epoch", e.epoch},
                                           {"mean_loss", e.mean_loss},
                                           {"retrieval_top1", e.retrieval_top1},
                                           {"examples", e.examples}}
                                .dump());
    }
    out.records.push_back(nlohmann::json{{"record", "checkpoint"},
                                         {"ablation", ablation_name(jobs[i].ablation)},
                                         {"fold", jobs[i].fold},
                                         {"model", jobs[i].model_name},
                                         {"path", reports[i].final_checkpoint}}
                              .dump());
    out.timing.push_back(nlohmann::json{{"ablation", ablation_name(jobs[i].ablation)},
                                        {"fold", jobs[i].fold},
                                        {"model", jobs[i].model_name},
                                        {"wall_clock_s", reports[i].wall_clock_s}}
                             .dump());
  }
  return out;
}

// Loads every checkpoint a plan needs; D_Z must match the archive.
class ModelStore {
 public:
  ModelStore(const Dataset& ds, const RunConfig& config, std::filesystem::path root)
      : ds_(ds), config_(config), root_(std::move(root)) {}

  const FusionModel& get(Ablation a, std::size_t fold, const std::string& behavior) {
    const std::string name = model_name_for(config_, behavior);
    const auto key = std::tuple{a, fold, name};
    auto it = models_.find(key);
    if (it == models_.end()) {
      FusionModel m = load_checkpoint(checkpoint_path(root_, a, fold, name));
      require(m.config().d_z == ds_.d_z, ErrorKind::kFormat,
              "checkpoint d_z " + std::to_string(m.config().d_z) + " does not match archive d_z " +
                  std::to_string(ds_.d_z));
      require(m.use_self_attention() == (a == Ablation::kWithSa), ErrorKind::kFormat,
              "checkpoint under " + ablation_name(a) + " has the other attention setting");
      it = models_.emplace(key, std::move(m)).first;
    }
    return it->second;
  }

 private:
  const Dataset& ds_;
  const RunConfig& config_;
  std::filesystem::path root_;
  std::map<std::tuple<Ablation, std::size_t, std::string>, FusionModel> models_;
};

// ---------------------------------------------------------------------------
// Probe report

struct ReferenceRow {
  std::string label;
  const char* without_sa;
  const char* with_sa;
};

// Full-scale reference accuracies (20 categories, real sensors and encoders).
inline const std::vector<ReferenceRow>& probe_reference() {
  static const std::vector<ReferenceRow> rows = {
      {"look", "86.4 ± 1.2", "87.4 ± 2.0"},  {"grasp", "72.2 ± 6.7", "74.0 ± 5.8"},
      {"hold", "68.0 ± 5.3", "69.6 ± 5.2"},  {"lift", "72.8 ± 4.2", "77.8 ± 5.7"},
      {"drop", "73.2 ± 3.8", "77.2 ± 5.9"},  {"poke", "81.6 ± 2.2", "86.4 ± 1.0"},
      {"push", "85.6 ± 3.5", "89.4 ± 4.4"},  {"shake", "81.2 ± 6.2", "84.0 ± 5.6"},
      {"tap", "81.2 ± 5.7", "84.4 ± 1.8"},   {"press", "71.6 ± 8.7", "77.8 ± 6.4"},
      {"all behaviors", "95.2 ± 3.6", "95.6 ± 3.9"},
  };
  return rows;
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
};

inline MeanSd mean_sd(const std::vector<double>& xs) {
  require(!xs.empty(), ErrorKind::kContract, "mean_sd of nothing");
  MeanSd r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

inline std::string fixed(double v, int digits = 1) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

inline std::string pad(const std::string& s, std::size_t width) {
  // Width counts code points so "±" lines up.
  std::size_t cps = 0;
  for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

struct ProbeCell {
  std::vector<double> test_accuracy;  // per fold
};

struct ProbeResult {
  // [ablation][row label] where row label is a behavior or "all behaviors".
  std::map<Ablation, std::map<std::string, ProbeCell>> cells;
  std::vector<std::string> rows;
  std::size_t categories = 0;
  std::vector<std::string> records;
  std::string table;
};

namespace detail {

struct Reps {
  RepMatrix x;
  std::vector<std::size_t> y;
  std::vector<std::pair<std::string, std::size_t>> keys;  // (object, trial)
};

inline Reps collect_reps(const Dataset& ds, const std::vector<std::string>& objects,
                         const std::string& behavior, const FusionModel& model) {
  Reps r;
  for (const auto& o : objects) {
    const auto trials = ds.trials_of(o, behavior);
    require(!trials.empty(), ErrorKind::kData, "no trials for (" + o + ", " + behavior + ")");
    for (const auto* t : trials) {
      r.x.push(represent(*t, model));
      r.y.push_back(ds.category_index(ds.object(o).category));
      r.keys.emplace_back(o, t->trial_index);
    }
  }
  return r;
}

}  // namespace detail

inline ProbeResult run_probe(const Dataset& ds, const RunPlan& plan, ModelStore& store) {
  const RunConfig& c = plan.config;
  const auto behaviors = resolve_behaviors(ds, plan);
  const auto folds = plan_folds(ds, c);
  const std::size_t classes = ds.categories().size();
  require(classes >= 2, ErrorKind::kConfiguration, "probe needs at least 2 categories");
  std::vector<std::string> interactive;
  for (const auto& b : behaviors)
    if (ds.behavior(b).interactive) interactive.push_back(b);

  ProbeResult result;
  result.categories = classes;
  result.rows = behaviors;
  if (!interactive.empty()) result.rows.push_back("all behaviors");
  result.records.push_back(nlohmann::json{{"record", "run"}, {"run", run_header(plan, behaviors)}}.dump());

  for (auto a : plan.ablations) {
    for (const auto& f : folds) {
      std::vector<std::vector<std::vector<double>>> test_probs;
      std::vector<double> train_acc;
      std::optional<std::vector<std::pair<std::string, std::size_t>>> keys;
      std::vector<std::size_t> test_labels;
      for (const auto& b : behaviors) {
        const FusionModel& model = store.get(a, f.fold_index, b);
        const auto tr = detail::collect_reps(ds, f.train_object_ids, b, model);
        const auto te = detail::collect_reps(ds, f.test_object_ids, b, model);
        ProbeConfig pc = c.probe;
        pc.seed = SeedSeq(c.seed).mix("probe").mix(f.fold_index).mix(b).value();
        const ProbeClassifier probe = train_probe(tr.x, tr.y, classes, pc);
        const double acc_train = probe_accuracy(probe, tr.x, tr.y);
        const double acc_test = probe_accuracy(probe, te.x, te.y);
        result.cells[a][b].test_accuracy.push_back(acc_test);
        result.records.push_back(nlohmann::json{{"record", "probe"},
                                                {"ablation", ablation_name(a)},
                                                {"fold", f.fold_index},
                                                {"behavior", b},
                                                {"train_accuracy", acc_train},
                                                {"test_accuracy", acc_test},
                                                {"test_examples", te.y.size()}}
                                     .dump());
        if (ds.behavior(b).interactive) {
          if (!keys) {
            keys = te.keys;
            test_labels = te.y;
          }
          require(*keys == te.keys, ErrorKind::kData,
                  "behavior '" + b + "' does not share the test trial set needed to combine behaviors");
          test_probs.push_back(probe.probabilities(te.x));
          train_acc.push_back(acc_train);
        }
      }
      if (!test_probs.empty()) {
        // Probes that fit nothing get equal say rather than none.
        if (std::all_of(train_acc.begin(), train_acc.end(), [](double w) { return w == 0.0; }))
          std::fill(train_acc.begin(), train_acc.end(), 1.0);
        const double acc = probe_accuracy(combine_behaviors(test_probs, train_acc), test_labels);
        result.cells[a]["all behaviors"].test_accuracy.push_back(acc);
        result.records.push_back(nlohmann::json{{"record", "probe"},
                                                {"ablation", ablation_name(a)},
                                                {"fold", f.fold_index},
                                                {"behavior", "all behaviors"},
                                                {"weights", train_acc},
                                                {"test_accuracy", acc}}
                                     .dump());
      }
    }
  }

  std::ostringstream t;
  t << "Category recognition accuracy (%), mean ± sd over " << folds.size() << " folds\n";
  t << "chance = " << fixed(100.0 / static_cast<double>(classes)) << "% (" << classes
    << " categories)\n\n";
  t << pad("behavior", 16);
  for (auto a : plan.ablations) t << pad(ablation_name(a), 16);
  t << pad("ref without-sa", 16) << "ref with-sa\n";
  for (const auto& row : result.rows) {
    t << pad(row, 16);
    for (auto a : plan.ablations) {
      const auto ms = mean_sd(result.cells[a][row].test_accuracy);
      t << pad(fixed(ms.mean) + " ± " + fixed(ms.sd), 16);
    }
    auto ref = std::find_if(probe_reference().begin(), probe_reference().end(),
                            [&](const ReferenceRow& r) { return r.label == row; });
    if (ref != probe_reference().end()) {
      t << pad(ref->without_sa, 16) << ref->with_sa;
    } else {
      t << pad("-", 16) << "-";
    }
    t << "\n";
  }
  t << "\nReference columns: full-scale run with 20 categories; not comparable to synthetic runs.\n";
  t << "\nresolved config:\n" << config_ini(c);
  result.table = t.str();
  for (auto a : plan.ablations)
    for (const auto& row : result.rows) {
      const auto ms = mean_sd(result.cells[a][row].test_accuracy);
      result.records.push_back(nlohmann::json{{"record", "probe_summary"},
                                              {"ablation", ablation_name(a)},
                                              {"behavior", row},
                                              {"mean", ms.mean},
                                              {"sd", ms.sd}}
                                   .dump());
    }
  return result;
}

// ---------------------------------------------------------------------------
// Fetch report

struct FetchReference {
  std::string label;
  int look_without, look_with, inter_without, inter_with;
};

// Full-scale target selection percentages.
inline const std::vector<FetchReference>& fetch_reference() {
  static const std::vector<FetchReference> rows = {
      {"level 1", 74, 82, 97, 99},
      {"level 2", 61, 65, 84, 81},
      {"level 3", 60, 74, 86, 83},
      {"level 4", 54, 70, 72, 77},
      {"level 5 Deformability", 45, 48, 71, 74},
      {"level 5 Shape", 85, 80, 97, 95},
      {"level 5 Size", 62, 74, 72, 75},
      {"level 5 Transparency", 62, 62, 51, 63},
      {"level 5 Weight", 52, 63, 85, 85},
  };
  return rows;
}

struct FetchRow {
  std::string label;  // "level N" or "level 5 <Property>"
  int level = 1;
  std::string property;
  // [ablation, condition] -> per-slot selection percentages pooled over folds
  std::map<std::pair<Ablation, Condition>, std::vector<double>> percentages;
  bool absent = false;
  std::vector<FetchEpisode> episodes;  // all folds
};

struct FetchResult {
  std::vector<FetchRow> rows;
  std::vector<std::string> records;
  std::string table;
};

inline std::vector<std::string> condition_behaviors(const Dataset& ds,
                                                    const std::vector<std::string>& behaviors,
                                                    Condition c) {
  std::vector<std::string> out;
  for (const auto& b : behaviors) {
    const bool inter = ds.behavior(b).interactive;
    if ((c == Condition::kLook && b == kLookBehavior) || (c == Condition::kInteractive && inter))
      out.push_back(b);
  }
  return out;
}

inline FetchResult run_fetch(const Dataset& ds, const RunPlan& plan, ModelStore& store) {
  const RunConfig& c = plan.config;
  require(ds.words.has_value(), ErrorKind::kConfiguration,
          "the archive carries no word table, so fetch commands cannot be embedded");
  const auto behaviors = resolve_behaviors(ds, plan);
  const auto folds = plan_folds(ds, c);
  for (auto cond : plan.conditions) {
    require(!condition_behaviors(ds, behaviors, cond).empty(), ErrorKind::kConfiguration,
            "no selected behavior serves the " + condition_name(cond) + " condition");
  }

  FetchResult result;
  result.records.push_back(nlohmann::json{{"record", "run"}, {"run", run_header(plan, behaviors)}}.dump());
  std::vector<std::pair<int, std::string>> plan_rows;
  for (int level : c.fetch.levels) {
    if (level == 5) {
      for (const auto& pc : property_table()) plan_rows.push_back({5, pc.name});
    } else {
      plan_rows.push_back({level, ""});
    }
  }

  for (const auto& [level, property] : plan_rows) {
    FetchRow row;
    row.level = level;
    row.property = property;
    row.label = "level " + std::to_string(level) + (property.empty() ? "" : " " + property);
    for (const auto& f : folds) {
      Rng rng = SeedSeq(c.seed).mix("episodes").mix(level).mix(property).mix(f.fold_index).rng();
      try {
        auto eps = generate_episodes(level, property, f, ds, *ds.words, c.fetch.episodes, rng);
        row.episodes.insert(row.episodes.end(), eps.begin(), eps.end());
      } catch (const Error& e) {
        // A level-5 category with no valid pair in some fold is reported
        // absent rather than failing the run.
        if (e.kind() != ErrorKind::kEpisode || level != 5) throw;
        row.absent = true;
      }
    }
    if (row.absent) {
      result.records.push_back(nlohmann::json{{"record", "fetch_absent"},
                                              {"level", level},
                                              {"property", property}}
                                   .dump());
      result.rows.push_back(std::move(row));
      continue;
    }
    for (auto a : plan.ablations)
      for (auto cond : plan.conditions) {
        const auto bs = condition_behaviors(ds, behaviors, cond);
        std::vector<FetchOutcome> outcomes;
        RepresentationCache cache;
        for (const auto& ep : row.episodes) {
          std::map<std::string, const FusionModel*> models;
          for (const auto& b : bs) models[b] = &store.get(a, ep.fold_index, b);
          Rng rng = SeedSeq(c.seed)
                        .mix("fetch")
                        .mix(level)
                        .mix(property)
                        .mix(ep.fold_index)
                        .mix(ep.episode_index)
                        .rng();
          outcomes.push_back(fetch(ep, models, bs, ds, rng, &cache));
          const auto& o = outcomes.back();
          result.records.push_back(nlohmann::json{{"record", "fetch_episode"},
                                                  {"ablation", ablation_name(a)},
                                                  {"condition", condition_name(cond)},
                                                  {"level", level},
                                                  {"property", property},
                                                  {"fold", ep.fold_index},
                                                  {"episode", ep.episode_index},
                                                  {"command", ep.command_text},
                                                  {"presented", o.presented},
                                                  {"scores", o.scores},
                                                  {"selected", o.selected_id()}}
                                       .dump());
        }
        row.percentages[{a, cond}] = selection_percentage(row.episodes, outcomes);
      }
    result.rows.push_back(std::move(row));
  }

  std::ostringstream t;
  t << "Fetch object selection (%), pooled over " << folds.size() << " folds, "
    << c.fetch.episodes << " commands per fold\n\n";
  t << pad("level", 26) << pad("object", 14);
  std::vector<std::pair<Ablation, Condition>> cols;
  for (auto cond : plan.conditions)
    for (auto a : plan.ablations) {
      cols.push_back({a, cond});
      t << pad(condition_name(cond) + " " + ablation_name(a), 24);
    }
  t << "ref target (look w/o, look, inter w/o, inter)\n";
  for (const auto& row : result.rows) {
    if (row.absent) {
      t << pad(row.label, 26) << "absent (no valid target/distractor set in some fold)\n";
      continue;
    }
    const std::size_t slots = row.percentages.begin()->second.size();
    for (std::size_t s = 0; s < slots; ++s) {
      t << pad(s == 0 ? row.label : "", 26)
        << pad(s == 0 ? "target" : "distractor " + std::to_string(s), 14);
      for (const auto& col : cols) t << pad(fixed(row.percentages.at(col)[s]), 24);
      if (s == 0) {
        auto ref = std::find_if(fetch_reference().begin(), fetch_reference().end(),
                                [&](const FetchReference& r) { return r.label == row.label; });
        if (ref != fetch_reference().end()) {
          t << ref->look_without << " / " << ref->look_with << " / " << ref->inter_without << " / "
            << ref->inter_with;
        }
      }
      t << "\n";
    }
  }
  t << "\nReference column: full-scale target selection with nine interactive behaviors.\n";
  t << "\nresolved config:\n" << config_ini(c);
  result.table = t.str();
  for (const auto& row : result.rows) {
    if (row.absent) continue;
    for (const auto& [key, pct] : row.percentages)
      result.records.push_back(nlohmann::json{{"record", "fetch_summary"},
                                              {"ablation", ablation_name(key.first)},
                                              {"condition", condition_name(key.second)},
                                              {"level", row.level},
                                              {"property", row.property},
                                              {"percentages", pct}}
                                   .dump());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Visualization export

inline std::string property_label(const ObjectMeta& obj, const std::string& property) {
  if (property == kCategoryRequirement) return obj.category;
  auto it = obj.properties.find(property);
  return it == obj.properties.end() ? "(none)" : it->second;
}

// CSV rows over the fold's training objects for one behavior.
inline std::string run_visualize(const Dataset& ds, const RunConfig& c, const FusionModel& model) {
  const auto& v = c.visualize;
  require(v.property == kCategoryRequirement || find_property_category(v.property) != nullptr,
          ErrorKind::kConfiguration,
          "visualize.property must be 'category' or a property category, got '" + v.property + "'");
  require(ds.has_behavior(v.behavior), ErrorKind::kConfiguration,
          "visualize.behavior '" + v.behavior + "' is not in the archive");
  require(model.config().d_z == ds.d_z, ErrorKind::kFormat,
          "checkpoint d_z " + std::to_string(model.config().d_z) + " does not match archive d_z " +
              std::to_string(ds.d_z));
  const auto folds = plan_folds(ds, c);
  require(v.fold < folds.size(), ErrorKind::kConfiguration, "visualize.fold out of range");
  RepMatrix reps;
  std::vector<std::string> labels;
  for (const auto& o : folds[v.fold].train_object_ids)
    for (const auto* t : ds.trials_of(o, v.behavior)) {
      reps.push(represent(*t, model));
      labels.push_back(property_label(ds.object(o), v.property));
    }
  VisualizationConfig vc = v.autoencoder;
  vc.seed = SeedSeq(c.seed).mix("visualize").value();
  const auto rows = export_visualization(reps, labels, vc);
  std::ostringstream out;
  out.precision(9);
  out << "x,y," << v.property << "\n";
  for (const auto& r : rows) out << r.x << "," << r.y << "," << r.label << "\n";
  return out.str();
}

}  // namespace mosaic
