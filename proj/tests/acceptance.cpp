// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <Eigen/Dense>

#include "mosaic/config.hpp"
#include "mosaic/pipeline.hpp"
#include "mosaic/preprocess.hpp"
#include "support.hpp"

using namespace mosaic;
using namespace mosaic::testing;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

RunConfig desk_config() { return load_config(fs::path(MOSAIC_SOURCE_DIR) / "configs" / "desk.ini"); }

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto check = [&](const std::string& name, const std::function<Tensor(Tape&)>& f,
                   const std::vector<Tensor>& params) {
    const auto r = check_gradients(f, params);
    checked += r.coordinates;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = name;
  };
  auto P = [&](Shape s) { return random_parameter(rng, std::move(s)); };

  const Tensor a = P({3, 4}), b = P({4, 2}), c = P({3, 4}), bias = P({1, 4}), s = P({});
  check("matmul", [&](Tape& t) { return project(t, matmul(t, a, b)); }, {a, b});
  check("transpose", [&](Tape& t) { return project(t, transpose(t, a)); }, {a});
  check("add", [&](Tape& t) { return project(t, add(t, a, c)); }, {a, c});
  check("sub", [&](Tape& t) { return project(t, sub(t, a, c)); }, {a, c});
  check("mul", [&](Tape& t) { return project(t, mul(t, a, c)); }, {a, c});
  check("scale", [&](Tape& t) { return project(t, scale(t, a, -1.7)); }, {a});
  check("scale_by", [&](Tape& t) { return project(t, scale_by(t, s, a)); }, {s, a});
  check("add_row_bias", [&](Tape& t) { return project(t, add_row_bias(t, a, bias)); }, {a, bias});
  check("relu", [&](Tape& t) { return project(t, relu(t, a)); }, {a});
  check("exp", [&](Tape& t) { return project(t, exp(t, a)); }, {a});
  check("sum", [&](Tape& t) { return sum(t, mul(t, a, a)); }, {a});
  check("mean", [&](Tape& t) { return mean(t, mul(t, a, a)); }, {a});
  check("mean_rows", [&](Tape& t) { return project(t, mean_rows(t, a)); }, {a});
  check("l2_normalize_rows", [&](Tape& t) { return project(t, l2_normalize_rows(t, a)); }, {a});
  check("concat", [&](Tape& t) { return project(t, concat(t, {a, c}, 0)); }, {a, c});
  check("slice", [&](Tape& t) { return project(t, slice(t, a, 1, 1, 3)); }, {a});
  check("reshape", [&](Tape& t) { return project(t, reshape(t, a, {2, 6})); }, {a});
  check("softmax", [&](Tape& t) { return project(t, softmax(t, a, 1)); }, {a});
  const std::vector<std::size_t> labels = {3, 0, 2};
  check("cross_entropy", [&](Tape& t) { return cross_entropy(t, a, labels); }, {a});
  const Tensor x = P({2, 5, 9}), w = P({3, 2, 3, 3}), wb = P({3});
  check("conv2d", [&](Tape& t) { return project(t, conv2d(t, x, w, wb, 1, 1)); }, {x, w, wb});
  check("avg_pool_time", [&](Tape& t) { return project(t, avg_pool_time(t, x, 2)); }, {x});
  check("channel_mean", [&](Tape& t) { return project(t, channel_mean(t, x)); }, {x});

  const Tensor u = P({4, 6}), txt = P({4, 6}), ls = P({});
  check("contrastive_loss",
        [&](Tape& t) { return contrastive_loss(t, l2_normalize_rows(t, u), l2_normalize_rows(t, txt), ls); },
        {u, txt, ls});

  // Full loss: haptic encoder, attention, MLP and logit scale on a 4-sample batch.
  SyntheticConfig sc;
  sc.categories = 2;
  sc.behaviors = {"tap"};
  sc.d_z = 8;
  sc.trials = 1;
  sc.descriptions = 3;
  const Dataset ds = generate_dataset(sc);
  ModelConfig mc;
  mc.d_z = 8;
  mc.heads = 2;
  mc.conv_channels = {2, 3};
  const FusionModel model(mc, 5);
  std::vector<double> text;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto unit = normalized_row(ds.trials[i].text_pool->embeddings.values().subspan(0, 8));
    text.insert(text.end(), unit.values().begin(), unit.values().end());
  }
  const Tensor sm = Tensor::matrix(4, 8, text);
  check("full loss",
        [&](Tape& t) {
          std::vector<Tensor> rows;
          for (std::size_t i = 0; i < 4; ++i) rows.push_back(unified_representation(t, ds.trials[i], model));
          return contrastive_loss(t, concat(t, rows, 0), sm, model.log_logit_scale());
        },
        model.parameters());

  const double secs = seconds_since(t0);
  report(worst < 1e-4 && secs < 30.0, "gradient suite",
         "max rel err " + num(worst) + " (" + worst_name + ") over " + std::to_string(checked) +
             " coordinates, " + num(secs) + " s (need < 1e-4, < 30 s)");
}

void loss_identities() {
  Rng rng(7);
  double worst = 0.0;
  for (std::size_t n : {2u, 8u, 64u}) {
    // Identical rows make every logit equal.
    const auto row = random_values(rng, 5);
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), row.begin(), row.end());
    auto tape = Tape::inference();
    const Tensor m = l2_normalize_rows(tape, Tensor::matrix(n, 5, v));
    const double l = contrastive_loss(tape, m, m, Tensor::scalar(kInitLogLogitScale)).item();
    worst = std::max(worst, std::abs(l - std::log(static_cast<double>(n))));
  }
  std::size_t symmetric = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + uniform_index(rng, 10), d = 2 + uniform_index(rng, 10);
    auto tape = Tape::inference();
    const Tensor u = l2_normalize_rows(tape, Tensor::matrix(n, d, random_values(rng, n * d)));
    const Tensor s = l2_normalize_rows(tape, Tensor::matrix(n, d, random_values(rng, n * d)));
    const Tensor ls = Tensor::scalar(3.0 * uniform01(rng));
    symmetric += contrastive_loss(tape, u, s, ls).item() == contrastive_loss(tape, s, u, ls).item();
  }
  report(worst <= 1e-9 && symmetric == 100, "loss identities",
         "max |loss - ln n| " + num(worst) + " for n in {2,8,64}; " + std::to_string(symmetric) +
             "/100 exactly symmetric");
}

void end_to_end(const Dataset& ds, const RunConfig& c) {
  // One model over both interactive behaviors on fold 0's 20 training objects.
  const auto fold = plan_folds(ds, c)[0];
  const std::vector<std::string> behaviors = {"lift", "tap"};
  ModelConfig mc = c.model;
  TrainConfig tc = c.train;
  tc.seed = 11;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train(ds, fold, behaviors, mc, tc);
  const auto trials = select_trials(ds, fold.train_object_ids, behaviors);
  const double retrieval = evaluate_retrieval(trials, r.model, tc.batch_size, 20, 3);
  const double secs = seconds_since(t0);
  const double first = r.report.epochs.front().mean_loss, last = r.report.epochs.back().mean_loss;
  const double reduction = 1.0 - last / first;
  report(reduction >= 0.5 && retrieval >= 0.9 && secs < 60.0, "end-to-end learning signal",
         std::to_string(fold.train_object_ids.size()) + " objects, " + std::to_string(tc.epochs) +
             " epochs: loss " + num(first) + " -> " + num(last) + " (reduction " + num(100 * reduction) +
             "%, need >= 50%), retrieval top-1 " + num(100 * retrieval) + "% (need >= 90%), " + num(secs) +
             " s (need < 60 s)");
}

struct DeskRun {
  std::vector<std::string> train;
  ProbeResult probe;
  FetchResult fetch;
};

DeskRun desk_run(const Dataset& ds, const RunConfig& c, const fs::path& root) {
  RunPlan plan;
  plan.config = c;
  DeskRun r;
  r.train = run_training(ds, plan, root).records;
  ModelStore store(ds, c, root);
  r.probe = run_probe(ds, plan, store);
  r.fetch = run_fetch(ds, plan, store);
  return r;
}

void probe_above_chance(const ProbeResult& p) {
  const double chance = 100.0 / static_cast<double>(p.categories);
  bool ok = true;
  std::string detail;
  for (const auto& [abl, rows] : p.cells)
    for (const auto& row : p.rows) {
      const auto ms = mean_sd(rows.at(row).test_accuracy);
      ok &= ms.mean >= 2.0 * chance;
      detail += ablation_name(abl) + "/" + row + " " + num(ms.mean) + "%; ";
    }
  report(ok, "probe above chance", detail + "need >= " + num(2 * chance) + "% (2x chance)");
}

void fetch_soundness(const Dataset& ds, const FetchResult& f) {
  const FetchRow& l1 = f.rows.front();
  const double with_sa = l1.percentages.at({Ablation::kWithSa, Condition::kInteractive})[0];
  const double without_sa = l1.percentages.at({Ablation::kWithoutSa, Condition::kInteractive})[0];
  std::size_t sound = 0, total = 0;
  for (const auto& row : f.rows)
    for (const auto& ep : row.episodes) ++total, sound += episode_sound(ep, ds);
  Rng rng(5);
  std::size_t invariant = 0;
  for (int i = 0; i < 1000; ++i) {
    auto s = random_values(rng, 2 + uniform_index(rng, 3), -2, 2);
    if (uniform01(rng) < 0.2) s[1] = s[0];  // exercise ties
    const double k = 1e-3 + 100.0 * uniform01(rng), b = -10.0 + 20.0 * uniform01(rng);
    std::vector<double> moved;
    for (double x : s) moved.push_back(k * x + b);
    invariant += select_by_scores(s) == select_by_scores(moved);
  }
  report(with_sa >= 90.0, "fetch level 1 interactive",
         "target selected in " + num(with_sa) + "% with-sa (need >= 90%), " + num(without_sa) + "% without-sa");
  report(sound == total && total > 0, "fetch episode soundness",
         std::to_string(sound) + "/" + std::to_string(total) + " episodes across levels 1-5");
  report(invariant == 1000, "fetch argmax invariance",
         std::to_string(invariant) + "/1000 positive-affine score sets");
}

void protocol_invariants() {
  // Full-scale shape: 20 categories x 5 objects, 5 trials per behavior.
  SyntheticConfig sc;
  sc.categories = 20;
  sc.behaviors = {"look"};
  sc.d_z = 4;
  sc.descriptions = 1;
  const Dataset ds = generate_dataset(sc);
  const auto folds = split_folds(ds.objects, 5, 1);
  bool ok = folds.size() == 5;
  std::map<std::string, int> tested;
  for (const auto& f : folds) {
    std::set<std::string> tr(f.train_object_ids.begin(), f.train_object_ids.end());
    std::set<std::string> te(f.test_object_ids.begin(), f.test_object_ids.end());
    ok &= tr.size() == 80 && te.size() == 20;
    for (const auto& id : te) ok &= !tr.count(id), ++tested[id];
    ok &= select_trials(ds, f.train_object_ids, {"look"}).size() == 400;
    ok &= select_trials(ds, f.test_object_ids, {"look"}).size() == 100;
    std::map<std::string, int> per_cat;
    for (const auto& id : te) ++per_cat[ds.object(id).category];
    for (const auto& [cat, n] : per_cat) ok &= n == 1;
  }
  ok &= tested.size() == 100;
  for (const auto& [id, n] : tested) ok &= n == 1;
  report(ok, "fold protocol", "5 folds of 80/20 objects, 400/100 examples, each object tested once");

  Rng rng(9);
  bool exact = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + uniform_index(rng, 7), n = 2 + uniform_index(rng, 300), m = 2 + uniform_index(rng, 300);
    const Tensor x = Tensor::matrix(d, n, random_values(rng, d * n, -50, 50));
    const Tensor same = resample_linear(x, n);
    exact &= std::equal(same.values().begin(), same.values().end(), x.values().begin());
    const Tensor y = resample_linear(x, m);
    for (std::size_t r = 0; r < d; ++r) exact &= y.at(r, 0) == x.at(r, 0) && y.at(r, m - 1) == x.at(r, n - 1);
  }
  const Tensor ramp = resample_linear(Tensor::matrix(1, 4, {0, 1, 2, 3}), 7);
  exact &= std::vector<double>(ramp.values().begin(), ramp.values().end()) ==
           std::vector<double>{0, 0.5, 1, 1.5, 2, 2.5, 3};
  report(exact, "preprocessing exactness", "idempotence, endpoints and ramp closed form hold exactly");
}

void reproducibility(const Dataset& ds, const RunConfig& c, const DeskRun& first, const fs::path& root) {
  fs::remove_all(root);
  const DeskRun again = desk_run(ds, c, root);
  const bool same = first.train == again.train && first.probe.table == again.probe.table &&
                    first.probe.records == again.probe.records && first.fetch.table == again.fetch.table &&
                    first.fetch.records == again.fetch.records;
  report(same, "byte-identical reports", "train, probe and fetch reports from a rerun with the same seeds");
}

void visualization(const Dataset& ds, const RunConfig& c, const fs::path& root) {
  ModelStore store(ds, c, root);
  const auto folds = plan_folds(ds, c);
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < 3; ++k) {
    const FusionModel& m = store.get(Ablation::kWithSa, k, "lift");
    RepMatrix reps;
    for (const auto* t : select_trials(ds, folds[k].train_object_ids, {"lift"})) reps.push(represent(*t, m));
    Eigen::MatrixXd x(reps.rows, reps.cols);
    for (std::size_t i = 0; i < reps.rows; ++i)
      for (std::size_t j = 0; j < reps.cols; ++j) x(i, j) = reps.values[i * reps.cols + j];
    x.rowwise() -= x.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
    double pca = 0.0;
    for (Eigen::Index i = 0; i + 2 < es.eigenvalues().size(); ++i) pca += es.eigenvalues()(i);
    pca /= static_cast<double>(reps.rows);
    const double ae = linear_autoencoder(reps, c.visualize.autoencoder).reconstruction_error;
    ok &= ae <= 1.05 * pca;
    detail += "fold " + std::to_string(k) + " " + num(ae, 4) + " vs " + num(pca, 4) + "; ";
  }
  report(ok, "visualization oracle", detail + "autoencoder error within 5% of PCA");
}

}  // namespace

int main() {
  try {
    gradient_suite();
    loss_identities();

    const RunConfig c = desk_config();
    const Dataset ds = generate_dataset(c.synthetic);
    end_to_end(ds, c);

    TempDir dir("acceptance");
    const fs::path root = dir.path() / "checkpoints";
    const DeskRun run = desk_run(ds, c, root);
    std::cout << run.probe.table << "\n" << run.fetch.table << std::endl;
    probe_above_chance(run.probe);
    fetch_soundness(ds, run.fetch);
    protocol_invariants();
    visualization(ds, c, root);
    reproducibility(ds, c, run, root);
  } catch (const std::exception& e) {
    report(false, "acceptance run", std::string("aborted: ") + e.what());
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
