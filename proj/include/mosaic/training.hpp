#pragma once

// Minibatch symmetric contrastive distillation of unified representations
// against frozen text embeddings.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mosaic/datamodel.hpp"
#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"
#include "mosaic/model.hpp"
#include "mosaic/random.hpp"

namespace mosaic {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::uint64_t seed = 1;
  bool freeze_logit_scale = false;
  std::size_t checkpoint_every = 0;      // epochs between snapshots; 0 = final only
  std::filesystem::path checkpoint_dir;  // empty = do not write checkpoints

  void validate() const {
    require(batch_size >= 2, ErrorKind::kConfiguration,
            "batch_size must be at least 2 (the contrastive loss needs negatives)");
    require(epochs >= 1, ErrorKind::kConfiguration, "epochs must be positive");
    require(learning_rate > 0.0, ErrorKind::kConfiguration, "learning_rate must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double retrieval_top1 = 0.0;  // in-batch trial -> text, training data
  std::size_t examples = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_clock_s = 0.0;
  std::string final_checkpoint;
};

inline constexpr double kUnitNormTolerance = 1e-6;

// Symmetric cross-entropy over exp(log_scale) * U S^T with the diagonal as
// labels. U and S are n x D_Z with unit rows.
inline Tensor contrastive_loss(Tape& tape, const Tensor& unified, const Tensor& text,
                               const Tensor& log_scale) {
  detail::require_same_shape(unified, text, "contrastive_loss");
  detail::require_matrix(unified, "contrastive_loss");
  const std::size_t n = unified.rows(), d = unified.cols();
  require(n >= 2, ErrorKind::kContract, "contrastive_loss: need at least 2 pairs");
  for (const Tensor* m : {&unified, &text}) {
    const auto v = m->values();
    for (std::size_t i = 0; i < n; ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < d; ++j) ss += v[i * d + j] * v[i * d + j];
      require(std::abs(std::sqrt(ss) - 1.0) <= kUnitNormTolerance, ErrorKind::kContract,
              "contrastive_loss: row " + std::to_string(i) + " is not unit-norm (norm " +
                  std::to_string(std::sqrt(ss)) + ")");
    }
  }
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i;
  const Tensor logits = scale_by(tape, exp(tape, log_scale), matmul(tape, unified, transpose(tape, text)));
  const Tensor loss_u = cross_entropy(tape, logits, labels);
  const Tensor loss_s = cross_entropy(tape, transpose(tape, logits), labels);
  return scale(tape, add(tape, loss_u, loss_s), 0.5);
}

inline Tensor normalized_row(std::span<const double> row) {
  auto tape = Tape::inference();
  return l2_normalize_rows(tape, Tensor::row({row.begin(), row.end()}));
}

struct TrainResult {
  FusionModel model;
  TrainReport report;
};

inline std::vector<const TrialRecord*> select_trials(const Dataset& dataset,
                                                     const std::vector<std::string>& object_ids,
                                                     const std::vector<std::string>& behaviors) {
  std::vector<const TrialRecord*> out;
  for (const auto& o : object_ids)
    for (const auto& b : behaviors)
      for (const auto* t : dataset.trials_of(o, b)) out.push_back(t);
  return out;
}

// Trains one fusion model on the fold's training objects for `behaviors`.
// Only haptic, attention, MLP and logit-scale parameters move; every dataset
// tensor is a constant.
inline TrainResult train(const Dataset& dataset, const FoldSplit& fold,
                         const std::vector<std::string>& behaviors, const ModelConfig& model_config,
                         const TrainConfig& config) {
  config.validate();
  require(!behaviors.empty(), ErrorKind::kConfiguration, "no behaviors to train on");
  for (const auto& b : behaviors) {
    require(dataset.has_behavior(b), ErrorKind::kConfiguration,
            "dataset has no behavior '" + b + "'");
  }
  require(model_config.d_z == dataset.d_z, ErrorKind::kConfiguration,
          "model d_z " + std::to_string(model_config.d_z) + " does not match dataset d_z " +
              std::to_string(dataset.d_z));
  const auto trials = select_trials(dataset, fold.train_object_ids, behaviors);
  require(trials.size() >= 2, ErrorKind::kConfiguration,
          "training set for fold " + std::to_string(fold.fold_index) + " has " +
              std::to_string(trials.size()) + " trials; need at least 2");

  const auto start = std::chrono::steady_clock::now();
  TrainResult result{FusionModel(model_config, SeedSeq(config.seed).mix("init").value()), {}};
  FusionModel& model = result.model;

  std::vector<Tensor> trainable;
  for (const auto& p : model.named_parameters()) {
    if (p.group == "scale" && config.freeze_logit_scale) continue;
    trainable.push_back(p.tensor);
  }
  AdamState adam = AdamState::for_parameters(trainable, config.learning_rate);
  Rng rng = SeedSeq(config.seed).mix("train").rng();

  std::vector<std::size_t> order(trials.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t hits = 0, seen = 0, batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::size_t n = end - begin;
      if (n < 2) break;  // a lone trailing trial has no negatives

      Tape tape;
      std::vector<Tensor> rows;
      std::vector<double> text(n * dataset.d_z);
      try {
        for (std::size_t i = 0; i < n; ++i) {
          const TrialRecord& t = *trials[order[begin + i]];
          rows.push_back(unified_representation(tape, t, model));
          const Tensor& pool = t.text_pool->embeddings;
          const std::size_t pick = uniform_index(rng, pool.rows());
          const auto row = pool.values().subspan(pick * dataset.d_z, dataset.d_z);
          const auto unit = normalized_row(row);
          std::copy(unit.values().begin(), unit.values().end(), text.begin() + static_cast<std::ptrdiff_t>(i * dataset.d_z));
        }
        const Tensor u = concat(tape, rows, 0);
        const Tensor s = Tensor::matrix(n, dataset.d_z, std::move(text));
        const Tensor loss = contrastive_loss(tape, u, s, model.log_logit_scale());

        // In-batch retrieval; a text drawn for another trial of the same
        // object is an equally correct match.
        const double scale_value = std::exp(model.log_logit_scale().item());
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dataset.d_z; ++k) dot += u.at(i, k) * s.at(j, k);
            if (scale_value * dot > best_v) best_v = scale_value * dot, best = j;
          }
          if (trials[order[begin + best]]->object_id == trials[order[begin + i]]->object_id) ++hits;
        }
        seen += n;
        loss_sum += loss.item() * static_cast<double>(n);

        if (loss.requires_grad()) {
          for (auto& p : trainable) p.zero_grad();
          tape.backward(loss);
          std::vector<std::vector<double>> grads;
          for (const auto& p : trainable) grads.emplace_back(p.grad().begin(), p.grad().end());
          for (const auto& g : grads)
            for (double x : g)
              require(std::isfinite(x), ErrorKind::kDivergence, "non-finite gradient");
          adam_step(trainable, grads, adam);
          model.clamp_logit_scale();
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerate && e.kind() != ErrorKind::kDivergence) throw;
        fail(ErrorKind::kDivergence, "training diverged at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.examples = seen;
    rec.mean_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.retrieval_top1 = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    result.report.epochs.push_back(rec);

    if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 &&
        epoch % config.checkpoint_every == 0 && epoch != config.epochs) {
      save_checkpoint(model, config.checkpoint_dir / ("epoch_" + std::to_string(epoch)));
    }
  }
  if (!config.checkpoint_dir.empty()) {
    save_checkpoint(model, config.checkpoint_dir);
    result.report.final_checkpoint = config.checkpoint_dir.string();
  }
  result.report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Top-1 in-batch retrieval of the trained model over `trials`, averaged over
// `rounds` random batchings with one text drawn per trial. No parameters move.
inline double evaluate_retrieval(const std::vector<const TrialRecord*>& trials,
                                 const FusionModel& model, std::size_t batch_size,
                                 std::size_t rounds, std::uint64_t seed) {
  require(batch_size >= 2, ErrorKind::kConfiguration, "batch_size must be at least 2");
  require(trials.size() >= 2, ErrorKind::kConfiguration, "need at least 2 trials");
  const std::size_t d = model.config().d_z;
  std::vector<std::vector<double>> reps;
  for (const auto* t : trials) reps.push_back(represent(*t, model));
  Rng rng = SeedSeq(seed).mix("retrieval").rng();
  std::vector<std::size_t> order(trials.size());
  std::size_t hits = 0, seen = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> text(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Tensor& pool = trials[order[i]]->text_pool->embeddings;
      const auto row = pool.values().subspan(uniform_index(rng, pool.rows()) * d, d);
      const auto unit = normalized_row(row);
      text[i].assign(unit.values().begin(), unit.values().end());
    }
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      if (end - begin < 2) break;
      for (std::size_t i = begin; i < end; ++i) {
        std::size_t best = begin;
        double best_v = -std::numeric_limits<double>::infinity();
        for (std::size_t j = begin; j < end; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += reps[order[i]][k] * text[j][k];
          if (dot > best_v) best_v = dot, best = j;
        }
        hits += trials[order[best]]->object_id == trials[order[i]]->object_id;
        ++seen;
      }
    }
  }
  return seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
}

}  // namespace mosaic
