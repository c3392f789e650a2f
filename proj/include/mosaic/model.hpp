#pragma once

// The trainable fusion network: vision pooling, haptic conv encoder,
// multi-head self-attention over modality tokens, MLP projector and a
// learnable logit scale. Also the checkpoint format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mosaic/datamodel.hpp"
#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"
#include "mosaic/random.hpp"

namespace mosaic {

inline const double kMaxLogLogitScale = std::log(100.0);
inline const double kInitLogLogitScale = std::log(1.0 / 0.07);

struct ModelConfig {
  std::size_t d_z = 32;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 0;  // 0 means 2 * d_z
  std::size_t haptic_channels = 7;
  std::vector<std::size_t> conv_channels = {4, 8};  // one entry per conv block
  std::size_t kernel = 3;
  std::size_t min_haptic_length = 8;
  bool use_self_attention = true;
  bool haptic_relu = true;  // off only in linearity probes

  std::size_t hidden() const { return mlp_hidden == 0 ? 2 * d_z : mlp_hidden; }

  void validate() const {
    require(d_z > 0 && heads > 0, ErrorKind::kConfiguration, "d_z and heads must be positive");
    require(d_z % heads == 0, ErrorKind::kConfiguration,
            "d_z " + std::to_string(d_z) + " is not divisible by " + std::to_string(heads) +
                " heads");
    require(!conv_channels.empty(), ErrorKind::kConfiguration,
            "haptic encoder needs at least one conv block");
    require(kernel % 2 == 1, ErrorKind::kConfiguration, "conv kernel size must be odd");
    require(min_haptic_length >= (std::size_t{1} << (conv_channels.size() - 1)),
            ErrorKind::kConfiguration, "min_haptic_length too small for the conv depth");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  std::string group;  // haptic | attention | mlp | scale
  Tensor tensor;
};

class FusionModel {
 public:
  struct ConvBlock {
    Tensor weight;  // cout x cin x k x k
    Tensor bias;    // cout
  };
  struct HapticEncoder {
    std::vector<ConvBlock> blocks;
    Tensor proj_weight;  // channels x d_z
    Tensor proj_bias;    // 1 x d_z
  };
  struct Attention {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // d_z x d_z weights, 1 x d_z biases
  };
  struct Mlp {
    Tensor w1, b1, w2, b2;
  };

  FusionModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng = SeedSeq(seed).mix("model-init").rng();
    const std::size_t d = config_.d_z;
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    auto weight = [&](Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = (2.0 * uniform01(rng) - 1.0) * bound;
      return Tensor::parameter(std::move(shape), std::move(v));
    };
    auto zeros = [](Shape shape) {
      return Tensor::parameter(shape, std::vector<double>(shape_numel(shape), 0.0));
    };

    std::size_t cin = 1;
    for (std::size_t cout : config_.conv_channels) {
      const std::size_t k = config_.kernel;
      haptic_.blocks.push_back({weight({cout, cin, k, k}, cin * k * k), zeros({cout})});
      cin = cout;
    }
    haptic_.proj_weight = weight({cin, d}, cin);
    haptic_.proj_bias = zeros({1, d});

    attention_.wq = weight({d, d}, d);
    attention_.wk = weight({d, d}, d);
    attention_.wv = weight({d, d}, d);
    attention_.wo = weight({d, d}, d);
    attention_.bq = zeros({1, d});
    attention_.bk = zeros({1, d});
    attention_.bv = zeros({1, d});
    attention_.bo = zeros({1, d});

    const std::size_t hidden = config_.hidden();
    mlp_.w1 = weight({3 * d, hidden}, 3 * d);
    mlp_.b1 = zeros({1, hidden});
    mlp_.w2 = weight({hidden, d}, hidden);
    mlp_.b2 = zeros({1, d});

    log_logit_scale_ = Tensor::parameter({}, {kInitLogLogitScale});
  }

  const ModelConfig& config() const { return config_; }
  const HapticEncoder& haptic() const { return haptic_; }
  const Attention& attention() const { return attention_; }
  const Mlp& mlp() const { return mlp_; }
  const Tensor& log_logit_scale() const { return log_logit_scale_; }
  bool use_self_attention() const { return config_.use_self_attention; }

  std::vector<NamedParameter> named_parameters() const {
    std::vector<NamedParameter> out;
    for (std::size_t i = 0; i < haptic_.blocks.size(); ++i) {
      out.push_back({"haptic.conv" + std::to_string(i) + ".weight", "haptic", haptic_.blocks[i].weight});
      out.push_back({"haptic.conv" + std::to_string(i) + ".bias", "haptic", haptic_.blocks[i].bias});
    }
    out.push_back({"haptic.proj.weight", "haptic", haptic_.proj_weight});
    out.push_back({"haptic.proj.bias", "haptic", haptic_.proj_bias});
    const auto& a = attention_;
    for (auto [name, t] : {std::pair{"q", &a.wq}, {"k", &a.wk}, {"v", &a.wv}, {"o", &a.wo}})
      out.push_back({std::string("attention.w") + name, "attention", *t});
    for (auto [name, t] : {std::pair{"q", &a.bq}, {"k", &a.bk}, {"v", &a.bv}, {"o", &a.bo}})
      out.push_back({std::string("attention.b") + name, "attention", *t});
    out.push_back({"mlp.w1", "mlp", mlp_.w1});
    out.push_back({"mlp.b1", "mlp", mlp_.b1});
    out.push_back({"mlp.w2", "mlp", mlp_.w2});
    out.push_back({"mlp.b2", "mlp", mlp_.b2});
    out.push_back({"log_logit_scale", "scale", log_logit_scale_});
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  void clamp_logit_scale() {
    auto v = log_logit_scale_.mutable_values();
    v[0] = std::min(v[0], kMaxLogLogitScale);
  }

 private:
  ModelConfig config_;
  HapticEncoder haptic_;
  Attention attention_;
  Mlp mlp_;
  Tensor log_logit_scale_;
};

// ---------------------------------------------------------------------------
// Forward pieces

// Adaptive average pooling over time: t_v x D_Z -> 1 x D_Z.
inline Tensor pool_vision(Tape& tape, const Tensor& frames) {
  require(frames.defined() && frames.rank() == 2 && frames.rows() >= 1, ErrorKind::kContract,
          "pool_vision: need at least one frame");
  return mean_rows(tape, frames);
}

// The d x t torque matrix is a one-channel image; conv blocks (conv, ReLU,
// 2x time pooling between blocks), global average pooling, linear to D_Z.
inline Tensor encode_haptic(Tape& tape, const Tensor& haptic, const FusionModel& model) {
  const auto& cfg = model.config();
  require(haptic.defined() && haptic.rank() == 2, ErrorKind::kContract,
          "encode_haptic: expected a d x t matrix");
  require(haptic.rows() == cfg.haptic_channels, ErrorKind::kDimension,
          "encode_haptic: expected " + std::to_string(cfg.haptic_channels) + " sensor rows, got " +
              std::to_string(haptic.rows()));
  require(haptic.cols() >= cfg.min_haptic_length, ErrorKind::kContract,
          "encode_haptic: haptic sequence has " + std::to_string(haptic.cols()) +
              " frames; at least " + std::to_string(cfg.min_haptic_length) + " required");
  const std::size_t pad = cfg.kernel / 2;
  Tensor x = reshape(tape, haptic, {1, haptic.rows(), haptic.cols()});
  const auto& blocks = model.haptic().blocks;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i > 0) x = avg_pool_time(tape, x, 2);
    x = conv2d(tape, x, blocks[i].weight, blocks[i].bias, pad, pad);
    if (cfg.haptic_relu) x = relu(tape, x);
  }
  Tensor pooled = channel_mean(tape, x);
  return add_row_bias(tape, matmul(tape, pooled, model.haptic().proj_weight),
                      model.haptic().proj_bias);
}

struct AttentionTrace {
  std::vector<Tensor> weights;  // one L x L row-stochastic matrix per head
};

// Multi-head scaled dot-product self-attention over the rows of `tokens`
// (L x D_Z). No residual path and no normalization layer.
inline Tensor self_attention(Tape& tape, const Tensor& tokens, const FusionModel::Attention& p,
                             std::size_t heads, AttentionTrace* trace = nullptr) {
  const std::size_t d = tokens.cols();
  require(d % heads == 0, ErrorKind::kConfiguration, "d_z not divisible by head count");
  const std::size_t dh = d / heads;
  const Tensor q = add_row_bias(tape, matmul(tape, tokens, p.wq), p.bq);
  const Tensor k = add_row_bias(tape, matmul(tape, tokens, p.wk), p.bk);
  const Tensor v = add_row_bias(tape, matmul(tape, tokens, p.wv), p.bv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice(tape, q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(tape, k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(tape, v, 1, h * dh, (h + 1) * dh);
    const Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    const Tensor weights = softmax(tape, scores, 1);
    if (trace != nullptr) trace->weights.push_back(weights);
    outputs.push_back(matmul(tape, weights, vh));
  }
  const Tensor merged = heads == 1 ? outputs.front() : concat(tape, outputs, 1);
  return add_row_bias(tape, matmul(tape, merged, p.wo), p.bo);
}

inline Tensor mlp_forward(Tape& tape, const Tensor& x, const FusionModel::Mlp& p) {
  const Tensor hidden = relu(tape, add_row_bias(tape, matmul(tape, x, p.w1), p.b1));
  return add_row_bias(tape, matmul(tape, hidden, p.w2), p.b2);
}

// Fuses modality embeddings (each 1 x D_Z) into one unified 1 x D_Z vector.
// Interactive trials give a 3-token sequence (vision, audio, haptic); look
// gives a single vision token. Absent slots are zero-filled before the MLP.
// Without self-attention, look returns the vision embedding untouched.
inline Tensor fuse(Tape& tape, const Tensor& vision, const std::optional<Tensor>& audio,
                   const std::optional<Tensor>& haptic, const FusionModel& model,
                   AttentionTrace* trace = nullptr) {
  const std::size_t d = model.config().d_z;
  require(audio.has_value() == haptic.has_value(), ErrorKind::kContract,
          "fuse: audio and haptic must both be present or both absent");
  auto check_row = [&](const Tensor& t, const char* what) {
    require(t.rank() == 2 && t.rows() == 1 && t.cols() == d, ErrorKind::kDimension,
            std::string("fuse: ") + what + " embedding must be 1 x " + std::to_string(d) +
                ", got " + shape_string(t.shape()));
  };
  check_row(vision, "vision");
  const bool interactive = audio.has_value();
  if (interactive) {
    check_row(*audio, "audio");
    check_row(*haptic, "haptic");
  }
  if (!interactive && !model.use_self_attention()) return vision;

  Tensor tokens = interactive ? concat(tape, {vision, *audio, *haptic}, 0) : vision;
  if (model.use_self_attention()) {
    tokens = self_attention(tape, tokens, model.attention(), model.config().heads, trace);
  }
  std::vector<Tensor> flat;
  for (std::size_t i = 0; i < tokens.rows(); ++i) flat.push_back(slice(tape, tokens, 0, i, i + 1));
  if (!interactive) flat.push_back(Tensor::zeros({1, 2 * d}));
  return mlp_forward(tape, concat(tape, flat, 1), model.mlp());
}

// pool_vision -> encode_haptic -> fuse, then l2-normalized.
inline Tensor unified_representation(Tape& tape, const TrialRecord& trial,
                                     const FusionModel& model) {
  const Tensor v = pool_vision(tape, trial.vision_frames);
  std::optional<Tensor> a, h;
  if (trial.audio.defined()) a = trial.audio;
  if (trial.haptic.defined()) h = encode_haptic(tape, trial.haptic, model);
  return l2_normalize_rows(tape, fuse(tape, v, a, h, model));
}

// Inference-only convenience: returns the normalized representation values.
inline std::vector<double> represent(const TrialRecord& trial, const FusionModel& model) {
  auto tape = Tape::inference();
  const Tensor u = unified_representation(tape, trial, model);
  return {u.values().begin(), u.values().end()};
}

// ---------------------------------------------------------------------------
// Checkpoints: model.json (architecture + parameter table) + params.f32.

inline constexpr int kCheckpointSchemaVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"d_z", c.d_z},
          {"heads", c.heads},
          {"mlp_hidden", c.hidden()},
          {"haptic_channels", c.haptic_channels},
          {"conv_channels", c.conv_channels},
          {"kernel", c.kernel},
          {"min_haptic_length", c.min_haptic_length},
          {"use_self_attention", c.use_self_attention},
          {"haptic_relu", c.haptic_relu}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_z = j.at("d_z").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.haptic_channels = j.at("haptic_channels").get<std::size_t>();
  c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.min_haptic_length = j.at("min_haptic_length").get<std::size_t>();
  c.use_self_attention = j.at("use_self_attention").get<bool>();
  c.haptic_relu = j.at("haptic_relu").get<bool>();
  return c;
}

inline void save_checkpoint(const FusionModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create checkpoint directory '" + dir.string() + "'");
  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  for (const auto& p : model.named_parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", blob.size() / 4}});
    detail::append_tensor(blob, p.tensor);
  }
  nlohmann::json manifest = {{"schema_version", kCheckpointSchemaVersion},
                             {"config", model_config_json(model.config())},
                             {"parameters", params}};
  detail::write_file(dir / "params.f32", blob);
  detail::write_file(dir / "model.json", manifest.dump(1) + "\n");
}

// Copies checkpoint values into `model`; any architecture difference is a
// format error.
inline void load_checkpoint_into(FusionModel& model, const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "checkpoint manifest does not parse: " + std::string(e.what()));
  }
  detail::BlobReader blob{"params", detail::decode_f32(detail::read_file(dir / "params.f32"), "params"), 0};
  try {
    require(manifest.at("schema_version").get<int>() == kCheckpointSchemaVersion,
            ErrorKind::kFormat, "unsupported checkpoint schema version");
    const auto stored = model_config_from_json(manifest.at("config"));
    require(stored.d_z == model.config().d_z, ErrorKind::kFormat,
            "checkpoint d_z " + std::to_string(stored.d_z) + " does not match model d_z " +
                std::to_string(model.config().d_z));
    require(model_config_json(stored) == model_config_json(model.config()), ErrorKind::kFormat,
            "checkpoint architecture " + model_config_json(stored).dump() +
                " does not match model architecture " + model_config_json(model.config()).dump());
    auto params = model.named_parameters();
    const auto& entries = manifest.at("parameters");
    require(entries.size() == params.size(), ErrorKind::kFormat,
            "checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = entries[i];
      require(e.at("name").get<std::string>() == params[i].name &&
                  e.at("shape").get<Shape>() == params[i].tensor.shape(),
              ErrorKind::kFormat,
              "checkpoint parameter '" + e.at("name").get<std::string>() + "' " +
                  shape_string(e.at("shape").get<Shape>()) + " does not match model parameter '" +
                  params[i].name + "' " + shape_string(params[i].tensor.shape()));
      const auto values = blob.take(e.at("offset").get<std::size_t>(), params[i].tensor.numel());
      auto dst = params[i].tensor.mutable_values();
      std::copy(values.begin(), values.end(), dst.begin());
    }
    blob.finish();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

inline FusionModel load_checkpoint(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "model.json"), ErrorKind::kIo,
          "missing checkpoint '" + (dir / "model.json").string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "model.json"));
    FusionModel model(model_config_from_json(manifest.at("config")), 0);
    load_checkpoint_into(model, dir);
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace mosaic
