#include <cmath>

#include <gtest/gtest.h>

#include "mosaic/model.hpp"
#include "support.hpp"

using namespace mosaic;
using mosaic::testing::check_gradients;
using mosaic::testing::kind_of;
using mosaic::testing::project;
using mosaic::testing::random_values;
using mosaic::testing::TempDir;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

ModelConfig small_config(bool sa = true) {
  ModelConfig c;
  c.d_z = 8;
  c.heads = 2;
  c.conv_channels = {2, 3};
  c.use_self_attention = sa;
  return c;
}

void set(Tensor t, const std::vector<double>& v) {
  auto dst = t.mutable_values();
  ASSERT_EQ(dst.size(), v.size());
  std::copy(v.begin(), v.end(), dst.begin());
}

Tensor random_row(Rng& rng, std::size_t d) { return Tensor::row(random_values(rng, d)); }

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Mat affine(const Mat& x, const Tensor& w, const Tensor& b) {
  Mat y(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b.values()[j];
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w.at(k, j);
      y[i][j] = s;
    }
  return y;
}

// Plain-loop reference for attention followed by the MLP.
std::vector<double> reference_fuse(const Mat& tokens, const FusionModel& m) {
  const auto& a = m.attention();
  const std::size_t d = m.config().d_z, heads = m.config().heads, dh = d / heads, n = tokens.size();
  Mat x = tokens;
  if (m.use_self_attention()) {
    const Mat q = affine(tokens, a.wq, a.bq), k = affine(tokens, a.wk, a.bk), v = affine(tokens, a.wv, a.bv);
    Mat merged(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) merged[i][c] += s[j] / z * v[j][c];
      }
    x = affine(merged, a.wo, a.bo);
  }
  Mat flat(1);
  for (const auto& row : x) flat[0].insert(flat[0].end(), row.begin(), row.end());
  flat[0].resize(3 * d, 0.0);
  const auto& p = m.mlp();
  Mat hidden = affine(flat, p.w1, p.b1);
  for (double& e : hidden[0]) e = std::max(e, 0.0);
  return affine(hidden, p.w2, p.b2)[0];
}

}  // namespace

TEST(PoolVision, AveragesFrames) {
  auto tape = Tape::inference();
  EXPECT_EQ(vals(pool_vision(tape, Tensor::matrix(2, 3, {1, 2, 3, 3, 4, 5}))), (std::vector<double>{2, 3, 4}));
  EXPECT_EQ(vals(pool_vision(tape, Tensor::matrix(1, 2, {7, -1}))), (std::vector<double>{7, -1}));
}

TEST(PoolVision, NoFramesIsContractError) {
  auto tape = Tape::inference();
  EXPECT_EQ(kind_of([&] { pool_vision(tape, Tensor{}); }), ErrorKind::kContract);
}

TEST(HapticEncoder, ZeroInputWithZeroBiasesGivesZero) {
  const FusionModel m(small_config(), 1);
  auto tape = Tape::inference();
  const auto out = vals(encode_haptic(tape, Tensor::zeros({7, 20}), m));
  ASSERT_EQ(out.size(), 8u);
  for (double x : out) EXPECT_EQ(x, 0.0);
}

TEST(HapticEncoder, LinearWithoutActivation) {
  ModelConfig c = small_config();
  c.haptic_relu = false;
  const FusionModel m(c, 2);
  Rng rng(3);
  const auto x = random_values(rng, 7 * 24), y = random_values(rng, 7 * 24);
  std::vector<double> mix(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * y[i];
  auto tape = Tape::inference();
  const auto fx = vals(encode_haptic(tape, Tensor::matrix(7, 24, x), m));
  const auto fy = vals(encode_haptic(tape, Tensor::matrix(7, 24, y), m));
  const auto fm = vals(encode_haptic(tape, Tensor::matrix(7, 24, mix), m));
  for (std::size_t i = 0; i < fx.size(); ++i) EXPECT_NEAR(fm[i], 2.0 * fx[i] - 0.5 * fy[i], 1e-12);
}

TEST(HapticEncoder, GradientsMatchFiniteDifferences) {
  const FusionModel m(small_config(), 4);
  Rng rng(5);
  const Tensor h = Tensor::matrix(7, 12, random_values(rng, 7 * 12));
  std::vector<Tensor> params;
  for (const auto& p : m.named_parameters())
    if (p.group == "haptic") params.push_back(p.tensor);
  const auto r = check_gradients([&](Tape& t) { return project(t, encode_haptic(t, h, m)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(HapticEncoder, ShortSequenceIsContractError) {
  const FusionModel m(small_config(), 1);
  auto tape = Tape::inference();
  EXPECT_EQ(kind_of([&] { encode_haptic(tape, Tensor::zeros({7, 7}), m); }), ErrorKind::kContract);
  EXPECT_EQ(kind_of([&] { encode_haptic(tape, Tensor::zeros({6, 20}), m); }), ErrorKind::kDimension);
}

TEST(Fuse, LookWithoutAttentionIsIdentity) {
  const FusionModel m(small_config(false), 1);
  Rng rng(6);
  const Tensor v = random_row(rng, 8);
  auto tape = Tape::inference();
  EXPECT_EQ(vals(fuse(tape, v, std::nullopt, std::nullopt, m)), vals(v));
}

TEST(Fuse, IdentityAttentionOverEqualTokensReturnsToken) {
  ModelConfig c = small_config();
  c.heads = 1;
  const FusionModel m(c, 1);
  std::vector<double> eye(64, 0.0);
  for (std::size_t i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  for (auto w : {m.attention().wq, m.attention().wk, m.attention().wv, m.attention().wo}) set(w, eye);
  Rng rng(7);
  const Tensor x = random_row(rng, 8);
  AttentionTrace trace;
  auto tape = Tape::inference();
  const Tensor out = self_attention(tape, concat(tape, {x, x, x}, 0), m.attention(), 1, &trace);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(i, j), x.at(0, j), 1e-15);
  for (double w : trace.weights[0].values()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(Fuse, MatchesPlainLoopReference) {
  Rng rng(8);
  for (bool sa : {true, false}) {
    const FusionModel m(small_config(sa), 9);
    // Nonzero biases so they are exercised.
    for (const auto& p : m.named_parameters())
      if (p.name.find(".b") != std::string::npos && p.group != "haptic")
        set(p.tensor, random_values(rng, p.tensor.numel()));
    const Tensor v = random_row(rng, 8), a = random_row(rng, 8), h = random_row(rng, 8);
    auto tape = Tape::inference();
    const auto got = vals(fuse(tape, v, a, h, m));
    const auto want = reference_fuse(to_mat(concat(tape, {v, a, h}, 0)), m);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    if (sa) {
      const auto look = vals(fuse(tape, v, std::nullopt, std::nullopt, m));
      const auto look_want = reference_fuse(to_mat(v), m);
      for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(look[i], look_want[i], 1e-12);
    }
  }
}

TEST(Fuse, AblationIsConcatThenMlp) {
  const FusionModel m(small_config(false), 10);
  Rng rng(11);
  const Tensor v = random_row(rng, 8), a = random_row(rng, 8), h = random_row(rng, 8);
  auto tape = Tape::inference();
  EXPECT_EQ(vals(fuse(tape, v, a, h, m)), vals(mlp_forward(tape, concat(tape, {v, a, h}, 1), m.mlp())));
}

TEST(Fuse, HalfInteractiveIsContractError) {
  const FusionModel m(small_config(), 1);
  Rng rng(12);
  const Tensor v = random_row(rng, 8), a = random_row(rng, 8);
  auto tape = Tape::inference();
  EXPECT_EQ(kind_of([&] { fuse(tape, v, a, std::nullopt, m); }), ErrorKind::kContract);
  EXPECT_EQ(kind_of([&] { fuse(tape, v, std::nullopt, a, m); }), ErrorKind::kContract);
  EXPECT_EQ(kind_of([&] { fuse(tape, random_row(rng, 5), std::nullopt, std::nullopt, m); }), ErrorKind::kDimension);
}

TEST(Attention, WeightsAreRowStochastic) {
  const FusionModel m(ModelConfig{}, 13);
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    AttentionTrace trace;
    auto tape = Tape::inference();
    fuse(tape, random_row(rng, 32), random_row(rng, 32), random_row(rng, 32), m, &trace);
    ASSERT_EQ(trace.weights.size(), 4u);
    for (const auto& w : trace.weights) {
      ASSERT_EQ(w.shape(), (Shape{3, 3}));
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          EXPECT_GE(w.at(i, j), 0.0);
          s += w.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Representation, UnitNorm) {
  const FusionModel m(ModelConfig{}, 15);
  Rng rng(16);
  for (int t = 0; t < 10; ++t) {
    TrialRecord trial;
    trial.vision_frames = Tensor::matrix(4, 32, random_values(rng, 4 * 32));
    if (t % 2 == 1) {
      trial.audio = random_row(rng, 32);
      trial.haptic = Tensor::matrix(7, 30, random_values(rng, 7 * 30));
    }
    double ss = 0.0;
    for (double x : represent(trial, m)) ss += x * x;
    EXPECT_NEAR(ss, 1.0, 1e-12);
  }
}

TEST(LogitScale, InitialisedAndClamped) {
  FusionModel m(ModelConfig{}, 1);
  EXPECT_DOUBLE_EQ(m.log_logit_scale().item(), std::log(1.0 / 0.07));
  set(m.log_logit_scale(), {10.0});
  m.clamp_logit_scale();
  EXPECT_DOUBLE_EQ(std::exp(m.log_logit_scale().item()), 100.0);
  set(m.log_logit_scale(), {1.0});
  m.clamp_logit_scale();
  EXPECT_EQ(m.log_logit_scale().item(), 1.0);
}

TEST(Model, ParameterGroupsAndSeeding) {
  const FusionModel a(ModelConfig{}, 3), b(ModelConfig{}, 3), c(ModelConfig{}, 4);
  std::map<std::string, int> groups;
  for (const auto& p : a.named_parameters()) ++groups[p.group];
  EXPECT_EQ(groups, (std::map<std::string, int>{{"attention", 8}, {"haptic", 6}, {"mlp", 4}, {"scale", 1}}));
  EXPECT_EQ(vals(a.mlp().w1), vals(b.mlp().w1));
  EXPECT_NE(vals(a.mlp().w1), vals(c.mlp().w1));
  EXPECT_EQ(a.mlp().w1.shape(), (Shape{96, 64}));
}

TEST(Model, InvalidConfigRejected) {
  ModelConfig c;
  c.heads = 5;
  EXPECT_EQ(kind_of([&] { FusionModel(c, 1); }), ErrorKind::kConfiguration);
}

TEST(Checkpoint, RoundTripsAtStoredPrecision) {
  const FusionModel m(small_config(), 17);
  TempDir dir("ckpt");
  save_checkpoint(m, dir.path());
  const FusionModel back = load_checkpoint(dir.path());
  EXPECT_EQ(model_config_json(back.config()), model_config_json(m.config()));
  const auto pa = m.named_parameters(), pb = back.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k)
      EXPECT_EQ(pb[i].tensor.values()[k], static_cast<double>(static_cast<float>(pa[i].tensor.values()[k])))
          << pa[i].name;
  // Re-saving a loaded checkpoint is lossless.
  save_checkpoint(back, dir.path() / "again");
  EXPECT_EQ(detail::read_file(dir.path() / "params.f32"), detail::read_file(dir.path() / "again" / "params.f32"));
}

TEST(Checkpoint, ArchitectureMismatchIsFormatError) {
  TempDir dir("ckpt_mismatch");
  save_checkpoint(FusionModel(small_config(), 1), dir.path());
  FusionModel wide(ModelConfig{}, 1);
  EXPECT_EQ(kind_of([&] { load_checkpoint_into(wide, dir.path()); }), ErrorKind::kFormat);
  FusionModel no_sa(small_config(false), 1);
  EXPECT_EQ(kind_of([&] { load_checkpoint_into(no_sa, dir.path()); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir.path() / "missing"); }), ErrorKind::kIo);
}
