#include <doctest.h>

#include <random>

#include "adapterseg/model.hpp"
#include "gradcheck.hpp"

using namespace adapterseg;
using testing::finite_difference_grad;
using testing::grad_rel_error;
using testing::random_tensor;

namespace {

ImageTensor random_image(const EncoderConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ImageTensor{
      random_tensor({3, cfg.input_resolution, cfg.input_resolution}, rng, 0.0, 1.0)};
}

EncoderConfig mini_config() {
  EncoderConfig cfg;
  cfg.num_stages = 2;
  cfg.blocks_per_stage = {1, 1};
  cfg.stage_widths = {4, 8};
  cfg.patch_size = 4;
  cfg.input_resolution = 8;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

}  // namespace

TEST_CASE("toy config produces the expected token grids") {
  EncoderConfig cfg = EncoderConfig::toy();
  cfg.validate();
  CHECK(cfg.stage_side(0) == 16);
  CHECK(cfg.stage_side(1) == 8);
  CHECK(cfg.stage_side(2) == 4);
  CHECK(cfg.stage_side(3) == 2);

  Encoder enc(cfg, 42);
  ImageTensor img = random_image(cfg, 1);
  StageFeatures feats = enc.encode_plain(img);
  REQUIRE(feats.stages.size() == 4);
  CHECK(feats.stages[0].rows() == 256);
  CHECK(feats.stages[0].cols() == 16);
  CHECK(feats.stages[1].rows() == 64);
  CHECK(feats.stages[1].cols() == 32);
  CHECK(feats.stages[2].rows() == 16);
  CHECK(feats.stages[2].cols() == 64);
  CHECK(feats.stages[3].rows() == 4);
  CHECK(feats.stages[3].cols() == 128);
}

TEST_CASE("encode: no prompts equals all-zero prompts bitwise") {
  EncoderConfig cfg = mini_config();
  Encoder enc(cfg, 7);
  ImageTensor img = random_image(cfg, 2);

  Graph g1;
  StageFeaturesVar plain = enc.encode(g1, img, {});

  Graph g2;
  std::vector<Var> zeros;
  for (std::int64_t s = 0; s < cfg.num_stages; ++s)
    zeros.push_back(g2.constant(Tensor::matrix(cfg.stage_tokens(s), cfg.stage_widths[s])));
  StageFeaturesVar prompted = enc.encode(g2, img, zeros);

  for (std::int64_t s = 0; s < cfg.num_stages; ++s) {
    const Tensor& a = plain.stages[s].val();
    const Tensor& b = prompted.stages[s].val();
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("encode rejects bad resolution and prompt counts") {
  EncoderConfig cfg = mini_config();
  Encoder enc(cfg, 7);
  std::mt19937_64 rng(3);
  ImageTensor wrong{random_tensor({3, 16, 16}, rng, 0.0, 1.0)};
  Graph g;
  CHECK_THROWS_AS(enc.encode(g, wrong, {}), std::invalid_argument);

  ImageTensor img = random_image(cfg, 4);
  std::vector<Var> one = {g.constant(Tensor::matrix(cfg.stage_tokens(0), cfg.stage_widths[0]))};
  CHECK_THROWS_AS(enc.encode(g, img, one), std::invalid_argument);
}

TEST_CASE("encode output responds to the image (no constant collapse)") {
  EncoderConfig cfg = mini_config();
  Encoder enc(cfg, 11);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    ImageTensor a{random_tensor({3, 8, 8}, rng, 0.0, 1.0)};
    ImageTensor b{random_tensor({3, 8, 8}, rng, 0.0, 1.0)};
    StageFeatures fa = enc.encode_plain(a);
    StageFeatures fb = enc.encode_plain(b);
    double diff = 0.0;
    for (std::size_t s = 0; s < fa.stages.size(); ++s) {
      Tensor d = fa.stages[s];
      d.array() -= fb.stages[s].array();
      diff = std::max(diff, d.abs_max());
    }
    CHECK(diff > 0.0);
  }
}

TEST_CASE("decoder output shape and determinism") {
  EncoderConfig cfg = EncoderConfig::toy();
  Encoder enc(cfg, 13);
  Decoder dec(cfg, 16, 14);
  ImageTensor img = random_image(cfg, 6);
  StageFeatures feats = enc.encode_plain(img);
  MaskLogits m1 = dec.decode_plain(feats);
  MaskLogits m2 = dec.decode_plain(feats);
  CHECK(m1.data.dim(0) == 1);
  CHECK(m1.data.dim(1) == 64);
  CHECK(m1.data.dim(2) == 64);
  CHECK(m1.data.all_finite());
  for (std::int64_t i = 0; i < m1.data.size(); ++i) CHECK(m1.data[i] == m2.data[i]);
}

TEST_CASE("decoder rejects mismatched features") {
  EncoderConfig cfg = mini_config();
  Decoder dec(cfg, 8, 15);
  Graph g;
  StageFeaturesVar bad;
  bad.stages.push_back(g.constant(Tensor::matrix(4, 4)));
  CHECK_THROWS_AS(dec.decode(g, bad), std::invalid_argument);

  StageFeaturesVar wrong_width;
  wrong_width.stages.push_back(g.constant(Tensor::matrix(4, 4)));
  wrong_width.stages.push_back(g.constant(Tensor::matrix(1, 5)));
  CHECK_THROWS_AS(dec.decode(g, wrong_width), std::invalid_argument);
}

TEST_CASE("decoder gradients match finite differences on the mini config") {
  EncoderConfig cfg = mini_config();
  Decoder dec(cfg, 6, 17);
  std::mt19937_64 rng(19);
  StageFeatures feats;
  feats.stages.push_back(random_tensor({cfg.stage_tokens(0), cfg.stage_widths[0]}, rng));
  feats.stages.push_back(random_tensor({cfg.stage_tokens(1), cfg.stage_widths[1]}, rng));
  Tensor weight_map = random_tensor({cfg.input_resolution * cfg.input_resolution, 1}, rng);

  auto eval = [&]() {
    Graph g;
    StageFeaturesVar v;
    for (const Tensor& t : feats.stages) v.stages.push_back(g.constant(t));
    return g.sum(g.mul_const(dec.decode(g, v), weight_map)).val().item();
  };

  Graph g;
  StageFeaturesVar v;
  std::vector<Var> inputs;
  for (const Tensor& t : feats.stages) {
    Var in = g.input(t);
    inputs.push_back(in);
    v.stages.push_back(in);
  }
  g.backward(g.sum(g.mul_const(dec.decode(g, v), weight_map)));

  for (Parameter* p : dec.parameters()) {
    Tensor numeric = finite_difference_grad(eval, p->value);
    INFO("parameter ", p->name);
    CHECK(grad_rel_error(p->grad, numeric) < 1e-4);
  }
  // Features receive gradient too (end-to-end differentiability).
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    auto evalf = [&]() {
      Graph g2;
      StageFeaturesVar v2;
      for (const Tensor& t : feats.stages) v2.stages.push_back(g2.constant(t));
      return g2.sum(g2.mul_const(dec.decode(g2, v2), weight_map)).val().item();
    };
    Tensor numeric = finite_difference_grad(evalf, feats.stages[s]);
    CHECK(grad_rel_error(g.grad(inputs[s]), numeric) < 1e-4);
  }
}

TEST_CASE("zero-init shared up-projection: prompted encode equals baseline exactly") {
  ModelConfig mc = ModelConfig::toy();
  mc.encoder = mini_config();
  Model model(mc, 123);
  ImageTensor img = random_image(mc.encoder, 8);

  StageFeatures baseline = model.encoder().encode_plain(img);

  Graph g;
  GuidanceTensor base = model.guidance_base(img);
  std::vector<Var> prompts = model.build_prompts(g, base);
  for (const Var& p : prompts) CHECK(p.val().abs_max() == 0.0);
  StageFeaturesVar prompted = model.encoder().encode(g, img, prompts);
  for (std::int64_t s = 0; s < mc.encoder.num_stages; ++s) {
    const Tensor& a = baseline.stages[s];
    const Tensor& b = prompted.stages[s].val();
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("decode(encode) gradient is finite and nonzero for trainable parameters") {
  ModelConfig mc = ModelConfig::toy();
  mc.encoder = mini_config();
  mc.bottleneck_dim = 4;
  mc.decoder_fuse_dim = 6;
  Model model(mc, 321);
  // Perturb the up-projection away from zero so adapter gradients can flow
  // through on the first pass.
  std::mt19937_64 rng(31);
  fill_uniform_fan_in(model.shared_up().mlp_up.weight.value, 4, rng);

  ImageTensor img = random_image(mc.encoder, 9);
  Graph g;
  Var logits = model.forward(g, img);
  g.backward(g.mean(g.mul(logits, logits)));

  bool any_adapter = false, any_decoder = false;
  for (Parameter* p : model.trainable()) {
    CHECK(p->grad.all_finite());
    if (p->name.rfind("adapter.", 0) == 0 && p->grad.abs_max() > 0.0) any_adapter = true;
    if (p->name.rfind("decoder.", 0) == 0 && p->grad.abs_max() > 0.0) any_decoder = true;
  }
  CHECK(any_adapter);
  CHECK(any_decoder);
  // Frozen encoder accumulated nothing.
  for (Parameter* p : model.encoder().parameters()) CHECK(p->grad.abs_max() == 0.0);
}

TEST_CASE("encoder parameter hash is stable and order-sensitive") {
  EncoderConfig cfg = mini_config();
  Encoder a(cfg, 77), b(cfg, 77), c(cfg, 78);
  CHECK(a.parameter_hash() == b.parameter_hash());
  CHECK(a.parameter_hash() != c.parameter_hash());
}
