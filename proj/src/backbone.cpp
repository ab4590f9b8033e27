#include "adapterseg/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full() {
  EncoderConfig cfg;
  cfg.num_stages = 4;
  cfg.blocks_per_stage = {2, 2, 6, 2};
  cfg.stage_widths = {96, 192, 384, 768};
  cfg.patch_size = 16;
  cfg.input_resolution = 1024;
  cfg.num_heads = 4;
  return cfg;
}

void EncoderConfig::validate() const {
  if (num_stages < 1) throw std::invalid_argument("EncoderConfig: num_stages < 1");
  if (static_cast<std::int64_t>(blocks_per_stage.size()) != num_stages ||
      static_cast<std::int64_t>(stage_widths.size()) != num_stages)
    throw std::invalid_argument(
        "EncoderConfig: blocks_per_stage and stage_widths must have num_stages entries");
  if (patch_size < 1 || downsample_factor != 2)
    throw std::invalid_argument("EncoderConfig: patch_size >= 1 and downsample factor 2 required");
  std::int64_t denom = patch_size;
  for (std::int64_t s = 1; s < num_stages; ++s) denom *= downsample_factor;
  if (input_resolution < patch_size || input_resolution % denom != 0)
    throw std::invalid_argument(
        "EncoderConfig: resolution must be divisible by patch_size * downsample^(stages-1)");
  for (std::int64_t s = 0; s < num_stages; ++s) {
    if (stage_widths[s] % num_heads != 0)
      throw std::invalid_argument("EncoderConfig: stage width not divisible by head count");
    if (blocks_per_stage[s] < 1)
      throw std::invalid_argument("EncoderConfig: empty stage");
  }
}

std::int64_t EncoderConfig::stage_side(std::int64_t s) const {
  std::int64_t side = input_resolution / patch_size;
  for (std::int64_t i = 0; i < s; ++i) side /= downsample_factor;
  return side;
}

std::vector<std::int64_t> EncoderConfig::stage_sides() const {
  std::vector<std::int64_t> out(num_stages);
  for (std::int64_t s = 0; s < num_stages; ++s) out[s] = stage_side(s);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

namespace {
Parameter frozen_ones(const std::string& name, std::int64_t n) {
  return Parameter(name, Tensor::full({1, n}, 1.0), /*train=*/false);
}
Parameter frozen_zeros(const std::string& name, std::int64_t n) {
  return Parameter(name, Tensor::matrix(1, n), /*train=*/false);
}
}  // namespace

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::int64_t in_dim = cfg_.patch_size * cfg_.patch_size * 3;

  patch_embed_ = Linear("encoder.patch_embed", in_dim, cfg_.stage_widths[0],
                        /*trainable=*/false);
  patch_embed_.init_uniform_fan_in(rng);

  pos_embed_ = Parameter("encoder.pos_embed",
                         Tensor::matrix(cfg_.stage_tokens(0), cfg_.stage_widths[0]),
                         /*train=*/false);
  fill_uniform_fan_in(pos_embed_.value, cfg_.stage_widths[0], rng);

  for (std::int64_t s = 0; s < cfg_.num_stages; ++s) {
    const std::int64_t w = cfg_.stage_widths[s];
    std::vector<Block> blocks;
    for (std::int64_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
      const std::string prefix =
          "encoder.stage" + std::to_string(s) + ".block" + std::to_string(b);
      Block blk{frozen_ones(prefix + ".ln1.gamma", w), frozen_zeros(prefix + ".ln1.beta", w),
                frozen_ones(prefix + ".ln2.gamma", w), frozen_zeros(prefix + ".ln2.beta", w),
                Linear(prefix + ".attn.qkv", w, 3 * w, false),
                Linear(prefix + ".attn.proj", w, w, false),
                Linear(prefix + ".mlp.fc1", w, cfg_.mlp_ratio * w, false),
                Linear(prefix + ".mlp.fc2", cfg_.mlp_ratio * w, w, false)};
      blk.qkv.init_uniform_fan_in(rng);
      blk.proj.init_uniform_fan_in(rng);
      blk.fc1.init_uniform_fan_in(rng);
      blk.fc2.init_uniform_fan_in(rng);
      blocks.push_back(std::move(blk));
    }
    stages_.push_back(std::move(blocks));
    if (s + 1 < cfg_.num_stages) {
      Linear merge("encoder.merge" + std::to_string(s), 4 * w, cfg_.stage_widths[s + 1],
                   /*trainable=*/false);
      merge.init_uniform_fan_in(rng);
      merges_.push_back(std::move(merge));
    }
  }
}

Var Encoder::attention(Graph& g, Var x, Block& b, std::int64_t width) {
  const std::int64_t heads = cfg_.num_heads;
  const std::int64_t dh = width / heads;
  Var qkv = g.add_row_broadcast(g.matmul(x, g.param(b.qkv.weight)), g.param(b.qkv.bias));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::int64_t h = 0; h < heads; ++h) {
    Var q = g.slice_cols(qkv, h * dh, dh);
    Var k = g.slice_cols(qkv, width + h * dh, dh);
    Var v = g.slice_cols(qkv, 2 * width + h * dh, dh);
    Var logits = g.scale(g.matmul(q, g.transpose(k)), scale);
    Var att = g.softmax_rows(logits);
    head_out.push_back(g.matmul(att, v));
  }
  Var merged = heads == 1 ? head_out[0] : g.concat_cols(head_out);
  return g.add_row_broadcast(g.matmul(merged, g.param(b.proj.weight)), g.param(b.proj.bias));
}

Var Encoder::run_block(Graph& g, Var x, Block& b, std::int64_t width) {
  Var n1 = g.layer_norm_rows(x, g.param(b.ln1_gamma), g.param(b.ln1_beta));
  x = g.add(x, attention(g, n1, b, width));
  Var n2 = g.layer_norm_rows(x, g.param(b.ln2_gamma), g.param(b.ln2_beta));
  Var h = g.gelu(g.add_row_broadcast(g.matmul(n2, g.param(b.fc1.weight)),
                                     g.param(b.fc1.bias)));
  Var m = g.add_row_broadcast(g.matmul(h, g.param(b.fc2.weight)), g.param(b.fc2.bias));
  return g.add(x, m);
}

StageFeaturesVar Encoder::encode(Graph& g, const ImageTensor& image,
                                 const std::vector<Var>& prompts) {
  validate_image(image);
  if (image.channels() != 3)
    throw std::invalid_argument("encode: encoder expects 3-channel input");
  if (image.height() != cfg_.input_resolution || image.width() != cfg_.input_resolution)
    throw std::invalid_argument("encode: image is " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + ", config expects " +
                                std::to_string(cfg_.input_resolution));
  if (!prompts.empty() && static_cast<std::int64_t>(prompts.size()) != cfg_.num_stages)
    throw std::invalid_argument("encode: got " + std::to_string(prompts.size()) +
                                " prompts for " + std::to_string(cfg_.num_stages) + " stages");

  Var x = g.add(g.matmul(g.constant(patchify(image.data, cfg_.patch_size)),
                         g.param(patch_embed_.weight)),
                g.param(pos_embed_));
  x = g.add_row_broadcast(x, g.param(patch_embed_.bias));

  StageFeaturesVar out;
  for (std::int64_t s = 0; s < cfg_.num_stages; ++s) {
    if (!prompts.empty()) {
      const Tensor& pv = prompts[s].val();
      if (pv.rows() != cfg_.stage_tokens(s) || pv.cols() != cfg_.stage_widths[s])
        throw std::invalid_argument("encode: prompt for stage " + std::to_string(s) +
                                    " is " + pv.shape_str());
    }
    for (Block& blk : stages_[s]) {
      Var xin = prompts.empty() ? x : g.add(x, prompts[s]);
      x = run_block(g, xin, blk, cfg_.stage_widths[s]);
    }
    out.stages.push_back(x);
    if (s + 1 < cfg_.num_stages) {
      Var packed = g.space_to_depth2(x, cfg_.stage_side(s));
      x = g.add_row_broadcast(g.matmul(packed, g.param(merges_[s].weight)),
                              g.param(merges_[s].bias));
    }
  }
  return out;
}

StageFeatures Encoder::encode_plain(const ImageTensor& image) {
  Graph g;
  StageFeaturesVar vars = encode(g, image, {});
  StageFeatures out;
  for (Var v : vars.stages) out.stages.push_back(v.val());
  return out;
}

void Encoder::collect_parameters(std::vector<Parameter*>& out) {
  patch_embed_.collect(out);
  out.push_back(&pos_embed_);
  for (auto& blocks : stages_)
    for (auto& b : blocks) {
      out.push_back(&b.ln1_gamma);
      out.push_back(&b.ln1_beta);
      b.qkv.collect(out);
      b.proj.collect(out);
      out.push_back(&b.ln2_gamma);
      out.push_back(&b.ln2_beta);
      b.fc1.collect(out);
      b.fc2.collect(out);
    }
  for (auto& m : merges_) m.collect(out);
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  collect_parameters(out);
  return out;
}

std::int64_t Encoder::parameter_count() {
  std::int64_t n = 0;
  for (Parameter* p : parameters()) n += p->size();
  return n;
}

std::uint64_t Encoder::parameter_hash() {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  auto mix = [&h](const void* data, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (Parameter* p : parameters()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder::Decoder(const EncoderConfig& cfg, std::int64_t fuse_dim, std::uint64_t seed)
    : cfg_(cfg), fuse_dim_(fuse_dim) {
  cfg_.validate();
  if (fuse_dim_ < 1) throw std::invalid_argument("Decoder: fuse_dim < 1");
  std::int64_t p = cfg_.patch_size;
  if ((p & (p - 1)) != 0)
    throw std::invalid_argument("Decoder: patch_size must be a power of two");
  std::mt19937_64 rng(seed);

  for (std::int64_t s = 0; s < cfg_.num_stages; ++s) {
    Linear lat("decoder.lateral" + std::to_string(s), cfg_.stage_widths[s], fuse_dim_);
    lat.init_uniform_fan_in(rng);
    laterals_.push_back(std::move(lat));
  }
  fuse_ = Linear("decoder.fuse", fuse_dim_, fuse_dim_);
  fuse_.init_uniform_fan_in(rng);

  std::int64_t levels = 0;
  while ((1ll << levels) < p) ++levels;
  for (std::int64_t i = 0; i < levels; ++i) {
    Deconv d{Parameter("decoder.up" + std::to_string(i) + ".weight",
                       Tensor::matrix(4 * fuse_dim_, fuse_dim_)),
             Parameter("decoder.up" + std::to_string(i) + ".bias",
                       Tensor::matrix(1, fuse_dim_))};
    // Near-identity taps: the chain starts as a smooth upsampler and
    // training only has to learn the residual detail.
    fill_uniform_fan_in(d.weight.value, 16 * fuse_dim_, rng);
    for (std::int64_t tap = 0; tap < 4; ++tap)
      for (std::int64_t ch = 0; ch < fuse_dim_; ++ch)
        d.weight.value.at(tap * fuse_dim_ + ch, ch) += 1.0;
    ups_.push_back(std::move(d));
  }
  mix_ = Linear("decoder.mix", 2 * fuse_dim_, fuse_dim_);
  mix_.init_uniform_fan_in(rng);
  head_ = Conv3{Parameter("decoder.head.weight", Tensor::matrix(9 * fuse_dim_, 1)),
                Parameter("decoder.head.bias", Tensor::matrix(1, 1))};
  // Zero-initialized head: logits start at exactly zero and the schedule's
  // movement budget goes into fitting rather than undoing random output.
  head_.weight.value.set_zero();
  head_.bias.value.set_zero();
  logit_gain_ = Parameter("decoder.logit_gain", Tensor::scalar(64.0));
}

Var Decoder::decode(Graph& g, const StageFeaturesVar& features) {
  if (static_cast<std::int64_t>(features.stages.size()) != cfg_.num_stages)
    throw std::invalid_argument("decode: feature count does not match config");
  const std::int64_t side0 = cfg_.stage_side(0);
  Var acc;
  for (std::int64_t s = 0; s < cfg_.num_stages; ++s) {
    const Tensor& fv = features.stages[s].val();
    if (fv.rows() != cfg_.stage_tokens(s) || fv.cols() != cfg_.stage_widths[s])
      throw std::invalid_argument("decode: stage " + std::to_string(s) + " features are " +
                                  fv.shape_str() + ", config expects [" +
                                  std::to_string(cfg_.stage_tokens(s)) + ", " +
                                  std::to_string(cfg_.stage_widths[s]) + "]");
    Var lat = laterals_[s].forward(g, features.stages[s]);
    const std::int64_t factor = side0 / cfg_.stage_side(s);
    Var up = g.upsample_nearest_tokens(lat, cfg_.stage_side(s), factor);
    acc = (s == 0) ? up : g.add(acc, up);
  }
  Var fused = fuse_.forward(g, g.gelu(acc));
  Var x = g.gelu(fused);
  std::int64_t side = side0;
  for (auto& d : ups_) {
    x = g.deconv2x2(x, g.param(d.weight), g.param(d.bias), side);
    side *= 2;
    x = g.gelu(x);
  }
  // Patch-level signal reaches the head undamped by the deconv chain.
  Var skip = g.upsample_nearest_tokens(fused, side0, side / side0);
  x = g.gelu(mix_.forward(g, g.concat_cols({x, skip})));
  Var logits = g.conv3x3(x, g.param(head_.weight), g.param(head_.bias), side);
  return g.scale_var(logits, g.param(logit_gain_));
}

MaskLogits Decoder::decode_plain(const StageFeatures& features) {
  Graph g;
  StageFeaturesVar vars;
  for (const Tensor& t : features.stages) vars.stages.push_back(g.constant(t));
  Var logits = decode(g, vars);
  const std::int64_t res = cfg_.input_resolution;
  Tensor out({1, res, res}, std::vector<double>(logits.val().data(),
                                                logits.val().data() + logits.val().size()));
  return MaskLogits{std::move(out)};
}

void Decoder::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& l : laterals_) l.collect(out);
  fuse_.collect(out);
  for (auto& d : ups_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  mix_.collect(out);
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  out.push_back(&logit_gain_);
}

std::vector<Parameter*> Decoder::parameters() {
  std::vector<Parameter*> out;
  collect_parameters(out);
  return out;
}

std::int64_t Decoder::parameter_count() {
  std::int64_t n = 0;
  for (Parameter* p : parameters()) n += p->size();
  return n;
}

}  // namespace adapterseg
