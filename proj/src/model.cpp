#include "adapterseg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.encoder.validate();
  if (cfg_.prompt_dim == 0) cfg_.prompt_dim = cfg_.encoder.stage_widths[0];
  if (cfg_.bottleneck_dim < 1) throw std::invalid_argument("Model: bottleneck_dim < 1");

  encoder_ = std::make_unique<Encoder>(cfg_.encoder, seed);
  decoder_ = std::make_unique<Decoder>(cfg_.encoder, cfg_.decoder_fuse_dim, seed + 1);

  const std::int64_t guidance_dim = cfg_.encoder.stage_widths[0];
  std::mt19937_64 rng(seed + 2);
  for (std::int64_t s = 0; s < cfg_.encoder.num_stages; ++s) {
    AdapterStage a(static_cast<int>(s), guidance_dim, cfg_.bottleneck_dim);
    a.mlp_tune.init_uniform_fan_in(rng);
    adapters_.push_back(std::move(a));
  }
  shared_ = SharedUpProjection(cfg_.bottleneck_dim, cfg_.prompt_dim, cfg_.encoder.stage_widths);
  // Zero-initialized up-projection: at step 0 every prompt is exactly zero
  // and the prompted encoder matches the frozen baseline bitwise.
  shared_.mlp_up.init_zero();

  gw_ = GuidanceWeights::ones(2);
  gw_.trainable = cfg_.train_guidance_weights;
  if (gw_.trainable) {
    gw_params_.emplace_back("guidance.w0", Tensor::scalar(1.0));
    gw_params_.emplace_back("guidance.w1", Tensor::scalar(1.0));
  }
}

GuidanceTensor Model::guidance_base(const ImageTensor& image) const {
  const Linear& proj = encoder_->patch_projection();
  const std::int64_t patch = cfg_.encoder.patch_size;
  ImageTensor hfc = extract_hfc(image, cfg_.hfc_ratio);
  GuidanceComponent f_hfc = compute_patch_embedding(hfc, patch, proj, GuidanceKind::kHfc, 0);
  GuidanceComponent f_pe =
      compute_patch_embedding(image, patch, proj, GuidanceKind::kPatchEmbed, 1);
  return compose_guidance({f_hfc, f_pe}, gw_, /*stage_id=*/0);
}

std::vector<Var> Model::build_prompts(Graph& g, const GuidanceTensor& base) {
  auto pyramid = guidance_pyramid(base, cfg_.encoder.stage_sides());
  std::vector<Var> prompts;
  prompts.reserve(adapters_.size());
  for (std::size_t s = 0; s < adapters_.size(); ++s) {
    Var gvar = g.constant(pyramid[s].data);
    prompts.push_back(adapter_forward(g, gvar, adapters_[s], shared_));
  }
  return prompts;
}

Var Model::forward(Graph& g, const ImageTensor& image, const GuidanceTensor* cached_base) {
  GuidanceTensor base;
  if (gw_.trainable) {
    // Compose on the tape so gradients reach the scalar weights.
    const Linear& proj = encoder_->patch_projection();
    const std::int64_t patch = cfg_.encoder.patch_size;
    ImageTensor hfc = extract_hfc(image, cfg_.hfc_ratio);
    GuidanceComponent f_hfc =
        compute_patch_embedding(hfc, patch, proj, GuidanceKind::kHfc, 0);
    GuidanceComponent f_pe =
        compute_patch_embedding(image, patch, proj, GuidanceKind::kPatchEmbed, 1);
    Var composed = compose_guidance_var(
        g, {g.constant(f_hfc.data), g.constant(f_pe.data)},
        {g.param(gw_params_[0]), g.param(gw_params_[1])});
    // The pyramid pooling runs on-tape as well.
    std::vector<Var> prompts;
    const auto sides = cfg_.encoder.stage_sides();
    for (std::size_t s = 0; s < adapters_.size(); ++s) {
      Var pooled = g.avg_pool_tokens(composed, sides[0], sides[0] / sides[s]);
      prompts.push_back(adapter_forward(g, pooled, adapters_[s], shared_));
    }
    StageFeaturesVar feats = encoder_->encode(g, image, prompts);
    return decoder_->decode(g, feats);
  }
  if (cached_base) {
    base = *cached_base;
  } else {
    base = guidance_base(image);
  }
  std::vector<Var> prompts = build_prompts(g, base);
  StageFeaturesVar feats = encoder_->encode(g, image, prompts);
  return decoder_->decode(g, feats);
}

MaskLogits Model::predict(const ImageTensor& image) {
  Graph g;
  Var logits = forward(g, image);
  const std::int64_t res = cfg_.encoder.input_resolution;
  Tensor out({1, res, res},
             std::vector<double>(logits.val().data(),
                                 logits.val().data() + logits.val().size()));
  return MaskLogits{std::move(out)};
}

Tensor Model::predict_probabilities(const ImageTensor& image) {
  MaskLogits logits = predict(image);
  const std::int64_t res = cfg_.encoder.input_resolution;
  Tensor probs = Tensor::matrix(res, res);
  for (std::int64_t i = 0; i < probs.size(); ++i)
    probs[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
  return probs;
}

std::vector<Parameter*> Model::trainable() {
  std::vector<Parameter*> out = trainable_parameters(adapters_, shared_, *decoder_);
  for (Parameter& p : gw_params_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> Model::all_parameters() {
  std::vector<Parameter*> out;
  encoder_->collect_parameters(out);
  for (AdapterStage& a : adapters_) a.mlp_tune.collect(out);
  shared_.mlp_up.collect(out);
  decoder_->collect_parameters(out);
  for (Parameter& p : gw_params_) out.push_back(&p);
  return out;
}

}  // namespace adapterseg
