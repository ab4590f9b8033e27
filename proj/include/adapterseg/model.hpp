#ifndef ADAPTERSEG_MODEL_HPP
#define ADAPTERSEG_MODEL_HPP

#include <memory>
#include <optional>

#include "adapterseg/adapter.hpp"
#include "adapterseg/backbone.hpp"

namespace adapterseg {

struct ModelConfig {
  EncoderConfig encoder;
  std::int64_t bottleneck_dim = 32;
  std::int64_t prompt_dim = 0;  // 0 -> first stage width
  std::int64_t decoder_fuse_dim = 48;
  double hfc_ratio = 0.25;
  bool train_guidance_weights = false;

  static ModelConfig toy() { return ModelConfig{EncoderConfig::toy()}; }
};

// Full prompted segmenter: frozen encoder, per-stage adapters with the
// shared up-projection, tunable decoder, and the HFC + patch-embedding
// guidance pipeline in front.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return *encoder_; }
  Decoder& decoder() { return *decoder_; }
  std::vector<AdapterStage>& adapters() { return adapters_; }
  SharedUpProjection& shared_up() { return shared_; }
  GuidanceWeights& guidance_weights() { return gw_; }
  std::vector<Parameter>& guidance_weight_params() { return gw_params_; }

  // F_hfc and F_pe embedded on the finest patch grid and composed; constant
  // for a fixed image while the encoder stays frozen and the weights are
  // not trainable, so callers may cache it per sample.
  GuidanceTensor guidance_base(const ImageTensor& image) const;

  // Builds prompts for every stage on the tape.
  std::vector<Var> build_prompts(Graph& g, const GuidanceTensor& base);

  // guidance -> adapters -> prompted encode -> decode; returns mask logits
  // as a [tokens, 1] node at input resolution.
  Var forward(Graph& g, const ImageTensor& image,
              const GuidanceTensor* cached_base = nullptr);

  // Inference convenience: plain logits at [1, res, res].
  MaskLogits predict(const ImageTensor& image);
  // Sigmoid of predict, flattened to [res, res].
  Tensor predict_probabilities(const ImageTensor& image);

  std::vector<Parameter*> trainable();
  std::vector<Parameter*> all_parameters();

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
  std::vector<AdapterStage> adapters_;
  SharedUpProjection shared_;
  GuidanceWeights gw_;
  std::vector<Parameter> gw_params_;  // used when train_guidance_weights
};

}  // namespace adapterseg

#endif  // ADAPTERSEG_MODEL_HPP
