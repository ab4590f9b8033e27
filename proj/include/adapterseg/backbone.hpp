#ifndef ADAPTERSEG_BACKBONE_HPP
#define ADAPTERSEG_BACKBONE_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "adapterseg/guidance.hpp"
#include "adapterseg/nn.hpp"

namespace adapterseg {

// Geometry of the hierarchical multi-stage encoder. The token grid side
// halves between stages; stage s runs at width stage_widths[s].
struct EncoderConfig {
  std::int64_t num_stages = 4;
  std::vector<std::int64_t> blocks_per_stage = {2, 2, 2, 2};
  std::vector<std::int64_t> stage_widths = {16, 32, 64, 128};
  std::int64_t patch_size = 4;
  std::int64_t downsample_factor = 2;
  std::int64_t input_resolution = 64;
  std::int64_t num_heads = 4;
  std::int64_t mlp_ratio = 4;

  // Desk-scale preset used throughout the test suites.
  static EncoderConfig toy();
  // Resolution-1024 preset sized for loading pretrained weights.
  static EncoderConfig full();

  void validate() const;
  std::int64_t stage_side(std::int64_t s) const;
  std::int64_t stage_tokens(std::int64_t s) const {
    return stage_side(s) * stage_side(s);
  }
  std::vector<std::int64_t> stage_sides() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Per-stage encoder activations, one [tokens_s, stage_widths[s]] entry each.
struct StageFeatures {
  std::vector<Tensor> stages;
};

// On-tape variant used while a Graph is alive.
struct StageFeaturesVar {
  std::vector<Var> stages;
};

// Unnormalized mask scores [1, H, W] at input resolution.
struct MaskLogits {
  Tensor data;
};

// Frozen hierarchical encoder: linear patch embedding + learned positional
// embedding, pre-norm transformer blocks per stage, strided 2x2 linear patch
// merging between stages. Parameters never receive gradients.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  // The patch projection doubles as the guidance patch-embedding map.
  const Linear& patch_projection() const { return patch_embed_; }

  // prompts must be empty or hold one [tokens_s, width_s] entry per stage;
  // each prompt is added at the input of every block of its stage.
  StageFeaturesVar encode(Graph& g, const ImageTensor& image,
                          const std::vector<Var>& prompts);
  StageFeatures encode_plain(const ImageTensor& image);

  void collect_parameters(std::vector<Parameter*>& out);
  std::vector<Parameter*> parameters();
  std::int64_t parameter_count();
  // Stable content hash of all parameter values (frozen-backbone witness).
  std::uint64_t parameter_hash();

 private:
  struct Block {
    Parameter ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Linear qkv, proj, fc1, fc2;
  };

  Var attention(Graph& g, Var x, Block& b, std::int64_t width);
  Var run_block(Graph& g, Var x, Block& b, std::int64_t width);

  EncoderConfig cfg_;
  Linear patch_embed_;
  Parameter pos_embed_;
  std::vector<std::vector<Block>> stages_;
  std::vector<Linear> merges_;  // stage s -> s+1, size num_stages-1
};

// Tunable mask decoder: per-stage lateral projections summed on the finest
// grid after nearest upsampling, then learned 2x2 stride-2 transposed
// convolutions up to input resolution and a 3x3 single-channel head.
class Decoder {
 public:
  Decoder(const EncoderConfig& cfg, std::int64_t fuse_dim, std::uint64_t seed);

  Var decode(Graph& g, const StageFeaturesVar& features);
  MaskLogits decode_plain(const StageFeatures& features);

  void collect_parameters(std::vector<Parameter*>& out);
  std::vector<Parameter*> parameters();
  std::int64_t parameter_count();
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Deconv {
    Parameter weight;  // [4*cin, cout]
    Parameter bias;    // [1, cout]
  };
  struct Conv3 {
    Parameter weight;  // [9*cin, cout]
    Parameter bias;
  };

  EncoderConfig cfg_;
  std::int64_t fuse_dim_;
  std::vector<Linear> laterals_;
  Linear fuse_;
  std::vector<Deconv> ups_;
  Linear mix_;            // 1x1 readout over [deconv out, fused skip]
  Conv3 head_;
  Parameter logit_gain_;  // output scale; keeps the small-lr recipe effective
};

}  // namespace adapterseg

#endif  // ADAPTERSEG_BACKBONE_HPP
