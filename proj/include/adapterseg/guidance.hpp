#ifndef ADAPTERSEG_GUIDANCE_HPP
#define ADAPTERSEG_GUIDANCE_HPP

#include <vector>

#include "adapterseg/graph.hpp"
#include "adapterseg/nn.hpp"
#include "adapterseg/tensor.hpp"

namespace adapterseg {

// [channels, height, width] image with values in [0,1].
struct ImageTensor {
  Tensor data;

  std::int64_t channels() const { return data.dim(0); }
  std::int64_t height() const { return data.dim(1); }
  std::int64_t width() const { return data.dim(2); }
};

// Throws std::invalid_argument if the image is not a finite 1- or 3-channel
// [C,H,W] tensor.
void validate_image(const ImageTensor& img);

enum class GuidanceKind { kHfc, kPatchEmbed, kCustom };

// One guidance signal on a patch grid: [num_patches, guidance_dim].
struct GuidanceComponent {
  GuidanceKind kind = GuidanceKind::kCustom;
  Tensor data;
  int weight_id = 0;
};

// Composed per-stage conditioning input.
struct GuidanceTensor {
  Tensor data;  // [num_patches, guidance_dim]
  int stage_id = 0;
};

// One scalar weight per component; every entry defaults to 1.
struct GuidanceWeights {
  std::vector<double> w;
  bool trainable = false;

  static GuidanceWeights ones(std::size_t n) { return {std::vector<double>(n, 1.0), false}; }
};

// High-frequency components: zeroes a centered low-frequency square of side
// ceil(mask_ratio * min(H, W)) on the center-shifted spectrum of each
// channel and inverts the FFT. The zeroed set is completed to conjugate
// symmetry so the output is exactly real; returns the same shape as the
// input.
Tensor extract_hfc(const Tensor& image, double mask_ratio);
ImageTensor extract_hfc(const ImageTensor& image, double mask_ratio);

// Rearranges non-overlapping patches into rows: [num_patches, patch^2 * C],
// flattened row-major over (channel, py, px). H and W must be divisible by
// patch_size.
Tensor patchify(const Tensor& image, std::int64_t patch_size);

// Linear patch embedding with an explicit projection; the training pipeline
// passes the frozen encoder's own patch-embedding weights here.
GuidanceComponent compute_patch_embedding(const ImageTensor& image, std::int64_t patch_size,
                                          const Linear& projection, GuidanceKind kind,
                                          int weight_id);

// Elementwise weighted sum of the components. Rejects an empty list and any
// shape mismatch.
GuidanceTensor compose_guidance(const std::vector<GuidanceComponent>& components,
                                const GuidanceWeights& weights, int stage_id = 0);

// Differentiable composition: gradients flow to the scalar weight nodes (and
// to the components, when tracked).
Var compose_guidance_var(Graph& g, const std::vector<Var>& components,
                         const std::vector<Var>& weights);

// Resamples stage-0 guidance to every stage's patch grid by average pooling
// (stage_sides[0] is the finest grid). Result[i] pairs with stage i.
std::vector<GuidanceTensor> guidance_pyramid(const GuidanceTensor& base,
                                             const std::vector<std::int64_t>& stage_sides);

// Plain (tape-free) average pooling of a square token grid.
Tensor avg_pool_tokens_plain(const Tensor& x, std::int64_t side, std::int64_t factor);

}  // namespace adapterseg

#endif  // ADAPTERSEG_GUIDANCE_HPP
