#include "adapterseg/guidance.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace adapterseg {

void validate_image(const ImageTensor& img) {
  if (img.data.ndim() != 3)
    throw std::invalid_argument("image must be [C,H,W], got " + img.data.shape_str());
  const auto c = img.channels();
  if (c != 1 && c != 3)
    throw std::invalid_argument("image must have 1 or 3 channels, got " + std::to_string(c));
  if (img.height() < 1 || img.width() < 1)
    throw std::invalid_argument("image has empty spatial extent");
  if (!img.data.all_finite())
    throw std::invalid_argument("image contains non-finite values");
}

namespace {

// FFTW planning is not thread-safe; executions are serialized with the plans.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Tensor extract_hfc(const Tensor& image, double mask_ratio) {
  if (image.ndim() != 3)
    throw std::invalid_argument("extract_hfc: image must be [C,H,W]");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0))
    throw std::invalid_argument("extract_hfc: mask_ratio must be in [0,1]");
  if (!image.all_finite())
    throw std::invalid_argument("extract_hfc: non-finite input");

  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::int64_t side =
      static_cast<std::int64_t>(std::ceil(mask_ratio * static_cast<double>(std::min(H, W))));

  Tensor out(image.shape());
  if (side == 0 && mask_ratio == 0.0) {
    // Empty mask: identity up to FFT roundtrip noise; skip the transform.
    out = image;
    return out;
  }

  // Low-frequency square in center-shifted coordinates.
  const std::int64_t r0 = std::min(std::max<std::int64_t>(H / 2 - side / 2, 0), H - side);
  const std::int64_t c0 = std::min(std::max<std::int64_t>(W / 2 - side / 2, 0), W - side);
  auto in_square = [&](std::int64_t u, std::int64_t v) {
    const std::int64_t su = (u + H / 2) % H;
    const std::int64_t sv = (v + W / 2) % W;
    return su >= r0 && su < r0 + side && sv >= c0 && sv < c0 + side;
  };
  // Completing the mask with conjugate mirrors keeps the masked spectrum
  // Hermitian, so the inverse transform is exactly real and the operator is
  // idempotent.
  auto zeroed = [&](std::int64_t u, std::int64_t v) {
    return in_square(u, v) || in_square((H - u) % H, (W - v) % W);
  };

  std::lock_guard<std::mutex> lock(fftw_mutex());
  const std::int64_t n = H * W;
  fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(n));
  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(n));
  fftw_plan fwd = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), buf, spec,
                                   FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan bwd = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W), spec, buf,
                                   FFTW_BACKWARD, FFTW_ESTIMATE);
  for (std::int64_t ch = 0; ch < C; ++ch) {
    for (std::int64_t i = 0; i < n; ++i) {
      buf[i][0] = image[ch * n + i];
      buf[i][1] = 0.0;
    }
    fftw_execute(fwd);
    for (std::int64_t u = 0; u < H; ++u)
      for (std::int64_t v = 0; v < W; ++v)
        if (zeroed(u, v)) {
          spec[u * W + v][0] = 0.0;
          spec[u * W + v][1] = 0.0;
        }
    fftw_execute(bwd);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) out[ch * n + i] = buf[i][0] * scale;
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(bwd);
  fftw_free(buf);
  fftw_free(spec);
  return out;
}

ImageTensor extract_hfc(const ImageTensor& image, double mask_ratio) {
  validate_image(image);
  return ImageTensor{extract_hfc(image.data, mask_ratio)};
}

Tensor patchify(const Tensor& image, std::int64_t patch_size) {
  if (image.ndim() != 3)
    throw std::invalid_argument("patchify: image must be [C,H,W]");
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (patch_size < 1 || H % patch_size != 0 || W % patch_size != 0)
    throw std::invalid_argument(
        "patchify: image size " + std::to_string(H) + "x" + std::to_string(W) +
        " not divisible by patch size " + std::to_string(patch_size));
  const std::int64_t gh = H / patch_size, gw = W / patch_size;
  Tensor rows = Tensor::matrix(gh * gw, patch_size * patch_size * C);
  for (std::int64_t pr = 0; pr < gh; ++pr)
    for (std::int64_t pc = 0; pc < gw; ++pc) {
      const std::int64_t r = pr * gw + pc;
      std::int64_t k = 0;
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t py = 0; py < patch_size; ++py)
          for (std::int64_t px = 0; px < patch_size; ++px)
            rows.at(r, k++) = image.at3(c, pr * patch_size + py, pc * patch_size + px);
    }
  return rows;
}

GuidanceComponent compute_patch_embedding(const ImageTensor& image, std::int64_t patch_size,
                                          const Linear& projection, GuidanceKind kind,
                                          int weight_id) {
  validate_image(image);
  Tensor rows = patchify(image.data, patch_size);
  if (rows.cols() != projection.in_dim())
    throw std::invalid_argument("compute_patch_embedding: projection expects " +
                                std::to_string(projection.in_dim()) + " inputs, patches give " +
                                std::to_string(rows.cols()));
  return GuidanceComponent{kind, projection.apply(rows), weight_id};
}

GuidanceTensor compose_guidance(const std::vector<GuidanceComponent>& components,
                                const GuidanceWeights& weights, int stage_id) {
  if (components.empty())
    throw std::invalid_argument("compose_guidance: empty component list");
  if (weights.w.size() != components.size())
    throw std::invalid_argument("compose_guidance: " + std::to_string(weights.w.size()) +
                                " weights for " + std::to_string(components.size()) +
                                " components");
  Tensor acc(components[0].data.shape());
  for (std::size_t j = 0; j < components.size(); ++j) {
    check_same_shape(components[j].data, acc, "compose_guidance");
    acc.array() += weights.w[j] * components[j].data.array();
  }
  if (!acc.all_finite())
    throw std::invalid_argument("compose_guidance: non-finite result");
  return GuidanceTensor{std::move(acc), stage_id};
}

Var compose_guidance_var(Graph& g, const std::vector<Var>& components,
                         const std::vector<Var>& weights) {
  if (components.empty())
    throw std::invalid_argument("compose_guidance_var: empty component list");
  if (weights.size() != components.size())
    throw std::invalid_argument("compose_guidance_var: weight count mismatch");
  Var acc = g.scale_var(components[0], weights[0]);
  for (std::size_t j = 1; j < components.size(); ++j)
    acc = g.add(acc, g.scale_var(components[j], weights[j]));
  return acc;
}

Tensor avg_pool_tokens_plain(const Tensor& x, std::int64_t side, std::int64_t factor) {
  if (x.rows() != side * side)
    throw std::invalid_argument("avg_pool_tokens_plain: token count != side^2");
  if (factor < 1 || side % factor != 0)
    throw std::invalid_argument("avg_pool_tokens_plain: side not divisible by factor");
  if (factor == 1) return x;
  const std::int64_t so = side / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out = Tensor::matrix(so * so, x.cols());
  for (std::int64_t r = 0; r < so; ++r)
    for (std::int64_t q = 0; q < so; ++q) {
      auto row = out.mat().row(r * so + q);
      for (std::int64_t dy = 0; dy < factor; ++dy)
        for (std::int64_t dx = 0; dx < factor; ++dx)
          row += x.mat().row((r * factor + dy) * side + (q * factor + dx));
      row *= inv;
    }
  return out;
}

std::vector<GuidanceTensor> guidance_pyramid(const GuidanceTensor& base,
                                             const std::vector<std::int64_t>& stage_sides) {
  if (stage_sides.empty())
    throw std::invalid_argument("guidance_pyramid: no stages");
  const std::int64_t side0 = stage_sides[0];
  if (base.data.rows() != side0 * side0)
    throw std::invalid_argument("guidance_pyramid: base grid does not match first stage");
  std::vector<GuidanceTensor> out;
  out.reserve(stage_sides.size());
  for (std::size_t s = 0; s < stage_sides.size(); ++s) {
    if (side0 % stage_sides[s] != 0)
      throw std::invalid_argument("guidance_pyramid: stage side must divide the first");
    const std::int64_t factor = side0 / stage_sides[s];
    out.push_back(GuidanceTensor{avg_pool_tokens_plain(base.data, side0, factor),
                                 static_cast<int>(s)});
  }
  return out;
}

}  // namespace adapterseg
