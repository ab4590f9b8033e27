#include "adapterseg/adapter.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

Tensor channel_resize_matrix(std::int64_t from_dim, std::int64_t to_dim) {
  if (from_dim < 1 || to_dim < 1)
    throw std::invalid_argument("channel_resize_matrix: dims must be positive");
  Tensor m = Tensor::matrix(from_dim, to_dim);
  if (from_dim == to_dim) {
    for (std::int64_t i = 0; i < from_dim; ++i) m.at(i, i) = 1.0;
  } else if (to_dim % from_dim == 0) {
    const std::int64_t k = to_dim / from_dim;
    for (std::int64_t j = 0; j < to_dim; ++j) m.at(j / k, j) = 1.0;
  } else if (from_dim % to_dim == 0) {
    const std::int64_t k = from_dim / to_dim;
    const double inv = 1.0 / static_cast<double>(k);
    for (std::int64_t i = 0; i < from_dim; ++i) m.at(i, i / k) = inv;
  } else {
    for (std::int64_t j = 0; j < to_dim; ++j) {
      const double x = (static_cast<double>(j) + 0.5) * static_cast<double>(from_dim) /
                           static_cast<double>(to_dim) -
                       0.5;
      const std::int64_t i0 = std::max<std::int64_t>(
          0, std::min<std::int64_t>(from_dim - 1, static_cast<std::int64_t>(std::floor(x))));
      const std::int64_t i1 = std::min<std::int64_t>(from_dim - 1, i0 + 1);
      const double frac = std::min(1.0, std::max(0.0, x - static_cast<double>(i0)));
      m.at(i0, j) += 1.0 - frac;
      m.at(i1, j) += frac;
    }
  }
  return m;
}

SharedUpProjection::SharedUpProjection(std::int64_t bottleneck_dim, std::int64_t prompt_dim,
                                       const std::vector<std::int64_t>& stage_widths)
    : mlp_up("adapter.shared_up", bottleneck_dim, prompt_dim) {
  aligners.reserve(stage_widths.size());
  for (std::int64_t w : stage_widths) aligners.push_back(channel_resize_matrix(prompt_dim, w));
}

Var adapter_forward(Graph& g, Var guidance, AdapterStage& stage, SharedUpProjection& shared) {
  if (guidance.val().cols() != stage.mlp_tune.in_dim())
    throw std::invalid_argument("adapter_forward: guidance dim " +
                                std::to_string(guidance.val().cols()) + " != mlp_tune input " +
                                std::to_string(stage.mlp_tune.in_dim()));
  if (stage.stage_id < 0 ||
      static_cast<std::size_t>(stage.stage_id) >= shared.aligners.size())
    throw std::invalid_argument("adapter_forward: stage_id out of range");
  Var h = g.gelu(stage.mlp_tune.forward(g, guidance));
  Var p = shared.mlp_up.forward(g, h);
  const Tensor& aligner = shared.aligners[stage.stage_id];
  if (aligner.rows() != p.val().cols())
    throw std::invalid_argument("adapter_forward: aligner does not match prompt dim");
  return g.matmul(p, g.constant(aligner));
}

Prompt adapter_forward(const GuidanceTensor& guidance, AdapterStage& stage,
                       SharedUpProjection& shared) {
  if (guidance.stage_id != stage.stage_id)
    throw std::invalid_argument("adapter_forward: guidance is for stage " +
                                std::to_string(guidance.stage_id) + ", adapter for " +
                                std::to_string(stage.stage_id));
  Graph g;
  Var out = adapter_forward(g, g.constant(guidance.data), stage, shared);
  return Prompt{out.val(), stage.stage_id};
}

Var inject_prompt(Graph& g, Var features, Var prompt) {
  check_same_shape(features.val(), prompt.val(), "inject_prompt");
  return g.add(features, prompt);
}

Tensor inject_prompt(const Tensor& features, const Prompt& prompt) {
  check_same_shape(features, prompt.data, "inject_prompt");
  Tensor out = features;
  out.array() += prompt.data.array();
  return out;
}

std::vector<Parameter*> trainable_parameters(std::vector<AdapterStage>& adapters,
                                             SharedUpProjection& shared, Decoder& decoder) {
  std::vector<Parameter*> out;
  for (AdapterStage& a : adapters) a.mlp_tune.collect(out);
  shared.mlp_up.collect(out);
  decoder.collect_parameters(out);
  return out;
}

}  // namespace adapterseg
