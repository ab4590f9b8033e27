#ifndef ADAPTERSEG_ADAPTER_HPP
#define ADAPTERSEG_ADAPTER_HPP

#include <vector>

#include "adapterseg/backbone.hpp"
#include "adapterseg/guidance.hpp"
#include "adapterseg/nn.hpp"

namespace adapterseg {

// Per-stage tunable bottleneck projection; weights are shared by every
// transformer block of the stage.
struct AdapterStage {
  int stage_id = 0;
  Linear mlp_tune;  // guidance_dim -> bottleneck_dim

  AdapterStage() = default;
  AdapterStage(int id, std::int64_t guidance_dim, std::int64_t bottleneck_dim)
      : stage_id(id),
        mlp_tune("adapter.stage" + std::to_string(id) + ".tune", guidance_dim,
                 bottleneck_dim) {}
};

// Single up-projection shared across all stages, plus fixed per-stage
// aligners that resize the common prompt width to each stage's token width.
struct SharedUpProjection {
  Linear mlp_up;                  // bottleneck_dim -> prompt_dim
  std::vector<Tensor> aligners;   // per stage [prompt_dim, stage_width], not trainable

  SharedUpProjection() = default;
  SharedUpProjection(std::int64_t bottleneck_dim, std::int64_t prompt_dim,
                     const std::vector<std::int64_t>& stage_widths);
};

// Conditioning prompt for one stage: [tokens_at_stage, stage_width].
struct Prompt {
  Tensor data;
  int stage_id = 0;
};

// Deterministic channel-resampling matrix [from_dim, to_dim]: identity when
// equal, replication on integer upsizing, block averaging on integer
// downsizing, linear interpolation otherwise.
Tensor channel_resize_matrix(std::int64_t from_dim, std::int64_t to_dim);

// P = aligner(MLP_up(GELU(MLP_tune(F)))), differentiable end to end.
Var adapter_forward(Graph& g, Var guidance, AdapterStage& stage, SharedUpProjection& shared);
Prompt adapter_forward(const GuidanceTensor& guidance, AdapterStage& stage,
                       SharedUpProjection& shared);

// Additive prompt injection; applied at every block input inside the stage.
Var inject_prompt(Graph& g, Var features, Var prompt);
Tensor inject_prompt(const Tensor& features, const Prompt& prompt);

// Exactly the adapter + shared-projection + decoder parameters, in a stable
// order; the frozen encoder is never included.
std::vector<Parameter*> trainable_parameters(std::vector<AdapterStage>& adapters,
                                             SharedUpProjection& shared, Decoder& decoder);

}  // namespace adapterseg

#endif  // ADAPTERSEG_ADAPTER_HPP
