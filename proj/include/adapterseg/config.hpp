#ifndef ADAPTERSEG_CONFIG_HPP
#define ADAPTERSEG_CONFIG_HPP

#include <map>
#include <string>

#include "adapterseg/model.hpp"
#include "adapterseg/trainer.hpp"

namespace adapterseg {

// Everything a run needs: model geometry plus the training recipe.
struct RunConfig {
  ModelConfig model;   // encoder defaults to the toy preset
  TrainConfig train;

  void validate() const;
};

// Parses a flat `key = value` config file ('#' starts a comment; lists are
// comma-separated). Unknown keys are rejected by name. Keys:
//   task, lr0, batch_size, epochs, weight_decay, seed, resolution, tau,
//   bottleneck_dim, prompt_dim, decoder_fuse_dim, checkpoint_interval,
//   grad_clip, precision (f32|f64), max_steps, num_stages, blocks_per_stage,
//   stage_widths, patch_size, num_heads, mlp_ratio, preset (toy|full),
//   train_guidance_weights, checkpoint_dir
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

// Applies one key=value pair (CLI overrides reuse the same code path).
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

std::string run_config_to_text(const RunConfig& cfg);

}  // namespace adapterseg

#endif  // ADAPTERSEG_CONFIG_HPP
