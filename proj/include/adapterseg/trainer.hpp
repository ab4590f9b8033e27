#ifndef ADAPTERSEG_TRAINER_HPP
#define ADAPTERSEG_TRAINER_HPP

#include <map>
#include <string>
#include <vector>

#include "adapterseg/checkpoint.hpp"
#include "adapterseg/data.hpp"
#include "adapterseg/losses.hpp"
#include "adapterseg/model.hpp"

namespace adapterseg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss went non-finite; `step` is the offending optimizer step.
struct NumericError : std::runtime_error {
  std::int64_t step;
  NumericError(std::int64_t s, const std::string& msg)
      : std::runtime_error(msg), step(s) {}
};

struct TrainConfig {
  TaskKind task = TaskKind::kCod;
  double lr0 = 2e-4;
  std::int64_t batch_size = 2;
  std::int64_t epochs = 0;  // 0 -> task default: cod/shadow 29, polyp/cell 100
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  double hfc_ratio = 0.25;
  std::int64_t checkpoint_interval = 0;  // steps between checkpoints; 0 = final only
  double grad_clip = 0.0;                // global L2 clip; 0 = off
  bool f64_checkpoints = false;          // gradient-test mode stores doubles
  std::int64_t max_steps = 0;            // truncate the run (test hook); 0 = off
  bool dry_run = false;                  // validate everything, run 0 steps
  std::string checkpoint_dir = ".";

  std::int64_t effective_epochs() const;
  void validate() const;
};

struct TrainLogRecord {
  std::int64_t step = 0;  // 0-based step index
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> terms;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<TrainLogRecord> history;
  std::int64_t steps_run = 0;
  std::int64_t total_steps = 0;
};

// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0);

// Runs the frozen-encoder training recipe: guidance extraction, adapter
// forward, prompted encode, decode, task loss, AdamW on the trainable set
// with a per-step cosine schedule. Emits the final checkpoint plus
// intermediate ones every checkpoint_interval steps, and a line-oriented
// training log next to it.
TrainResult train(Model& model, const TrainConfig& cfg, const DatasetManifest& manifest);

// Continues a run from a stored checkpoint against the same dataset. The
// config snapshot and encoder hash inside the checkpoint are authoritative;
// mismatches are rejected before any step runs.
TrainResult resume(const std::string& checkpoint_path, const DatasetManifest& manifest,
                   const std::string& checkpoint_dir = "");

// Rebuilds a model (architecture + every parameter) from a checkpoint.
struct RestoredModel {
  std::unique_ptr<Model> model;
  TrainConfig train_config;
  std::int64_t step = 0;
  std::string dataset_id;
  std::vector<TrainLogRecord> history;
  CheckpointFile file;
};
RestoredModel restore_model(const std::string& checkpoint_path);

// Serializes the full training state; used by train() and tests.
void save_train_checkpoint(const std::string& path, Model& model, const TrainConfig& cfg,
                           const AdamW& optimizer, std::int64_t step,
                           std::int64_t total_steps, const std::string& dataset_id,
                           const std::vector<TrainLogRecord>& history);

}  // namespace adapterseg

#endif  // ADAPTERSEG_TRAINER_HPP
