#ifndef ADAPTERSEG_EVALUATE_HPP
#define ADAPTERSEG_EVALUATE_HPP

#include <functional>

#include "adapterseg/data.hpp"
#include "adapterseg/metrics.hpp"
#include "adapterseg/model.hpp"

namespace adapterseg {

// Maps a sample (already preprocessed to the model's resolution) to a
// probability map; the record is available for bypass predictors that read
// precomputed maps from disk.
using Predictor = std::function<Tensor(const SampleRecord& record, const ImageTensor& image)>;

struct EvalOptions {
  TaskKind task = TaskKind::kCod;
  Split split = Split::kTest;
  std::int64_t model_resolution = 64;
  // Empty -> metrics_for_task(task); "all" may be passed via the CLI.
  std::vector<std::string> metric_keys;
};

// Runs the section-4.1 protocol: deterministic sample order (sorted ids),
// predictions bilinearly resized to each GT's native resolution, per-image
// metrics averaged arithmetically. Samples whose files cannot be read are
// recorded in the exclusion list, not silently dropped.
MetricReport evaluate_dataset(const Predictor& predictor, const DatasetManifest& manifest,
                              const EvalOptions& opts);

// Convenience wrapper running a model end to end.
MetricReport evaluate_dataset(Model& model, const DatasetManifest& manifest,
                              const EvalOptions& opts);

std::vector<std::string> all_metric_keys();

}  // namespace adapterseg

#endif  // ADAPTERSEG_EVALUATE_HPP
