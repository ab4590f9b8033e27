#include "adapterseg/evaluate.hpp"

#include <algorithm>

namespace adapterseg {

std::vector<std::string> all_metric_keys() {
  return {"s_alpha", "e_phi", "f_beta_w", "mae", "ber", "m_dice", "m_iou", "f1"};
}

MetricReport evaluate_dataset(const Predictor& predictor, const DatasetManifest& manifest,
                              const EvalOptions& opts) {
  auto records = manifest.split_records(opts.split);
  if (records.empty())
    throw DataError("evaluate: no samples in the " + split_to_string(opts.split) +
                    " split of " + manifest.dataset_id);
  std::sort(records.begin(), records.end(),
            [](const SampleRecord* a, const SampleRecord* b) {
              return a->sample_id < b->sample_id;
            });

  const std::vector<std::string> keys =
      opts.metric_keys.empty() ? metrics_for_task(opts.task) : opts.metric_keys;
  const bool instance_labels = opts.task == TaskKind::kCell;

  MetricReport report;
  report.dataset_id = manifest.dataset_id;
  report.task = task_to_string(opts.task);

  for (const SampleRecord* rec : records) {
    Tensor gt;
    ImageTensor image;
    try {
      gt = load_mask_native(rec->mask_path, instance_labels);
      image = preprocess_image(rec->image_path, opts.model_resolution);
    } catch (const DataError& e) {
      report.excluded.push_back(rec->sample_id + ": " + e.what());
      continue;
    }
    Tensor pred = predictor(*rec, image);
    Tensor resized = resize_bilinear_map(pred, gt.rows(), gt.cols());
    // Bilinear interpolation of values in [0,1] stays in [0,1] up to fp noise.
    for (std::int64_t i = 0; i < resized.size(); ++i)
      resized[i] = std::min(1.0, std::max(0.0, resized[i]));
    report.per_image.push_back({rec->sample_id, compute_metrics(keys, resized, gt)});
  }
  aggregate_report(report);
  return report;
}

MetricReport evaluate_dataset(Model& model, const DatasetManifest& manifest,
                              const EvalOptions& opts) {
  EvalOptions o = opts;
  o.model_resolution = model.config().encoder.input_resolution;
  Predictor p = [&model](const SampleRecord&, const ImageTensor& image) {
    return model.predict_probabilities(image);
  };
  return evaluate_dataset(p, manifest, o);
}

}  // namespace adapterseg
