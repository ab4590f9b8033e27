#ifndef ADAPTERSEG_METRICS_HPP
#define ADAPTERSEG_METRICS_HPP

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adapterseg/losses.hpp"
#include "adapterseg/tensor.hpp"

namespace adapterseg {

// MATLAB-style epsilon used by the saliency metric lineage.
constexpr double kMetricEps = 2.220446049250313e-16;

// pred: [H,W] scalars in [0,1]; gt: [H,W] binary. Throws on any violation.
void validate_metric_pair(const Tensor& pred, const Tensor& gt);

double mae_metric(const Tensor& pred, const Tensor& gt);

// Binarizes pred at `threshold` (>=). Both-empty convention -> (1,1).
std::pair<double, double> dice_iou(const Tensor& pred, const Tensor& gt,
                                   double threshold = 0.5);

// Balanced error rate in [0,100]. When gt misses a class, that class's rate
// is 1 by convention and *single_class (if given) is set.
double ber(const Tensor& pred, const Tensor& gt, double threshold = 0.5,
           bool* single_class = nullptr);

// Pixelwise F1 from precision/recall; equals dice on binary inputs.
double f1_semantic(const Tensor& pred, const Tensor& gt, double threshold = 0.5);

// Structure measure: alpha * object similarity + (1-alpha) * 4-quadrant
// region SSIM about the GT centroid. Edge rules: all-zero gt -> 1-mean(pred),
// all-one gt -> mean(pred). Clamped to [0,1].
double s_measure(const Tensor& pred, const Tensor& gt, double alpha = 0.5);

// Enhanced-alignment measure averaged over 256 thresholds t_k = k/255.
// Binarization: pred > 0 at k = 0, pred >= t_k for k >= 1 (the strict rule at
// zero keeps E(gt, gt) = 1 exactly). Edge rules per threshold: all-zero gt ->
// 1 - mean(bin), all-one gt -> mean(bin).
double e_measure_mean(const Tensor& pred, const Tensor& gt);

// Weighted F-beta: errors at foreground smoothed by a 7x7 Gaussian (sigma 5),
// background errors weighted by 2 - exp(ln(0.5)/5 * dist-to-foreground).
// Returns 0 (and sets *empty_gt) when gt has no foreground.
double weighted_f_beta(const Tensor& pred, const Tensor& gt, double beta2 = 1.0,
                       bool* empty_gt = nullptr);

// Exact Euclidean distance transform: for every pixel, squared distance to
// the nearest gt-foreground pixel and that pixel's row-major index (ties
// break toward the smallest index). Indices are -1 when gt is empty.
void distance_to_foreground(const Tensor& gt, Tensor& dist2, std::vector<std::int64_t>& site);

// All section-4.1 metrics for one (model, dataset, task) evaluation.
struct MetricReport {
  std::string dataset_id;
  std::string task;
  std::optional<double> s_alpha, e_phi, f_beta_w, mae, ber, m_dice, m_iou, f1;

  struct PerImage {
    std::string sample_id;
    std::map<std::string, double> values;
  };
  std::vector<PerImage> per_image;
  std::vector<std::string> excluded;  // skipped samples (missing/unreadable mask)

  // Open-question flags surfaced in the serialized report.
  bool e_phi_mean_of_256 = true;
  bool per_image_averaging = true;

  std::optional<double> metric(const std::string& key) const;
  std::string to_kv_text() const;        // flat key = value lines
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  std::string per_image_csv() const;     // sample_id,metric,value
};

// Metric keys populated for each task key.
std::vector<std::string> metrics_for_task(TaskKind task);

// Computes the named metrics for one prediction/gt pair.
std::map<std::string, double> compute_metrics(const std::vector<std::string>& keys,
                                              const Tensor& pred, const Tensor& gt);

// Arithmetic per-image mean aggregation into the report's summary fields.
void aggregate_report(MetricReport& report);

}  // namespace adapterseg

#endif  // ADAPTERSEG_METRICS_HPP
