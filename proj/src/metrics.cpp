#include "adapterseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace adapterseg {

void validate_metric_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.ndim() != 2 || gt.ndim() != 2)
    throw std::invalid_argument("metrics: pred and gt must be [H,W]");
  check_same_shape(pred, gt, "metrics");
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || pred[i] < 0.0 || pred[i] > 1.0)
      throw std::invalid_argument("metrics: prediction outside [0,1]");
    if (gt[i] != 0.0 && gt[i] != 1.0)
      throw std::invalid_argument("metrics: ground truth is not binary");
  }
}

double mae_metric(const Tensor& pred, const Tensor& gt) {
  validate_metric_pair(pred, gt);
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<double>(pred.size());
}

namespace {

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(const Tensor& pred, const Tensor& gt, double threshold) {
  Confusion c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool y = gt[i] != 0.0;
    if (p && y)
      c.tp += 1;
    else if (p && !y)
      c.fp += 1;
    else if (!p && y)
      c.fn += 1;
    else
      c.tn += 1;
  }
  return c;
}

}  // namespace

std::pair<double, double> dice_iou(const Tensor& pred, const Tensor& gt, double threshold) {
  validate_metric_pair(pred, gt);
  const Confusion c = confusion(pred, gt, threshold);
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0};  // both empty
  const double dice = 2 * c.tp / (2 * c.tp + c.fp + c.fn);
  const double iou = c.tp / (c.tp + c.fp + c.fn);
  return {dice, iou};
}

double ber(const Tensor& pred, const Tensor& gt, double threshold, bool* single_class) {
  validate_metric_pair(pred, gt);
  const Confusion c = confusion(pred, gt, threshold);
  if (single_class) *single_class = (c.tp + c.fn == 0) || (c.tn + c.fp == 0);
  const double tpr = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 1.0;
  const double tnr = c.tn + c.fp > 0 ? c.tn / (c.tn + c.fp) : 1.0;
  return 100.0 * (1.0 - 0.5 * (tpr + tnr));
}

double f1_semantic(const Tensor& pred, const Tensor& gt, double threshold) {
  validate_metric_pair(pred, gt);
  const Confusion c = confusion(pred, gt, threshold);
  if (c.tp + c.fp + c.fn == 0) return 1.0;  // both empty
  const double precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  const double f1 =
      precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  // On binarized inputs F1 and dice coincide; the identity is structural.
  const double dice = 2 * c.tp / (2 * c.tp + c.fp + c.fn);
  if (std::abs(f1 - dice) > 1e-12)
    throw std::logic_error("f1_semantic: F1 and dice diverged on binary inputs");
  return f1;
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

namespace {

// Mean and sample standard deviation of pred over a gt region (1 = member).
// Single-element regions have zero deviation.
void region_stats(const Tensor& pred, const Tensor& gt, bool member, double& mean,
                  double& sdev, std::int64_t& count) {
  double acc = 0.0;
  count = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i)
    if ((gt[i] != 0.0) == member) {
      acc += pred[i];
      ++count;
    }
  mean = count > 0 ? acc / static_cast<double>(count) : 0.0;
  double ss = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i)
    if ((gt[i] != 0.0) == member) ss += (pred[i] - mean) * (pred[i] - mean);
  sdev = count > 1 ? std::sqrt(ss / static_cast<double>(count - 1)) : 0.0;
}

double object_score(double x, double sigma_x) {
  return 2.0 * x / (x * x + 1.0 + sigma_x + kMetricEps);
}

double s_object(const Tensor& pred, const Tensor& gt) {
  double mu = 0.0;
  for (std::int64_t i = 0; i < gt.size(); ++i) mu += gt[i];
  mu /= static_cast<double>(gt.size());

  double x_fg, s_fg, x_bg, s_bg;
  std::int64_t n_fg, n_bg;
  region_stats(pred, gt, true, x_fg, s_fg, n_fg);
  // Background term scores 1 - pred.
  Tensor inv(pred.shape());
  inv.array() = 1.0 - pred.array();
  region_stats(inv, gt, false, x_bg, s_bg, n_bg);

  const double o_fg = n_fg > 0 ? object_score(x_fg, s_fg) : 0.0;
  const double o_bg = n_bg > 0 ? object_score(x_bg, s_bg) : 0.0;
  return mu * o_fg + (1.0 - mu) * o_bg;
}

// SSIM-style quadrant similarity with sample (N-1) normalization.
double quadrant_ssim(const Tensor& pred, const Tensor& gt, std::int64_t r0, std::int64_t r1,
                     std::int64_t c0, std::int64_t c1) {
  const std::int64_t n = (r1 - r0) * (c1 - c0);
  if (n <= 0) return 0.0;
  double x = 0.0, y = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      x += pred.at(r, c);
      y += gt.at(r, c);
    }
  x /= static_cast<double>(n);
  y /= static_cast<double>(n);
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      const double dx = pred.at(r, c) - x;
      const double dy = gt.at(r, c) - y;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double denom_n = static_cast<double>(n - 1) + kMetricEps;
  sx /= denom_n;
  sy /= denom_n;
  sxy /= denom_n;

  const double alpha = 4.0 * x * y * sxy;
  const double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kMetricEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

double s_region(const Tensor& pred, const Tensor& gt) {
  const std::int64_t h = gt.rows(), w = gt.cols();
  double total = 0.0, sum_x = 0.0, sum_y = 0.0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (gt.at(r, c) != 0.0) {
        total += 1.0;
        sum_x += static_cast<double>(c + 1);  // 1-indexed centroid convention
        sum_y += static_cast<double>(r + 1);
      }
  std::int64_t cx, cy;
  if (total == 0.0) {
    cx = static_cast<std::int64_t>(std::round(static_cast<double>(w) / 2.0));
    cy = static_cast<std::int64_t>(std::round(static_cast<double>(h) / 2.0));
  } else {
    cx = static_cast<std::int64_t>(std::round(sum_x / total));
    cy = static_cast<std::int64_t>(std::round(sum_y / total));
  }
  // Quadrant split: left/top blocks span cx columns and cy rows (1-indexed).
  const double area = static_cast<double>(h * w);
  const double w1 = static_cast<double>(cx * cy) / area;
  const double w2 = static_cast<double>((w - cx) * cy) / area;
  const double w3 = static_cast<double>(cx * (h - cy)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;

  const double q1 = quadrant_ssim(pred, gt, 0, cy, 0, cx);
  const double q2 = quadrant_ssim(pred, gt, 0, cy, cx, w);
  const double q3 = quadrant_ssim(pred, gt, cy, h, 0, cx);
  const double q4 = quadrant_ssim(pred, gt, cy, h, cx, w);
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

}  // namespace

double s_measure(const Tensor& pred, const Tensor& gt, double alpha) {
  validate_metric_pair(pred, gt);
  double mu = 0.0, mp = 0.0;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    mu += gt[i];
    mp += pred[i];
  }
  mu /= static_cast<double>(gt.size());
  mp /= static_cast<double>(pred.size());

  double q;
  if (mu == 0.0)
    q = 1.0 - mp;
  else if (mu == 1.0)
    q = mp;
  else
    q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
  return std::min(1.0, std::max(0.0, q));
}

// ---------------------------------------------------------------------------
// Mean E-measure
// ---------------------------------------------------------------------------

double e_measure_mean(const Tensor& pred, const Tensor& gt) {
  validate_metric_pair(pred, gt);
  const std::int64_t n = gt.size();
  double gt_sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) gt_sum += gt[i];
  const bool all_zero = gt_sum == 0.0;
  const bool all_one = gt_sum == static_cast<double>(n);
  const double mu_g = gt_sum / static_cast<double>(n);

  double acc = 0.0;
  std::vector<double> bin(static_cast<std::size_t>(n));
  for (int k = 0; k < 256; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    double bsum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const bool on = k == 0 ? pred[i] > 0.0 : pred[i] >= t;
      bin[static_cast<std::size_t>(i)] = on ? 1.0 : 0.0;
      bsum += bin[static_cast<std::size_t>(i)];
    }
    const double mu_b = bsum / static_cast<double>(n);
    double et;
    if (all_zero) {
      et = 1.0 - mu_b;
    } else if (all_one) {
      et = mu_b;
    } else {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double pg = gt[i] - mu_g;
        const double pp = bin[static_cast<std::size_t>(i)] - mu_b;
        const double align = 2.0 * pg * pp / (pg * pg + pp * pp);
        const double enh = (align + 1.0) * (align + 1.0) / 4.0;
        s += enh;
      }
      et = s / static_cast<double>(n);
    }
    acc += et;
  }
  return acc / 256.0;
}

// ---------------------------------------------------------------------------
// Weighted F-beta
// ---------------------------------------------------------------------------

void distance_to_foreground(const Tensor& gt, Tensor& dist2,
                            std::vector<std::int64_t>& site) {
  const std::int64_t h = gt.rows(), w = gt.cols();
  dist2 = Tensor::matrix(h, w);
  site.assign(static_cast<std::size_t>(h * w), -1);

  // Foreground rows per column, sorted, for outward column scans.
  std::vector<std::vector<std::int64_t>> col_rows(static_cast<std::size_t>(w));
  bool any = false;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      if (gt.at(r, c) != 0.0) {
        col_rows[static_cast<std::size_t>(c)].push_back(r);
        any = true;
      }
  if (!any) {
    dist2.fill(std::numeric_limits<double>::infinity());
    return;
  }

  // Nearest fg row in one column; on an up/down tie the smaller row wins,
  // matching the global smallest-row-major-index tie rule.
  auto nearest_in_column = [&](std::int64_t c, std::int64_t y, std::int64_t& row,
                               std::int64_t& dy2) -> bool {
    const auto& rows = col_rows[static_cast<std::size_t>(c)];
    if (rows.empty()) return false;
    auto it = std::lower_bound(rows.begin(), rows.end(), y);
    std::int64_t best_row = -1, best_d = 0;
    if (it != rows.end()) {
      best_row = *it;
      best_d = *it - y;
    }
    if (it != rows.begin()) {
      const std::int64_t r2 = *(it - 1);
      const std::int64_t d2 = y - r2;
      if (best_row < 0 || d2 < best_d || (d2 == best_d && r2 < best_row)) {
        best_row = r2;
        best_d = d2;
      }
    }
    row = best_row;
    dy2 = best_d * best_d;
    return true;
  };

  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (gt.at(y, x) != 0.0) {
        dist2.at(y, x) = 0.0;
        site[static_cast<std::size_t>(y * w + x)] = y * w + x;
        continue;
      }
      std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
      std::int64_t best_idx = -1;
      // Scan columns outward; once dx^2 alone exceeds the best squared
      // distance no farther column can win.
      for (std::int64_t dx = 0; dx < w; ++dx) {
        if (dx * dx > best_d2) break;
        for (int dir = 0; dir < (dx == 0 ? 1 : 2); ++dir) {
          const std::int64_t c = dir == 0 ? x - dx : x + dx;
          if (dir == 0 && dx > 0 && c < 0) continue;
          if (dir == 1 && c >= w) continue;
          if (c < 0 || c >= w) continue;
          std::int64_t row, dy2;
          if (!nearest_in_column(c, y, row, dy2)) continue;
          const std::int64_t d2 = dy2 + dx * dx;
          const std::int64_t idx = row * w + c;
          if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
            best_d2 = d2;
            best_idx = idx;
          }
        }
      }
      dist2.at(y, x) = static_cast<double>(best_d2);
      site[static_cast<std::size_t>(y * w + x)] = best_idx;
    }
}

double weighted_f_beta(const Tensor& pred, const Tensor& gt, double beta2, bool* empty_gt) {
  validate_metric_pair(pred, gt);
  if (empty_gt) *empty_gt = false;
  const std::int64_t h = gt.rows(), w = gt.cols();
  double gt_sum = 0.0;
  for (std::int64_t i = 0; i < gt.size(); ++i) gt_sum += gt[i];
  if (gt_sum == 0.0) {
    if (empty_gt) *empty_gt = true;
    return 0.0;
  }

  Tensor err(gt.shape());
  for (std::int64_t i = 0; i < gt.size(); ++i) err[i] = std::abs(pred[i] - gt[i]);

  Tensor dist2;
  std::vector<std::int64_t> site;
  distance_to_foreground(gt, dist2, site);

  // Background entries take the error of their nearest foreground pixel
  // before smoothing (edge handling of the foreground region).
  Tensor et = err;
  for (std::int64_t i = 0; i < gt.size(); ++i)
    if (gt[i] == 0.0) et[i] = err[site[static_cast<std::size_t>(i)]];

  // 7x7 Gaussian, sigma 5, zero-padded "same" filtering.
  double kernel[7][7];
  double ksum = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      kernel[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / 50.0);
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  Tensor ea = Tensor::matrix(h, w);
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -3; i <= 3; ++i) {
        const std::int64_t rr = r + i;
        if (rr < 0 || rr >= h) continue;
        for (int j = -3; j <= 3; ++j) {
          const std::int64_t cc = c + j;
          if (cc < 0 || cc >= w) continue;
          acc += kernel[i + 3][j + 3] * et.at(rr, cc);
        }
      }
      ea.at(r, c) = acc;
    }

  const double decay = std::log(0.5) / 5.0;
  double ew_fg_sum = 0.0, ew_bg_sum = 0.0;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    if (gt[i] != 0.0) {
      const double v = std::min(err[i], ea[i]);
      ew_fg_sum += v;
    } else {
      const double weight = 2.0 - std::exp(decay * std::sqrt(dist2[i]));
      ew_bg_sum += err[i] * weight;
    }
  }

  const double tpw = gt_sum - ew_fg_sum;
  const double fpw = ew_bg_sum;
  const double recall = 1.0 - ew_fg_sum / gt_sum;
  const double precision = tpw / (kMetricEps + tpw + fpw);
  return (1.0 + beta2) * recall * precision / (kMetricEps + recall + beta2 * precision);
}

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

std::vector<std::string> metrics_for_task(TaskKind task) {
  switch (task) {
    case TaskKind::kCod: return {"s_alpha", "e_phi", "f_beta_w", "mae"};
    case TaskKind::kShadow: return {"ber"};
    case TaskKind::kPolyp: return {"m_dice", "m_iou"};
    case TaskKind::kCell: return {"f1"};
  }
  return {};
}

std::map<std::string, double> compute_metrics(const std::vector<std::string>& keys,
                                              const Tensor& pred, const Tensor& gt) {
  std::map<std::string, double> out;
  for (const std::string& key : keys) {
    if (key == "s_alpha")
      out[key] = s_measure(pred, gt);
    else if (key == "e_phi")
      out[key] = e_measure_mean(pred, gt);
    else if (key == "f_beta_w")
      out[key] = weighted_f_beta(pred, gt);
    else if (key == "mae")
      out[key] = mae_metric(pred, gt);
    else if (key == "ber")
      out[key] = ber(pred, gt);
    else if (key == "m_dice")
      out[key] = dice_iou(pred, gt).first;
    else if (key == "m_iou")
      out[key] = dice_iou(pred, gt).second;
    else if (key == "f1")
      out[key] = f1_semantic(pred, gt);
    else
      throw std::invalid_argument("compute_metrics: unknown metric key '" + key + "'");
  }
  return out;
}

void aggregate_report(MetricReport& report) {
  std::map<std::string, std::pair<double, std::int64_t>> sums;
  for (const auto& pi : report.per_image)
    for (const auto& [key, value] : pi.values) {
      sums[key].first += value;
      sums[key].second += 1;
    }
  auto set = [&](const std::string& key, std::optional<double>& field) {
    auto it = sums.find(key);
    if (it != sums.end() && it->second.second > 0)
      field = it->second.first / static_cast<double>(it->second.second);
  };
  set("s_alpha", report.s_alpha);
  set("e_phi", report.e_phi);
  set("f_beta_w", report.f_beta_w);
  set("mae", report.mae);
  set("ber", report.ber);
  set("m_dice", report.m_dice);
  set("m_iou", report.m_iou);
  set("f1", report.f1);
}

std::optional<double> MetricReport::metric(const std::string& key) const {
  if (key == "s_alpha") return s_alpha;
  if (key == "e_phi") return e_phi;
  if (key == "f_beta_w") return f_beta_w;
  if (key == "mae") return mae;
  if (key == "ber") return ber;
  if (key == "m_dice") return m_dice;
  if (key == "m_iou") return m_iou;
  if (key == "f1") return f1;
  return std::nullopt;
}

std::string MetricReport::to_kv_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "dataset_id = " << dataset_id << "\n";
  os << "task = " << task << "\n";
  os << "num_samples = " << per_image.size() << "\n";
  os << "num_excluded = " << excluded.size() << "\n";
  for (const char* key : {"s_alpha", "e_phi", "f_beta_w", "mae", "ber", "m_dice",
                          "m_iou", "f1"}) {
    auto v = metric(key);
    if (v) os << key << " = " << *v << "\n";
  }
  os << "e_phi_mean_of_256 = " << (e_phi_mean_of_256 ? "true" : "false") << "\n";
  os << "per_image_averaging = " << (per_image_averaging ? "true" : "false") << "\n";
  return os.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["dataset_id"] = dataset_id;
  j["task"] = task;
  nlohmann::json summary = nlohmann::json::object();
  for (const char* key : {"s_alpha", "e_phi", "f_beta_w", "mae", "ber", "m_dice",
                          "m_iou", "f1"}) {
    auto v = metric(key);
    if (v) summary[key] = *v;
  }
  j["summary"] = summary;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& pi : per_image)
    per.push_back(nlohmann::json{{"sample_id", pi.sample_id}, {"values", pi.values}});
  j["per_image"] = per;
  j["excluded"] = excluded;
  j["flags"] = {{"e_phi_mean_of_256", e_phi_mean_of_256},
                {"per_image_averaging", per_image_averaging}};
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  for (const auto& pi : j.at("per_image")) {
    PerImage p;
    p.sample_id = pi.at("sample_id").get<std::string>();
    p.values = pi.at("values").get<std::map<std::string, double>>();
    r.per_image.push_back(std::move(p));
  }
  r.excluded = j.value("excluded", std::vector<std::string>{});
  if (j.contains("flags")) {
    r.e_phi_mean_of_256 = j["flags"].value("e_phi_mean_of_256", true);
    r.per_image_averaging = j["flags"].value("per_image_averaging", true);
  }
  aggregate_report(r);
  return r;
}

std::string MetricReport::per_image_csv() const {
  std::ostringstream os;
  os << "sample_id,metric,value\n";
  os.precision(12);
  for (const auto& pi : per_image)
    for (const auto& [key, value] : pi.values)
      os << pi.sample_id << "," << key << "," << value << "\n";
  return os.str();
}

}  // namespace adapterseg
