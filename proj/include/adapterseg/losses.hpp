#ifndef ADAPTERSEG_LOSSES_HPP
#define ADAPTERSEG_LOSSES_HPP

#include <optional>
#include <string>

#include "adapterseg/graph.hpp"

namespace adapterseg {

constexpr double kProbEps = 1e-7;  // probability clamp for the log terms

enum class TaskKind { kCod, kShadow, kPolyp, kCell };

TaskKind task_from_string(const std::string& s);
std::string task_to_string(TaskKind t);

// Scalar objective with its per-term breakdown.
struct LossValue {
  double value = 0.0;
  std::optional<double> bce;
  std::optional<double> iou;
  std::optional<double> balanced_bce;
  // Set when balanced BCE saw a single-class target and fell back to plain.
  bool balanced_fallback = false;
};

// Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps].
LossValue bce_loss(const Tensor& p, const Tensor& y);
// 1 - sum(p*y) / sum(p + y - p*y); returns 0 when the denominator is 0.
LossValue iou_loss(const Tensor& p, const Tensor& y);
// Class-balanced BCE with alpha = N_neg/N; falls back to plain BCE (with a
// flag) when the target holds a single class.
LossValue balanced_bce_loss(const Tensor& p, const Tensor& y);
// bce + iou with unit weights, both terms in the breakdown.
LossValue bce_iou_loss(const Tensor& p, const Tensor& y);
// cod/polyp/cell -> bce+iou, shadow -> balanced bce.
LossValue task_loss(TaskKind task, const Tensor& p, const Tensor& y);

// Differentiable builders; p is a probability node, y a fixed binary target.
Var bce_loss_var(Graph& g, Var p, const Tensor& y);
Var iou_loss_var(Graph& g, Var p, const Tensor& y);
Var balanced_bce_loss_var(Graph& g, Var p, const Tensor& y);
Var task_loss_var(Graph& g, TaskKind task, Var p, const Tensor& y);

// Logits-space variants used by the trainer: the same objectives with the
// cross-entropy folded into a numerically stable form whose gradient never
// clips at saturated probabilities.
Var bce_logits_var(Graph& g, Var logits, const Tensor& y);
Var balanced_bce_logits_var(Graph& g, Var logits, const Tensor& y);
Var task_loss_logits_var(Graph& g, TaskKind task, Var logits, const Tensor& y);

}  // namespace adapterseg

#endif  // ADAPTERSEG_LOSSES_HPP
