#include "adapterseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

TaskKind task_from_string(const std::string& s) {
  if (s == "cod") return TaskKind::kCod;
  if (s == "shadow") return TaskKind::kShadow;
  if (s == "polyp") return TaskKind::kPolyp;
  if (s == "cell") return TaskKind::kCell;
  throw std::invalid_argument("unknown task '" + s + "' (expected cod|shadow|polyp|cell)");
}

std::string task_to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kCod: return "cod";
    case TaskKind::kShadow: return "shadow";
    case TaskKind::kPolyp: return "polyp";
    case TaskKind::kCell: return "cell";
  }
  return "?";
}

namespace {

void check_pair(const Tensor& p, const Tensor& y, const char* what) {
  check_same_shape(p, y, what);
  if (p.size() == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

double clamp_prob(double v) {
  return std::min(1.0 - kProbEps, std::max(kProbEps, v));
}

}  // namespace

LossValue bce_loss(const Tensor& p, const Tensor& y) {
  check_pair(p, y, "bce_loss");
  double acc = 0.0;
  for (std::int64_t i = 0; i < p.size(); ++i) {
    const double pi = clamp_prob(p[i]);
    acc -= y[i] * std::log(pi) + (1.0 - y[i]) * std::log(1.0 - pi);
  }
  LossValue out;
  out.value = acc / static_cast<double>(p.size());
  out.bce = out.value;
  return out;
}

LossValue iou_loss(const Tensor& p, const Tensor& y) {
  check_pair(p, y, "iou_loss");
  double inter = 0.0, uni = 0.0;
  for (std::int64_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    uni += p[i] + y[i] - p[i] * y[i];
  }
  LossValue out;
  out.value = uni == 0.0 ? 0.0 : 1.0 - inter / uni;
  out.iou = out.value;
  return out;
}

LossValue balanced_bce_loss(const Tensor& p, const Tensor& y) {
  check_pair(p, y, "balanced_bce_loss");
  const double n = static_cast<double>(p.size());
  double npos = 0.0;
  for (std::int64_t i = 0; i < y.size(); ++i) npos += y[i];
  if (npos == 0.0 || npos == n) {
    LossValue out = bce_loss(p, y);
    out.balanced_bce = out.value;
    out.balanced_fallback = true;
    return out;
  }
  const double alpha = (n - npos) / n;
  double acc = 0.0;
  for (std::int64_t i = 0; i < p.size(); ++i) {
    const double pi = clamp_prob(p[i]);
    acc -= alpha * y[i] * std::log(pi) + (1.0 - alpha) * (1.0 - y[i]) * std::log(1.0 - pi);
  }
  LossValue out;
  out.value = acc / n;
  out.balanced_bce = out.value;
  return out;
}

LossValue bce_iou_loss(const Tensor& p, const Tensor& y) {
  LossValue b = bce_loss(p, y);
  LossValue i = iou_loss(p, y);
  LossValue out;
  out.value = b.value + i.value;
  out.bce = b.value;
  out.iou = i.value;
  return out;
}

LossValue task_loss(TaskKind task, const Tensor& p, const Tensor& y) {
  return task == TaskKind::kShadow ? balanced_bce_loss(p, y) : bce_iou_loss(p, y);
}

// ---------------------------------------------------------------------------
// Differentiable builders
// ---------------------------------------------------------------------------

namespace {

// Weighted cross entropy: mean of -(wy*y*ln p + wn*(1-y)*ln(1-p)).
Var weighted_ce(Graph& g, Var p, const Tensor& y, double w_pos, double w_neg) {
  Tensor ypos = y;
  ypos.array() *= w_pos;
  Tensor yneg(y.shape());
  yneg.array() = w_neg * (1.0 - y.array());
  Var pc = g.clamp(p, kProbEps, 1.0 - kProbEps);
  Var pos_term = g.mul_const(g.log(pc), ypos);
  Var neg_term = g.mul_const(g.log(g.add_scalar(g.neg(pc), 1.0)), yneg);
  return g.neg(g.mean(g.add(pos_term, neg_term)));
}

}  // namespace

Var bce_loss_var(Graph& g, Var p, const Tensor& y) {
  check_pair(p.val(), y, "bce_loss");
  return weighted_ce(g, p, y, 1.0, 1.0);
}

Var iou_loss_var(Graph& g, Var p, const Tensor& y) {
  check_pair(p.val(), y, "iou_loss");
  double ysum = y.sum();
  if (ysum == 0.0 && p.val().sum() == 0.0) return g.constant(Tensor::scalar(0.0));
  Var inter = g.sum(g.mul_const(p, y));
  Var uni = g.add_scalar(g.sub(g.sum(p), inter), ysum);
  return g.add_scalar(g.neg(g.div(inter, uni)), 1.0);
}

Var balanced_bce_loss_var(Graph& g, Var p, const Tensor& y) {
  check_pair(p.val(), y, "balanced_bce_loss");
  const double n = static_cast<double>(y.size());
  double npos = y.sum();
  if (npos == 0.0 || npos == n) return bce_loss_var(g, p, y);
  const double alpha = (n - npos) / n;
  return weighted_ce(g, p, y, alpha, 1.0 - alpha);
}

Var task_loss_var(Graph& g, TaskKind task, Var p, const Tensor& y) {
  if (task == TaskKind::kShadow) return balanced_bce_loss_var(g, p, y);
  return g.add(bce_loss_var(g, p, y), iou_loss_var(g, p, y));
}

Var bce_logits_var(Graph& g, Var logits, const Tensor& y) {
  check_pair(logits.val(), y, "bce_loss");
  return g.weighted_bce_with_logits(logits, y, 1.0, 1.0);
}

Var balanced_bce_logits_var(Graph& g, Var logits, const Tensor& y) {
  check_pair(logits.val(), y, "balanced_bce_loss");
  const double n = static_cast<double>(y.size());
  double npos = y.sum();
  if (npos == 0.0 || npos == n) return bce_logits_var(g, logits, y);
  const double alpha = (n - npos) / n;
  return g.weighted_bce_with_logits(logits, y, alpha, 1.0 - alpha);
}

Var task_loss_logits_var(Graph& g, TaskKind task, Var logits, const Tensor& y) {
  if (task == TaskKind::kShadow) return balanced_bce_logits_var(g, logits, y);
  return g.add(bce_logits_var(g, logits, y), iou_loss_var(g, g.sigmoid(logits), y));
}

}  // namespace adapterseg
