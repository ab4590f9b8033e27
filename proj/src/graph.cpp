#include "adapterseg/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
}  // namespace

const Tensor& Var::val() const { return g_->value(*this); }

void Graph::check_owned(Var v, const char* what) const {
  if (v.g_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size()))
    throw std::logic_error(std::string(what) + ": Var does not belong to this graph");
}

Var Graph::make(Tensor value, bool requires_grad, BackpropFn backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad = Tensor(n.value.shape());
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Tensor v) { return make(std::move(v), false, nullptr); }

Var Graph::input(Tensor v) { return make(std::move(v), true, nullptr); }

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Parameter* pp = &p;
  Var v = make(p.value, p.trainable,
               [pp](Graph& g, int self) { pp->grad.array() += g.node(self).grad.array(); });
  node(v).bound = pp;
  param_nodes_.emplace(pp, v.id());
  return v;
}

const Tensor& Graph::value(Var v) const {
  check_owned(v, "Graph::value");
  return node(v).value;
}

const Tensor& Graph::grad(Var v) const {
  check_owned(v, "Graph::grad");
  if (!node(v).requires_grad)
    throw std::logic_error("Graph::grad: node does not track gradients");
  return node(v).grad;
}

void Graph::backward(Var root) {
  check_owned(root, "Graph::backward");
  if (root.val().size() != 1)
    throw std::invalid_argument("Graph::backward: root must be a single-element tensor");
  if (!node(root).requires_grad)
    throw std::logic_error("Graph::backward: root does not require gradients");
  node(root).grad.fill(1.0);
  node(root).touched = true;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.touched || !n.backprop) continue;
    n.backprop(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  out.array() += b.val().array();
  int ia = a.id(), ib = b.id();
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(ia)) g.gacc(ia).array() += go.array();
    if (g.needs_id(ib)) g.gacc(ib).array() += go.array();
  });
}

Var Graph::sub(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  out.array() -= b.val().array();
  int ia = a.id(), ib = b.id();
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(ia)) g.gacc(ia).array() += go.array();
    if (g.needs_id(ib)) g.gacc(ib).array() -= go.array();
  });
}

Var Graph::mul(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  out.array() *= b.val().array();
  int ia = a.id(), ib = b.id();
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(ia)) g.gacc(ia).array() += go.array() * g.node(ib).value.array();
    if (g.needs_id(ib)) g.gacc(ib).array() += go.array() * g.node(ia).value.array();
  });
}

Var Graph::div(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "div");
  Tensor out = a.val();
  out.array() /= b.val().array();
  int ia = a.id(), ib = b.id();
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    auto av = g.node(ia).value.array();
    auto bv = g.node(ib).value.array();
    if (g.needs_id(ia)) g.gacc(ia).array() += go.array() / bv;
    if (g.needs_id(ib)) g.gacc(ib).array() -= go.array() * av / (bv * bv);
  });
}

Var Graph::neg(Var a) { return scale(a, -1.0); }

Var Graph::scale(Var a, double s) {
  Tensor out = a.val();
  out.array() *= s;
  int ia = a.id();
  return make(std::move(out), needs(a), [ia, s](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).array() += s * g.node(self).grad.array();
  });
}

Var Graph::scale_var(Var a, Var s) {
  if (s.val().size() != 1)
    throw std::invalid_argument("scale_var: scale must be a single-element tensor");
  Tensor out = a.val();
  out.array() *= s.val().item();
  int ia = a.id(), is = s.id();
  return make(std::move(out), needs(a) || needs(s), [ia, is](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(ia))
      g.gacc(ia).array() += go.array() * g.node(is).value.item();
    if (g.needs_id(is))
      g.gacc(is)[0] += (go.array() * g.node(ia).value.array()).sum();
  });
}

Var Graph::add_scalar(Var a, double s) {
  Tensor out = a.val();
  out.array() += s;
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).array() += g.node(self).grad.array();
  });
}

Var Graph::log(Var a) {
  Tensor out = a.val();
  out.array() = out.array().log();
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (g.needs_id(ia))
      g.gacc(ia).array() += g.node(self).grad.array() / g.node(ia).value.array();
  });
}

Var Graph::clamp(Var a, double lo, double hi) {
  Tensor out = a.val();
  out.array() = out.array().max(lo).min(hi);
  int ia = a.id();
  return make(std::move(out), needs(a), [ia, lo, hi](Graph& g, int self) {
    if (!g.needs_id(ia)) return;
    const Tensor& av = g.node(ia).value;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.gacc(ia);
    for (std::int64_t i = 0; i < av.size(); ++i)
      if (av[i] > lo && av[i] < hi) ga[i] += go[i];
  });
}

Var Graph::gelu(Var a) {
  const Tensor& x = a.val();
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * norm_cdf(x[i]);
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (!g.needs_id(ia)) return;
    const Tensor& x = g.node(ia).value;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.gacc(ia);
    for (std::int64_t i = 0; i < x.size(); ++i)
      ga[i] += go[i] * (norm_cdf(x[i]) + x[i] * norm_pdf(x[i]));
  });
}

Var Graph::sigmoid(Var a) {
  const Tensor& x = a.val();
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (!g.needs_id(ia)) return;
    const Tensor& y = g.node(self).value;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.gacc(ia);
    for (std::int64_t i = 0; i < y.size(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::mul_const(Var a, const Tensor& t) {
  check_same_shape(a.val(), t, "mul_const");
  Tensor out = a.val();
  out.array() *= t.array();
  int ia = a.id();
  Tensor tc = t;
  return make(std::move(out), needs(a), [ia, tc](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).array() += g.node(self).grad.array() * tc.array();
  });
}

Var Graph::weighted_bce_with_logits(Var z, const Tensor& y, double w_pos, double w_neg) {
  check_same_shape(z.val(), y, "weighted_bce_with_logits");
  const Tensor& zv = z.val();
  const double n = static_cast<double>(zv.size());
  auto softplus = [](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  };
  double acc = 0.0;
  for (std::int64_t i = 0; i < zv.size(); ++i)
    acc += y[i] != 0.0 ? w_pos * softplus(-zv[i]) : w_neg * softplus(zv[i]);
  Tensor out = Tensor::scalar(acc / n);
  int iz = z.id();
  Tensor yc = y;
  return make(std::move(out), needs(z), [iz, yc, w_pos, w_neg, n](Graph& g, int self) {
    if (!g.needs_id(iz)) return;
    const double go = g.node(self).grad.item();
    const Tensor& zv = g.node(iz).value;
    Tensor& gz = g.gacc(iz);
    for (std::int64_t i = 0; i < zv.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-zv[i]));
      const double w = yc[i] != 0.0 ? w_pos : w_neg;
      gz[i] += go * w * (s - yc[i]) / n;
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: inner dimensions differ: " + av.shape_str() +
                                " x " + bv.shape_str());
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  int ia = a.id(), ib = b.id();
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(ia))
      g.gacc(ia).mat().noalias() += go.mat() * g.node(ib).value.mat().transpose();
    if (g.needs_id(ib))
      g.gacc(ib).mat().noalias() += g.node(ia).value.mat().transpose() * go.mat();
  });
}

Var Graph::transpose(Var a) {
  const Tensor& av = a.val();
  Tensor out = Tensor::matrix(av.cols(), av.rows());
  out.mat() = av.mat().transpose();
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).mat() += g.node(self).grad.mat().transpose();
  });
}

Var Graph::add_row_broadcast(Var m, Var row) {
  const Tensor& mv = m.val();
  const Tensor& rv = row.val();
  if (rv.rows() != 1 || rv.cols() != mv.cols())
    throw std::invalid_argument("add_row_broadcast: row must be [1, cols]");
  Tensor out = mv;
  out.mat().rowwise() += rv.mat().row(0);
  int im = m.id(), ir = row.id();
  return make(std::move(out), needs(m) || needs(row), [im, ir](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    if (g.needs_id(im)) g.gacc(im).array() += go.array();
    if (g.needs_id(ir)) g.gacc(ir).mat().row(0) += go.mat().colwise().sum();
  });
}

Var Graph::slice_cols(Var a, std::int64_t j0, std::int64_t n) {
  const Tensor& av = a.val();
  if (j0 < 0 || n <= 0 || j0 + n > av.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(av.rows(), n);
  out.mat() = av.mat().middleCols(j0, n);
  int ia = a.id();
  return make(std::move(out), needs(a), [ia, j0, n](Graph& g, int self) {
    if (g.needs_id(ia))
      g.gacc(ia).mat().middleCols(j0, n) += g.node(self).grad.mat();
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
  std::int64_t rows = parts[0].val().rows(), cols = 0;
  bool req = false;
  for (const Var& p : parts) {
    if (p.val().rows() != rows)
      throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.val().cols();
    req = req || needs(p);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<int> ids;
  std::vector<std::int64_t> offs;
  std::int64_t off = 0;
  for (const Var& p : parts) {
    out.mat().middleCols(off, p.val().cols()) = p.val().mat();
    ids.push_back(p.id());
    offs.push_back(off);
    off += p.val().cols();
  }
  return make(std::move(out), req, [ids, offs](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.needs_id(ids[k])) continue;
      Tensor& ga = g.gacc(ids[k]);
      ga.mat() += go.mat().middleCols(offs[k], ga.cols());
    }
  });
}

Var Graph::softmax_rows(Var a) {
  const Tensor& av = a.val();
  Tensor out(av.shape());
  for (std::int64_t r = 0; r < av.rows(); ++r) {
    double m = av.mat().row(r).maxCoeff();
    double z = 0.0;
    for (std::int64_t c = 0; c < av.cols(); ++c) {
      out.at(r, c) = std::exp(av.at(r, c) - m);
      z += out.at(r, c);
    }
    for (std::int64_t c = 0; c < av.cols(); ++c) out.at(r, c) /= z;
  }
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (!g.needs_id(ia)) return;
    const Tensor& y = g.node(self).value;
    const Tensor& go = g.node(self).grad;
    Tensor& ga = g.gacc(ia);
    for (std::int64_t r = 0; r < y.rows(); ++r) {
      double dot = y.mat().row(r).dot(go.mat().row(r));
      for (std::int64_t c = 0; c < y.cols(); ++c)
        ga.at(r, c) += y.at(r, c) * (go.at(r, c) - dot);
    }
  });
}

Var Graph::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.val();
  const std::int64_t rows = xv.rows(), cols = xv.cols();
  if (gamma.val().rows() != 1 || gamma.val().cols() != cols ||
      beta.val().rows() != 1 || beta.val().cols() != cols)
    throw std::invalid_argument("layer_norm_rows: gamma/beta must be [1, cols]");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_std = Tensor::matrix(rows, 1);
  for (std::int64_t r = 0; r < rows; ++r) {
    double mu = xv.mat().row(r).mean();
    double var = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      double d = xv.at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::int64_t c = 0; c < cols; ++c) {
      xhat.at(r, c) = (xv.at(r, c) - mu) * istd;
      out.at(r, c) = gamma.val()[c] * xhat.at(r, c) + beta.val()[c];
    }
  }
  int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return make(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [ix, ig, ib, xhat, inv_std](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    const std::int64_t rows = go.rows(), cols = go.cols();
    const Tensor& gam = g.node(ig).value;
    if (g.needs_id(ig)) {
      Tensor& gg = g.gacc(ig);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) gg[c] += go.at(r, c) * xhat.at(r, c);
    }
    if (g.needs_id(ib)) {
      Tensor& gb = g.gacc(ib);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) gb[c] += go.at(r, c);
    }
    if (g.needs_id(ix)) {
      Tensor& gx = g.gacc(ix);
      const double n = static_cast<double>(cols);
      for (std::int64_t r = 0; r < rows; ++r) {
        double mean_h = 0.0, mean_hx = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
          double h = go.at(r, c) * gam[c];
          mean_h += h;
          mean_hx += h * xhat.at(r, c);
        }
        mean_h /= n;
        mean_hx /= n;
        for (std::int64_t c = 0; c < cols; ++c) {
          double h = go.at(r, c) * gam[c];
          gx.at(r, c) += (h - mean_h - xhat.at(r, c) * mean_hx) * inv_std[r];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var Graph::sum(Var a) {
  Tensor out = Tensor::scalar(a.val().sum());
  int ia = a.id();
  return make(std::move(out), needs(a), [ia](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).array() += g.node(self).grad.item();
  });
}

Var Graph::mean(Var a) {
  const double n = static_cast<double>(a.val().size());
  Tensor out = Tensor::scalar(a.val().sum() / n);
  int ia = a.id();
  return make(std::move(out), needs(a), [ia, n](Graph& g, int self) {
    if (g.needs_id(ia)) g.gacc(ia).array() += g.node(self).grad.item() / n;
  });
}

// ---------------------------------------------------------------------------
// Token-grid spatial ops
// ---------------------------------------------------------------------------

namespace {
void check_grid(const Tensor& x, std::int64_t side, const char* what) {
  if (x.rows() != side * side)
    throw std::invalid_argument(std::string(what) + ": token count " +
                                std::to_string(x.rows()) + " != side^2 with side " +
                                std::to_string(side));
}
}  // namespace

Var Graph::space_to_depth2(Var x, std::int64_t side) {
  const Tensor& xv = x.val();
  check_grid(xv, side, "space_to_depth2");
  if (side % 2 != 0) throw std::invalid_argument("space_to_depth2: odd grid side");
  const std::int64_t c = xv.cols(), so = side / 2;
  Tensor out = Tensor::matrix(so * so, 4 * c);
  for (std::int64_t r = 0; r < so; ++r)
    for (std::int64_t q = 0; q < so; ++q) {
      std::int64_t o = r * so + q;
      for (std::int64_t dy = 0; dy < 2; ++dy)
        for (std::int64_t dx = 0; dx < 2; ++dx) {
          std::int64_t in = (2 * r + dy) * side + (2 * q + dx);
          out.mat().row(o).segment((dy * 2 + dx) * c, c) = xv.mat().row(in);
        }
    }
  int ix = x.id();
  return make(std::move(out), needs(x), [ix, side, c, so](Graph& g, int self) {
    if (!g.needs_id(ix)) return;
    const Tensor& go = g.node(self).grad;
    Tensor& gx = g.gacc(ix);
    for (std::int64_t r = 0; r < so; ++r)
      for (std::int64_t q = 0; q < so; ++q) {
        std::int64_t o = r * so + q;
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            std::int64_t in = (2 * r + dy) * side + (2 * q + dx);
            gx.mat().row(in) += go.mat().row(o).segment((dy * 2 + dx) * c, c);
          }
      }
  });
}

Var Graph::avg_pool_tokens(Var x, std::int64_t side, std::int64_t factor) {
  const Tensor& xv = x.val();
  check_grid(xv, side, "avg_pool_tokens");
  if (factor < 1 || side % factor != 0)
    throw std::invalid_argument("avg_pool_tokens: side not divisible by factor");
  if (factor == 1) return x;
  const std::int64_t c = xv.cols(), so = side / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out = Tensor::matrix(so * so, c);
  for (std::int64_t r = 0; r < so; ++r)
    for (std::int64_t q = 0; q < so; ++q) {
      auto row = out.mat().row(r * so + q);
      for (std::int64_t dy = 0; dy < factor; ++dy)
        for (std::int64_t dx = 0; dx < factor; ++dx)
          row += xv.mat().row((r * factor + dy) * side + (q * factor + dx));
      row *= inv;
    }
  int ix = x.id();
  return make(std::move(out), needs(x), [ix, side, factor, so, inv](Graph& g, int self) {
    if (!g.needs_id(ix)) return;
    const Tensor& go = g.node(self).grad;
    Tensor& gx = g.gacc(ix);
    for (std::int64_t r = 0; r < so; ++r)
      for (std::int64_t q = 0; q < so; ++q) {
        auto row = go.mat().row(r * so + q);
        for (std::int64_t dy = 0; dy < factor; ++dy)
          for (std::int64_t dx = 0; dx < factor; ++dx)
            gx.mat().row((r * factor + dy) * side + (q * factor + dx)) += inv * row;
      }
  });
}

Var Graph::upsample_nearest_tokens(Var x, std::int64_t side, std::int64_t factor) {
  const Tensor& xv = x.val();
  check_grid(xv, side, "upsample_nearest_tokens");
  if (factor < 1) throw std::invalid_argument("upsample_nearest_tokens: factor < 1");
  if (factor == 1) return x;
  const std::int64_t c = xv.cols(), so = side * factor;
  Tensor out = Tensor::matrix(so * so, c);
  for (std::int64_t r = 0; r < side; ++r)
    for (std::int64_t q = 0; q < side; ++q)
      for (std::int64_t dy = 0; dy < factor; ++dy)
        for (std::int64_t dx = 0; dx < factor; ++dx)
          out.mat().row((r * factor + dy) * so + (q * factor + dx)) =
              xv.mat().row(r * side + q);
  int ix = x.id();
  return make(std::move(out), needs(x), [ix, side, factor, so](Graph& g, int self) {
    if (!g.needs_id(ix)) return;
    const Tensor& go = g.node(self).grad;
    Tensor& gx = g.gacc(ix);
    for (std::int64_t r = 0; r < side; ++r)
      for (std::int64_t q = 0; q < side; ++q) {
        auto row = gx.mat().row(r * side + q);
        for (std::int64_t dy = 0; dy < factor; ++dy)
          for (std::int64_t dx = 0; dx < factor; ++dx)
            row += go.mat().row((r * factor + dy) * so + (q * factor + dx));
      }
  });
}

Var Graph::deconv2x2(Var x, Var w, Var b, std::int64_t side) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  check_grid(xv, side, "deconv2x2");
  const std::int64_t cin = xv.cols();
  if (wv.rows() != 4 * cin)
    throw std::invalid_argument("deconv2x2: weight rows must be 4*cin");
  const std::int64_t cout = wv.cols(), so = 2 * side;
  if (bv.rows() != 1 || bv.cols() != cout)
    throw std::invalid_argument("deconv2x2: bias must be [1, cout]");
  Tensor out = Tensor::matrix(so * so, cout);
  out.mat().rowwise() = bv.mat().row(0);
  for (std::int64_t tap = 0; tap < 4; ++tap) {
    const std::int64_t dy = tap / 2, dx = tap % 2;
    RowMatrixXd part = xv.mat() * wv.mat().middleRows(tap * cin, cin);
    for (std::int64_t r = 0; r < side; ++r)
      for (std::int64_t q = 0; q < side; ++q)
        out.mat().row((2 * r + dy) * so + (2 * q + dx)) += part.row(r * side + q);
  }
  int ix = x.id(), iw = w.id(), ib = b.id();
  return make(std::move(out), needs(x) || needs(w) || needs(b),
              [ix, iw, ib, side, cin, cout, so](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    const Tensor& xv = g.node(ix).value;
    const Tensor& wv = g.node(iw).value;
    if (g.needs_id(ib)) g.gacc(ib).mat().row(0) += go.mat().colwise().sum();
    for (std::int64_t tap = 0; tap < 4; ++tap) {
      const std::int64_t dy = tap / 2, dx = tap % 2;
      RowMatrixXd gpart(side * side, cout);
      for (std::int64_t r = 0; r < side; ++r)
        for (std::int64_t q = 0; q < side; ++q)
          gpart.row(r * side + q) = go.mat().row((2 * r + dy) * so + (2 * q + dx));
      if (g.needs_id(ix))
        g.gacc(ix).mat().noalias() +=
            gpart * wv.mat().middleRows(tap * cin, cin).transpose();
      if (g.needs_id(iw))
        g.gacc(iw).mat().middleRows(tap * cin, cin).noalias() +=
            xv.mat().transpose() * gpart;
    }
  });
}

Var Graph::conv3x3(Var x, Var w, Var b, std::int64_t side) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  check_grid(xv, side, "conv3x3");
  const std::int64_t cin = xv.cols();
  if (wv.rows() != 9 * cin)
    throw std::invalid_argument("conv3x3: weight rows must be 9*cin");
  const std::int64_t cout = wv.cols();
  if (bv.rows() != 1 || bv.cols() != cout)
    throw std::invalid_argument("conv3x3: bias must be [1, cout]");
  Tensor out = Tensor::matrix(side * side, cout);
  out.mat().rowwise() = bv.mat().row(0);
  for (std::int64_t tap = 0; tap < 9; ++tap) {
    const std::int64_t ty = tap / 3 - 1, tx = tap % 3 - 1;
    RowMatrixXd wt = wv.mat().middleRows(tap * cin, cin);
    for (std::int64_t r = 0; r < side; ++r) {
      const std::int64_t sr = r + ty;
      if (sr < 0 || sr >= side) continue;
      for (std::int64_t q = 0; q < side; ++q) {
        const std::int64_t sq = q + tx;
        if (sq < 0 || sq >= side) continue;
        out.mat().row(r * side + q).noalias() += xv.mat().row(sr * side + sq) * wt;
      }
    }
  }
  int ix = x.id(), iw = w.id(), ib = b.id();
  return make(std::move(out), needs(x) || needs(w) || needs(b),
              [ix, iw, ib, side, cin](Graph& g, int self) {
    const Tensor& go = g.node(self).grad;
    const Tensor& xv = g.node(ix).value;
    const Tensor& wv = g.node(iw).value;
    if (g.needs_id(ib)) g.gacc(ib).mat().row(0) += go.mat().colwise().sum();
    for (std::int64_t tap = 0; tap < 9; ++tap) {
      const std::int64_t ty = tap / 3 - 1, tx = tap % 3 - 1;
      for (std::int64_t r = 0; r < side; ++r) {
        const std::int64_t sr = r + ty;
        if (sr < 0 || sr >= side) continue;
        for (std::int64_t q = 0; q < side; ++q) {
          const std::int64_t sq = q + tx;
          if (sq < 0 || sq >= side) continue;
          if (g.needs_id(ix))
            g.gacc(ix).mat().row(sr * side + sq).noalias() +=
                go.mat().row(r * side + q) * wv.mat().middleRows(tap * cin, cin).transpose();
          if (g.needs_id(iw))
            g.gacc(iw).mat().middleRows(tap * cin, cin).noalias() +=
                xv.mat().row(sr * side + sq).transpose() * go.mat().row(r * side + q);
        }
      }
    }
  });
}

}  // namespace adapterseg
