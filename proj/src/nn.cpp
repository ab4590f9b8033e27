#include "adapterseg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterseg {

void fill_uniform_fan_in(Tensor& t, std::int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
}

void Linear::init_uniform_fan_in(std::mt19937_64& rng) {
  fill_uniform_fan_in(weight.value, in_dim(), rng);
  fill_uniform_fan_in(bias.value, in_dim(), rng);
}

void Linear::init_zero() {
  weight.value.set_zero();
  bias.value.set_zero();
}

Tensor Linear::apply(const Tensor& x) const {
  if (x.cols() != in_dim())
    throw std::invalid_argument("Linear::apply: input dim " + std::to_string(x.cols()) +
                                " != " + std::to_string(in_dim()));
  Tensor out = Tensor::matrix(x.rows(), out_dim());
  out.mat().noalias() = x.mat() * weight.value.mat();
  out.mat().rowwise() += bias.value.mat().row(0);
  return out;
}

AdamW::AdamW(std::vector<Parameter*> params, Options opt)
    : params_(std::move(params)), opt_(opt) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    if (!p->trainable)
      throw std::invalid_argument("AdamW: frozen parameter in optimizer: " + p->name);
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i]->value;
    const Tensor& g = params_[i]->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t k = 0; k < p.size(); ++k) {
      m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * g[k];
      v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * p[k]);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::load_state(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw std::invalid_argument("AdamW::load_state: state count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!m[i].same_shape(params_[i]->value) || !v[i].same_shape(params_[i]->value))
      throw std::invalid_argument("AdamW::load_state: shape mismatch for " +
                                  params_[i]->name);
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace adapterseg
