#ifndef ADAPTERSEG_NN_HPP
#define ADAPTERSEG_NN_HPP

#include <random>
#include <string>
#include <vector>

#include "adapterseg/graph.hpp"

namespace adapterseg {

// Fully connected layer, weight [in, out], bias [1, out].
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, std::int64_t in, std::int64_t out, bool trainable = true)
      : weight(name + ".weight", Tensor::matrix(in, out), trainable),
        bias(name + ".bias", Tensor::matrix(1, out), trainable) {}

  std::int64_t in_dim() const { return weight.value.rows(); }
  std::int64_t out_dim() const { return weight.value.cols(); }

  void init_uniform_fan_in(std::mt19937_64& rng);
  void init_zero();

  Var forward(Graph& g, Var x) {
    return g.add_row_broadcast(g.matmul(x, g.param(weight)), g.param(bias));
  }
  // Plain (tape-free) forward for frozen paths.
  Tensor apply(const Tensor& x) const;

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Decoupled-weight-decay Adam. Weight decay is applied directly to the
// parameter, not through the moment estimates.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  AdamW() = default;
  AdamW(std::vector<Parameter*> params, Options opt);
  explicit AdamW(std::vector<Parameter*> params) : AdamW(std::move(params), Options{}) {}

  void step(double lr);
  void zero_grad();

  const std::vector<Parameter*>& params() const { return params_; }
  std::int64_t step_count() const { return t_; }
  const Tensor& moment1(std::size_t i) const { return m_[i]; }
  const Tensor& moment2(std::size_t i) const { return v_[i]; }
  // Restores optimizer state (used by checkpoint resume).
  void load_state(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
  Options opt_;
};

// Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void fill_uniform_fan_in(Tensor& t, std::int64_t fan_in, std::mt19937_64& rng);

}  // namespace adapterseg

#endif  // ADAPTERSEG_NN_HPP
