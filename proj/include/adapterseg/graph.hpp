#ifndef ADAPTERSEG_GRAPH_HPP
#define ADAPTERSEG_GRAPH_HPP

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "adapterseg/tensor.hpp"

namespace adapterseg {

// Named trainable (or frozen) array. Gradients accumulate into `grad`
// across Graph::backward calls until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad.set_zero(); }
  std::int64_t size() const { return value.size(); }
};

class Graph;

// Lightweight handle to a node owned by a Graph.
class Var {
 public:
  Var() = default;
  const Tensor& val() const;
  Graph* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Dynamic reverse-mode tape. One Graph per forward pass; nodes are created
// in topological order, so backward() is a reverse sweep over node ids.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Var constant(Tensor v);                // no gradient tracking
  Var input(Tensor v);                   // differentiable leaf (grad via grad())
  Var param(Parameter& p);               // tied leaf; one node per Parameter

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double s);
  Var scale_var(Var a, Var s);  // s is a [1,1] scalar node
  Var add_scalar(Var a, double s);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);
  Var gelu(Var a);     // exact x * Phi(x)
  Var sigmoid(Var a);

  // Elementwise against a fixed tensor (targets, masks).
  Var mul_const(Var a, const Tensor& t);

  // Mean of w_pos*y*softplus(-z) + w_neg*(1-y)*softplus(z) over all entries:
  // class-weighted binary cross entropy taking logits, numerically stable,
  // gradient (sigmoid(z) - y) scaled by the class weight.
  Var weighted_bce_with_logits(Var z, const Tensor& y, double w_pos, double w_neg);

  // Linear algebra on matrices.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add_row_broadcast(Var m, Var row);  // [T,W] + [1,W]
  Var slice_cols(Var a, std::int64_t j0, std::int64_t n);
  Var concat_cols(const std::vector<Var>& parts);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Reductions to [1,1].
  Var sum(Var a);
  Var mean(Var a);

  // Token-grid spatial ops. Tokens are row-major over a square side x side
  // grid; x is [side*side, C].
  Var space_to_depth2(Var x, std::int64_t side);                      // -> [T/4, 4C]
  Var avg_pool_tokens(Var x, std::int64_t side, std::int64_t factor); // -> [T/f^2, C]
  Var upsample_nearest_tokens(Var x, std::int64_t side, std::int64_t factor);
  // Learned 2x2 stride-2 transposed conv; w is [4*Cin, Cout] (blocks ordered
  // (dy,dx) = 00,01,10,11), b is [1, Cout]. Output grid side doubles.
  Var deconv2x2(Var x, Var w, Var b, std::int64_t side);
  // 3x3 conv, zero pad 1; w is [9*Cin, Cout] (row-major taps), b [1, Cout].
  Var conv3x3(Var x, Var w, Var b, std::int64_t side);

  void backward(Var root);  // root must be a single-element tensor

  const Tensor& value(Var v) const;
  // Gradient of the last backward() wrt an input()/param() node.
  const Tensor& grad(Var v) const;
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  using BackpropFn = std::function<void(Graph&, int self)>;

  struct Node {
    Tensor value;
    Tensor grad;           // allocated iff requires_grad
    bool requires_grad = false;
    bool touched = false;  // received upstream gradient during this backward
    Parameter* bound = nullptr;
    BackpropFn backprop;   // scatters node.grad into parents
  };

  Var make(Tensor value, bool requires_grad, BackpropFn backprop);
  Node& node(Var v) { return nodes_[v.id_]; }
  const Node& node(Var v) const { return nodes_[v.id_]; }
  Node& node(int id) { return nodes_[id]; }
  bool needs(Var v) const { return nodes_[v.id_].requires_grad; }
  bool needs_id(int id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator of a parent node; marks it live for the sweep.
  Tensor& gacc(int id) {
    nodes_[id].touched = true;
    return nodes_[id].grad;
  }
  void check_owned(Var v, const char* what) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

}  // namespace adapterseg

#endif  // ADAPTERSEG_GRAPH_HPP
