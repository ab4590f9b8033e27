#include <doctest.h>

#include <random>

#include "adapterseg/graph.hpp"
#include "gradcheck.hpp"

using namespace adapterseg;
using testing::finite_difference_grad;
using testing::grad_rel_error;
using testing::random_tensor;

TEST_CASE("elementwise and matmul gradients match finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor c = random_tensor({3, 5}, rng);

  auto eval = [&]() {
    Graph g;
    Var va = g.input(a), vb = g.input(b), vc = g.input(c);
    Var y = g.mul(g.add(g.matmul(va, vb), vc), vc);
    Var loss = g.mean(g.gelu(y));
    return loss.val().item();
  };

  for (Tensor* t : {&a, &b, &c}) {
    Graph g;
    Var va = g.input(a), vb = g.input(b), vc = g.input(c);
    Var y = g.mul(g.add(g.matmul(va, vb), vc), vc);
    Var loss = g.mean(g.gelu(y));
    g.backward(loss);
    const Tensor& analytic = g.grad(t == &a ? va : (t == &b ? vb : vc));
    Tensor numeric = finite_difference_grad(eval, *t);
    CHECK(grad_rel_error(analytic, numeric) < 1e-6);
  }
}

TEST_CASE("softmax, layer norm, sigmoid, log, div gradients") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor gamma = random_tensor({1, 6}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({1, 6}, rng, -0.2, 0.2);

  auto forward = [&](Graph& g, Var vx, Var vg, Var vb) {
    Var n = g.layer_norm_rows(vx, vg, vb);
    Var s = g.softmax_rows(n);
    Var p = g.sigmoid(s);
    Var q = g.log(g.add_scalar(p, 1.0));
    Var r = g.div(q, g.add_scalar(p, 2.0));
    return g.mean(r);
  };
  auto eval = [&]() {
    Graph g;
    Var loss = forward(g, g.input(x), g.input(gamma), g.input(beta));
    return loss.val().item();
  };

  Graph g;
  Var vx = g.input(x), vg = g.input(gamma), vb = g.input(beta);
  Var loss = forward(g, vx, vg, vb);
  g.backward(loss);

  CHECK(grad_rel_error(g.grad(vx), finite_difference_grad(eval, x)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vg), finite_difference_grad(eval, gamma)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vb), finite_difference_grad(eval, beta)) < 1e-6);
}

TEST_CASE("slice, concat, transpose, row broadcast gradients") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({3, 8}, rng);
  Tensor row = random_tensor({1, 4}, rng);

  auto forward = [&](Graph& g, Var vx, Var vr) {
    Var left = g.slice_cols(vx, 0, 4);
    Var right = g.slice_cols(vx, 4, 4);
    Var both = g.concat_cols({g.add_row_broadcast(left, vr), right});
    Var t = g.transpose(both);
    return g.mean(g.mul(t, t));
  };
  auto eval = [&]() {
    Graph g;
    return forward(g, g.input(x), g.input(row)).val().item();
  };

  Graph g;
  Var vx = g.input(x), vr = g.input(row);
  Var loss = forward(g, vx, vr);
  g.backward(loss);
  CHECK(grad_rel_error(g.grad(vx), finite_difference_grad(eval, x)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vr), finite_difference_grad(eval, row)) < 1e-6);
}

TEST_CASE("token grid ops: pool, upsample, space_to_depth gradients") {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({16, 3}, rng);  // 4x4 grid, 3 channels

  auto forward = [&](Graph& g, Var vx) {
    Var down = g.avg_pool_tokens(vx, 4, 2);            // 2x2 grid
    Var up = g.upsample_nearest_tokens(down, 2, 2);    // back to 4x4
    Var s2d = g.space_to_depth2(g.add(up, vx), 4);     // 2x2 grid, 12 ch
    return g.mean(g.mul(s2d, s2d));
  };
  auto eval = [&]() {
    Graph g;
    return forward(g, g.input(x)).val().item();
  };

  Graph g;
  Var vx = g.input(x);
  g.backward(forward(g, vx));
  CHECK(grad_rel_error(g.grad(vx), finite_difference_grad(eval, x)) < 1e-6);
}

TEST_CASE("deconv2x2 and conv3x3 gradients") {
  std::mt19937_64 rng(19);
  Tensor x = random_tensor({9, 2}, rng);    // 3x3 grid, 2 ch
  Tensor wd = random_tensor({8, 3}, rng);   // 4*2 -> 3
  Tensor bd = random_tensor({1, 3}, rng);
  Tensor wc = random_tensor({27, 2}, rng);  // 9*3 -> 2 on the 6x6 output grid
  Tensor bc = random_tensor({1, 2}, rng);

  auto forward = [&](Graph& g, Var vx, Var vwd, Var vbd, Var vwc, Var vbc) {
    Var up = g.deconv2x2(vx, vwd, vbd, 3);   // -> 6x6 grid, 3 ch
    Var y = g.conv3x3(g.gelu(up), vwc, vbc, 6);
    return g.mean(g.mul(y, y));
  };
  auto eval = [&]() {
    Graph g;
    return forward(g, g.input(x), g.input(wd), g.input(bd), g.input(wc), g.input(bc))
        .val()
        .item();
  };

  Graph g;
  Var vx = g.input(x), vwd = g.input(wd), vbd = g.input(bd), vwc = g.input(wc),
      vbc = g.input(bc);
  g.backward(forward(g, vx, vwd, vbd, vwc, vbc));

  CHECK(grad_rel_error(g.grad(vx), finite_difference_grad(eval, x)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vwd), finite_difference_grad(eval, wd)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vbd), finite_difference_grad(eval, bd)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vwc), finite_difference_grad(eval, wc)) < 1e-6);
  CHECK(grad_rel_error(g.grad(vbc), finite_difference_grad(eval, bc)) < 1e-6);
}

TEST_CASE("parameters accumulate gradients and respect the trainable flag") {
  Parameter w("w", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Parameter frozen("f", Tensor({2, 2}, {1.0, 1.0, 1.0, 1.0}), /*train=*/false);

  Graph g;
  Var vw = g.param(w);
  Var vw2 = g.param(w);  // same node: shared storage
  CHECK(vw.id() == vw2.id());
  Var vf = g.param(frozen);
  Var loss = g.sum(g.mul(g.add(vw, vf), vw));
  g.backward(loss);

  // d/dw sum((w + f) * w) = 2w + f
  CHECK(w.grad[0] == doctest::Approx(2 * 1.0 + 1.0));
  CHECK(w.grad[3] == doctest::Approx(2 * 4.0 + 1.0));
  CHECK(frozen.grad.abs_max() == 0.0);

  // Second backward on a fresh graph accumulates.
  Graph g2;
  Var vw3 = g2.param(w);
  g2.backward(g2.sum(vw3));
  CHECK(w.grad[0] == doctest::Approx(2 * 1.0 + 1.0 + 1.0));
}

TEST_CASE("clamp blocks gradient outside the interval") {
  Tensor x({1, 3}, {-2.0, 0.5, 2.0});
  Graph g;
  Var vx = g.input(x);
  Var y = g.clamp(vx, 0.0, 1.0);
  g.backward(g.sum(y));
  CHECK(g.grad(vx)[0] == 0.0);
  CHECK(g.grad(vx)[1] == 1.0);
  CHECK(g.grad(vx)[2] == 0.0);
}
