#include <doctest.h>

#include <random>

#include "adapterseg/losses.hpp"
#include "gradcheck.hpp"

using namespace adapterseg;
using testing::finite_difference_grad;
using testing::grad_rel_error;
using testing::random_tensor;

namespace {

Tensor random_binary(std::vector<std::int64_t> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::bernoulli_distribution d(0.5);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = d(rng) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST_CASE("bce_loss frozen values") {
  SUBCASE("p = y exactly is bounded by the clamp") {
    Tensor y({1, 4}, {1, 0, 1, 0});
    LossValue l = bce_loss(y, y);
    CHECK(l.value <= -std::log(1.0 - kProbEps) + 1e-12);
    CHECK(l.value >= 0.0);
  }
  SUBCASE("p = 0.5 everywhere gives ln 2") {
    Tensor p = Tensor::full({2, 3}, 0.5);
    Tensor y({2, 3}, {1, 0, 1, 1, 0, 0});
    CHECK(bce_loss(p, y).value == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  }
  SUBCASE("two-pixel hand value") {
    Tensor p({1, 2}, {0.8, 0.3});
    Tensor y({1, 2}, {1.0, 0.0});
    CHECK(bce_loss(p, y).value == doctest::Approx(0.2899092476264711).epsilon(1e-10));
  }
  SUBCASE("shape mismatch rejected") {
    CHECK_THROWS_AS(bce_loss(Tensor::matrix(1, 2), Tensor::matrix(2, 1)),
                    std::invalid_argument);
  }
}

TEST_CASE("iou_loss frozen values") {
  SUBCASE("perfect overlap is zero") {
    Tensor y({1, 4}, {1, 0, 1, 0});
    CHECK(iou_loss(y, y).value == 0.0);
  }
  SUBCASE("uniform half prediction on all-ones target") {
    Tensor p = Tensor::full({2, 4}, 0.5);
    Tensor y = Tensor::full({2, 4}, 1.0);
    CHECK(iou_loss(p, y).value == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("hand-summed crossover") {
    Tensor p({1, 4}, {1, 1, 0, 0});
    Tensor y({1, 4}, {1, 0, 1, 0});
    CHECK(iou_loss(p, y).value == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("all-background with zero prediction returns 0 by convention") {
    Tensor z = Tensor::matrix(2, 2);
    CHECK(iou_loss(z, z).value == 0.0);
  }
}

TEST_CASE("balanced_bce_loss frozen values") {
  SUBCASE("balanced target equals half of plain bce") {
    std::mt19937_64 rng(3);
    Tensor p = random_tensor({1, 8}, rng, 0.1, 0.9);
    Tensor y({1, 8}, {1, 1, 1, 1, 0, 0, 0, 0});
    CHECK(balanced_bce_loss(p, y).value ==
          doctest::Approx(0.5 * bce_loss(p, y).value).epsilon(1e-12));
  }
  SUBCASE("optimum is ~0") {
    Tensor y({1, 4}, {1, 0, 0, 1});
    CHECK(balanced_bce_loss(y, y).value < 1e-6);
  }
  SUBCASE("hand value with alpha 0.75") {
    Tensor p({1, 4}, {0.9, 0.1, 0.1, 0.1});
    Tensor y({1, 4}, {1, 0, 0, 0});
    CHECK(balanced_bce_loss(p, y).value ==
          doctest::Approx(0.03951019337168486).epsilon(1e-10));
  }
  SUBCASE("single-class target falls back to plain bce with a flag") {
    Tensor p({1, 3}, {0.2, 0.4, 0.6});
    Tensor y = Tensor::full({1, 3}, 1.0);
    LossValue l = balanced_bce_loss(p, y);
    CHECK(l.balanced_fallback);
    CHECK(l.value == doctest::Approx(bce_loss(p, y).value).epsilon(1e-12));
  }
}

TEST_CASE("combined objective exposes both terms with unit weights") {
  std::mt19937_64 rng(5);
  Tensor p = random_tensor({2, 4}, rng, 0.05, 0.95);
  Tensor y = random_binary({2, 4}, rng);
  LossValue l = bce_iou_loss(p, y);
  REQUIRE(l.bce.has_value());
  REQUIRE(l.iou.has_value());
  CHECK(l.value == doctest::Approx(*l.bce + *l.iou).epsilon(1e-12));

  CHECK(task_loss(TaskKind::kCod, p, y).iou.has_value());
  CHECK(task_loss(TaskKind::kPolyp, p, y).iou.has_value());
  CHECK(task_loss(TaskKind::kCell, p, y).iou.has_value());
  CHECK(task_loss(TaskKind::kShadow, p, y).balanced_bce.has_value());
}

TEST_CASE("losses are nonnegative and vanish at the optimum") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p = random_tensor({1, 9}, rng, 0.0, 1.0);
    Tensor y = random_binary({1, 9}, rng);
    CHECK(bce_loss(p, y).value >= 0.0);
    CHECK(iou_loss(p, y).value >= 0.0);
    CHECK(balanced_bce_loss(p, y).value >= 0.0);
    CHECK(bce_loss(y, y).value < 1e-6);
    CHECK(iou_loss(y, y).value == 0.0);
  }
}

TEST_CASE("iou_loss is monotone as predictions move toward the target") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p = random_tensor({1, 8}, rng, 0.0, 1.0);
    Tensor y = random_binary({1, 8}, rng);
    const double before = iou_loss(p, y).value;
    // Move one coordinate toward its target.
    std::uniform_int_distribution<std::int64_t> pick(0, 7);
    std::int64_t i = pick(rng);
    p[i] = p[i] + 0.5 * (y[i] - p[i]);
    const double after = iou_loss(p, y).value;
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(11);
  Tensor p = random_tensor({2, 8}, rng, 0.1, 0.9);  // away from the clamp
  Tensor y = random_binary({2, 8}, rng);

  auto check_loss = [&](auto build) {
    auto eval = [&]() {
      Graph g;
      return build(g, g.input(p)).val().item();
    };
    Graph g;
    Var vp = g.input(p);
    g.backward(build(g, vp));
    CHECK(grad_rel_error(g.grad(vp), finite_difference_grad(eval, p)) < 1e-4);
  };

  check_loss([&](Graph& g, Var vp) { return bce_loss_var(g, vp, y); });
  check_loss([&](Graph& g, Var vp) { return balanced_bce_loss_var(g, vp, y); });
  check_loss([&](Graph& g, Var vp) { return iou_loss_var(g, vp, y); });
  check_loss([&](Graph& g, Var vp) { return task_loss_var(g, TaskKind::kCod, vp, y); });
}

TEST_CASE("differentiable losses agree with the plain evaluations") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = random_tensor({3, 5}, rng, 0.0, 1.0);
    Tensor y = random_binary({3, 5}, rng);
    Graph g;
    Var vp = g.constant(p);
    CHECK(bce_loss_var(g, vp, y).val().item() ==
          doctest::Approx(bce_loss(p, y).value).epsilon(1e-12));
    CHECK(iou_loss_var(g, vp, y).val().item() ==
          doctest::Approx(iou_loss(p, y).value).epsilon(1e-12));
    CHECK(balanced_bce_loss_var(g, vp, y).val().item() ==
          doctest::Approx(balanced_bce_loss(p, y).value).epsilon(1e-12));
  }
}
