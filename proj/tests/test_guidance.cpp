#include <doctest.h>

#include <random>

#include "adapterseg/guidance.hpp"
#include "gradcheck.hpp"

using namespace adapterseg;
using testing::random_tensor;

namespace {

Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({c, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("extract_hfc: mask ratio 0 is the identity") {
  Tensor img = random_image(3, 16, 16, 1);
  Tensor out = extract_hfc(img, 0.0);
  for (std::int64_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(out[i] - img[i]) < 1e-5);
}

TEST_CASE("extract_hfc: mask ratio 1 annihilates square images") {
  Tensor img = random_image(1, 12, 12, 2);
  Tensor out = extract_hfc(img, 1.0);
  CHECK(out.abs_max() < 1e-5);
}

TEST_CASE("extract_hfc: DC-only mask equals mean subtraction") {
  // 2x2 image [[1,2],[3,4]]; side ceil(0.5*2)=1 covers exactly the DC bin,
  // so the result is the image minus its mean 2.5.
  Tensor img({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor out = extract_hfc(img, 0.5);
  CHECK(out[0] == doctest::Approx(-1.5).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(-0.5).epsilon(1e-9));
  CHECK(out[2] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(out[3] == doctest::Approx(1.5).epsilon(1e-9));

  // Same check on a larger image against an explicit mean-subtraction oracle.
  Tensor big = random_image(1, 9, 9, 3);
  Tensor hf = extract_hfc(big, 1.0 / 9.0);  // side 1 = DC bin
  const double mean = big.sum() / static_cast<double>(big.size());
  for (std::int64_t i = 0; i < big.size(); ++i)
    CHECK(std::abs(hf[i] - (big[i] - mean)) < 1e-5);
}

TEST_CASE("extract_hfc is linear and idempotent") {
  Tensor x = random_image(1, 10, 14, 4);
  Tensor y = random_image(1, 10, 14, 5);
  const double a = 0.7, b = -1.3;
  const double tau = 0.3;

  Tensor mix(x.shape());
  mix.array() = a * x.array() + b * y.array();
  Tensor lhs = extract_hfc(mix, tau);
  Tensor hx = extract_hfc(x, tau);
  Tensor hy = extract_hfc(y, tau);
  for (std::int64_t i = 0; i < lhs.size(); ++i)
    CHECK(std::abs(lhs[i] - (a * hx[i] + b * hy[i])) < 1e-5);

  Tensor twice = extract_hfc(hx, tau);
  for (std::int64_t i = 0; i < hx.size(); ++i)
    CHECK(std::abs(twice[i] - hx[i]) < 1e-5);
}

TEST_CASE("extract_hfc rejects bad inputs") {
  Tensor img = random_image(1, 4, 4, 6);
  CHECK_THROWS_AS(extract_hfc(img, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(extract_hfc(img, 1.5), std::invalid_argument);
  img[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(extract_hfc(img, 0.5), std::invalid_argument);
}

TEST_CASE("patch embedding: constant image gives identical rows") {
  ImageTensor img{Tensor::full({3, 8, 8}, 0.25)};
  Linear proj("p", 4 * 4 * 3, 7);
  std::mt19937_64 rng(9);
  proj.init_uniform_fan_in(rng);
  GuidanceComponent c =
      compute_patch_embedding(img, 4, proj, GuidanceKind::kPatchEmbed, 0);
  CHECK(c.data.rows() == 4);
  CHECK(c.data.cols() == 7);
  for (std::int64_t r = 1; r < c.data.rows(); ++r)
    for (std::int64_t j = 0; j < c.data.cols(); ++j)
      CHECK(c.data.at(r, j) == doctest::Approx(c.data.at(0, j)).epsilon(1e-12));
}

TEST_CASE("patch embedding: single patch with identity projection flattens the image") {
  Tensor raw({1, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i) raw[i] = static_cast<double>(i) / 15.0;
  Linear proj("p", 16, 16);
  proj.init_zero();
  for (std::int64_t i = 0; i < 16; ++i) proj.weight.value.at(i, i) = 1.0;
  GuidanceComponent c = compute_patch_embedding(ImageTensor{raw}, 4, proj,
                                                GuidanceKind::kPatchEmbed, 0);
  REQUIRE(c.data.rows() == 1);
  for (std::int64_t i = 0; i < 16; ++i)
    CHECK(c.data.at(0, i) == doctest::Approx(raw[i]).epsilon(1e-12));
}

TEST_CASE("patch embedding: all-ones projection sums each patch") {
  // 4x4 grid of values 0..15 scaled into [0,1]; the 2x2 patch sums of the
  // raw grid are {10, 18, 42, 50}.
  Tensor raw({1, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i) raw[i] = static_cast<double>(i) / 15.0;
  Linear proj("p", 4, 1);
  proj.init_zero();
  for (std::int64_t i = 0; i < 4; ++i) proj.weight.value.at(i, 0) = 1.0;
  GuidanceComponent c = compute_patch_embedding(ImageTensor{raw}, 2, proj,
                                                GuidanceKind::kPatchEmbed, 0);
  REQUIRE(c.data.rows() == 4);
  const double expected[4] = {10.0 / 15.0, 18.0 / 15.0, 42.0 / 15.0, 50.0 / 15.0};
  for (int i = 0; i < 4; ++i)
    CHECK(c.data.at(i, 0) == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("patch embedding rejects non-divisible dimensions") {
  ImageTensor img{Tensor::full({1, 5, 4}, 0.5)};
  Linear proj("p", 4, 2);
  CHECK_THROWS_WITH_AS(
      compute_patch_embedding(img, 2, proj, GuidanceKind::kPatchEmbed, 0),
      doctest::Contains("not divisible"), std::invalid_argument);
}

TEST_CASE("compose_guidance identities") {
  std::mt19937_64 rng(21);
  GuidanceComponent a{GuidanceKind::kHfc, random_tensor({6, 3}, rng), 0};

  SUBCASE("single component with unit weight is the identity") {
    GuidanceTensor out = compose_guidance({a}, GuidanceWeights::ones(1));
    for (std::int64_t i = 0; i < a.data.size(); ++i) CHECK(out.data[i] == a.data[i]);
  }
  SUBCASE("all-zero weights annihilate") {
    GuidanceTensor out = compose_guidance({a, a}, {{0.0, 0.0}, false});
    CHECK(out.data.abs_max() == 0.0);
  }
  SUBCASE("unit weights add elementwise") {
    GuidanceComponent ones{GuidanceKind::kHfc, Tensor::full({6, 3}, 1.0), 0};
    GuidanceComponent twos{GuidanceKind::kPatchEmbed, Tensor::full({6, 3}, 2.0), 1};
    GuidanceTensor out = compose_guidance({ones, twos}, GuidanceWeights::ones(2));
    for (std::int64_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == 3.0);
  }
  SUBCASE("doubling every weight doubles the output exactly") {
    GuidanceComponent b{GuidanceKind::kPatchEmbed, random_tensor({6, 3}, rng), 1};
    GuidanceTensor once = compose_guidance({a, b}, {{0.5, 2.0}, false});
    GuidanceTensor twice = compose_guidance({a, b}, {{1.0, 4.0}, false});
    for (std::int64_t i = 0; i < once.data.size(); ++i)
      CHECK(twice.data[i] == 2.0 * once.data[i]);
  }
  SUBCASE("rejects empty list and shape mismatch") {
    CHECK_THROWS_AS(compose_guidance({}, GuidanceWeights::ones(0)), std::invalid_argument);
    GuidanceComponent bad{GuidanceKind::kCustom, Tensor::matrix(5, 3), 1};
    CHECK_THROWS_AS(compose_guidance({a, bad}, GuidanceWeights::ones(2)),
                    std::invalid_argument);
    CHECK_THROWS_AS(compose_guidance({a}, GuidanceWeights::ones(2)), std::invalid_argument);
  }
}

TEST_CASE("compose_guidance_var: gradient flows to trainable weights") {
  std::mt19937_64 rng(23);
  Tensor ca = random_tensor({4, 2}, rng);
  Tensor cb = random_tensor({4, 2}, rng);
  Parameter wa("w0", Tensor::scalar(1.0));
  Parameter wb("w1", Tensor::scalar(1.0));

  Graph g;
  Var composed = compose_guidance_var(g, {g.constant(ca), g.constant(cb)},
                                      {g.param(wa), g.param(wb)});
  g.backward(g.sum(composed));
  CHECK(wa.grad.item() == doctest::Approx(ca.sum()).epsilon(1e-12));
  CHECK(wb.grad.item() == doctest::Approx(cb.sum()).epsilon(1e-12));
}

TEST_CASE("guidance_pyramid pools to every stage grid") {
  std::mt19937_64 rng(25);
  GuidanceTensor base{random_tensor({16 * 16, 8}, rng), 0};
  auto pyr = guidance_pyramid(base, {16, 8, 4, 2});
  REQUIRE(pyr.size() == 4);
  CHECK(pyr[0].data.rows() == 256);
  CHECK(pyr[1].data.rows() == 64);
  CHECK(pyr[2].data.rows() == 16);
  CHECK(pyr[3].data.rows() == 4);
  // Top-left 2x2 block of the base grid averages into entry (0,0) of level 1.
  double expect = 0.25 * (base.data.at(0, 0) + base.data.at(1, 0) + base.data.at(16, 0) +
                          base.data.at(17, 0));
  CHECK(pyr[1].data.at(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  // Pooling preserves the row-count invariant num_patches * factor^2 = base.
  for (std::size_t s = 0; s < pyr.size(); ++s)
    CHECK(pyr[s].data.cols() == base.data.cols());
}
