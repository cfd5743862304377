#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "textldm/rng.hpp"
#include "textldm/tensor.hpp"

using namespace tldm;

namespace {
constexpr float kLn2 = 0.6931471805599453f;
}

TEST_SUITE("tensor") {

TEST_CASE("matmul identity case") {
  Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(i2, m);
  CHECK(r.at({0, 0}) == 1);
  CHECK(r.at({0, 1}) == 2);
  CHECK(r.at({1, 0}) == 3);
  CHECK(r.at({1, 1}) == 4);
}

TEST_CASE("matmul hand-computed product") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  Tensor r = matmul(a, b);
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == doctest::Approx(11.0f));
}

TEST_CASE("matmul zero case") {
  Tensor a = Tensor::zeros({2, 3});
  Rng rng(3);
  Tensor b = Tensor::gaussian({3, 4}, rng);
  Tensor r = matmul(a, b);
  CHECK(r.shape() == Shape{2, 4});
  for (float v : r.data()) CHECK(v == 0.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("matmul batch broadcast by equality-or-one") {
  Rng rng(11);
  Tensor a = Tensor::gaussian({3, 2, 4}, rng);
  Tensor b = Tensor::gaussian({1, 4, 5}, rng);
  Tensor r = matmul(a, b);
  CHECK(r.shape() == Shape{3, 2, 5});
  // batch 0 of the broadcast result equals the plain 2-D product
  Tensor a0 = slice_rows(a, 0, 1);
  Tensor r0 = matmul(reshape(a0, {2, 4}), reshape(b, {4, 5}));
  for (std::int64_t i = 0; i < 10; ++i) {
    CHECK(r.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(r0.data()[static_cast<std::size_t>(i)]).epsilon(1e-6));
  }
}

TEST_CASE("softmax symmetry") {
  Tensor r = softmax(Tensor::from_data({2}, {0, 0}), -1);
  CHECK(r.at({0}) == doctest::Approx(0.5f));
  CHECK(r.at({1}) == doctest::Approx(0.5f));
}

TEST_CASE("softmax hand evaluation") {
  Tensor r = softmax(Tensor::from_data({2}, {kLn2, 0}), -1);
  CHECK(r.at({0}) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(r.at({1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("softmax stabilization forces finite results") {
  Tensor r = softmax(Tensor::from_data({2}, {1000, 0}), -1);
  CHECK(std::isfinite(r.at({0})));
  CHECK(r.at({0}) == doctest::Approx(1.0f));
  CHECK(r.at({1}) == doctest::Approx(0.0f));
}

TEST_CASE("softmax rows sum to one up to magnitude 1e4") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.split(static_cast<std::uint64_t>(trial));
    std::vector<float> vals(64);
    for (auto& v : vals) v = static_cast<float>((r.next_double() * 2.0 - 1.0) * 1e4);
    Tensor s = softmax(Tensor::from_data({64}, vals), -1);
    double sum = 0.0;
    for (float v : s.data()) {
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax along a non-trailing axis") {
  Tensor x = Tensor::from_data({2, 2}, {0, 10, kLn2, 10});
  Tensor r = softmax(x, 0);
  CHECK(r.at({0, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(r.at({1, 0}) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(r.at({0, 1}) == doctest::Approx(0.5f));
}

TEST_CASE("layer_norm zero variance handled by eps") {
  Tensor x = Tensor::from_data({2, 3}, {5, 5, 5, -2, -2, -2});
  Tensor r = layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}));
  for (float v : r.data()) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("layer_norm hand-computed normalization") {
  Tensor x = Tensor::from_data({1, 2}, {1, 3});
  Tensor r = layer_norm(x, Tensor::ones({2}), Tensor::zeros({2}), 1e-12f);
  CHECK(r.at({0, 0}) == doctest::Approx(-1.0f).epsilon(1e-4));
  CHECK(r.at({0, 1}) == doctest::Approx(1.0f).epsilon(1e-4));
}

TEST_CASE("layer_norm zero gain zeroes the output") {
  Rng rng(5);
  Tensor x = Tensor::gaussian({3, 4}, rng);
  Tensor r = layer_norm(x, Tensor::zeros({4}), Tensor::zeros({4}));
  for (float v : r.data()) CHECK(v == 0.0f);
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
  Tensor logits = Tensor::zeros({3, 64});
  std::vector<std::int32_t> targets = {0, 13, 63};
  Tensor r = cross_entropy_from_logits(logits, targets);
  CHECK(r.item() == doctest::Approx(std::log(64.0)).epsilon(1e-5));
}

TEST_CASE("cross entropy with a large margin vanishes") {
  std::vector<float> row(16, 0.0f);
  row[4] = 50.0f;
  Tensor logits = Tensor::from_data({1, 16}, row);
  std::vector<std::int32_t> targets = {4};
  CHECK(cross_entropy_from_logits(logits, targets).item() == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("cross entropy hand example from the softmax case") {
  Tensor logits = Tensor::from_data({1, 2}, {kLn2, 0});
  std::vector<std::int32_t> targets = {1};
  CHECK(cross_entropy_from_logits(logits, targets).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-5));
}

TEST_CASE("cross entropy rejects out-of-range targets") {
  Tensor logits = Tensor::zeros({1, 8});
  std::vector<std::int32_t> targets = {8};
  CHECK_THROWS_AS((void)cross_entropy_from_logits(logits, targets), std::out_of_range);
}

TEST_CASE("cross entropy respects the position mask") {
  Tensor logits = Tensor::from_data({2, 2}, {kLn2, 0, 0, 50});
  std::vector<std::int32_t> targets = {1, 0};
  std::vector<std::uint8_t> mask = {1, 0};
  CHECK(cross_entropy_from_logits(logits, targets, mask).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-5));
}

TEST_CASE("cosine similarity of a vector with itself") {
  Tensor v = Tensor::from_data({3}, {1, -2, 0.5});
  CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("cosine similarity orthogonality") {
  Tensor a = Tensor::from_data({2}, {1, 0});
  Tensor b = Tensor::from_data({2}, {0, 1});
  CHECK(cosine_similarity(a, b).item() == doctest::Approx(0.0f));
}

TEST_CASE("cosine similarity hand value") {
  Tensor a = Tensor::from_data({2}, {1, 1});
  Tensor b = Tensor::from_data({2}, {1, 0});
  CHECK(cosine_similarity(a, b).item() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("cosine similarity degenerate norm yields zero") {
  Tensor a = Tensor::zeros({3});
  Tensor b = Tensor::from_data({3}, {1, 2, 3});
  CHECK(cosine_similarity(a, b).item() == 0.0f);
  CHECK(cosine_similarity(b, a).item() == 0.0f);
}

TEST_CASE("values stay within [-1, 1] on random rows") {
  Rng rng(23);
  Tensor a = Tensor::gaussian({32, 6}, rng);
  Tensor b = Tensor::gaussian({32, 6}, rng);
  Tensor c = cosine_similarity(a, b);
  for (float v : c.data()) {
    CHECK(v <= 1.0f + 1e-6f);
    CHECK(v >= -1.0f - 1e-6f);
  }
}

TEST_CASE("clamp passes gradient only inside the window") {
  Tensor x = Tensor::from_data({3}, {-2, 0, 2}).set_requires_grad(true);
  Tensor y = sum(clamp(x, -1.0f, 1.0f));
  GradientRecord g = backward(y);
  Tensor gx = g.grad(x);
  CHECK(gx.at({0}) == 0.0f);
  CHECK(gx.at({1}) == 1.0f);
  CHECK(gx.at({2}) == 0.0f);
}

TEST_CASE("debug finite-check mode flags non-finite results") {
  set_debug_check_finite(true);
  Tensor x = Tensor::from_data({1}, {100.0f});
  CHECK_THROWS_AS((void)exp(mul(x, x)), std::runtime_error);  // exp(10000) overflows
  set_debug_check_finite(false);
  CHECK_NOTHROW((void)exp(mul(x, x)));
}

TEST_CASE("concat and slice are inverse") {
  Rng rng(31);
  Tensor a = Tensor::gaussian({2, 3}, rng);
  Tensor b = Tensor::gaussian({4, 3}, rng);
  const Tensor parts[] = {a, b};
  Tensor c = concat_rows(parts);
  CHECK(c.shape() == Shape{6, 3});
  Tensor back = slice_rows(c, 2, 6);
  for (std::int64_t i = 0; i < back.numel(); ++i) {
    CHECK(back.data()[static_cast<std::size_t>(i)] == b.data()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("split and merge heads round trip") {
  Rng rng(37);
  Tensor x = Tensor::gaussian({5, 8}, rng);
  Tensor r = merge_heads(split_heads(x, 4));
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(r.data()[static_cast<std::size_t>(i)] == x.data()[static_cast<std::size_t>(i)]);
  }
}

}  // TEST_SUITE
