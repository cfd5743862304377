#include <doctest.h>

#include <cmath>
#include <numeric>

#include "textldm/rng.hpp"
#include "textldm/transformer.hpp"

using namespace tldm;

namespace {

TransformerState tiny_transformer(TransformerConfig cfg, ParamRegistry& reg, std::uint64_t seed) {
  Rng init = Rng::stream(seed, "init");
  return make_transformer(cfg, init, reg, "t");
}

double vec_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("rope at position zero is the identity") {
  Rng rng(1);
  Tensor x = Tensor::gaussian({1, 8}, rng);
  std::vector<std::int32_t> pos = {0};
  Tensor y = rope(x, pos, 10000.0);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(x.data()[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("rope preserves vector norms") {
  Rng rng(2);
  for (int p : {1, 5, 77, 400}) {
    Tensor x = Tensor::gaussian({1, 16}, rng);
    std::vector<std::int32_t> pos = {p};
    Tensor y = rope(x, pos, 10000.0);
    CHECK(vec_norm(y.data()) == doctest::Approx(vec_norm(x.data())).epsilon(1e-5));
  }
}

TEST_CASE("rope dot products depend only on relative position") {
  Rng rng(3);
  Tensor q = Tensor::gaussian({1, 16}, rng);
  Tensor k = Tensor::gaussian({1, 16}, rng);
  auto dot_at = [&](int pq, int pk) {
    std::vector<std::int32_t> a = {pq}, b = {pk};
    Tensor rq = rope(q, a, 10000.0);
    Tensor rk = rope(k, b, 10000.0);
    double acc = 0.0;
    for (std::int64_t i = 0; i < rq.numel(); ++i) {
      acc += double(rq.data()[static_cast<std::size_t>(i)]) *
             double(rk.data()[static_cast<std::size_t>(i)]);
    }
    return acc;
  };
  CHECK(dot_at(3, 7) == doctest::Approx(dot_at(10, 14)).epsilon(1e-4));
  CHECK(dot_at(0, 9) == doctest::Approx(dot_at(21, 30)).epsilon(1e-4));
  CHECK(dot_at(5, 5) == doctest::Approx(dot_at(40, 40)).epsilon(1e-4));
}

TEST_CASE("rope rejects odd head dimensions") {
  Rng rng(4);
  Tensor x = Tensor::gaussian({1, 7}, rng);
  std::vector<std::int32_t> pos = {1};
  CHECK_THROWS_AS((void)rope(x, pos, 10000.0), std::invalid_argument);
}

TEST_CASE("attention over a single position returns v") {
  Rng rng(5);
  Tensor q = Tensor::gaussian({2, 1, 4}, rng);
  Tensor k = Tensor::gaussian({2, 1, 4}, rng);
  Tensor v = Tensor::gaussian({2, 1, 4}, rng);
  Tensor out = attention(q, k, v);
  for (std::int64_t i = 0; i < v.numel(); ++i) {
    CHECK(out.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(v.data()[static_cast<std::size_t>(i)]).epsilon(1e-6));
  }
}

TEST_CASE("identical keys average the values") {
  Rng rng(6);
  Tensor q = Tensor::gaussian({1, 3, 4}, rng);
  std::vector<float> krow = {0.3f, -1.0f, 0.5f, 2.0f};
  std::vector<float> kdata;
  for (int i = 0; i < 3; ++i) kdata.insert(kdata.end(), krow.begin(), krow.end());
  Tensor k = Tensor::from_data({1, 3, 4}, kdata);
  Tensor v = Tensor::gaussian({1, 3, 4}, rng);
  Tensor out = attention(q, k, v);
  for (std::int64_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::int64_t r = 0; r < 3; ++r) mean += v.at({0, r, j});
    mean /= 3.0;
    for (std::int64_t r = 0; r < 3; ++r) {
      CHECK(out.at({0, r, j}) == doctest::Approx(mean).epsilon(1e-5));
    }
  }
}

TEST_CASE("masked-off columns receive zero weight") {
  Rng rng(7);
  Tensor q = Tensor::gaussian({1, 2, 4}, rng);
  Tensor k = Tensor::gaussian({1, 2, 4}, rng);
  // v's masked row is huge; any leaked weight would visibly shift the output
  Tensor v = Tensor::from_data({1, 2, 4}, {1, 1, 1, 1, 1e9f, 1e9f, 1e9f, 1e9f});
  std::vector<std::uint8_t> keep = {1, 0};
  Tensor out = attention(q, k, v, make_pad_mask(keep));
  for (std::int64_t j = 0; j < 4; ++j) {
    CHECK(out.at({0, 0, j}) == doctest::Approx(1.0f));
    CHECK(out.at({0, 1, j}) == doctest::Approx(1.0f));
  }
}

TEST_CASE("zero-layer config passes input through the final norm only") {
  ParamRegistry reg;
  TransformerConfig cfg{.layers = 0, .model_dim = 8, .heads = 2};
  TransformerState st = tiny_transformer(cfg, reg, 11);
  Rng rng(8);
  Tensor x = Tensor::gaussian({3, 8}, rng);
  TransformerOutput out = transformer_forward(st, x);
  CHECK(out.layer_outputs.empty());
  Tensor expected = layer_norm(x, st.final_ln_gain, st.final_ln_bias);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(out.final_output.data()[static_cast<std::size_t>(i)] ==
          expected.data()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("permutation equivariance without rotary positions") {
  ParamRegistry reg;
  TransformerConfig cfg{.layers = 2, .model_dim = 8, .heads = 2, .use_rope = false};
  TransformerState st = tiny_transformer(cfg, reg, 13);
  Rng rng(9);
  Tensor x = Tensor::gaussian({4, 8}, rng);

  const std::vector<std::int64_t> perm = {2, 0, 3, 1};
  std::vector<float> permuted(x.data().size());
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 8; ++c) {
      permuted[static_cast<std::size_t>(r * 8 + c)] = x.at({perm[static_cast<std::size_t>(r)], c});
    }
  }
  Tensor xp = Tensor::from_data({4, 8}, permuted);

  Tensor y = transformer_forward(st, x).final_output;
  Tensor yp = transformer_forward(st, xp).final_output;
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 8; ++c) {
      CHECK(yp.at({r, c}) ==
            doctest::Approx(y.at({perm[static_cast<std::size_t>(r)], c})).epsilon(1e-5));
    }
  }
}

TEST_CASE("every layer output has the input shape") {
  ParamRegistry reg;
  TransformerConfig cfg{.layers = 3, .model_dim = 16, .heads = 4};
  TransformerState st = tiny_transformer(cfg, reg, 17);
  Rng rng(10);
  Tensor x = Tensor::gaussian({5, 16}, rng);
  TransformerOutput out = transformer_forward(st, x);
  REQUIRE(out.layer_outputs.size() == 3);
  for (const auto& h : out.layer_outputs) CHECK(h.shape() == x.shape());
  CHECK(out.final_output.shape() == x.shape());
}

TEST_CASE("sequence overflow is rejected") {
  ParamRegistry reg;
  TransformerConfig cfg{.layers = 1, .model_dim = 8, .heads = 2, .max_positions = 4};
  TransformerState st = tiny_transformer(cfg, reg, 19);
  Rng rng(11);
  Tensor x = Tensor::gaussian({5, 8}, rng);
  CHECK_THROWS_AS((void)transformer_forward(st, x), std::invalid_argument);
}

TEST_CASE("config validation rejects bad dimensions") {
  CHECK_THROWS_AS(TransformerConfig{.layers = 1, .model_dim = 10, .heads = 3}.validate(),
                  std::invalid_argument);
  // odd head_dim with rope
  CHECK_THROWS_AS((TransformerConfig{.layers = 1, .model_dim = 6, .heads = 2}.validate()),
                  std::invalid_argument);
  CHECK_NOTHROW((TransformerConfig{.layers = 1, .model_dim = 8, .heads = 2}.validate()));
}

TEST_CASE("gradient reaches every parameter after one generic step") {
  ParamRegistry reg;
  TransformerConfig cfg{.layers = 2, .model_dim = 16, .heads = 4};
  TransformerState st = tiny_transformer(cfg, reg, 23);
  Rng rng(12);
  Tensor x = Tensor::gaussian({6, 16}, rng);
  Tensor loss = mean(mul(transformer_forward(st, x).final_output, Tensor::gaussian({6, 16}, rng)));
  GradientRecord g = backward(loss);

  std::int64_t nonzero = 0, total = 0;
  for (const auto& p : reg.params()) {
    Tensor gp = g.grad(p);
    for (float v : gp.data()) {
      nonzero += v != 0.0f ? 1 : 0;
      ++total;
    }
  }
  CHECK(double(nonzero) / double(total) > 0.99);
}

TEST_CASE("parameter count is a deterministic function of the config") {
  ParamRegistry a, b;
  TransformerConfig cfg{.layers = 2, .model_dim = 16, .heads = 4};
  (void)tiny_transformer(cfg, a, 29);
  (void)tiny_transformer(cfg, b, 31);
  CHECK(a.size() == b.size());
  CHECK(a.total_elements() == b.total_elements());
  // 16 tensors per layer + 2 final norm tensors
  CHECK(a.size() == 2 * 16 + 2);
}

}  // TEST_SUITE
