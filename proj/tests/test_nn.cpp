#include <doctest.h>

#include <cmath>

#include "addose/nn.hpp"
#include "addose/rng.hpp"
#include "addose/tensor.hpp"

using namespace addose;

TEST_CASE("parameter registry rejects duplicate names and counts scalars") {
  nn::ParamRegistry reg;
  reg.add("a", Tensor::zeros({2, 3}));
  reg.add("b", Tensor::zeros({4}));
  CHECK(reg.total_scalars() == 10);
  CHECK(reg.find("a") != nullptr);
  CHECK(reg.find("missing") == nullptr);
  CHECK_THROWS(reg.add("a", Tensor::zeros({1})));
}

TEST_CASE("registered parameters require gradients") {
  nn::ParamRegistry reg;
  Tensor t = reg.add("w", Tensor::zeros({3}));
  CHECK(t.requires_grad());
}

TEST_CASE("linear layers compute xW^T + b; zero-init layers start at zero") {
  nn::ParamRegistry reg;
  Rng rng(81);
  nn::Linear lin(reg, "lin", 2, 2, rng);
  lin.w.data() = {1.0, 2.0, 3.0, 4.0};
  lin.b.data() = {0.5, -0.5};
  Tensor x = Tensor::from_data({1, 2}, {1.0, 1.0});
  const Tensor yt = lin.forward(x);
  const auto& y = yt.data();
  CHECK(y[0] == doctest::Approx(3.5));
  CHECK(y[1] == doctest::Approx(6.5));

  nn::Linear zl(reg, "zl", 4, 3, rng, true, true);
  Tensor xr = Tensor::randn({2, 4}, rng);
  const Tensor yl = zl.forward(xr);
  for (double v : yl.data()) CHECK(v == 0.0);

  nn::Conv3d zc(reg, "zc", 2, 2, 3, 1, 1, rng, true);
  Tensor xv = Tensor::randn({1, 2, 2, 2, 2}, rng);
  const Tensor yc = zc.forward(xv);
  for (double v : yc.data()) CHECK(v == 0.0);
}

TEST_CASE("kaiming init scales with fan-in and is deterministic") {
  Rng a(9), b(9);
  Tensor w1 = nn::kaiming_normal({64, 16}, 16, a);
  Tensor w2 = nn::kaiming_normal({64, 16}, 16, b);
  CHECK(w1.data() == w2.data());
  double s2 = 0.0;
  for (double v : w1.data()) s2 += v * v;
  const double var = s2 / static_cast<double>(w1.numel());
  CHECK(var == doctest::Approx(2.0 / 16.0).epsilon(0.3));
}

TEST_CASE("group norm starts as pure normalization") {
  nn::ParamRegistry reg;
  nn::GroupNorm gn(reg, "gn", 4, 2);
  for (double v : gn.gamma.data()) CHECK(v == 1.0);
  for (double v : gn.beta.data()) CHECK(v == 0.0);
  // Zero input stays exactly zero (mean 0, gamma*0 + beta = 0).
  Tensor x = Tensor::zeros({1, 4, 2, 2, 2});
  const Tensor y = gn.forward(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("attention over a single key reduces to a value projection") {
  nn::ParamRegistry reg;
  Rng rng(82);
  nn::Attention attn(reg, "attn", 8, 4, rng);
  Tensor q = Tensor::randn({1, 5, 8}, rng);
  Tensor kv = Tensor::randn({1, 1, 8}, rng);
  Tensor y = attn.forward(q, kv);
  CHECK(y.shape() == std::vector<std::int64_t>{1, 5, 8});
  // With one key the softmax is identically 1, so every query receives the
  // same attended value regardless of its own content.
  for (int s = 1; s < 5; ++s)
    for (int c = 0; c < 8; ++c)
      CHECK(y.data()[s * 8 + c] == doctest::Approx(y.data()[c]).epsilon(1e-9));
}

TEST_CASE("adamw minimizes a quadratic and decays weights decoupled") {
  Tensor x = Tensor::from_data({1}, {10.0}, true);
  nn::AdamW opt({x}, 0.2, 0.0);
  for (int i = 0; i < 400; ++i) {
    opt.zero_grad();
    Tensor loss = ops::square(ops::add_scalar(x, -3.0));
    loss.backward();
    opt.step();
  }
  CHECK(x.data()[0] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(opt.steps_taken() == 400);

  // Pure decay: zero gradient shrinks the parameter.
  Tensor w = Tensor::from_data({1}, {1.0}, true);
  nn::AdamW dec({w}, 0.1, 0.5);
  dec.zero_grad();
  w.grad();  // ensure allocated, stays zero
  dec.step();
  CHECK(w.data()[0] < 1.0);
}
