#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "addose/conditioning.hpp"
#include "addose/denoiser.hpp"
#include "addose/phantom.hpp"

using namespace addose;

TEST_CASE("time embedding follows the sinusoidal formula and is injective") {
  const std::int64_t width = 64;
  Tensor e0 = time_embedding({0.0}, width);
  CHECK(e0.shape() == std::vector<std::int64_t>{1, width});
  // t = 0: all sine components 0, all cosine components 1.
  double sum = 0.0;
  for (double v : e0.data()) sum += v;
  CHECK(sum == doctest::Approx(width / 2.0));

  Tensor e1 = time_embedding({1.0}, width);
  CHECK(std::abs(e1.data()[0] - std::sin(1.0)) < 1e-12);

  std::set<std::string> seen;
  for (int t = 0; t < 1000; ++t) {
    Tensor e = time_embedding({static_cast<double>(t)}, width);
    std::string key;
    for (double v : e.data()) key += std::to_string(v) + ",";
    seen.insert(key);
  }
  CHECK(seen.size() == 1000);
}

TEST_CASE("fresh denoiser predicts exactly zero noise (zero-initialized head)") {
  Rng rng(101);
  DoseDenoiser den(UNetConfig::desk(), rng);
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const Condition cond = build_condition(c);
  Tensor z = Tensor::randn({1, 8, 2, 2, 2}, rng);
  Tensor eps = den.predict_noise(z, {10.0}, cond);
  CHECK(eps.shape() == z.shape());
  for (double v : eps.data()) CHECK(v == 0.0);
}

TEST_CASE("trained-shape forward preserves latent geometry") {
  Rng rng(102);
  DoseDenoiser den(UNetConfig::desk(), rng);
  // Perturb the output head so the prediction is nontrivial.
  Tensor* w = den.params().find("unet.out.w");
  REQUIRE(w != nullptr);
  for (auto& v : w->data()) v = 0.01;
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const Condition cond = build_condition(c);
  Tensor z = Tensor::randn({1, 8, 2, 2, 2}, rng);
  Tensor eps = den.predict_noise(z, {10.0}, cond);
  CHECK(eps.shape() == std::vector<std::int64_t>{1, 8, 2, 2, 2});
  bool any = false;
  for (double v : eps.data()) any |= v != 0.0;
  CHECK(any);
}

TEST_CASE("fused condition features depend on the diffusion step") {
  Rng rng(103);
  DoseDenoiser den(UNetConfig::desk(), rng);
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const Condition cond = build_condition(c);
  Tensor f0 = den.fused_condition(cond, {0.0});
  Tensor f999 = den.fused_condition(cond, {999.0});
  CHECK(f0.shape() == f999.shape());
  CHECK(f0.data() != f999.data());
}

TEST_CASE("unet handles odd spatial extents via ceil-pad and crop") {
  nn::ParamRegistry reg;
  Rng rng(104);
  UNetConfig cfg = UNetConfig::desk();
  UNet3d unet(reg, cfg, rng);
  Tensor z = Tensor::randn({1, cfg.in_channels, 3, 5, 3}, rng);
  Tensor cond = Tensor::randn({1, cfg.cond_channels, 3, 5, 3}, rng);
  Tensor temb = Tensor::randn({1, cfg.emb_width}, rng);
  Tensor ctx = Tensor::randn({1, cfg.emb_width}, rng);
  Tensor y = unet.forward(z, temb, cond, ctx);
  CHECK(y.shape() == std::vector<std::int64_t>{1, cfg.in_channels, 3, 5, 3});
}
