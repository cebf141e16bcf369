#include <doctest.h>

#include <filesystem>

#include "addose/checkpoint.hpp"
#include "addose/nn.hpp"
#include "addose/rng.hpp"

using namespace addose;

namespace {

nn::ParamRegistry make_registry(double fill) {
  nn::ParamRegistry reg;
  reg.add("enc.w", Tensor::full({2, 3}, fill));
  reg.add("enc.b", Tensor::full({3}, fill * 2.0));
  return reg;
}

}  // namespace

TEST_CASE("checkpoints round-trip parameters and metadata") {
  const std::string dir = "/tmp/addose-test-ckpt";
  std::filesystem::remove_all(dir);
  nn::ParamRegistry saved = make_registry(0.75);
  save_checkpoint(dir, saved, {{"model", "demo"}, {"latent_scale", "1.25"}});

  nn::ParamRegistry loaded = make_registry(0.0);
  const auto meta = load_checkpoint(dir, loaded);
  CHECK(meta.at("model") == "demo");
  CHECK(meta.at("latent_scale") == "1.25");
  for (std::size_t i = 0; i < saved.tensors.size(); ++i)
    CHECK(loaded.tensors[i].data() == saved.tensors[i].data());

  const auto meta_only = read_checkpoint_meta(dir);
  CHECK(meta_only.at("model") == "demo");
  std::filesystem::remove_all(dir);
}

TEST_CASE("loading rejects mismatched registries") {
  const std::string dir = "/tmp/addose-test-ckpt2";
  std::filesystem::remove_all(dir);
  nn::ParamRegistry saved = make_registry(1.0);
  save_checkpoint(dir, saved, {});

  nn::ParamRegistry wrong_shape;
  wrong_shape.add("enc.w", Tensor::zeros({2, 4}));
  wrong_shape.add("enc.b", Tensor::zeros({3}));
  CHECK_THROWS(load_checkpoint(dir, wrong_shape));

  nn::ParamRegistry wrong_name;
  wrong_name.add("enc.w", Tensor::zeros({2, 3}));
  wrong_name.add("dec.b", Tensor::zeros({3}));
  CHECK_THROWS(load_checkpoint(dir, wrong_name));

  nn::ParamRegistry extra = make_registry(0.0);
  extra.add("extra", Tensor::zeros({1}));
  CHECK_THROWS(load_checkpoint(dir, extra));

  CHECK_THROWS(load_checkpoint("/tmp/addose-no-such-ckpt", saved));
  std::filesystem::remove_all(dir);
}
