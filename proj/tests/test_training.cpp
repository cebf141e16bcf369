#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "addose/phantom.hpp"
#include "addose/training.hpp"

using namespace addose;

TEST_CASE("cosine annealing hits the contracted endpoints and midpoint") {
  const double lr0 = 1e-3, lr_min = 1e-5;
  CHECK(cosine_lr(0, 100, lr0, lr_min) == doctest::Approx(lr0).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, lr0, lr_min) == doctest::Approx(lr_min).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, lr0, lr_min) ==
        doctest::Approx((lr0 + lr_min) / 2.0).epsilon(1e-12));
  CHECK_THROWS(cosine_lr(-1, 100, lr0, lr_min));
  CHECK_THROWS(cosine_lr(101, 100, lr0, lr_min));
}

TEST_CASE("early stop watches a trailing no-improvement window") {
  // Monotone improvement never stops.
  CHECK_FALSE(early_stop({0.1, 0.2, 0.3, 0.4}, 3));
  // Flat history of length patience + 1 stops.
  CHECK(early_stop({0.5, 0.5, 0.5, 0.5}, 3));
  // Improvement at epoch k, flat for exactly `patience` epochs after: stop.
  CHECK_FALSE(early_stop({0.1, 0.9, 0.9}, 3));
  CHECK(early_stop({0.1, 0.9, 0.9, 0.9, 0.9}, 3));
  CHECK_FALSE(early_stop({0.1}, 3));
}

TEST_CASE("mixup coefficients come from a symmetric Beta and mix linearly") {
  Rng rng(111);
  CHECK_THROWS(sample_mixup_lam(0.0, rng));
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double lam = sample_mixup_lam(0.4, rng);
    CHECK(lam >= 0.0);
    CHECK(lam <= 1.0);
    sum += lam;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);

  Tensor a = Tensor::full({4}, 1.0);
  Tensor b = Tensor::full({4}, 0.0);
  CHECK(mixup(a, b, 1.0).data()[0] == doctest::Approx(1.0));
  CHECK(mixup(a, b, 0.0).data()[0] == doctest::Approx(0.0));
  CHECK(mixup(a, b, 0.4).data()[0] == doctest::Approx(0.4));
  CHECK_THROWS(mixup(a, Tensor::full({5}, 0.0), 0.5));

  const std::vector<float> fa(3, 2.0f), fb(3, 4.0f);
  CHECK(mixup(fa, fb, 0.25)[0] == doctest::Approx(2.0f * 0.25f + 4.0f * 0.75f));
}

TEST_CASE("dataset split is deterministic, disjoint and non-degenerate") {
  std::vector<Case> dataset;
  for (int i = 0; i < 16; ++i)
    dataset.push_back(generate_phantom(desk_phantom_spec(Site::kLung, i)));
  std::vector<const Case*> train, val;
  split_dataset(dataset, train, val);
  CHECK_FALSE(train.empty());
  CHECK(train.size() + val.size() == dataset.size());
  CHECK(train.size() > val.size());

  std::set<std::string> train_ids, val_ids;
  for (const auto* c : train) train_ids.insert(c->id);
  for (const auto* c : val) val_ids.insert(c->id);
  for (const auto& id : val_ids) CHECK(train_ids.count(id) == 0);

  std::vector<const Case*> train2, val2;
  split_dataset(dataset, train2, val2);
  CHECK(train.size() == train2.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    CHECK(train[i]->id == train2[i]->id);
}

TEST_CASE("history records are append-only with monotone epochs") {
  TrainHistory h;
  h.append({0, 1.0, 1.0, 0.0, 0.0, 1e-3, -1.0});
  h.append({1, 0.9, 0.9, 0.0, 0.0, 9e-4, 0.8});
  CHECK_THROWS(h.append({1, 0.8, 0.8, 0.0, 0.0, 8e-4, -1.0}));

  const std::string path = "/tmp/addose-test-history.tsv";
  write_history(h, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("epoch") != std::string::npos);
  CHECK(header.find("val_compliance") != std::string::npos);
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}

TEST_CASE("train configs validate their ranges") {
  TrainConfig cfg = TrainConfig::vae_defaults();
  CHECK(cfg.epochs == 200);
  CHECK(cfg.batch == 8);
  CHECK(cfg.lr0 == doctest::Approx(1e-3));
  CHECK_NOTHROW(cfg.validate());
  cfg.batch = 0;
  CHECK_THROWS(cfg.validate());

  TrainConfig dif = TrainConfig::diffusion_defaults();
  CHECK(dif.stage == TrainConfig::Stage::kDiffusion);
  CHECK(dif.epochs == 1000);
  CHECK(dif.batch == 2);
  CHECK(dif.diffusion_steps == 1000);
  CHECK(dif.lambda2 == doctest::Approx(0.5));
}
