#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "addose/denoiser.hpp"
#include "addose/diffusion.hpp"
#include "addose/rng.hpp"
#include "addose/vae.hpp"
#include "addose/volumes.hpp"

namespace addose {

struct TrainConfig {
  enum class Stage { kVae, kDiffusion };
  Stage stage = Stage::kVae;
  std::int64_t epochs = 200;
  std::int64_t batch = 8;
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  double lambda1 = 1.0;   // noise-prediction MSE
  double lambda2 = 0.5;   // clinical constraint loss
  double lambda3 = 0.001; // KL ceiling (pretraining only)
  double mixup_alpha = 0.4;
  std::int64_t patience = 20;
  std::int64_t kl_warmup_epochs = 20;
  std::uint64_t seed = 0;
  std::int64_t diffusion_steps = 1000;  // T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::int64_t max_steps = 0;  // optimizer-step cap, 0 = unlimited
  std::int64_t validate_every = 25;  // epochs between compliance validations
  std::array<std::int64_t, 3> patch{32, 32, 32};
  std::array<std::int64_t, 3> patch_overlap{8, 8, 8};
  bool desk = false;

  static TrainConfig vae_defaults();
  static TrainConfig diffusion_defaults();
  void validate() const;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double loss = 0.0;
  double loss_mse = 0.0;   // reconstruction L1 in the VAE stage
  double loss_cond = 0.0;
  double loss_kl = 0.0;
  double lr = 0.0;
  double val_compliance = -1.0;  // -1 when validation did not run
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  void append(EpochRecord r);  // enforces monotone epoch index
};

void write_history(const TrainHistory& h, const std::string& path);

double sample_mixup_lam(double alpha, Rng& rng);
Tensor mixup(const Tensor& a, const Tensor& b, double lam);
std::vector<float> mixup(const std::vector<float>& a, const std::vector<float>& b,
                         double lam);

// lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi step/total))
double cosine_lr(std::int64_t step, std::int64_t total, double lr0, double lr_min);

// True iff the running best has not strictly improved within the trailing
// `patience` entries.
bool early_stop(const std::vector<double>& compliance_history, std::int64_t patience);

// Deterministic 80/20 split by case-id hash; never returns an empty
// training side for nonempty input.
void split_dataset(const std::vector<Case>& dataset, std::vector<const Case*>& train,
                   std::vector<const Case*>& val);

struct TrainResult {
  TrainHistory history;
  double final_metric = 0.0;  // VAE: clean-pass CT L1; diffusion: best compliance
};

// Stage 1: reconstruction + annealed-beta KL over mixup-augmented patches,
// both modalities through their own stems/heads. Writes a checkpoint
// (including the dose-latent RMS used to scale diffusion targets) and a
// history TSV into out_dir.
TrainResult pretrain_vae(const std::vector<Case>& dataset, const TrainConfig& config,
                         const VaeConfig& vae_config, const std::string& out_dir);

// Stage 2: epsilon-prediction on frozen-VAE dose latents with the soft
// clinical penalty on the decoded implied dose; keeps the best-compliance
// parameters. vae_dir must hold a stage-1 checkpoint.
TrainResult train_diffusion(const std::vector<Case>& dataset, const std::string& vae_dir,
                            const TrainConfig& config, const UNetConfig& unet_config,
                            const std::string& out_dir);

// Checkpoint loaders; configs are reconstructed from the manifest meta.
struct LoadedVae {
  std::shared_ptr<Vae3d> model;
  double latent_scale = 1.0;
  std::map<std::string, std::string> meta;
};
LoadedVae load_vae(const std::string& dir);

struct LoadedDenoiser {
  std::shared_ptr<DoseDenoiser> model;
  NoiseSchedule schedule;
  double latent_scale = 1.0;
  std::map<std::string, std::string> meta;
};
LoadedDenoiser load_denoiser(const std::string& dir);

// Full reverse chain for one case: ancestral sampling in latent space,
// dose-head decode, clamp to >= 0. The Gy scale is prescription-based
// (hottest-3% of an on-prescription PTV equals the prescription).
DoseVolume predict_dose(const Case& c, const Vae3d& vae, double latent_scale,
                        const DoseDenoiser& denoiser, const NoiseSchedule& schedule,
                        Rng& rng);

}  // namespace addose
