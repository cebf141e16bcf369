#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "addose/nn.hpp"
#include "addose/rng.hpp"
#include "addose/tensor.hpp"

namespace addose {

// Spatially compressing autoencoder over normalized volumes (16x at the
// default four stride-2 stages). CT and dose enter through separate stems and
// leave through separate heads but share the interior ladder, so one model
// serves both modalities.
struct VaeConfig {
  std::vector<std::int64_t> channels{32, 64, 128, 256};  // one per down stage
  std::int64_t latent_channels = 32;
  int groups = 8;

  static VaeConfig desk();  // fewer/narrower stages for fast end-to-end runs
};

enum class Modality { kCt, kDose };

class Vae3d {
 public:
  Vae3d(const VaeConfig& config, Rng& rng);

  struct Encoded {
    Tensor mu;
    Tensor logvar;
  };

  // x is [N,1,D,H,W] with D,H,W divisible by 2^stages.
  Encoded encode(const Tensor& x, Modality m) const;
  Tensor reparameterize(const Encoded& e, Rng& rng) const;  // mu + exp(lv/2) eps
  // z is [N,latent,D>>stages,H>>stages,W>>stages]; output is sigmoid-bounded
  // to [-2, 2].
  Tensor decode(const Tensor& z, Modality m) const;

  // Mean over the batch of 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
  static Tensor kl_divergence(const Encoded& e);

  const VaeConfig& config() const { return config_; }
  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }

  // Latent grid for a given downsampling depth; the default matches the
  // full-scale four-stage ladder (16x compression).
  static std::array<std::int64_t, 3> latent_shape(
      const std::array<std::int64_t, 3>& spatial, int stages = 4);

  int stages() const { return static_cast<int>(config_.channels.size()); }
  std::array<std::int64_t, 3> latent_grid(
      const std::array<std::int64_t, 3>& spatial) const {
    return latent_shape(spatial, stages());
  }

 private:
  Tensor run_decoder(const Tensor& z) const;

  VaeConfig config_;
  nn::ParamRegistry params_;
  nn::Conv3d stem_ct_, stem_dose_;
  std::vector<nn::Conv3d> downs_;
  std::vector<nn::GroupNorm> down_norms_;
  nn::Conv3d mu_head_, logvar_head_;
  nn::Conv3d dec_in_;
  std::vector<nn::ConvTranspose3d> ups_;
  std::vector<nn::GroupNorm> up_norms_;
  nn::Conv3d head_ct_, head_dose_;
};

// L1 reconstruction plus beta-weighted KL.
Tensor vae_loss(const Tensor& recon, const Tensor& target, const Tensor& kl,
                double beta);

// Linear KL warm-up: 0 at epoch 0 rising to beta_max at warmup_epochs.
double anneal_beta(std::int64_t epoch, double beta_max = 1e-3,
                   std::int64_t warmup_epochs = 20);

}  // namespace addose
