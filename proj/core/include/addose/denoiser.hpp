#pragma once

#include <cstdint>
#include <vector>

#include "addose/conditioning.hpp"
#include "addose/nn.hpp"
#include "addose/rng.hpp"
#include "addose/tensor.hpp"

namespace addose {

// Sinusoidal position embedding of the step index, [N, width], width even.
Tensor time_embedding(const std::vector<double>& t, std::int64_t width);

struct UNetConfig {
  std::int64_t in_channels = 32;    // latent channels
  std::int64_t cond_channels = 32;  // anatomy embedding channels
  std::vector<std::int64_t> widths{64, 128, 256, 256};
  std::int64_t emb_width = 256;  // time/context embedding width
  int heads = 4;
  int attn_stages = 2;  // attention at this many deepest resolutions
  int groups = 8;
  int cond_stages = 4;  // mask-pyramid depth; matches the VAE compression

  static UNetConfig desk();
};

// GroupNorm/SiLU residual block with a per-channel scale-shift driven by
// the step embedding; the second conv is zero-initialized so fresh blocks
// start as identities.
struct ResBlock {
  nn::GroupNorm n1, n2;
  nn::Conv3d c1, c2;
  nn::Linear emb_scale, emb_shift;
  nn::Conv3d skip;
  bool project_skip = false;
  ResBlock() = default;
  ResBlock(nn::ParamRegistry& reg, const std::string& name, std::int64_t in,
           std::int64_t out, std::int64_t emb_width, int groups, Rng& rng);
  Tensor forward(const Tensor& h, const Tensor& emb) const;
};

// Residual cross-attention: queries are the flattened voxels, keys/values
// are two learned tokens built from the step and plan-context embeddings.
struct CrossAttnSite {
  nn::GroupNorm norm;
  nn::Attention attn;
  nn::Linear tok_time, tok_ctx;
  std::int64_t channels = 0;
  CrossAttnSite() = default;
  CrossAttnSite(nn::ParamRegistry& reg, const std::string& name,
                std::int64_t channels, std::int64_t emb_width, int heads, int groups,
                Rng& rng);
  Tensor forward(const Tensor& h, const Tensor& temb, const Tensor& ctx) const;
};

// 1x1 channel compression followed by one cross-attention block; turns the
// anatomy embedding plus (step, context) into the fused condition field the
// U-Net injects at every resolution.
struct ConditionFuser {
  nn::Conv3d compress;
  CrossAttnSite attn;
  ConditionFuser() = default;
  ConditionFuser(nn::ParamRegistry& reg, std::int64_t channels,
                 std::int64_t emb_width, int heads, int groups, Rng& rng);
  Tensor fuse(const Tensor& cond_map, const Tensor& temb, const Tensor& ctx) const;
};

// 4-stage encoder/decoder over latent volumes. The fused condition field is
// concatenated at the input and injected at every resolution through
// average pooling plus a 1x1 conv; odd extents are ceil-padded on the way
// down and cropped on the way up.
class UNet3d {
 public:
  UNet3d() = default;
  UNet3d(nn::ParamRegistry& reg, const UNetConfig& config, Rng& rng);

  // z [N,in,D,H,W]; temb/ctx [N,emb_width]; cond at z's spatial shape.
  Tensor forward(const Tensor& z, const Tensor& temb, const Tensor& cond,
                 const Tensor& ctx) const;

  const UNetConfig& config() const { return config_; }

 private:
  UNetConfig config_;
  nn::Conv3d in_conv_;
  std::vector<nn::Conv3d> inject_;
  std::vector<ResBlock> down_;
  std::vector<CrossAttnSite> down_attn_;  // deepest attn_stages entries
  ResBlock mid1_, mid2_;
  CrossAttnSite mid_attn_;
  std::vector<ResBlock> up_;
  std::vector<nn::ConvTranspose3d> upsample_;
  nn::GroupNorm out_norm_;
  nn::Conv3d out_conv_;
};

// Conditional noise predictor: anatomy/context embedders, condition fusion
// and the U-Net in one parameter registry, so a single checkpoint restores
// everything.
class DoseDenoiser {
 public:
  DoseDenoiser(const UNetConfig& config, Rng& rng);

  Tensor predict_noise(const Tensor& z, const std::vector<double>& t,
                       const Condition& cond) const;
  // Exposed for conditioning diagnostics: the fused condition field fed to
  // the U-Net for step indices t.
  Tensor fused_condition(const Condition& cond, const std::vector<double>& t) const;

  const UNetConfig& config() const { return config_; }
  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }

 private:
  Tensor step_embedding(const std::vector<double>& t) const;

  UNetConfig config_;
  nn::ParamRegistry params_;
  ConditionEmbedder embedder_;
  nn::Linear temb0_, temb1_;
  ConditionFuser fuser_;
  UNet3d unet_;
};

}  // namespace addose
