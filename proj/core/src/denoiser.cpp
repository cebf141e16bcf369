#include "addose/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace addose {

Tensor time_embedding(const std::vector<double>& t, std::int64_t width) {
  if (width < 2 || width % 2 != 0)
    throw std::invalid_argument("time_embedding: width must be even and >= 2");
  const std::int64_t n = static_cast<std::int64_t>(t.size());
  const std::int64_t half = width / 2;
  std::vector<double> out(static_cast<std::size_t>(n * width));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                                static_cast<double>(width));
      out[i * width + k] = std::sin(t[static_cast<std::size_t>(i)] * freq);
      out[i * width + half + k] = std::cos(t[static_cast<std::size_t>(i)] * freq);
    }
  return Tensor::from_data({n, width}, std::move(out));
}

UNetConfig UNetConfig::desk() {
  UNetConfig c;
  c.in_channels = 8;
  c.cond_channels = 8;
  c.widths = {16, 32, 32, 32};
  c.emb_width = 64;
  c.heads = 4;
  c.attn_stages = 2;
  c.groups = 8;
  c.cond_stages = 4;  // matches the desk VAE's 16x compression
  return c;
}

ResBlock::ResBlock(nn::ParamRegistry& reg, const std::string& name, std::int64_t in,
                   std::int64_t out, std::int64_t emb_width, int groups, Rng& rng)
    : n1(reg, name + ".n1", in, groups),
      n2(reg, name + ".n2", out, groups),
      c1(reg, name + ".c1", in, out, 3, 1, 1, rng),
      c2(reg, name + ".c2", out, out, 3, 1, 1, rng, /*zero_init=*/true),
      emb_scale(nn::Linear(reg, name + ".es", emb_width, out, rng)),
      emb_shift(nn::Linear(reg, name + ".et", emb_width, out, rng)) {
  if (in != out) {
    skip = nn::Conv3d(reg, name + ".skip", in, out, 1, 1, 0, rng);
    project_skip = true;
  }
}

Tensor ResBlock::forward(const Tensor& h, const Tensor& emb) const {
  Tensor r = c1.forward(ops::stable_silu(n1.forward(h)));
  r = n2.forward(r);
  r = ops::scale_shift(r, emb_scale.forward(emb), emb_shift.forward(emb));
  r = c2.forward(ops::stable_silu(r));
  return ops::add(r, project_skip ? skip.forward(h) : h);
}

CrossAttnSite::CrossAttnSite(nn::ParamRegistry& reg, const std::string& name,
                             std::int64_t channels, std::int64_t emb_width, int heads,
                             int groups, Rng& rng)
    : norm(reg, name + ".norm", channels, groups),
      attn(reg, name + ".attn", channels, heads, rng),
      tok_time(reg, name + ".tok_time", emb_width, channels, rng),
      tok_ctx(reg, name + ".tok_ctx", emb_width, channels, rng),
      channels(channels) {}

Tensor CrossAttnSite::forward(const Tensor& h, const Tensor& temb,
                              const Tensor& ctx) const {
  const auto s = h.shape();  // [N,C,D,H,W]
  const std::int64_t N = s[0], C = s[1], S = s[2] * s[3] * s[4];
  Tensor hn = norm.forward(h);
  Tensor queries = ops::permute(ops::reshape(hn, {N, C, S}), {0, 2, 1});  // [N,S,C]
  Tensor tt = ops::reshape(tok_time.forward(temb), {N, 1, C});
  Tensor tc = ops::reshape(tok_ctx.forward(ctx), {N, 1, C});
  Tensor kv = ops::concat_channels(tt, tc);  // token dim, [N,2,C]
  Tensor o = attn.forward(queries, kv);
  o = ops::reshape(ops::permute(o, {0, 2, 1}), s);
  return ops::add(h, o);
}

ConditionFuser::ConditionFuser(nn::ParamRegistry& reg, std::int64_t channels,
                               std::int64_t emb_width, int heads, int groups,
                               Rng& rng)
    : compress(reg, "fuser.compress", channels, channels, 1, 1, 0, rng),
      attn(reg, "fuser", channels, emb_width, heads, groups, rng) {}

Tensor ConditionFuser::fuse(const Tensor& cond_map, const Tensor& temb,
                            const Tensor& ctx) const {
  return attn.forward(compress.forward(cond_map), temb, ctx);
}

UNet3d::UNet3d(nn::ParamRegistry& reg, const UNetConfig& config, Rng& rng)
    : config_(config) {
  if (config.widths.size() != 4)
    throw std::invalid_argument("unet: expected 4 stage widths");
  const auto& w = config.widths;
  Rng r = rng.split("unet");

  in_conv_ = nn::Conv3d(reg, "unet.in", config.in_channels + config.cond_channels,
                        w[0], 3, 1, 1, r);

  for (int i = 0; i < 4; ++i) {
    const std::int64_t win = i == 0 ? w[0] : w[static_cast<std::size_t>(i - 1)];
    inject_.emplace_back(reg, "unet.inject" + std::to_string(i),
                         config.cond_channels, win, 1, 1, 0, r);
    down_.emplace_back(reg, "unet.down" + std::to_string(i), win,
                       w[static_cast<std::size_t>(i)], config.emb_width,
                       config.groups, r);
    if (i >= 4 - config.attn_stages)
      down_attn_.emplace_back(reg, "unet.down" + std::to_string(i) + ".attn",
                              w[static_cast<std::size_t>(i)], config.emb_width,
                              config.heads, config.groups, r);
  }

  mid1_ = ResBlock(reg, "unet.mid1", w[3], w[3], config.emb_width, config.groups, r);
  mid_attn_ = CrossAttnSite(reg, "unet.mid.attn", w[3], config.emb_width,
                            config.heads, config.groups, r);
  mid2_ = ResBlock(reg, "unet.mid2", w[3], w[3], config.emb_width, config.groups, r);

  for (int i = 3; i >= 0; --i) {
    const std::int64_t wout = i == 0 ? w[0] : w[static_cast<std::size_t>(i - 1)];
    const std::int64_t win =
        w[static_cast<std::size_t>(i)] +
        (i == 3 ? w[3] : w[static_cast<std::size_t>(i)]);
    up_.emplace_back(reg, "unet.up" + std::to_string(i), win, wout,
                     config.emb_width, config.groups, r);
    if (i > 0)
      upsample_.emplace_back(reg, "unet.upsample" + std::to_string(i), wout, wout,
                             4, 2, 1, r);
  }

  out_norm_ = nn::GroupNorm(reg, "unet.out.norm", w[0], config.groups);
  out_conv_ = nn::Conv3d(reg, "unet.out", w[0], config.in_channels, 3, 1, 1, r,
                         /*zero_init=*/true);
}

Tensor UNet3d::forward(const Tensor& z, const Tensor& temb, const Tensor& cond,
                       const Tensor& ctx) const {
  const auto& s = z.shape();
  if (s.size() != 5 || s[1] != config_.in_channels)
    throw std::invalid_argument("unet: bad latent shape");
  if (cond.shape() != std::vector<std::int64_t>{s[0], config_.cond_channels, s[2],
                                                s[3], s[4]})
    throw std::invalid_argument("unet: condition field must match latent shape");

  Tensor h = in_conv_.forward(ops::concat_channels(z, cond));

  Tensor c = cond;
  std::vector<Tensor> skips;
  std::vector<std::array<std::int64_t, 3>> sizes;
  for (int i = 0; i < 4; ++i) {
    h = ops::add(h, inject_[static_cast<std::size_t>(i)].forward(c));
    h = down_[static_cast<std::size_t>(i)].forward(h, temb);
    const int ai = i - (4 - config_.attn_stages);
    if (ai >= 0)
      h = down_attn_[static_cast<std::size_t>(ai)].forward(h, temb, ctx);
    skips.push_back(h);
    sizes.push_back({h.shape()[2], h.shape()[3], h.shape()[4]});
    if (i < 3) {
      h = ops::avg_pool3d_2x(h);
      c = ops::avg_pool3d_2x(c);
    }
  }

  h = mid1_.forward(h, temb);
  h = mid_attn_.forward(h, temb, ctx);
  h = mid2_.forward(h, temb);

  for (int i = 3; i >= 0; --i) {
    h = ops::concat_channels(h, skips[static_cast<std::size_t>(i)]);
    h = up_[static_cast<std::size_t>(3 - i)].forward(h, temb);
    if (i > 0) {
      h = upsample_[static_cast<std::size_t>(3 - i)].forward(h);
      // k4 s2 p1 doubles each extent; crop to the skip's (possibly odd) size
      const auto& target = sizes[static_cast<std::size_t>(i - 1)];
      const int before[3] = {0, 0, 0};
      const std::int64_t size[3] = {target[0], target[1], target[2]};
      h = ops::crop3d(h, before, size);
    }
  }

  h = ops::stable_silu(out_norm_.forward(h));
  return out_conv_.forward(h);
}

DoseDenoiser::DoseDenoiser(const UNetConfig& config, Rng& rng) : config_(config) {
  Rng r = rng.split("denoiser");
  embedder_ = ConditionEmbedder(params_, config.cond_channels, config.emb_width, r,
                                config.cond_stages);
  temb0_ = nn::Linear(params_, "temb0", config.emb_width, config.emb_width, r);
  temb1_ = nn::Linear(params_, "temb1", config.emb_width, config.emb_width, r);
  fuser_ = ConditionFuser(params_, config.cond_channels, config.emb_width,
                          config.heads, config.groups, r);
  unet_ = UNet3d(params_, config, r);
}

Tensor DoseDenoiser::step_embedding(const std::vector<double>& t) const {
  Tensor temb = time_embedding(t, config_.emb_width);
  return temb1_.forward(ops::stable_silu(temb0_.forward(temb)));
}

Tensor DoseDenoiser::fused_condition(const Condition& cond,
                                     const std::vector<double>& t) const {
  Tensor temb = step_embedding(t);
  Tensor ctx = embedder_.embed_context(cond.context);
  return fuser_.fuse(embedder_.embed_masks(cond.masks), temb, ctx);
}

Tensor DoseDenoiser::predict_noise(const Tensor& z, const std::vector<double>& t,
                                   const Condition& cond) const {
  if (static_cast<std::int64_t>(t.size()) != z.shape().at(0))
    throw std::invalid_argument("denoiser: one step index per batch item required");
  Tensor temb = step_embedding(t);
  Tensor ctx = embedder_.embed_context(cond.context);
  Tensor fused = fuser_.fuse(embedder_.embed_masks(cond.masks), temb, ctx);
  return unet_.forward(z, temb, fused, ctx);
}

}  // namespace addose
