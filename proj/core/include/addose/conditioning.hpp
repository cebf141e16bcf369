#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "addose/nn.hpp"
#include "addose/rng.hpp"
#include "addose/tensor.hpp"
#include "addose/volumes.hpp"

namespace addose {

// Fixed anatomy channel layout: 3 PTV channels ordered by descending
// prescription, then named OARs. Structures outside the layout do not
// condition the model; missing ones leave their channel empty.
inline constexpr std::int64_t kMaskChannels = 8;
inline constexpr std::int64_t kContextDim = 5;  // technique(2) + site(2) + rx/100

const std::vector<std::string>& condition_oar_order();  // channels 3..7

struct Condition {
  Tensor masks;    // [N, kMaskChannels, D, H, W], {0,1}
  Tensor context;  // [N, kContextDim]
};

Condition build_condition(const std::vector<const Case*>& cases);
Condition build_condition(const Case& c);

// Trainable condition encoders. Masks go through a strided pyramid (one
// stride-2 conv per stage, default four, matching the autoencoder's
// compression) down to the latent resolution; the scalar context through a
// 2-layer MLP of the time-embedding width so both can share fusion tokens.
class ConditionEmbedder {
 public:
  ConditionEmbedder() = default;
  ConditionEmbedder(nn::ParamRegistry& reg, std::int64_t out_channels,
                    std::int64_t context_width, Rng& rng, int stages = 4);

  Tensor embed_masks(const Tensor& masks) const;  // [N,out,D>>s,H>>s,W>>s]
  Tensor embed_context(const Tensor& context) const;  // [N, context_width]

 private:
  std::vector<nn::Conv3d> convs_;
  std::vector<nn::GroupNorm> norms_;
  nn::Linear ctx0_, ctx1_;
};

}  // namespace addose
