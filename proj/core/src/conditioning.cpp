#include "addose/conditioning.hpp"

#include <stdexcept>

namespace addose {

const std::vector<std::string>& condition_oar_order() {
  static const std::vector<std::string> order = {
      "SpinalCord", "Total Lung-GTV", "Heart", "Esophagus", "BrainStem"};
  return order;
}

Condition build_condition(const std::vector<const Case*>& cases) {
  if (cases.empty()) throw std::invalid_argument("build_condition: no cases");
  const Grid grid = cases[0]->grid();
  const std::int64_t v = grid.voxels();
  const std::int64_t n = static_cast<std::int64_t>(cases.size());

  std::vector<double> masks(static_cast<std::size_t>(n * kMaskChannels * v), 0.0);
  std::vector<double> context(static_cast<std::size_t>(n * kContextDim), 0.0);

  for (std::int64_t i = 0; i < n; ++i) {
    const Case& c = *cases[i];
    if (c.grid() != grid)
      throw std::invalid_argument("build_condition: mixed grids in batch");
    auto channel = [&](std::int64_t ch) {
      return masks.data() + (i * kMaskChannels + ch) * v;
    };
    auto paint = [&](std::int64_t ch, const std::vector<std::uint8_t>& m) {
      double* dst = channel(ch);
      for (std::int64_t k = 0; k < v; ++k)
        if (m[static_cast<std::size_t>(k)]) dst[k] = 1.0;
    };

    const auto ptvs = c.structures.ptvs();
    for (std::size_t p = 0; p < ptvs.size() && p < 3; ++p)
      paint(static_cast<std::int64_t>(p), ptvs[p]->mask);
    const auto& oars = condition_oar_order();
    for (std::size_t o = 0; o < oars.size(); ++o)
      if (const Structure* s = c.structures.find(oars[o]))
        paint(3 + static_cast<std::int64_t>(o), s->mask);

    double* ctx = context.data() + i * kContextDim;
    ctx[c.context.technique == Technique::kImrt ? 0 : 1] = 1.0;
    ctx[c.context.site == Site::kLung ? 2 : 3] = 1.0;
    ctx[4] = c.context.prescription_gy / 100.0;
  }

  Condition cond;
  cond.masks = Tensor::from_data(
      {n, kMaskChannels, grid.shape[0], grid.shape[1], grid.shape[2]},
      std::move(masks));
  cond.context = Tensor::from_data({n, kContextDim}, std::move(context));
  return cond;
}

Condition build_condition(const Case& c) { return build_condition({&c}); }

ConditionEmbedder::ConditionEmbedder(nn::ParamRegistry& reg,
                                     std::int64_t out_channels,
                                     std::int64_t context_width, Rng& rng,
                                     int stages) {
  if (stages < 1 || stages > 4)
    throw std::invalid_argument("ConditionEmbedder: stages must be in [1,4]");
  Rng r = rng.split("cond");
  std::vector<std::int64_t> widths{kMaskChannels};
  const std::int64_t interior[3] = {16, 32, 64};
  for (int i = 0; i + 1 < stages; ++i) widths.push_back(interior[i]);
  widths.push_back(out_channels);
  for (int i = 0; i < stages; ++i) {
    convs_.emplace_back(reg, "cond.mask" + std::to_string(i), widths[i],
                        widths[i + 1], 4, 2, 1, r);
    if (i + 1 < stages)
      norms_.emplace_back(reg, "cond.mask" + std::to_string(i) + ".norm",
                          widths[i + 1], 8);
  }
  ctx0_ = nn::Linear(reg, "cond.ctx0", kContextDim, context_width, r);
  ctx1_ = nn::Linear(reg, "cond.ctx1", context_width, context_width, r);
}

Tensor ConditionEmbedder::embed_masks(const Tensor& masks) const {
  Tensor h = masks;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i].forward(h);
    if (i < norms_.size()) {
      h = norms_[i].forward(h);
      h = ops::stable_silu(h);
    }
  }
  return h;
}

Tensor ConditionEmbedder::embed_context(const Tensor& context) const {
  return ctx1_.forward(ops::stable_silu(ctx0_.forward(context)));
}

}  // namespace addose
