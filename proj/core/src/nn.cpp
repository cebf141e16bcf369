#include "addose/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace addose::nn {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  for (const auto& n : names)
    if (n == name) throw std::logic_error("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  names.push_back(name);
  tensors.push_back(t);
  return t;
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return &tensors[i];
  return nullptr;
}

std::int64_t ParamRegistry::total_scalars() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& t : tensors) t.zero_grad();
}

Tensor kaiming_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::randn(shape, rng);
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : t.data()) x *= s;
  return t;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, std::int64_t in,
               std::int64_t out, Rng& rng, bool bias, bool zero_init) {
  Rng r = rng.split(name);
  w = reg.add(name + ".w", zero_init ? Tensor::zeros({out, in})
                                     : kaiming_normal({out, in}, in, r));
  if (bias) b = reg.add(name + ".b", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, w, b); }

Conv3d::Conv3d(ParamRegistry& reg, const std::string& name, std::int64_t in,
               std::int64_t out, int kernel, int stride, int pad, Rng& rng,
               bool zero_init)
    : stride(stride), pad(pad) {
  Rng r = rng.split(name);
  const std::int64_t fan_in = in * kernel * kernel * kernel;
  w = reg.add(name + ".w",
              zero_init ? Tensor::zeros({out, in, kernel, kernel, kernel})
                        : kaiming_normal({out, in, kernel, kernel, kernel}, fan_in, r));
  b = reg.add(name + ".b", Tensor::zeros({out}));
}

Tensor Conv3d::forward(const Tensor& x) const {
  return ops::conv3d(x, w, b, stride, pad);
}

ConvTranspose3d::ConvTranspose3d(ParamRegistry& reg, const std::string& name,
                                 std::int64_t in, std::int64_t out, int kernel,
                                 int stride, int pad, Rng& rng)
    : stride(stride), pad(pad) {
  Rng r = rng.split(name);
  const std::int64_t fan_in = in * kernel * kernel * kernel;
  w = reg.add(name + ".w",
              kaiming_normal({in, out, kernel, kernel, kernel}, fan_in, r));
  b = reg.add(name + ".b", Tensor::zeros({out}));
}

Tensor ConvTranspose3d::forward(const Tensor& x) const {
  return ops::conv_transpose3d(x, w, b, stride, pad);
}

GroupNorm::GroupNorm(ParamRegistry& reg, const std::string& name,
                     std::int64_t channels, int groups)
    : groups(groups) {
  if (channels % groups != 0)
    throw std::invalid_argument("group_norm: channels must divide by groups");
  gamma = reg.add(name + ".gamma", Tensor::full({channels}, 1.0));
  beta = reg.add(name + ".beta", Tensor::zeros({channels}));
}

Tensor GroupNorm::forward(const Tensor& x) const {
  return ops::group_norm(x, gamma, beta, groups);
}

Attention::Attention(ParamRegistry& reg, const std::string& name,
                     std::int64_t channels, int heads, Rng& rng)
    : heads(heads), channels(channels) {
  if (channels % heads != 0)
    throw std::invalid_argument("attention: channels must divide by heads");
  q = Linear(reg, name + ".q", channels, channels, rng);
  k = Linear(reg, name + ".k", channels, channels, rng);
  v = Linear(reg, name + ".v", channels, channels, rng);
  out = Linear(reg, name + ".out", channels, channels, rng);
}

Tensor Attention::forward(const Tensor& queries, const Tensor& keys_values) const {
  const auto& qs = queries.shape();   // [B, S, C]
  const auto& ks = keys_values.shape();  // [B, T, C]
  if (qs.size() != 3 || ks.size() != 3 || qs[2] != channels || ks[2] != channels ||
      qs[0] != ks[0])
    throw std::invalid_argument("attention: expected [B,S,C]/[B,T,C] token tensors");
  const std::int64_t B = qs[0], S = qs[1], T = ks[1];
  const std::int64_t hd = channels / heads;

  auto split_heads = [&](const Tensor& t, std::int64_t len) {
    // [B, L, C] -> [B*H, L, hd]
    Tensor r = ops::reshape(t, {B, len, heads, hd});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {B * heads, len, hd});
  };

  Tensor Q = split_heads(q.forward(queries), S);
  Tensor K = split_heads(k.forward(keys_values), T);
  Tensor V = split_heads(v.forward(keys_values), T);

  Tensor scores = ops::bmm(Q, ops::permute(K, {0, 2, 1}));  // [B*H, S, T]
  scores = ops::scale(scores, 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor attn = ops::softmax_lastdim(scores);
  Tensor ctx = ops::bmm(attn, V);  // [B*H, S, hd]

  ctx = ops::reshape(ctx, {B, heads, S, hd});
  ctx = ops::permute(ctx, {0, 2, 1, 3});
  ctx = ops::reshape(ctx, {B, S, channels});
  return out.forward(ctx);
}

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay)
    : lr(lr), weight_decay(weight_decay), params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].data().size(), 0.0);
    v_[i].assign(params_[i].data().size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].data();
    auto& g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& t : params_) t.zero_grad();
}

}  // namespace addose::nn
