#pragma once

#include <string>
#include <vector>

#include "addose/rng.hpp"
#include "addose/tensor.hpp"

namespace addose::nn {

// Flat name -> tensor registry; the checkpoint container serializes it
// by name, so layer names are part of the model format.
struct ParamRegistry {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  std::size_t size() const { return tensors.size(); }
  std::int64_t total_scalars() const;
  void zero_grad();
};

// He-style fan-in init, deterministic from the stream.
Tensor kaiming_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng);

struct Linear {
  Tensor w;  // [out, in]
  Tensor b;
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, std::int64_t in,
         std::int64_t out, Rng& rng, bool bias = true, bool zero_init = false);
  Tensor forward(const Tensor& x) const;
};

struct Conv3d {
  Tensor w;  // [out, in, k, k, k]
  Tensor b;
  int stride = 1;
  int pad = 0;
  Conv3d() = default;
  Conv3d(ParamRegistry& reg, const std::string& name, std::int64_t in,
         std::int64_t out, int kernel, int stride, int pad, Rng& rng,
         bool zero_init = false);
  Tensor forward(const Tensor& x) const;
};

struct ConvTranspose3d {
  Tensor w;  // [in, out, k, k, k]
  Tensor b;
  int stride = 1;
  int pad = 0;
  ConvTranspose3d() = default;
  ConvTranspose3d(ParamRegistry& reg, const std::string& name, std::int64_t in,
                  std::int64_t out, int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct GroupNorm {
  Tensor gamma;
  Tensor beta;
  int groups = 8;
  GroupNorm() = default;
  GroupNorm(ParamRegistry& reg, const std::string& name, std::int64_t channels,
            int groups);
  Tensor forward(const Tensor& x) const;
};

// Multi-head attention over token sequences [B, S, C]; kv may come from a
// different sequence (cross attention). head_dim = C / heads.
struct Attention {
  Linear q, k, v, out;
  int heads = 4;
  std::int64_t channels = 0;
  Attention() = default;
  Attention(ParamRegistry& reg, const std::string& name, std::int64_t channels,
            int heads, Rng& rng);
  Tensor forward(const Tensor& queries, const Tensor& keys_values) const;
};

// Decoupled weight decay Adam; state is per-parameter first/second moments.
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  explicit AdamW(std::vector<Tensor> params, double lr = 1e-3,
                 double weight_decay = 0.01);
  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace addose::nn
