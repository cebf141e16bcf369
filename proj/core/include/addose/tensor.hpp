#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace addose {

class Rng;

// Dynamic reverse-mode autodiff over dense double tensors. Desk-scale
// volumes are small enough that double precision is affordable, and it
// keeps finite-difference gradient checks clean.
struct TensorImpl {
  std::vector<std::int64_t> shape;
  std::vector<double> v;  // values
  std::vector<double> g;  // gradient, lazily sized
  bool requires_grad = false;  // leaf flag
  bool tracked = false;        // participates in a graph
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(std::vector<std::int64_t> shape, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->numel(); }
  std::vector<double>& data() { return impl_->v; }
  const std::vector<double>& data() const { return impl_->v; }
  std::vector<double>& grad() { impl_->ensure_grad(); return impl_->g; }
  bool requires_grad() const { return impl_->requires_grad; }
  bool tracked() const { return impl_->tracked; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; impl_->tracked = rg; }
  double item() const { return impl_->v.at(0); }
  void zero_grad() { if (!impl_->g.empty()) std::fill(impl_->g.begin(), impl_->g.end(), 0.0); }

  // Backpropagate from this scalar.
  void backward() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// SiLU with the pre-sigmoid input clamped to [-60, 60].
Tensor stable_silu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor detach(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // [N,C,...] dim 1
Tensor softmax_lastdim(const Tensor& a);
Tensor layernorm_lastdim(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5);

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
Tensor bmm(const Tensor& a, const Tensor& b);
// Linear over last dim: x [.., In], w [Out, In], b [Out] -> [.., Out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// 5-D tensors [N,C,D,H,W].
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int pad);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);
// h[n,c,...] * (1 + s[n,c]) + t[n,c]
Tensor scale_shift(const Tensor& x, const Tensor& s, const Tensor& t);
// Zero-pad / crop the spatial dims of [N,C,D,H,W].
Tensor pad3d(const Tensor& x, const int before[3], const int after[3]);
Tensor crop3d(const Tensor& x, const int before[3], const std::int64_t size[3]);
Tensor avg_pool3d_2x(const Tensor& x);  // ceil-pads odd axes with zeros

// Select flat indices into a vector tensor; backward scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::int64_t> indices);
// Interpolated order statistic: the value at descending rank q*(n-1),
// q in [0,1] measured from the hottest element. Subgradient flows to the
// two straddling order statistics.
Tensor percentile_hottest(const Tensor& x, double q);
// log-sum-exp over all elements with temperature tau:
// tau * log(sum exp(x/tau)), computed stably.
Tensor logsumexp_tau(const Tensor& x, double tau);

}  // namespace ops
}  // namespace addose
