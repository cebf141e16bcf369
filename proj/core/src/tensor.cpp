#include "addose/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <cblas.h>

#include "addose/rng.hpp"

namespace addose {

namespace {

std::shared_ptr<TensorImpl> make_impl(std::vector<std::int64_t> shape) {
  auto t = std::make_shared<TensorImpl>();
  t->shape = std::move(shape);
  t->v.assign(static_cast<std::size_t>(t->numel()), 0.0);
  return t;
}

Tensor make_result(std::vector<std::int64_t> shape,
                   std::initializer_list<Tensor> parents) {
  auto impl = make_impl(std::move(shape));
  for (const auto& p : parents)
    if (p.impl()->tracked) impl->tracked = true;
  // Parents are only recorded on tracked nodes so that inference-mode
  // forward passes do not retain every intermediate activation.
  if (impl->tracked)
    for (const auto& p : parents) impl->parents.push_back(p.impl());
  return Tensor(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  auto impl = make_impl(std::move(shape));
  impl->requires_grad = requires_grad;
  impl->tracked = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  if (static_cast<std::int64_t>(data.size()) != impl->numel())
    throw std::invalid_argument("from_data: size does not match shape");
  impl->v = std::move(data);
  impl->requires_grad = requires_grad;
  impl->tracked = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.data()) x = rng.normal();
  return t;
}

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward: root must be scalar");
  // Topological order via iterative DFS.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (p->tracked && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  impl_->ensure_grad();
  impl_->g[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

namespace ops {

// ---------------------------------------------------------------- elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd, const char* /*name*/) {
  Tensor out = make_result(a.shape(), {a});
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  if (out.tracked()) {
    auto ai = a.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, oi, bwd]() {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->v.size(); ++i)
        ai->g[i] += oi->g[i] * bwd(ai->v[i], oi->v[i]);
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_result(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (out.tracked()) {
    auto ai = a.impl(), bi = b.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, bi, oi]() {
      if (ai->tracked) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->v.size(); ++i) ai->g[i] += oi->g[i];
      }
      if (bi->tracked) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->v.size(); ++i) bi->g[i] += oi->g[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_result(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  if (out.tracked()) {
    auto ai = a.impl(), bi = b.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, bi, oi]() {
      if (ai->tracked) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->v.size(); ++i) ai->g[i] += oi->g[i];
      }
      if (bi->tracked) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->v.size(); ++i) bi->g[i] -= oi->g[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_result(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (out.tracked()) {
    auto ai = a.impl(), bi = b.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, bi, oi]() {
      if (ai->tracked) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->v.size(); ++i) ai->g[i] += oi->g[i] * bi->v[i];
      }
      if (bi->tracked) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->v.size(); ++i) bi->g[i] += oi->g[i] * ai->v[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x * s; },
                  [s](double, double) { return s; }, "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; }, "add_scalar");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; }, "log");
}

Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::abs(x); },
                  [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; }, "abs");
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; }, "square");
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor stable_silu(const Tensor& a) {
  auto fwd = [](double x) {
    const double c = std::clamp(x, -60.0, 60.0);
    return x / (1.0 + std::exp(-c));
  };
  auto bwd = [](double x, double) {
    const double c = std::clamp(x, -60.0, 60.0);
    const double s = 1.0 / (1.0 + std::exp(-c));
    // d/dx [x * sigmoid(clamp(x))]; the clamp is inactive in the
    // operating range, saturated outside it.
    const double ds = (x > -60.0 && x < 60.0) ? s * (1.0 - s) : 0.0;
    return s + x * ds;
  };
  return unary_op(a, fwd, bwd, "stable_silu");
}

Tensor sum(const Tensor& a) {
  Tensor out = make_result({1}, {a});
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  out.data()[0] = acc;
  if (out.tracked()) {
    auto ai = a.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, oi]() {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->v.size(); ++i) ai->g[i] += oi->g[0];
    };
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor detach(const Tensor& a) {
  return Tensor::from_data(a.shape(), a.data(), false);
}

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape) {
  Tensor out = make_result(std::move(shape), {a});
  if (out.numel() != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  out.data() = a.data();
  if (out.tracked()) {
    auto ai = a.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, oi]() {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->v.size(); ++i) ai->g[i] += oi->g[i];
    };
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const auto& sh = a.shape();
  const int nd = static_cast<int>(sh.size());
  if (static_cast<int>(perm.size()) != nd)
    throw std::invalid_argument("permute: rank mismatch");
  std::vector<std::int64_t> osh(nd);
  for (int i = 0; i < nd; ++i) osh[i] = sh[perm[i]];
  // strides of input
  std::vector<std::int64_t> istr(nd, 1);
  for (int i = nd - 2; i >= 0; --i) istr[i] = istr[i + 1] * sh[i + 1];
  std::vector<std::int64_t> map_str(nd);
  for (int i = 0; i < nd; ++i) map_str[i] = istr[perm[i]];
  Tensor out = make_result(osh, {a});
  const std::int64_t n = out.numel();
  // Precompute index mapping once; reused by backward.
  auto mapping = std::make_shared<std::vector<std::int64_t>>(n);
  {
    std::vector<std::int64_t> idx(nd, 0);
    for (std::int64_t o = 0; o < n; ++o) {
      std::int64_t src = 0;
      for (int i = 0; i < nd; ++i) src += idx[i] * map_str[i];
      (*mapping)[o] = src;
      out.data()[o] = a.data()[src];
      for (int i = nd - 1; i >= 0; --i) {
        if (++idx[i] < osh[i]) break;
        idx[i] = 0;
      }
    }
  }
  if (out.tracked()) {
    auto ai = a.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, oi, mapping]() {
      ai->ensure_grad();
      for (std::size_t o = 0; o < mapping->size(); ++o)
        ai->g[(*mapping)[o]] += oi->g[o];
    };
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || sa.size() < 2)
    throw std::invalid_argument("concat_channels: rank mismatch");
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != 1 && sa[i] != sb[i])
      throw std::invalid_argument("concat_channels: non-channel dims differ");
  std::vector<std::int64_t> osh = sa;
  osh[1] = sa[1] + sb[1];
  Tensor out = make_result(osh, {a, b});
  const std::int64_t n = sa[0];
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
  const std::int64_t ca = sa[1], cb = sb[1];
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca * inner, ca * inner,
                out.data().begin() + i * (ca + cb) * inner);
    std::copy_n(b.data().begin() + i * cb * inner, cb * inner,
                out.data().begin() + i * (ca + cb) * inner + ca * inner);
  }
  if (out.tracked()) {
    auto ai = a.impl(), bi = b.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, bi, oi, n, inner, ca, cb]() {
      if (ai->tracked) {
        ai->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < ca * inner; ++j)
            ai->g[i * ca * inner + j] += oi->g[i * (ca + cb) * inner + j];
      }
      if (bi->tracked) {
        bi->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < cb * inner; ++j)
            bi->g[i * cb * inner + j] += oi->g[i * (ca + cb) * inner + ca * inner + j];
      }
    };
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& a) {
  const auto& sh = a.shape();
  const std::int64_t cols = sh.back();
  const std::int64_t rows = a.numel() / cols;
  Tensor out = make_result(sh, {a});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    double m = x[0];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - m);
      z += y[c];
    }
    for (std::int64_t c = 0; c < cols; ++c) y[c] /= z;
  }
  if (out.tracked()) {
    auto ai = a.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, oi, rows, cols]() {
      ai->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* s = oi->v.data() + r * cols;
        const double* dy = oi->g.data() + r * cols;
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) dot += dy[c] * s[c];
        for (std::int64_t c = 0; c < cols; ++c)
          ai->g[r * cols + c] += s[c] * (dy[c] - dot);
      }
    };
  }
  return out;
}

Tensor layernorm_lastdim(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps) {
  const auto& sh = a.shape();
  const std::int64_t cols = sh.back();
  const std::int64_t rows = a.numel() / cols;
  if (gamma.numel() != cols || beta.numel() != cols)
    throw std::invalid_argument("layernorm: affine size mismatch");
  Tensor out = make_result(sh, {a, gamma, beta});
  auto stats = std::make_shared<std::vector<double>>(2 * rows);  // mean, inv_std
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double mu = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) mu += x[c];
    mu /= cols;
    double var = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = inv;
    for (std::int64_t c = 0; c < cols; ++c)
      out.data()[r * cols + c] = (x[c] - mu) * inv * gamma.data()[c] + beta.data()[c];
  }
  if (out.tracked()) {
    auto ai = a.impl(), gi = gamma.impl(), bi = beta.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, gi, bi, oi, stats, rows, cols]() {
      for (std::int64_t r = 0; r < rows; ++r) {
        const double mu = (*stats)[2 * r];
        const double inv = (*stats)[2 * r + 1];
        const double* x = ai->v.data() + r * cols;
        const double* dy = oi->g.data() + r * cols;
        if (gi->tracked) {
          gi->ensure_grad();
          for (std::int64_t c = 0; c < cols; ++c)
            gi->g[c] += dy[c] * (x[c] - mu) * inv;
        }
        if (bi->tracked) {
          bi->ensure_grad();
          for (std::int64_t c = 0; c < cols; ++c) bi->g[c] += dy[c];
        }
        if (ai->tracked) {
          ai->ensure_grad();
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::int64_t c = 0; c < cols; ++c) {
            const double d = dy[c] * gi->v[c];
            sum_d += d;
            sum_dx += d * (x[c] - mu) * inv;
          }
          for (std::int64_t c = 0; c < cols; ++c) {
            const double d = dy[c] * gi->v[c];
            const double xh = (x[c] - mu) * inv;
            ai->g[r * cols + c] += inv * (d - sum_d / cols - xh * sum_dx / cols);
          }
        }
      }
    };
  }
  return out;
}

// ------------------------------------------------------------------- matmul

Tensor bmm(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: incompatible shapes");
  const std::int64_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  Tensor out = make_result({B, M, N}, {a, b});
  for (std::int64_t bi = 0; bi < B; ++bi) {
    const double* A = a.data().data() + bi * M * K;
    const double* Bm = b.data().data() + bi * K * N;
    double* C = out.data().data() + bi * M * N;
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t k = 0; k < K; ++k) {
        const double av = A[m * K + k];
        if (av == 0.0) continue;
        const double* brow = Bm + k * N;
        double* crow = C + m * N;
        for (std::int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
      }
  }
  if (out.tracked()) {
    auto ai = a.impl(), bi2 = b.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [ai, bi2, oi, B, M, K, N]() {
      for (std::int64_t bi = 0; bi < B; ++bi) {
        const double* dC = oi->g.data() + bi * M * N;
        if (ai->tracked) {
          ai->ensure_grad();
          const double* Bm = bi2->v.data() + bi * K * N;
          double* dA = ai->g.data() + bi * M * K;
          for (std::int64_t m = 0; m < M; ++m)
            for (std::int64_t k = 0; k < K; ++k) {
              double acc = 0.0;
              for (std::int64_t n = 0; n < N; ++n)
                acc += dC[m * N + n] * Bm[k * N + n];
              dA[m * K + k] += acc;
            }
        }
        if (bi2->tracked) {
          bi2->ensure_grad();
          const double* A = ai->v.data() + bi * M * K;
          double* dB = bi2->g.data() + bi * K * N;
          for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t m = 0; m < M; ++m) {
              const double av = A[m * K + k];
              if (av == 0.0) continue;
              for (std::int64_t n = 0; n < N; ++n)
                dB[k * N + n] += av * dC[m * N + n];
            }
        }
      }
    };
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sw.size() != 2 || sx.back() != sw[1])
    throw std::invalid_argument("linear: incompatible shapes");
  const std::int64_t In = sw[1], Out = sw[0];
  const std::int64_t rows = x.numel() / In;
  std::vector<std::int64_t> osh(sx.begin(), sx.end() - 1);
  osh.push_back(Out);
  Tensor out = b.defined() ? make_result(osh, {x, w, b}) : make_result(osh, {x, w});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * In;
    double* yo = out.data().data() + r * Out;
    for (std::int64_t o = 0; o < Out; ++o) {
      const double* wr = w.data().data() + o * In;
      double acc = b.defined() ? b.data()[o] : 0.0;
      for (std::int64_t i = 0; i < In; ++i) acc += wr[i] * xi[i];
      yo[o] = acc;
    }
  }
  if (out.tracked()) {
    auto xi = x.impl(), wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, wi, bi, oi, rows, In, Out]() {
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* dy = oi->g.data() + r * Out;
        if (xi->tracked) {
          xi->ensure_grad();
          double* dx = xi->g.data() + r * In;
          for (std::int64_t o = 0; o < Out; ++o) {
            const double d = dy[o];
            if (d == 0.0) continue;
            const double* wr = wi->v.data() + o * In;
            for (std::int64_t i = 0; i < In; ++i) dx[i] += d * wr[i];
          }
        }
        if (wi->tracked) {
          wi->ensure_grad();
          const double* xv = xi->v.data() + r * In;
          for (std::int64_t o = 0; o < Out; ++o) {
            const double d = dy[o];
            if (d == 0.0) continue;
            double* dw = wi->g.data() + o * In;
            for (std::int64_t i = 0; i < In; ++i) dw[i] += d * xv[i];
          }
        }
        if (bi && bi->tracked) {
          bi->ensure_grad();
          for (std::int64_t o = 0; o < Out; ++o) bi->g[o] += dy[o];
        }
      }
    };
  }
  return out;
}

// -------------------------------------------------------------------- conv3d

namespace {

struct Dims5 {
  std::int64_t n, c, d, h, w;
};

Dims5 dims5(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() != 5) throw std::invalid_argument(std::string(op) + ": expected 5-D");
  return {s[0], s[1], s[2], s[3], s[4]};
}

}  // namespace

namespace {

// Geometry shared by conv3d and conv_transpose3d: a "big" grid B with
// C_b channels and a "small" grid S related by S = (B + 2 pad - k)/stride + 1
// per axis. im2col gathers one small-grid depth slab into a
// [C_b*kd*kh*kw, Hs*Ws] matrix; col2im_add is its scatter transpose.
struct ConvGeom {
  std::int64_t cb, db, hb, wb;       // big grid
  std::int64_t ds, hs, ws;           // small grid
  std::int64_t kd, kh, kw;
  int stride, pad;
  std::int64_t rows() const { return cb * kd * kh * kw; }
  std::int64_t cols() const { return hs * ws; }
};

void im2col_slab(const ConvGeom& g, const double* big, std::int64_t sd, double* col) {
  const std::int64_t bs_c = g.db * g.hb * g.wb;
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < g.cb; ++c)
    for (std::int64_t kz = 0; kz < g.kd; ++kz) {
      const std::int64_t id = sd * g.stride - g.pad + kz;
      const bool d_ok = id >= 0 && id < g.db;
      for (std::int64_t ky = 0; ky < g.kh; ++ky)
        for (std::int64_t kx = 0; kx < g.kw; ++kx, ++r) {
          double* dst = col + r * g.cols();
          if (!d_ok) {
            std::fill(dst, dst + g.cols(), 0.0);
            continue;
          }
          for (std::int64_t sh = 0; sh < g.hs; ++sh) {
            const std::int64_t ih = sh * g.stride - g.pad + ky;
            double* row = dst + sh * g.ws;
            if (ih < 0 || ih >= g.hb) {
              std::fill(row, row + g.ws, 0.0);
              continue;
            }
            const double* src = big + c * bs_c + id * g.hb * g.wb + ih * g.wb;
            for (std::int64_t sw = 0; sw < g.ws; ++sw) {
              const std::int64_t iw = sw * g.stride - g.pad + kx;
              row[sw] = (iw >= 0 && iw < g.wb) ? src[iw] : 0.0;
            }
          }
        }
    }
}

void col2im_add_slab(const ConvGeom& g, const double* col, std::int64_t sd,
                     double* big) {
  const std::int64_t bs_c = g.db * g.hb * g.wb;
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < g.cb; ++c)
    for (std::int64_t kz = 0; kz < g.kd; ++kz) {
      const std::int64_t id = sd * g.stride - g.pad + kz;
      const bool d_ok = id >= 0 && id < g.db;
      for (std::int64_t ky = 0; ky < g.kh; ++ky)
        for (std::int64_t kx = 0; kx < g.kw; ++kx, ++r) {
          if (!d_ok) continue;
          const double* src = col + r * g.cols();
          for (std::int64_t sh = 0; sh < g.hs; ++sh) {
            const std::int64_t ih = sh * g.stride - g.pad + ky;
            if (ih < 0 || ih >= g.hb) continue;
            double* row = big + c * bs_c + id * g.hb * g.wb + ih * g.wb;
            const double* srow = src + sh * g.ws;
            for (std::int64_t sw = 0; sw < g.ws; ++sw) {
              const std::int64_t iw = sw * g.stride - g.pad + kx;
              if (iw >= 0 && iw < g.wb) row[iw] += srow[sw];
            }
          }
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const Dims5 xd = dims5(x, "conv3d");
  const auto& ws = w.shape();
  if (ws.size() != 5 || ws[1] != xd.c)
    throw std::invalid_argument("conv3d: weight/input channel mismatch");
  const std::int64_t Co = ws[0], Ci = ws[1], kd = ws[2], kh = ws[3], kw = ws[4];
  const std::int64_t Do = (xd.d + 2 * pad - kd) / stride + 1;
  const std::int64_t Ho = (xd.h + 2 * pad - kh) / stride + 1;
  const std::int64_t Wo = (xd.w + 2 * pad - kw) / stride + 1;
  if (Do < 1 || Ho < 1 || Wo < 1) throw std::invalid_argument("conv3d: output empty");
  Tensor out = b.defined() ? make_result({xd.n, Co, Do, Ho, Wo}, {x, w, b})
                           : make_result({xd.n, Co, Do, Ho, Wo}, {x, w});
  const ConvGeom geom{xd.c, xd.d, xd.h, xd.w, Do, Ho, Wo, kd, kh, kw, stride, pad};
  const std::int64_t K = geom.rows(), M = geom.cols();
  const std::int64_t xs_n = xd.c * xd.d * xd.h * xd.w;
  const std::int64_t ys_n = Co * Do * Ho * Wo, ys_c = Do * Ho * Wo;

  {
    std::vector<double> col(static_cast<std::size_t>(K * M));
    const double* X = x.data().data();
    const double* W = w.data().data();
    double* Y = out.data().data();
    for (std::int64_t n = 0; n < xd.n; ++n)
      for (std::int64_t od = 0; od < Do; ++od) {
        im2col_slab(geom, X + n * xs_n, od, col.data());
        // Y_slab[Co, M] = W[Co, K] * col[K, M]
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(Co),
                    static_cast<int>(M), static_cast<int>(K), 1.0, W,
                    static_cast<int>(K), col.data(), static_cast<int>(M), 0.0,
                    Y + n * ys_n + od * M, static_cast<int>(ys_c));
      }
    if (b.defined()) {
      const double* B = b.data().data();
      for (std::int64_t n = 0; n < xd.n; ++n)
        for (std::int64_t co = 0; co < Co; ++co) {
          double* row = Y + n * ys_n + co * ys_c;
          for (std::int64_t i = 0; i < ys_c; ++i) row[i] += B[co];
        }
    }
  }

  if (out.tracked()) {
    auto xi = x.impl(), wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, wi, bi, oi, geom, xd, Co, K, M, xs_n, ys_n, ys_c,
                               Do]() {
      const double* dY = oi->g.data();
      std::vector<double> col(static_cast<std::size_t>(K * M));
      if (xi->tracked) {
        xi->ensure_grad();
        const double* W = wi->v.data();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t od = 0; od < Do; ++od) {
            // dCol[K, M] = W^T[K, Co] * dY_slab[Co, M]
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K),
                        static_cast<int>(M), static_cast<int>(Co), 1.0, W,
                        static_cast<int>(K), dY + n * ys_n + od * M,
                        static_cast<int>(ys_c), 0.0, col.data(), static_cast<int>(M));
            col2im_add_slab(geom, col.data(), od, xi->g.data() + n * xs_n);
          }
      }
      if (wi->tracked) {
        wi->ensure_grad();
        const double* X = xi->v.data();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t od = 0; od < Do; ++od) {
            im2col_slab(geom, X + n * xs_n, od, col.data());
            // dW[Co, K] += dY_slab[Co, M] * col^T[M, K]
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(Co),
                        static_cast<int>(K), static_cast<int>(M), 1.0,
                        dY + n * ys_n + od * M, static_cast<int>(ys_c), col.data(),
                        static_cast<int>(M), 1.0, wi->g.data(), static_cast<int>(K));
          }
      }
      if (bi && bi->tracked) {
        bi->ensure_grad();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            const double* row = dY + n * ys_n + co * ys_c;
            for (std::int64_t i = 0; i < ys_c; ++i) acc += row[i];
            bi->g[co] += acc;
          }
      }
    };
  }
  return out;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int pad) {
  const Dims5 xd = dims5(x, "conv_transpose3d");
  const auto& ws = w.shape();
  if (ws.size() != 5 || ws[0] != xd.c)
    throw std::invalid_argument("conv_transpose3d: weight/input channel mismatch");
  const std::int64_t Ci = ws[0], Co = ws[1], kd = ws[2], kh = ws[3], kw = ws[4];
  const std::int64_t Do = (xd.d - 1) * stride - 2 * pad + kd;
  const std::int64_t Ho = (xd.h - 1) * stride - 2 * pad + kh;
  const std::int64_t Wo = (xd.w - 1) * stride - 2 * pad + kw;
  if (Do < 1 || Ho < 1 || Wo < 1)
    throw std::invalid_argument("conv_transpose3d: output empty");
  Tensor out = b.defined() ? make_result({xd.n, Co, Do, Ho, Wo}, {x, w, b})
                           : make_result({xd.n, Co, Do, Ho, Wo}, {x, w});
  // The output is the "big" grid; the input plays the small-grid role.
  const ConvGeom geom{Co, Do, Ho, Wo, xd.d, xd.h, xd.w, kd, kh, kw, stride, pad};
  const std::int64_t K = geom.rows(), M = geom.cols();  // M = Hi*Wi
  const std::int64_t xs_n = xd.c * xd.d * xd.h * xd.w, xs_c = xd.d * xd.h * xd.w;
  const std::int64_t ys_n = Co * Do * Ho * Wo, ys_c = Do * Ho * Wo;

  {
    std::vector<double> col(static_cast<std::size_t>(K * M));
    const double* X = x.data().data();
    const double* W = w.data().data();  // [Ci, K] row-major
    double* Y = out.data().data();
    if (b.defined()) {
      const double* B = b.data().data();
      for (std::int64_t n = 0; n < xd.n; ++n)
        for (std::int64_t co = 0; co < Co; ++co)
          std::fill(Y + n * ys_n + co * ys_c, Y + n * ys_n + (co + 1) * ys_c, B[co]);
    }
    for (std::int64_t n = 0; n < xd.n; ++n)
      for (std::int64_t id = 0; id < xd.d; ++id) {
        // col[K, M] = W^T[K, Ci] * X_slab[Ci, M]
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K),
                    static_cast<int>(M), static_cast<int>(Ci), 1.0, W,
                    static_cast<int>(K), X + n * xs_n + id * M,
                    static_cast<int>(xs_c), 0.0, col.data(), static_cast<int>(M));
        col2im_add_slab(geom, col.data(), id, Y + n * ys_n);
      }
  }

  if (out.tracked()) {
    auto xi = x.impl(), wi = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, wi, bi, oi, geom, xd, Ci, Co, K, M, xs_n, xs_c,
                               ys_n, ys_c]() {
      const double* dY = oi->g.data();
      std::vector<double> col(static_cast<std::size_t>(K * M));
      if (xi->tracked) {
        xi->ensure_grad();
        const double* W = wi->v.data();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t id = 0; id < xd.d; ++id) {
            im2col_slab(geom, dY + n * ys_n, id, col.data());
            // dX_slab[Ci, M] += W[Ci, K] * col[K, M]
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                        static_cast<int>(Ci), static_cast<int>(M),
                        static_cast<int>(K), 1.0, W, static_cast<int>(K), col.data(),
                        static_cast<int>(M), 1.0, xi->g.data() + n * xs_n + id * M,
                        static_cast<int>(xs_c));
          }
      }
      if (wi->tracked) {
        wi->ensure_grad();
        const double* X = xi->v.data();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t id = 0; id < xd.d; ++id) {
            im2col_slab(geom, dY + n * ys_n, id, col.data());
            // dW[Ci, K] += X_slab[Ci, M] * col^T[M, K]
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(Ci),
                        static_cast<int>(K), static_cast<int>(M), 1.0,
                        X + n * xs_n + id * M, static_cast<int>(xs_c), col.data(),
                        static_cast<int>(M), 1.0, wi->g.data(), static_cast<int>(K));
          }
      }
      if (bi && bi->tracked) {
        bi->ensure_grad();
        for (std::int64_t n = 0; n < xd.n; ++n)
          for (std::int64_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            const double* row = dY + n * ys_n + co * ys_c;
            for (std::int64_t i = 0; i < ys_c; ++i) acc += row[i];
            bi->g[co] += acc;
          }
      }
    };
  }
  return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps) {
  const Dims5 xd = dims5(x, "group_norm");
  if (xd.c % groups != 0)
    throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.numel() != xd.c || beta.numel() != xd.c)
    throw std::invalid_argument("group_norm: affine size mismatch");
  const std::int64_t cg = xd.c / groups;
  const std::int64_t spatial = xd.d * xd.h * xd.w;
  const std::int64_t gsize = cg * spatial;
  Tensor out = make_result(x.shape(), {x, gamma, beta});
  auto stats = std::make_shared<std::vector<double>>(2 * xd.n * groups);
  for (std::int64_t n = 0; n < xd.n; ++n)
    for (std::int64_t g = 0; g < groups; ++g) {
      const double* xp = x.data().data() + (n * xd.c + g * cg) * spatial;
      double mu = 0.0;
      for (std::int64_t i = 0; i < gsize; ++i) mu += xp[i];
      mu /= gsize;
      double var = 0.0;
      for (std::int64_t i = 0; i < gsize; ++i) var += (xp[i] - mu) * (xp[i] - mu);
      var /= gsize;
      const double inv = 1.0 / std::sqrt(var + eps);
      (*stats)[2 * (n * groups + g)] = mu;
      (*stats)[2 * (n * groups + g) + 1] = inv;
      double* yp = out.data().data() + (n * xd.c + g * cg) * spatial;
      for (std::int64_t c = 0; c < cg; ++c) {
        const double ga = gamma.data()[g * cg + c];
        const double be = beta.data()[g * cg + c];
        for (std::int64_t i = 0; i < spatial; ++i)
          yp[c * spatial + i] = (xp[c * spatial + i] - mu) * inv * ga + be;
      }
    }
  if (out.tracked()) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, gi, bi, oi, stats, xd, groups, cg, spatial,
                               gsize]() {
      for (std::int64_t n = 0; n < xd.n; ++n)
        for (std::int64_t g = 0; g < groups; ++g) {
          const double mu = (*stats)[2 * (n * groups + g)];
          const double inv = (*stats)[2 * (n * groups + g) + 1];
          const double* xp = xi->v.data() + (n * xd.c + g * cg) * spatial;
          const double* dy = oi->g.data() + (n * xd.c + g * cg) * spatial;
          if (gi->tracked) {
            gi->ensure_grad();
            for (std::int64_t c = 0; c < cg; ++c) {
              double acc = 0.0;
              for (std::int64_t i = 0; i < spatial; ++i)
                acc += dy[c * spatial + i] * (xp[c * spatial + i] - mu) * inv;
              gi->g[g * cg + c] += acc;
            }
          }
          if (bi->tracked) {
            bi->ensure_grad();
            for (std::int64_t c = 0; c < cg; ++c) {
              double acc = 0.0;
              for (std::int64_t i = 0; i < spatial; ++i) acc += dy[c * spatial + i];
              bi->g[g * cg + c] += acc;
            }
          }
          if (xi->tracked) {
            xi->ensure_grad();
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::int64_t c = 0; c < cg; ++c) {
              const double ga = gi->v[g * cg + c];
              for (std::int64_t i = 0; i < spatial; ++i) {
                const double d = dy[c * spatial + i] * ga;
                sum_d += d;
                sum_dx += d * (xp[c * spatial + i] - mu) * inv;
              }
            }
            double* dx = xi->g.data() + (n * xd.c + g * cg) * spatial;
            for (std::int64_t c = 0; c < cg; ++c) {
              const double ga = gi->v[g * cg + c];
              for (std::int64_t i = 0; i < spatial; ++i) {
                const double d = dy[c * spatial + i] * ga;
                const double xh = (xp[c * spatial + i] - mu) * inv;
                dx[c * spatial + i] +=
                    inv * (d - sum_d / gsize - xh * sum_dx / gsize);
              }
            }
          }
        }
    };
  }
  return out;
}

Tensor scale_shift(const Tensor& x, const Tensor& s, const Tensor& t) {
  const Dims5 xd = dims5(x, "scale_shift");
  if (s.numel() != xd.n * xd.c || t.numel() != xd.n * xd.c)
    throw std::invalid_argument("scale_shift: modulation size mismatch");
  const std::int64_t spatial = xd.d * xd.h * xd.w;
  Tensor out = make_result(x.shape(), {x, s, t});
  for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc) {
    const double sv = 1.0 + s.data()[nc];
    const double tv = t.data()[nc];
    const double* xp = x.data().data() + nc * spatial;
    double* yp = out.data().data() + nc * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) yp[i] = xp[i] * sv + tv;
  }
  if (out.tracked()) {
    auto xi = x.impl(), si = s.impl(), ti = t.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, si, ti, oi, xd, spatial]() {
      for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc) {
        const double* dy = oi->g.data() + nc * spatial;
        if (xi->tracked) {
          xi->ensure_grad();
          const double sv = 1.0 + si->v[nc];
          double* dx = xi->g.data() + nc * spatial;
          for (std::int64_t i = 0; i < spatial; ++i) dx[i] += dy[i] * sv;
        }
        if (si->tracked) {
          si->ensure_grad();
          const double* xp = xi->v.data() + nc * spatial;
          double acc = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) acc += dy[i] * xp[i];
          si->g[nc] += acc;
        }
        if (ti->tracked) {
          ti->ensure_grad();
          double acc = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) acc += dy[i];
          ti->g[nc] += acc;
        }
      }
    };
  }
  return out;
}

Tensor pad3d(const Tensor& x, const int before[3], const int after[3]) {
  const Dims5 xd = dims5(x, "pad3d");
  const std::int64_t Do = xd.d + before[0] + after[0];
  const std::int64_t Ho = xd.h + before[1] + after[1];
  const std::int64_t Wo = xd.w + before[2] + after[2];
  Tensor out = make_result({xd.n, xd.c, Do, Ho, Wo}, {x});
  for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
    for (std::int64_t d = 0; d < xd.d; ++d)
      for (std::int64_t h = 0; h < xd.h; ++h) {
        const double* src = x.data().data() + ((nc * xd.d + d) * xd.h + h) * xd.w;
        double* dst = out.data().data() +
                      ((nc * Do + d + before[0]) * Ho + h + before[1]) * Wo + before[2];
        std::copy_n(src, xd.w, dst);
      }
  if (out.tracked()) {
    auto xi = x.impl();
    auto oi = out.impl().get();
    const int b0 = before[0], b1 = before[1], b2 = before[2];
    out.impl()->backward_fn = [xi, oi, xd, Do, Ho, Wo, b0, b1, b2]() {
      xi->ensure_grad();
      for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
        for (std::int64_t d = 0; d < xd.d; ++d)
          for (std::int64_t h = 0; h < xd.h; ++h) {
            const double* src =
                oi->g.data() + ((nc * Do + d + b0) * Ho + h + b1) * Wo + b2;
            double* dst = xi->g.data() + ((nc * xd.d + d) * xd.h + h) * xd.w;
            for (std::int64_t w = 0; w < xd.w; ++w) dst[w] += src[w];
          }
    };
  }
  return out;
}

Tensor crop3d(const Tensor& x, const int before[3], const std::int64_t size[3]) {
  const Dims5 xd = dims5(x, "crop3d");
  const std::int64_t Do = size[0], Ho = size[1], Wo = size[2];
  if (before[0] + Do > xd.d || before[1] + Ho > xd.h || before[2] + Wo > xd.w)
    throw std::invalid_argument("crop3d: window out of bounds");
  Tensor out = make_result({xd.n, xd.c, Do, Ho, Wo}, {x});
  for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
    for (std::int64_t d = 0; d < Do; ++d)
      for (std::int64_t h = 0; h < Ho; ++h) {
        const double* src = x.data().data() +
                            ((nc * xd.d + d + before[0]) * xd.h + h + before[1]) * xd.w +
                            before[2];
        double* dst = out.data().data() + ((nc * Do + d) * Ho + h) * Wo;
        std::copy_n(src, Wo, dst);
      }
  if (out.tracked()) {
    auto xi = x.impl();
    auto oi = out.impl().get();
    const int b0 = before[0], b1 = before[1], b2 = before[2];
    out.impl()->backward_fn = [xi, oi, xd, Do, Ho, Wo, b0, b1, b2]() {
      xi->ensure_grad();
      for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
        for (std::int64_t d = 0; d < Do; ++d)
          for (std::int64_t h = 0; h < Ho; ++h) {
            const double* src = oi->g.data() + ((nc * Do + d) * Ho + h) * Wo;
            double* dst = xi->g.data() +
                          ((nc * xd.d + d + b0) * xd.h + h + b1) * xd.w + b2;
            for (std::int64_t w = 0; w < Wo; ++w) dst[w] += src[w];
          }
    };
  }
  return out;
}

Tensor avg_pool3d_2x(const Tensor& x) {
  Dims5 xd = dims5(x, "avg_pool3d_2x");
  Tensor in = x;
  if (xd.d % 2 || xd.h % 2 || xd.w % 2) {
    const int before[3] = {0, 0, 0};
    const int after[3] = {static_cast<int>(xd.d % 2), static_cast<int>(xd.h % 2),
                          static_cast<int>(xd.w % 2)};
    in = pad3d(x, before, after);
    xd = dims5(in, "avg_pool3d_2x");
  }
  const std::int64_t Do = xd.d / 2, Ho = xd.h / 2, Wo = xd.w / 2;
  Tensor out = make_result({xd.n, xd.c, Do, Ho, Wo}, {in});
  for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
    for (std::int64_t d = 0; d < Do; ++d)
      for (std::int64_t h = 0; h < Ho; ++h)
        for (std::int64_t w = 0; w < Wo; ++w) {
          double acc = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int c = 0; c < 2; ++c)
                acc += in.data()[((nc * xd.d + 2 * d + a) * xd.h + 2 * h + b) * xd.w +
                                 2 * w + c];
          out.data()[((nc * Do + d) * Ho + h) * Wo + w] = acc / 8.0;
        }
  if (out.tracked()) {
    auto xi = in.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, oi, xd, Do, Ho, Wo]() {
      xi->ensure_grad();
      for (std::int64_t nc = 0; nc < xd.n * xd.c; ++nc)
        for (std::int64_t d = 0; d < Do; ++d)
          for (std::int64_t h = 0; h < Ho; ++h)
            for (std::int64_t w = 0; w < Wo; ++w) {
              const double g = oi->g[((nc * Do + d) * Ho + h) * Wo + w] / 8.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int c = 0; c < 2; ++c)
                    xi->g[((nc * xd.d + 2 * d + a) * xd.h + 2 * h + b) * xd.w + 2 * w +
                          c] += g;
            }
    };
  }
  return out;
}

Tensor gather(const Tensor& x, std::vector<std::int64_t> indices) {
  Tensor out = make_result({static_cast<std::int64_t>(indices.size())}, {x});
  for (std::size_t i = 0; i < indices.size(); ++i)
    out.data()[i] = x.data().at(static_cast<std::size_t>(indices[i]));
  if (out.tracked()) {
    auto xi = x.impl();
    auto oi = out.impl().get();
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(indices));
    out.impl()->backward_fn = [xi, oi, idx]() {
      xi->ensure_grad();
      for (std::size_t i = 0; i < idx->size(); ++i)
        xi->g[(*idx)[i]] += oi->g[i];
    };
  }
  return out;
}

Tensor percentile_hottest(const Tensor& x, double q) {
  const std::int64_t n = x.numel();
  if (n == 0) throw std::invalid_argument("percentile_hottest: empty input");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("percentile_hottest: q out of range");
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return x.data()[a] > x.data()[b];
  });
  const double p = q * static_cast<double>(n - 1);
  const std::int64_t lo = static_cast<std::int64_t>(std::floor(p));
  const std::int64_t hi = std::min(lo + 1, n - 1);
  const double f = p - static_cast<double>(lo);
  Tensor out = make_result({1}, {x});
  out.data()[0] = (1.0 - f) * x.data()[order[lo]] + f * x.data()[order[hi]];
  if (out.tracked()) {
    auto xi = x.impl();
    auto oi = out.impl().get();
    const std::int64_t ilo = order[lo], ihi = order[hi];
    out.impl()->backward_fn = [xi, oi, ilo, ihi, f]() {
      xi->ensure_grad();
      xi->g[ilo] += oi->g[0] * (1.0 - f);
      if (ihi != ilo) xi->g[ihi] += oi->g[0] * f;
      else xi->g[ilo] += 0.0;
    };
  }
  return out;
}

Tensor logsumexp_tau(const Tensor& x, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("logsumexp_tau: tau must be > 0");
  const std::int64_t n = x.numel();
  double m = x.data()[0];
  for (double v : x.data()) m = std::max(m, v);
  double z = 0.0;
  for (double v : x.data()) z += std::exp((v - m) / tau);
  Tensor out = make_result({1}, {x});
  out.data()[0] = m + tau * std::log(z);
  if (out.tracked()) {
    auto xi = x.impl();
    auto oi = out.impl().get();
    out.impl()->backward_fn = [xi, oi, m, z, tau, n]() {
      xi->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        xi->g[i] += oi->g[0] * std::exp((xi->v[i] - m) / tau) / z;
    };
  }
  return out;
}

}  // namespace ops
}  // namespace addose
