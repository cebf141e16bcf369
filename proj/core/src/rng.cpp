#include "addose/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace addose {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), key_(hash_combine(splitmix64(seed), stream)) {}

Rng Rng::split(std::uint64_t stream_tag) const {
  Rng child(seed_, 0);
  child.key_ = hash_combine(key_, stream_tag);
  child.counter_ = 0;
  return child;
}

Rng Rng::split(const std::string& label) const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return split(h);
}

std::uint64_t Rng::next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::beta_symmetric(double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("beta_symmetric: alpha must be > 0");
  // Johnk's method, efficient for small alpha; falls back rarely otherwise.
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double u = uniform();
    const double v = uniform();
    const double x = std::pow(u, 1.0 / alpha);
    const double y = std::pow(v, 1.0 / alpha);
    if (x + y > 0.0 && x + y <= 1.0) return x / (x + y);
  }
  // Degenerate only for very large alpha; the ratio limit is 1/2.
  return 0.5;
}

}  // namespace addose
