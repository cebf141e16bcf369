#pragma once

#include <cstdint>
#include <string>

namespace addose {

// Counter-based, splittable generator ("splitmix64-counter-v1").
// Every draw is a pure function of (key, counter), so streams are
// reproducible across platforms and safe to split per worker.
class Rng {
 public:
  static constexpr const char* kName = "splitmix64-counter-v1";

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Derive an independent stream; the child does not advance the parent.
  Rng split(std::uint64_t stream_tag) const;
  Rng split(const std::string& label) const;

  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();                       // standard normal, Box-Muller
  double beta_symmetric(double alpha);   // Beta(alpha, alpha), alpha > 0

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace addose
