#pragma once

#include <cstdint>
#include <vector>

namespace critic {

// xoshiro256++ seeded through splitmix64. std:: distributions are
// implementation-defined, so all sampling goes through these helpers to keep
// outputs byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // [0, 1) with 53-bit resolution.
  double uniform();
  // [0, bound), unbiased.
  std::uint64_t uniform_int(std::uint64_t bound);
  // Standard normal via Box-Muller.
  double normal();
  // Gamma(shape, 1), Marsaglia-Tsang.
  double gamma(double shape);
  void dirichlet(const std::vector<double>& alpha, std::vector<double>* out);
  // Index draw proportional to probs (need not be normalized).
  int categorical(const std::vector<double>& probs);

  // Independent substream keyed by `stream`; deterministic in (seed, stream).
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace critic
