#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "scorex/common.hpp"

namespace scorex::rng {

// Counter-based generation (Philox 4x32, 10 rounds).  A stream is addressed by
// (seed, domain, element, substream); any (sample, step) or (point, slice)
// pair therefore owns an independent stream, and results do not depend on
// batch partitioning or thread scheduling.

namespace domain {
inline constexpr std::uint32_t kPathNoise = 1;  // per (sample, step) diffusion noise
inline constexpr std::uint32_t kInitDraw = 2;   // per-sample initial conditions
inline constexpr std::uint32_t kSlice = 3;      // per (point, slice) slice draws
inline constexpr std::uint32_t kDsm = 4;        // per-sample denoising perturbations
inline constexpr std::uint32_t kGoe = 5;        // per (point, draw) implicit GOE actions
inline constexpr std::uint32_t kData = 6;       // synthetic datasets, subsampling
}  // namespace domain

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Stream {
 public:
  Stream(std::uint64_t seed, std::uint32_t domain, std::uint64_t element,
         std::uint64_t substream) {
    const std::uint64_t key = splitmix64(seed);
    key_[0] = static_cast<std::uint32_t>(key);
    key_[1] = static_cast<std::uint32_t>(key >> 32);
    id_[0] = static_cast<std::uint32_t>(element);
    id_[1] = static_cast<std::uint32_t>(substream);
    id_[2] = domain ^ (static_cast<std::uint32_t>(element >> 32) * 0x85EBCA6Bu) ^
             (static_cast<std::uint32_t>(substream >> 32) * 0xC2B2AE35u);
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  // Uniform on (0, 1], 53-bit resolution.
  double uniform() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    const std::uint64_t u = ((hi << 32) | lo) >> 11;
    return (static_cast<double>(u) + 1.0) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double rademacher() { return (next_u32() & 1u) ? 1.0 : -1.0; }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Vec rademacher_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rademacher();
    return v;
  }

 private:
  static void round(std::uint32_t ctr[4], const std::uint32_t key[2]) {
    const std::uint64_t p0 = 0xD2511F53ull * ctr[0];
    const std::uint64_t p1 = 0xCD9E8D57ull * ctr[2];
    const std::uint32_t c0 = static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0];
    const std::uint32_t c1 = static_cast<std::uint32_t>(p1);
    const std::uint32_t c2 = static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1];
    const std::uint32_t c3 = static_cast<std::uint32_t>(p0);
    ctr[0] = c0;
    ctr[1] = c1;
    ctr[2] = c2;
    ctr[3] = c3;
  }

  void refill() {
    std::uint32_t ctr[4] = {block_, id_[0], id_[1], id_[2]};
    std::uint32_t key[2] = {key_[0], key_[1]};
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      round(ctr, key);
    }
    buf_ = {ctr[0], ctr[1], ctr[2], ctr[3]};
    pos_ = 0;
    ++block_;
  }

  std::uint32_t key_[2];
  std::uint32_t id_[3];
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace scorex::rng
