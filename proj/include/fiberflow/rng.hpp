#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace fiberflow {

/// Identifies one independent random stream: the run seed plus the path index.
struct RngKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  friend bool operator==(const RngKey&, const RngKey&) = default;
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The output of
/// a block is a pure function of (key, counter), so any path can be regenerated
/// without touching any other path.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// Sequential view of one stream: uniforms in (0,1) and standard normals
/// (Box-Muller, two per block). Draw order is fixed, so the n-th normal of a
/// stream never depends on how the stream is consumed elsewhere.
class StreamRng {
 public:
  explicit StreamRng(RngKey key) : key_(key) {}

  double uniform() {
    if (uniformsLeft_ == 0) refill();
    return uniforms_[2 - uniformsLeft_--];
  }

  double normal() {
    if (cachedNormal_) {
      cachedNormal_ = false;
      return spareNormal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925 * u2;
    spareNormal_ = r * std::sin(theta);
    cachedNormal_ = true;
    return r * std::cos(theta);
  }

  [[nodiscard]] RngKey key() const { return key_; }

 private:
  void refill() {
    const Philox4x32::Block ctr = {static_cast<std::uint32_t>(block_),
                                   static_cast<std::uint32_t>(block_ >> 32),
                                   static_cast<std::uint32_t>(key_.stream),
                                   static_cast<std::uint32_t>(key_.stream >> 32)};
    const Philox4x32::Key k = {static_cast<std::uint32_t>(key_.seed),
                               static_cast<std::uint32_t>(key_.seed >> 32)};
    const auto out = Philox4x32::generate(ctr, k);
    ++block_;
    const std::uint64_t a = (std::uint64_t{out[0]} << 32) | out[1];
    const std::uint64_t b = (std::uint64_t{out[2]} << 32) | out[3];
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    uniforms_[0] = (static_cast<double>(a >> 11) + 0.5) * kScale;
    uniforms_[1] = (static_cast<double>(b >> 11) + 0.5) * kScale;
    uniformsLeft_ = 2;
  }

  RngKey key_;
  std::uint64_t block_ = 0;
  std::array<double, 2> uniforms_{};
  int uniformsLeft_ = 0;
  double spareNormal_ = 0.0;
  bool cachedNormal_ = false;
};

/// Derives an independent seed for a named sub-experiment (SplitMix64 finalizer).
inline std::uint64_t deriveSeed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace fiberflow
