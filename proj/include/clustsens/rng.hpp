#pragma once

#include <array>
#include <cstdint>

namespace clustsens {

/// Philox4x32-10 block function (Salmon et al., Random123). Exposed for the
/// known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

// Counter-based random stream.
//
// Stream layout: the 64-bit seed is the Philox key. The 128-bit counter is
// (block, substream, replicate_lo, replicate_hi), where `block` increments
// as draws are consumed. Every (seed, replicate, substream) triple therefore
// addresses its own sequence, independent of how many other streams were
// used before it or on which thread.
//
// Uniforms take the top 53 bits of a 64-bit word; normals use Box-Muller.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t replicate, std::uint32_t substream = 0);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer on [lo, hi] inclusive (rejection sampling, no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace clustsens
