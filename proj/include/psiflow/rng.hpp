#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace psiflow {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// The 64-bit seed is the key; the 128-bit counter is split into a 64-bit
/// block index and a 64-bit stream id, so independent streams are obtained by
/// choosing distinct stream ids rather than by advancing state. Output is
/// identical on every platform, which is why its name is recorded in model
/// files.
class Philox {
public:
  static constexpr std::string_view name = "philox4x32-10";

  using Block = std::array<std::uint32_t, 4>;

  Philox(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  /// Raw 10-round bijection of one counter block under a key.
  static Block bijection(Block ctr, std::array<std::uint32_t, 2> key) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform double on [0, 1) with 53 random bits.
  double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double on [lo, hi].
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_unit(); }

  std::uint64_t seed() const noexcept {
    return static_cast<std::uint64_t>(key_[0]) | (static_cast<std::uint64_t>(key_[1]) << 32);
  }
  std::uint64_t stream() const noexcept { return stream_; }

private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buffer_{};
  int used_ = 4;
};

/// Stream ids reserved for the different consumers of randomness. Sub-domain
/// index goes into the low 32 bits so every local model draws independently.
enum class StreamPurpose : std::uint64_t {
  hidden_layers = 1,
  collocation = 2,
  perturbation = 3,
  validation = 4,
};

constexpr std::uint64_t stream_id(StreamPurpose purpose, std::uint32_t index = 0) noexcept {
  return (static_cast<std::uint64_t>(purpose) << 32) | index;
}

}  // namespace psiflow
