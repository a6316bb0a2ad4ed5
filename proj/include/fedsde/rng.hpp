#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace fedsde {

/// Hierarchical key for counter-based random streams.
///
/// A key is a 64-bit digest of a path such as (seed, round, replicate,
/// client, step). Streams derived from distinct paths are statistically
/// independent, and a stream depends only on its path, so replicates can be
/// generated in any order or on any thread.
class StreamKey {
 public:
  explicit StreamKey(std::uint64_t seed);

  StreamKey child(std::uint64_t index) const;
  /// Keys a stream on the bit pattern of a real value (e.g. a time point).
  StreamKey child_real(double value) const;

  std::uint64_t digest() const noexcept { return digest_; }

 private:
  struct Raw {};
  StreamKey(Raw, std::uint64_t digest) : digest_(digest) {}
  std::uint64_t digest_;
};

/// Domain tags keep streams for different purposes apart.
enum class StreamDomain : std::uint64_t {
  fedavg_round = 0x526f756e64ULL,
  sample_update = 0x53616d706c65ULL,
  sde_path = 0x5061746873ULL,
  brownian = 0x42726f776eULL,
  time_sampler = 0x54696d65ULL,
};

inline StreamKey domain_key(std::uint64_t seed, StreamDomain domain) {
  return StreamKey(seed).child(static_cast<std::uint64_t>(domain));
}

/// xoshiro256** seeded from a StreamKey. Meets UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(const StreamKey& key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform draw in (0, 1).
  double uniform();
  double normal() { return normal_(*this); }

 private:
  std::uint64_t s_[4];
  std::normal_distribution<double> normal_;
};

}  // namespace fedsde
