#ifndef TEXTLDM_RNG_HPP
#define TEXTLDM_RNG_HPP

#include <cstdint>
#include <string_view>

namespace tldm {

/// Counter-based deterministic random generator.
///
/// A stream is a (key, counter) pair; draws hash the key with an advancing
/// counter, so a stream's output is a pure function of its key. Independent
/// child streams are derived with split(), which makes results reproducible
/// regardless of evaluation order: consumers that need per-step or per-sample
/// randomness take a split instead of sharing one sequential stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Named stream derived from a master seed (e.g. "data", "init", "noise",
  /// "dropout").
  static Rng stream(std::uint64_t master_seed, std::string_view consumer);

  /// Independent child stream. Depends only on (key, a), not on how much of
  /// this stream has been consumed.
  Rng split(std::uint64_t a) const;
  Rng split(std::uint64_t a, std::uint64_t b) const;

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double();

  /// Uniform in [0, 1), 24-bit resolution.
  float next_float();

  /// Standard normal draw (Box-Muller; the pair partner is cached).
  double next_gaussian();

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

/// 64-bit avalanche mix (SplitMix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a hash of a byte string, used to derive named stream keys.
std::uint64_t hash_name(std::string_view name);

}  // namespace tldm

#endif  // TEXTLDM_RNG_HPP
