#include "textldm/rng.hpp"

#include <cmath>

namespace tldm {

namespace {
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kSplitTag = 0xb5297a4d3f84d5b5ull;
constexpr std::uint64_t kSeedTag = 0xd1b54a32d192ed03ull;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ kSeedTag)) {}

Rng Rng::stream(std::uint64_t master_seed, std::string_view consumer) {
  Rng r(master_seed);
  r.key_ = mix64(r.key_ ^ hash_name(consumer));
  return r;
}

Rng Rng::split(std::uint64_t a) const {
  Rng child(0);
  child.key_ = mix64(key_ ^ mix64(a + kSplitTag));
  child.counter_ = 0;
  child.has_cached_gaussian_ = false;
  return child;
}

Rng Rng::split(std::uint64_t a, std::uint64_t b) const { return split(a).split(b); }

std::uint64_t Rng::next_u64() { return mix64(key_ + kGamma * ++counter_); }

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::next_float() {
  return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

double Rng::next_gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  const double u1 = 1.0 - next_double();  // (0, 1], safe for log
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  cached_gaussian_ = r * std::sin(kTwoPi * u2);
  has_cached_gaussian_ = true;
  return r * std::cos(kTwoPi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  // Rejection-free modulo is biased for huge n; all callers use small n where
  // the bias is below 2^-40.
  return n == 0 ? 0 : next_u64() % n;
}

}  // namespace tldm
