#include "fedsde/rng.hpp"
#include "fedsde/parallel.hpp"

#include <bit>
#include <cstdlib>
#include <string>

namespace fedsde {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = a ^ (b * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
  splitmix64(state);
  return splitmix64(state);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

StreamKey::StreamKey(std::uint64_t seed) {
  std::uint64_t state = seed;
  digest_ = splitmix64(state);
}

StreamKey StreamKey::child(std::uint64_t index) const {
  return StreamKey(Raw{}, mix(digest_, index));
}

StreamKey StreamKey::child_real(double value) const {
  return child(std::bit_cast<std::uint64_t>(value));
}

Stream::Stream(const StreamKey& key) {
  std::uint64_t state = key.digest();
  for (auto& word : s_) word = splitmix64(state);
}

Stream::result_type Stream::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Stream::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

int default_thread_count() {
  if (const char* env = std::getenv("FEDSDE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace fedsde
