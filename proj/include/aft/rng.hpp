#pragma once

// Counter-based random streams (Philox4x64-10). Every consumer of randomness
// owns a stream keyed by (seed, use, split, particle, temperature), so the
// sampled values are independent of evaluation order and identical whether
// particles are processed serially or not.

#include <array>
#include <cmath>
#include <cstdint>

namespace aft {

struct PhiloxBlock {
  std::array<std::uint64_t, 4> ctr;
  std::array<std::uint64_t, 2> key;
};

namespace detail {

inline void mulhilo64(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
  unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ull;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ull;
constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73Bull;

}  // namespace detail

// One 10-round Philox4x64 block; matches the reference implementation.
inline std::array<std::uint64_t, 4> philox4x64(PhiloxBlock b) {
  using namespace detail;
  for (int round = 0; round < 10; ++round) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo64(kPhiloxM0, b.ctr[0], hi0, lo0);
    mulhilo64(kPhiloxM1, b.ctr[2], hi1, lo1);
    b.ctr = {hi1 ^ b.ctr[1] ^ b.key[0], lo1, hi0 ^ b.ctr[3] ^ b.key[1], lo0};
    b.key[0] += kWeyl0;
    b.key[1] += kWeyl1;
  }
  return b.ctr;
}

// SplitMix64 finalizer; used to derive per-repeat seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_repeat_seed(std::uint64_t seed, std::uint64_t repeat) {
  return seed ^ mix64(repeat);
}

enum class StreamUse : std::uint8_t {
  init = 1,       // base-distribution draws for an ensemble
  mutate = 2,     // MCMC moves
  resample = 3,   // resampling indices
  flow_init = 4,  // randomized flow initialization
  vi_batch = 5,   // fresh base batches during variational training
  data = 6,       // synthetic data generation
};

enum class SplitTag : std::uint8_t { train = 0, val = 1, test = 2, none = 7 };

class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamUse use, SplitTag split, std::uint64_t particle,
            std::uint64_t temperature)
      : key_{seed, (static_cast<std::uint64_t>(use) << 56) |
                       (static_cast<std::uint64_t>(split) << 48) |
                       ((temperature & 0xFFFFull) << 32) | (particle & 0xFFFFFFFFull)} {}

  std::uint64_t next_u64() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double exponential() { return -std::log(uniform_pos()); }

  // Standard normal via Box-Muller; the second member of each pair is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double r = std::sqrt(2.0 * exponential());
    double t = 6.283185307179586476925286766559 * uniform();
    cached_ = r * std::sin(t);
    have_cached_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n); n > 0. Rejection-free scaling is fine here
  // because n is far below 2^53 in every use.
  std::uint64_t uniform_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  // Poisson by counting exponential arrivals; adequate for the modest rates
  // of the shipped models.
  long poisson(double rate) {
    if (!(rate > 0.0)) return 0;
    long count = 0;
    double acc = exponential();
    while (acc < rate) {
      ++count;
      acc += exponential();
    }
    return count;
  }

 private:
  void refill() {
    buf_ = philox4x64({{block_, 0, 0, 0}, key_});
    ++block_;
    pos_ = 0;
  }

  std::array<std::uint64_t, 2> key_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 4> buf_{};
  int pos_ = 4;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace aft
