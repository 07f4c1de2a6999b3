#pragma once

#include <cstdint>
#include <random>

namespace passync {

/// Counter-derived random streams. A stream is identified by a 64-bit key;
/// children are derived by hashing (key, tag), so the data drawn for a given
/// (trial, epoch) never depends on how many other trials or epochs exist.
class SeedStream {
 public:
  explicit constexpr SeedStream(std::uint64_t key) : key_(key) {}

  constexpr SeedStream child(std::uint64_t tag) const {
    return SeedStream(mix(key_ ^ mix(tag + 0x632be59bd9b4e019ULL)));
  }

  std::mt19937_64 engine() const {
    std::seed_seq seq{static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)};
    return std::mt19937_64(seq);
  }

  constexpr std::uint64_t key() const { return key_; }

 private:
  // splitmix64 finalizer
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

namespace stream_tag {
inline constexpr std::uint64_t kNoise = 1;
inline constexpr std::uint64_t kSchedule = 2;
inline constexpr std::uint64_t kTruth = 3;
inline constexpr std::uint64_t kCampaign = 4;
inline constexpr std::uint64_t kHcrb = 5;
inline constexpr std::uint64_t kSweep = 6;
}  // namespace stream_tag

}  // namespace passync
