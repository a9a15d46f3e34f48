#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ridgefe {

/// Counter-based pseudo-random stream. Draw k is a pure function of
/// (key, k), so streams keyed on logical objects produce identical output
/// regardless of evaluation order or threading.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double next_open() { return 1.0 - next_double(); }

  double next_normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double r = std::sqrt(-2.0 * std::log(next_open()));
    const double a = 2.0 * std::numbers::pi * next_double();
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// Pareto with shape alpha and scale minimum: P{X > x} = (minimum/x)^alpha.
  double next_pareto(double alpha, double minimum) {
    return minimum * std::pow(next_open(), -1.0 / alpha);
  }

  /// Rademacher +-1.
  double next_sign() { return (next_u64() & 1u) ? 1.0 : -1.0; }

  /// Number of Bernoulli(prob) failures before the next success; used for
  /// skip-sampling runs of constant-probability pairs. prob must be in (0, 1).
  std::int64_t next_geometric(double prob) {
    return static_cast<std::int64_t>(std::floor(std::log(next_open()) / std::log1p(-prob)));
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Derives a stream key from a master seed, a label, and up to two indices.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view label,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  auto fold = [&h](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
  };
  fold(a);
  fold(b);
  return h;
}

}  // namespace ridgefe
