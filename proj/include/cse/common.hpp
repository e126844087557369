#ifndef CSE_COMMON_HPP_
#define CSE_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cse {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. invalid-argument reuses std::invalid_argument.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericFailure : std::runtime_error {
  explicit NumericFailure(const std::string& msg) : std::runtime_error(msg) {}
};
struct SchedulingViolation : std::logic_error {
  explicit SchedulingViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Deterministic counter-free RNG (splitmix64). All randomness in the project
// flows through this so that runs are reproducible from a single seed,
// independent of platform library implementations and thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto n = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<std::int64_t>(
                    static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64));
  }

  // Standard normal via Box-Muller; draws two words per call.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream from a root seed and a tag. Substream
  // construction never consumes state from the parent, so parallel consumers
  // see the same streams regardless of scheduling.
  static Rng substream(std::uint64_t root_seed, std::uint64_t tag) {
    Rng mixer(root_seed ^ (0x6a09e667f3bcc909ULL + tag * 0x9e3779b97f4a7c15ULL));
    mixer.next_u64();
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
};

// Runs fn(i) for i in [0, n). Work items must be independent; each writes only
// its own outputs, so results do not depend on the thread count.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

inline unsigned default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

}  // namespace cse

#endif  // CSE_COMMON_HPP_
