#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ebmgan {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw
/// is a pure function of (key, counter), so the full state is two integers
/// and a stream can be saved and resumed exactly.
class Rng {
public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  Rng() = default;
  explicit Rng(std::uint64_t key) : state_{key, 0} {}
  explicit Rng(State state) : state_(state) {}

  /// Independent stream for a named purpose ("init", "data", "z", ...).
  static Rng stream(std::uint64_t root_seed, std::string_view name);

  static std::array<std::uint32_t, 4> philox(std::uint64_t key, std::uint64_t counter);

  std::uint64_t next_u64();
  double uniform();                                      // [0, 1)
  double uniform(double lo, double hi);
  double normal();                                       // N(0, 1), Box-Muller
  std::uint64_t below(std::uint64_t bound);              // uniform in [0, bound)

  const State& state() const { return state_; }

  friend bool operator==(const Rng&, const Rng&) = default;

private:
  State state_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ebmgan
