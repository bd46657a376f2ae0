#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace latte {

enum class Basis : uint8_t { Z = 0, X = 1 };

inline constexpr Basis other(Basis b) { return b == Basis::Z ? Basis::X : Basis::Z; }
inline constexpr int index_of(Basis b) { return static_cast<int>(b); }
inline const char* to_string(Basis b) { return b == Basis::Z ? "Z" : "X"; }

enum class Pauli : uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

inline const char* to_string(Pauli p) {
  switch (p) {
    case Pauli::I: return "I";
    case Pauli::X: return "X";
    case Pauli::Y: return "Y";
    case Pauli::Z: return "Z";
  }
  return "?";
}

// Precondition on caller input that the callee cannot satisfy.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SizeError : std::length_error {
  using std::length_error::length_error;
};

struct NotReadyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when streamed rounds pile up past the high-water mark.
struct BacklogFault : std::runtime_error {
  BacklogFault(uint64_t buffered, uint64_t limit)
      : std::runtime_error("backlog fault: " + std::to_string(buffered) +
                           " buffered rounds exceed high-water mark " + std::to_string(limit)),
        buffered_rounds(buffered) {}
  uint64_t buffered_rounds;
};

namespace rng {

inline constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based draw: a pure function of (seed, stream, counter).
inline constexpr uint64_t draw(uint64_t seed, uint64_t stream, uint64_t counter) {
  return splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline constexpr double to_unit(uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline double uniform(uint64_t seed, uint64_t stream, uint64_t counter) {
  return to_unit(draw(seed, stream, counter));
}

// Small sequential generator for tests and tools.
class SplitMix {
 public:
  explicit SplitMix(uint64_t seed) : state_(seed) {}
  uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64(state_ - 0x9e3779b97f4a7c15ULL);
  }
  double unit() { return to_unit(next()); }
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }
  bool coin(double p) { return unit() < p; }

 private:
  uint64_t state_;
};

}  // namespace rng

inline int popcount(uint64_t v) { return std::popcount(v); }

}  // namespace latte
