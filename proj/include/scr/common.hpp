#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scr {

// Error hierarchy. Every failure the library reports derives from scr::Error
// so callers can catch at whatever granularity they need.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct CalibrationError : Error {
  CalibrationError(const std::string& what, double achieved)
      : Error(what), achieved_wer(achieved) {}
  double achieved_wer;
};
struct AlignmentError : Error { using Error::Error; };
struct VocabularyError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct LookupError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };
struct VersionError : Error { using Error::Error; };
struct KindError : Error { using Error::Error; };
struct CoverageError : Error { using Error::Error; };
struct ProtocolError : Error { using Error::Error; };

using Tokens = std::vector<std::string>;

// Seeded random source with platform-independent derived draws. The
// distributions in <random> are implementation-defined, so uniform reals and
// bounded integers are derived from the raw 64-bit engine output here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finaliser; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);
std::uint64_t hash_string(std::string_view s);

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Each
// index must write only to its own output slot; callers reduce in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::string join(const Tokens& tokens, std::string_view sep = " ");
Tokens split_ws(std::string_view text);

}  // namespace scr
