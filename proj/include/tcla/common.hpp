#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tcla {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using CountMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
using PositionMatrix = Eigen::Matrix<float, 2, Eigen::Dynamic>;

/// Coarse failure classes; the CLI maps them onto exit codes.
enum class ErrorKind {
  Validation,  // bad config, bad input, missing prerequisite
  Io,          // filesystem, format, digest problems
  Divergence,  // non-finite or exploding loss
  Internal,    // contract violated inside the library (e.g. frozen tensor mutated)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error validation_error(std::string code, const std::string& message) {
  return Error(ErrorKind::Validation, std::move(code), message);
}
inline Error io_error(std::string code, const std::string& message) {
  return Error(ErrorKind::Io, std::move(code), message);
}

// Seed derivation. Every random stream in the library is keyed by a tuple of
// integers mixed through SplitMix64, so streams never depend on the order in
// which other streams were consumed.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys);

inline std::mt19937_64 make_engine(std::initializer_list<std::uint64_t> keys) {
  return std::mt19937_64(derive_seed(keys));
}

/// Fisher-Yates permutation of 0..n-1 drawn from the given engine.
std::vector<int> random_permutation(int n, std::mt19937_64& engine);

/// Uniform double in [0, 1) with 53 random bits; stable across standard libraries.
inline double uniform01(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

}  // namespace tcla
