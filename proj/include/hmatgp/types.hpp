#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmatgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;
using IndexSpan = std::span<const Index>;

/// Invalid arguments: sizes, ranges, hyperparameters.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Failures of the numerical pipeline (singular systems, indefinite
/// approximations, degenerate spectra).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankDeficiency : NumericError {
  using NumericError::NumericError;
};

struct DegenerateSpectrum : NumericError {
  using NumericError::NumericError;
};

struct NotPositiveDefinite : NumericError {
  using NumericError::NumericError;
};

using Rng = std::mt19937_64;

/// Deterministic stream for a (seed, level, ordinal) triple.
inline Rng block_stream(std::uint64_t seed, std::uint64_t level, std::uint64_t ordinal) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return Rng(mix(mix(mix(seed) ^ level) ^ (ordinal * 0x632be59bd9b4e019ULL)));
}

inline IndexList iota_list(Index begin, Index count) {
  IndexList out(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = begin + i;
  return out;
}

}  // namespace hmatgp
