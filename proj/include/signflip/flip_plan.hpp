#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include <Eigen/Core>

namespace signflip {

using SignMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// w x n matrix of sign flips shared by every response. Row 0 is always the
// identity flip (all +1) and takes part in the reference distribution.
struct FlipPlan {
  SignMatrix signs;
  std::uint64_t seed = 0;
  bool exhaustive = false;

  Eigen::Index flips() const { return signs.rows(); }
  Eigen::Index n() const { return signs.cols(); }
  std::span<const std::int8_t> row(Eigen::Index j) const {
    return {signs.data() + j * signs.cols(), static_cast<std::size_t>(signs.cols())};
  }
};

// Name and version of the counter-based generator behind make_plan. Changing
// the bit stream requires bumping the version.
inline constexpr std::string_view kFlipGenerator = "splitmix64-ctr/1";

// Stateless 64-bit mix of (key, counter). Used for flip plans and for
// deriving per-replicate seeds.
std::uint64_t counter_hash(std::uint64_t key, std::uint64_t counter);

// Identity row followed by w - 1 rows drawn uniformly (with replacement)
// from {-1,+1}^n. Pure function of (n, w, seed).
FlipPlan make_plan(Eigen::Index n, Eigen::Index w, std::uint64_t seed);

// All 2^n sign vectors; row r has sign -1 at position i iff bit i of r is set.
// Throws TooLarge for n > 20.
FlipPlan make_exhaustive(Eigen::Index n);

inline constexpr Eigen::Index kMaxExhaustiveN = 20;
inline constexpr Eigen::Index kDefaultFlips = 2000;

}  // namespace signflip
