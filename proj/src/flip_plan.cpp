#include "signflip/flip_plan.hpp"

#include <algorithm>
#include <string>

#include "signflip/errors.hpp"

namespace signflip {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix64_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t counter_hash(std::uint64_t key, std::uint64_t counter) {
  const std::uint64_t k = splitmix64_finalize(key + kGolden);
  return splitmix64_finalize(k + (counter + 1) * kGolden);
}

FlipPlan make_plan(Eigen::Index n, Eigen::Index w, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("flip plan needs n >= 1");
  if (w < 2) throw InvalidArgument("flip plan needs w >= 2");

  FlipPlan plan;
  plan.seed = seed;
  plan.signs.resize(w, n);
  plan.signs.row(0).setOnes();

  const Eigen::Index words = (n + 63) / 64;
  for (Eigen::Index j = 1; j < w; ++j) {
    for (Eigen::Index word = 0; word < words; ++word) {
      const auto counter = static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(words) +
                           static_cast<std::uint64_t>(word);
      const std::uint64_t bits = counter_hash(seed, counter);
      const Eigen::Index begin = word * 64;
      const Eigen::Index end = std::min<Eigen::Index>(n, begin + 64);
      for (Eigen::Index i = begin; i < end; ++i) {
        plan.signs(j, i) = ((bits >> (i - begin)) & 1ULL) ? std::int8_t{-1} : std::int8_t{1};
      }
    }
  }
  return plan;
}

FlipPlan make_exhaustive(Eigen::Index n) {
  if (n < 1) throw InvalidArgument("flip plan needs n >= 1");
  if (n > kMaxExhaustiveN) {
    throw TooLarge("exhaustive flip plan limited to n <= " + std::to_string(kMaxExhaustiveN));
  }
  const Eigen::Index w = Eigen::Index{1} << n;
  FlipPlan plan;
  plan.exhaustive = true;
  plan.signs.resize(w, n);
  for (Eigen::Index r = 0; r < w; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) {
      plan.signs(r, i) = ((r >> i) & 1) ? std::int8_t{-1} : std::int8_t{1};
    }
  }
  return plan;
}

}  // namespace signflip
