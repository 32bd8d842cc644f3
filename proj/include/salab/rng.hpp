#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "salab/error.hpp"

namespace salab {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Seed for an independent sub-stream. Runs, MDP instances and worker chunks
// all derive their seeds this way so results do not depend on scheduling.
inline std::uint64_t child_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0) {
  return mix64(mix64(parent ^ hash_tag(tag)) + 0x9E3779B97F4A7C15ULL * (index + 1));
}

// Counter-based generator: output i is mix64(key + i * golden). The standard
// <random> distributions are implementation defined, so uniform doubles and
// discrete draws are done here by hand to keep streams portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed)), counter_(0) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1], safe for log.
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps it unbiased.
    if (n == 0) throw Error("Rng::below: empty range");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  double standard_exponential() { return -std::log(uniform_pos()); }

  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int sign() { return (next_u64() >> 63) ? 1 : -1; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Inverse-CDF draw from a probability vector. The last index with positive
// mass absorbs any rounding shortfall.
template <class Vec>
int sample_discrete(Rng& rng, const Vec& p) {
  const int n = static_cast<int>(p.size());
  double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (int i = 0; i < n; ++i) {
    if (p[i] <= 0.0) continue;
    last = i;
    acc += p[i];
    if (u < acc) return i;
  }
  if (last < 0) throw Error("sample_discrete: no positive mass");
  return last;
}

// Row of a matrix viewed as a distribution.
inline int sample_row(Rng& rng, const Eigen::MatrixXd& m, int row) {
  const int n = static_cast<int>(m.cols());
  double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (int j = 0; j < n; ++j) {
    double p = m(row, j);
    if (p <= 0.0) continue;
    last = j;
    acc += p;
    if (u < acc) return j;
  }
  if (last < 0) throw Error("sample_row: row has no positive mass");
  return last;
}

// Precomputed cumulative table for repeated draws from one distribution.
class DiscreteSampler {
 public:
  DiscreteSampler() = default;
  template <class Vec>
  explicit DiscreteSampler(const Vec& p) {
    cdf_.reserve(p.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(p.size()); ++i) {
      if (p[i] < 0.0) throw Error("DiscreteSampler: negative probability");
      acc += p[i];
      cdf_.push_back(acc);
      if (p[i] > 0.0) last_ = static_cast<int>(i);
    }
    if (last_ < 0) throw Error("DiscreteSampler: no positive mass");
  }

  int operator()(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) return last_;
    return static_cast<int>(it - cdf_.begin());
  }

  std::size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
  int last_ = -1;
};

}  // namespace salab
