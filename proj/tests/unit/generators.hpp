#pragma once

// Small seeded generators for property tests.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "textscene/tensor.hpp"

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  bool coin() { return index(0, 1) == 1; }

  std::vector<double> vec(std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(sd);
    return v;
  }
  // Rows bounded away from zero so cosine is always defined.
  textscene::Tensor matrix(std::size_t r, std::size_t c, double sd = 1.0) {
    textscene::Tensor t(textscene::Shape{r, c});
    for (std::size_t i = 0; i < r; ++i) {
      double n2 = 0.0;
      do {
        n2 = 0.0;
        for (auto& x : t.row(i)) {
          x = normal(sd);
          n2 += x * x;
        }
      } while (n2 < 1e-6);
    }
    return t;
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gen
