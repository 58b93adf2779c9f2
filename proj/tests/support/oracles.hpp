#pragma once

// Test-only numerical oracles. These stay independent of the tape internals
// they check: finite differences only ever call a black-box loss function.

#include <cmath>
#include <functional>
#include <vector>

#include "lopt/tensor.hpp"

namespace lopt::testing {

// Central finite differences of f at x, default h = 1e-5.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); i++) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f(x);
    x[i] = keep - h;
    double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1, |b_i|)
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); i++) {
    double denom = std::max(1.0, std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline std::vector<double> to_vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

inline Tensor from_vec(const std::vector<int>& shape, const std::vector<double>& v) {
  return Tensor::from(shape, v);
}

}  // namespace lopt::testing
