#pragma once

#include <vector>

namespace clustsens {

// Gauss-Hermite rule for the weight exp(-x^2): sum_k w_k f(x_k) approximates
// the integral of exp(-x^2) f(x) over the real line. Nodes ascend.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int size() const { return static_cast<int>(nodes.size()); }
};

/// Build an n-point rule (n >= 1). Newton iteration on the orthonormal
/// Hermite recurrence, which stays in range well past n = 200.
GaussHermiteRule gauss_hermite(int n);

}  // namespace clustsens
