#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stnet/ops.hpp"
#include "stnet/tape.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

// Central-difference gradient check. fn must rebuild the computation from the
// parameters' current contents and return a scalar loss tensor. Returns the
// maximum relative error between tape gradients and finite differences.
// Meant to run in double precision; h = 1e-5 balances truncation and
// round-off there.
inline double gradcheck_max_rel_err(
    std::vector<Tensor<double>> params,
    const std::function<Tensor<double>()>& fn, double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
    p.grad();  // materialize
  }
  {
    Tape<double> tape;
    Tensor<double> loss = fn();
    tape.backward(loss);
  }
  double max_rel = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double lp = fn().data()[0];
      p.data()[i] = orig - h;
      const double lm = fn().data()[0];
      p.data()[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = p.grad()[i];
      const double rel =
          std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace stnet
