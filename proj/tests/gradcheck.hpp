#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "shadowdiff/rng.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff::testing {

/// A tensor the forward pass reads and the gradient the backward pass left for it.
template <typename T>
struct GradVar {
  std::string name;
  Tensor<T>* value;
  const Tensor<T>* grad;
};

struct GradReport {
  double max_rel = 0;
  double norm_rel = 0;  // |a - n|_2 / max(|a|_2, |n|_2) over every checked entry
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences of L = sum_i w_i y_i (accumulated in double) against the analytic
/// gradients produced by `backward(w)`. Relative error is |a - n| / max(|a|, |n|, floor), with
/// floor = 1e-3 times the largest analytic gradient of the variable (guards exact zeros).
/// norm_rel compares all checked entries as one vector.
template <typename T>
GradReport gradcheck(const std::function<Tensor<T>()>& forward, const std::function<void(const Tensor<T>&)>& backward,
                     const std::vector<GradVar<T>>& vars, double h, std::uint64_t seed = 1,
                     std::size_t max_per_var = 200) {
  Rng rng = make_rng(seed, 0x6c);
  Tensor<T> y = forward();
  Tensor<T> w = gaussian<T>(y.shape(), rng);
  auto loss = [&] {
    const Tensor<T> out = forward();
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += double(w[i]) * double(out[i]);
    return s;
  };
  forward();
  backward(w);
  std::vector<Tensor<T>> analytic;
  for (const auto& v : vars) analytic.push_back(*v.grad);

  GradReport rep;
  double d2 = 0, a2 = 0, n2 = 0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor<T>& x = *vars[k].value;
    const Tensor<T>& a = analytic[k];
    if (a.size() != x.size()) throw std::logic_error("gradient of " + vars[k].name + " has the wrong size");
    double amax = 0;
    for (T g : a.vec()) amax = std::max(amax, std::abs(double(g)));
    const double floor = std::max(1e-3 * amax, 1e-12);
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_per_var) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_var);
    }
    for (std::size_t i : idx) {
      const T keep = x[i];
      x[i] = static_cast<T>(double(keep) + h);
      const double lp = loss();
      x[i] = static_cast<T>(double(keep) - h);
      const double lm = loss();
      const double step = double(static_cast<T>(double(keep) + h)) - double(static_cast<T>(double(keep) - h));
      x[i] = keep;
      const double num = (lp - lm) / step;
      const double an = double(a[i]);
      d2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
      const double rel = std::abs(an - num) / std::max({std::abs(an), std::abs(num), floor});
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = vars[k].name + "[" + std::to_string(i) + "] analytic " + std::to_string(an) + " numeric " +
                    std::to_string(num);
      }
      ++rep.checked;
    }
  }
  if (std::max(a2, n2) > 0) rep.norm_rel = std::sqrt(d2 / std::max(a2, n2));
  return rep;
}

}  // namespace shadowdiff::testing
