#pragma once

#include <functional>

#include "psiflow/odecore.hpp"
#include "psiflow/rng.hpp"

namespace psiflow::testing {

inline Vec random_vec(Philox& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

inline Vec random_in(Philox& rng, const std::vector<Interval>& box) {
  Vec v(static_cast<Eigen::Index>(box.size()));
  for (std::size_t i = 0; i < box.size(); ++i) v[static_cast<Eigen::Index>(i)] = rng.uniform(box[i].lo, box[i].hi);
  return v;
}

/// Central differences of a vector function, step h per coordinate.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  const Vec f0 = f(x);
  Mat jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

inline double rel_error(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace psiflow::testing
