#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nilm/rng.hpp"
#include "nilm/tensor.hpp"

// Finite-difference gradient oracle.  Analytic gradients from backward() are
// compared against central differences (f(x+h) - f(x-h)) / 2h computed from
// value-only forward passes.  Everything runs in double; h = 1e-5 keeps the
// truncation and rounding errors balanced at roughly 1e-10 for O(1) values.
//
// For operations linear in the perturbed argument the central difference is
// exact up to rounding, so the comparison tolerance can sit at 1e-6; smooth
// nonlinear paths (sigmoid, layer norm, losses) get 1e-4.

namespace gradcheck {

struct Options {
  double step = 1e-5;
  // relative error denominator floor, so near-zero gradients compare absolutely
  double denom_floor = 1e-8;
  // 0 checks every coordinate; otherwise this many per leaf, sampled
  std::size_t coords_per_leaf = 0;
  std::uint64_t sample_seed = 0;
};

struct Report {
  double max_rel_err = 0;
  std::size_t coords_checked = 0;
  std::string worst;

  friend std::ostream& operator<<(std::ostream& os, const Report& r) {
    return os << "max rel err " << r.max_rel_err << " over "
              << r.coords_checked << " coordinates (worst: " << r.worst
              << ")";
  }
};

inline double rel_err(double analytic, double numeric, double floor_) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), floor_});
  return std::abs(analytic - numeric) / denom;
}

// `f` rebuilds the computation from the current leaf values and returns the
// scalar loss tensor.  Leaves are perturbed in place for the differences.
template <typename Fn>
Report check(std::vector<nilm::Tensor<double>> leaves, Fn&& f,
             Options opt = {}) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.grad();  // ensure the buffer exists
    leaf.zero_grad();
  }
  nilm::Tensor<double> loss = f();
  nilm::backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  Report rep;
  nilm::Rng pick(opt.sample_seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<std::size_t> coords;
    if (opt.coords_per_leaf == 0 || leaf.size() <= opt.coords_per_leaf) {
      coords.resize(leaf.size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      coords.reserve(opt.coords_per_leaf);
      for (std::size_t k = 0; k < opt.coords_per_leaf; ++k) {
        coords.push_back(static_cast<std::size_t>(pick.below(leaf.size())));
      }
    }
    for (const std::size_t c : coords) {
      const double saved = leaf.values()[c];
      double fp = 0, fm = 0;
      {
        nilm::NoGradGuard guard;
        leaf.values()[c] = saved + opt.step;
        fp = f().item();
        leaf.values()[c] = saved - opt.step;
        fm = f().item();
      }
      leaf.values()[c] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = rel_err(analytic[li][c], numeric, opt.denom_floor);
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        std::ostringstream os;
        os << "leaf " << li << " coord " << c << ": analytic "
           << analytic[li][c] << ", numeric " << numeric;
        rep.worst = os.str();
      }
      ++rep.coords_checked;
    }
  }
  return rep;
}

// Directional probe for large parameter sets: compares v . grad against the
// central difference of f along a random unit direction v.  One probe touches
// every coordinate at once, so it catches systematically wrong layers even
// when per-coordinate checks would be too slow.
template <typename Fn>
double directional_probe(std::vector<nilm::Tensor<double>> leaves, Fn&& f,
                         std::uint64_t direction_seed, double step = 1e-5,
                         double denom_floor = 1e-8) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.grad();
    leaf.zero_grad();
  }
  nilm::Tensor<double> loss = f();
  nilm::backward(loss);

  nilm::Rng rng(direction_seed);
  std::vector<std::vector<double>> direction;
  double norm2 = 0;
  for (auto& leaf : leaves) {
    std::vector<double> v(leaf.size());
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    direction.push_back(std::move(v));
  }
  const double inv_norm = 1.0 / std::sqrt(norm2);

  double analytic = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& g = leaves[li].grad();
    for (std::size_t c = 0; c < g.size(); ++c) {
      analytic += g[c] * direction[li][c] * inv_norm;
    }
  }

  std::vector<std::vector<double>> saved;
  saved.reserve(leaves.size());
  for (auto& leaf : leaves) saved.push_back(leaf.values());
  const auto move_by = [&](double scale) {
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto& vals = leaves[li].values();
      for (std::size_t c = 0; c < vals.size(); ++c) {
        vals[c] = saved[li][c] + scale * direction[li][c] * inv_norm;
      }
    }
  };
  double fp = 0, fm = 0;
  {
    nilm::NoGradGuard guard;
    move_by(step);
    fp = f().item();
    move_by(-step);
    fm = f().item();
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    leaves[li].values() = saved[li];
  }
  const double numeric = (fp - fm) / (2.0 * step);
  return rel_err(analytic, numeric, denom_floor);
}

}  // namespace gradcheck
