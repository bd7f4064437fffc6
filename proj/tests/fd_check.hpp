#pragma once

// Central finite-difference oracle for the reverse-mode engine. Runs the
// same graph code at double precision (the production model is float32;
// the oracle is allowed to upcast internally) and compares every analytic
// gradient coordinate against (f(x+h) - f(x-h)) / 2h.

#include <functional>
#include <string>

#include "s2l/param_store.hpp"
#include "s2l/rng.hpp"

namespace fd {

using DStore = s2l::ParamStoreT<double>;
using DBound = s2l::BoundParamsT<double>;
using LossFn = std::function<s2l::VarT<double>(const DBound&)>;

inline double eval_loss(const DStore& params, const LossFn& fn) {
  auto bound = DBound::bind(params);
  return fn(bound)->value[0];
}

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;
};

/// Checks up to max_coords_per_tensor random coordinates of every entry.
inline FdReport check_gradients(const DStore& params, const LossFn& fn,
                                double step = 1e-3, int max_coords_per_tensor = 12,
                                std::uint64_t seed = 7) {
  DStore grads = s2l::gradient<double>(params, fn);
  FdReport report;
  s2l::Rng pick = s2l::Rng::stream(seed, "fd.pick");
  for (const auto& e : grads) {
    const auto n = e.tensor.size();
    const int m = static_cast<int>(std::min<Eigen::Index>(n, max_coords_per_tensor));
    for (int k = 0; k < m; ++k) {
      const Eigen::Index i =
          (n <= max_coords_per_tensor) ? k : pick.uniform_int(0, static_cast<int>(n) - 1);
      DStore p_hi = params;
      DStore p_lo = params;
      p_hi.at(e.name)[i] += step;
      p_lo.at(e.name)[i] -= step;
      const double fd = (eval_loss(p_hi, fn) - eval_loss(p_lo, fn)) / (2.0 * step);
      const double an = e.tensor[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      const double rel = std::abs(fd - an) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = e.name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(an) + " fd=" + std::to_string(fd);
      }
    }
  }
  return report;
}

inline DStore random_store(std::initializer_list<std::tuple<const char*, s2l::ParamGroup,
                                                            std::vector<int>>>
                               entries,
                           std::uint64_t seed, double stddev = 0.7) {
  DStore s;
  int i = 0;
  for (const auto& [name, group, shape] : entries) {
    s2l::TensorT<double> t(shape);
    s2l::Rng rng = s2l::Rng::stream(seed, "fd.init", static_cast<std::uint64_t>(i++));
    rng.fill_normal(t.data(), t.size(), 0.0, stddev);
    s.add(name, group, std::move(t));
  }
  return s;
}

}  // namespace fd
