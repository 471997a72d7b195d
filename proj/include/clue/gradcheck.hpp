#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "clue/autograd.hpp"
#include "clue/rng.hpp"

namespace clue {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // entries where the loss is not differentiable
  bool pass = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Entries probed per parameter; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error.
  double floor = 1e-6;
  /// One-sided slopes that disagree by more than this (relative) mark a ReLU
  /// or max-pool kink inside [-step, step]; such entries are skipped. A kink
  /// below the threshold moves the central difference by at most half of it.
  /// Negative means "same as tolerance".
  double kink_tolerance = -1.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares every parameter's backward-pass gradient with central finite
/// differences of `loss`. `loss` must rebuild the graph on each call and be
/// deterministic (fix any dropout seed inside it).
inline GradCheckReport gradient_check(ParameterSet<double>& params,
                                      const std::function<Var<double>()>& loss,
                                      const GradCheckOptions& opt = {}) {
  params.zero_grad();
  Var<double> l = loss();
  if (l.size() != 1 || !std::isfinite(l.value()[0])) throw NumericError("gradient_check: non-finite loss");
  backward(l);
  std::vector<Tensor<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  auto eval = [&]() {
    NoGradGuard guard;
    const double v = loss().value()[0];
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckReport rep;
  const double kink_tol = opt.kink_tolerance < 0 ? opt.tolerance : opt.kink_tolerance;
  Rng rng(opt.seed, "gradcheck");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& theta = p.mutable_value();
    std::vector<std::size_t> idx;
    if (opt.max_entries == 0 || opt.max_entries >= theta.size()) {
      for (std::size_t i = 0; i < theta.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < opt.max_entries; ++i) idx.push_back(rng.below(theta.size()));
    }
    for (std::size_t i : idx) {
      const double orig = theta[i];
      const double mid = eval();
      theta[i] = orig + opt.step;
      const double up = eval();
      theta[i] = orig - opt.step;
      const double down = eval();
      theta[i] = orig;
      const double right = (up - mid) / opt.step, left = (mid - down) / opt.step;
      if (relative_error(right, left, opt.floor) > kink_tol) {
        ++rep.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(analytic[k][i], numeric, opt.floor);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst_parameter.empty()) {
        if (err >= rep.max_rel_error) {
          rep.max_rel_error = err;
          rep.worst_parameter = p.name;
          rep.worst_index = i;
        }
      }
    }
  }
  params.zero_grad();
  rep.pass = rep.checked > 0 && rep.max_rel_error < opt.tolerance;
  return rep;
}

}  // namespace clue
