#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "persona/numerics/tape.hpp"

namespace persona::numerics {

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped_non_smooth = 0;
  double max_relative_error = 0;
  double mean_relative_error = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_relative_error = 0;
  double mean_relative_error = 0;
  std::size_t checked = 0;
  std::size_t skipped_non_smooth = 0;

  const TensorCheck* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  // One-sided slopes disagreeing by more than this (relative) mark a kink.
  double kink_tolerance = 1e-3;
};

// Compares reverse-mode gradients of `loss_fn` against central differences,
// one scalar parameter at a time. `loss_fn` records its computation on the
// tape it is handed and returns the scalar loss.
//
// The differences are taken on `reference_params` through `reference_loss`,
// which may run at a wider type than the gradient under test: at ε=1e-5 the
// rounding noise of a double loss (~1e-11 absolute) swamps gradient entries
// of 1e-8, and a long double reference removes that noise without touching ε.
template <std::floating_point Real, std::floating_point Ref>
GradCheckReport finite_difference_check(const std::function<Var<Real>(Tape<Real>&)>& loss_fn,
                                        std::span<const NamedTensor<Real>> params,
                                        const std::function<Var<Ref>(Tape<Ref>&)>& reference_loss,
                                        std::span<const NamedTensor<Ref>> reference_params,
                                        GradCheckOptions options = {}) {
  require(options.epsilon > 0, "finite_difference_check: epsilon must be positive");
  require(params.size() == reference_params.size(), "finite_difference_check: reference parameter count differs");
  for (std::size_t k = 0; k < params.size(); ++k)
    require(params[k].name == reference_params[k].name && params[k].tensor->size() == reference_params[k].tensor->size(),
            "finite_difference_check: reference parameter " + reference_params[k].name + " does not match");

  std::vector<std::vector<Real>> analytic;
  {
    Tape<Real> tape;
    Var<Real> loss = loss_fn(tape);
    if (!std::isfinite(static_cast<double>(loss.scalar()))) throw NumericError("finite_difference_check: loss is not finite");
    tape.backward(loss);
    for (const auto& p : params) {
      auto g = tape.gradient(*p.tensor);
      if (g.empty()) {
        analytic.emplace_back(p.tensor->size(), Real(0));
      } else {
        analytic.emplace_back(g.begin(), g.end());
      }
    }
  }

  auto evaluate = [&](const std::string& name) {
    Tape<Ref> tape(false);
    const Ref v = reference_loss(tape).scalar();
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("finite_difference_check: non-finite loss while perturbing " + name);
    return v;
  };

  const Ref base = evaluate("<base>");
  const Ref eps = static_cast<Ref>(options.epsilon);
  GradCheckReport report;
  double error_sum = 0;

  for (std::size_t k = 0; k < reference_params.size(); ++k) {
    const auto& p = reference_params[k];
    TensorCheck check{p.name};
    double tensor_error_sum = 0;
    for (std::size_t i = 0; i < p.tensor->size(); ++i) {
      Ref& theta = p.tensor->values[i];
      const Ref original = theta;
      theta = original + eps;
      const Ref plus = evaluate(p.name);
      theta = original - eps;
      const Ref minus = evaluate(p.name);
      theta = original;

      const double forward_slope = static_cast<double>((plus - base) / eps);
      const double backward_slope = static_cast<double>((base - minus) / eps);
      if (std::abs(forward_slope - backward_slope) >
          options.kink_tolerance * std::max({std::abs(forward_slope), std::abs(backward_slope), 1.0})) {
        ++check.skipped_non_smooth;
        continue;
      }
      const double numeric = static_cast<double>((plus - minus) / (2 * eps));
      const double err = relative_error(static_cast<double>(analytic[k][i]), numeric);
      check.max_relative_error = std::max(check.max_relative_error, err);
      tensor_error_sum += err;
      ++check.checked;
    }
    if (check.checked > 0) check.mean_relative_error = tensor_error_sum / static_cast<double>(check.checked);
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    error_sum += tensor_error_sum;
    report.checked += check.checked;
    report.skipped_non_smooth += check.skipped_non_smooth;
    report.tensors.push_back(std::move(check));
  }
  if (report.checked > 0) report.mean_relative_error = error_sum / static_cast<double>(report.checked);
  return report;
}

template <std::floating_point Real>
GradCheckReport finite_difference_check(const std::function<Var<Real>(Tape<Real>&)>& loss_fn,
                                        std::span<const NamedTensor<Real>> params,
                                        GradCheckOptions options = {}) {
  return finite_difference_check<Real, Real>(loss_fn, params, loss_fn, params, options);
}

}  // namespace persona::numerics
