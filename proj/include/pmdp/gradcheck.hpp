#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>

#include "pmdp/adam.hpp"
#include "pmdp/autodiff.hpp"
#include "pmdp/tensor.hpp"

namespace pmdp {

using VarMap = std::map<std::string, Var>;

/// A scalar function expressed as a tape program over named parameters.
using TapeFn = std::function<Var(Tape&, const VarMap&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

inline VarMap register_params(Tape& tape, const ParamMap& params,
                              bool trainable = true) {
  VarMap vars;
  for (const auto& [name, t] : params) {
    vars[name] = tape.leaf(t, trainable, name);
  }
  return vars;
}

inline double eval_scalar(const TapeFn& fn, const ParamMap& params) {
  Tape tape;
  VarMap vars = register_params(tape, params, false);
  return tape.val(fn(tape, vars)).value();
}

/// Compares the tape gradient of `fn` against central differences
/// (f(p+h) - f(p-h)) / 2h on every parameter coordinate. Relative error is
/// |a-n| / max(1e-8, |a|+|n|); non-finite comparisons count as +inf.
inline GradCheckResult finite_diff_check(const TapeFn& fn,
                                         const ParamMap& params, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: h must be > 0");

  ParamMap analytic;
  {
    Tape tape;
    VarMap vars = register_params(tape, params, true);
    Var loss = fn(tape, vars);
    tape.backward(loss);
    analytic = tape.trainable_grads();
  }

  GradCheckResult res;
  ParamMap work = params;
  for (auto& [name, p] : work) {
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.data[i];
      p.data[i] = saved + h;
      const double fp = eval_scalar(fn, work);
      p.data[i] = saved - h;
      const double fm = eval_scalar(fn, work);
      p.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = g.data[i];
      double err;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        err = std::numeric_limits<double>::infinity();
      } else {
        err = std::abs(a - numeric) /
              std::max(1e-8, std::abs(a) + std::abs(numeric));
      }
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace pmdp
