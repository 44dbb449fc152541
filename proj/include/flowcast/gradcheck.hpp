#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "flowcast/tape.hpp"

namespace flowcast {

/// Builds a scalar loss on a fresh tape from leaves of the given parameters;
/// returns the root ValueId.
using LossBuilder = std::function<ValueId(Tape&, const std::vector<ValueId>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error with the denominator floored at 1e-6 so finite-difference
/// roundoff on dead (zero-gradient) coordinates does not register as error.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<ValueId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(tape.leaf(p, false));
  ValueId root = build(tape, ids);
  const double v = tape.value(root)[0];
  if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite loss evaluation");
  return v;
}

/// Compares tape gradients against central finite differences
/// (f(p+eps) - f(p-eps)) / (2 eps), coordinate by coordinate.
inline GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> params,
                                       double eps = 1e-5) {
  // Analytic pass.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<ValueId> ids;
    ids.reserve(params.size());
    for (const Tensor& p : params) ids.push_back(tape.leaf(p, true));
    ValueId root = build(tape, ids);
    if (!std::isfinite(tape.value(root)[0])) {
      throw NumericError("check_gradients: non-finite loss at base point");
    }
    tape.backward(root);
    for (ValueId id : ids) analytic.push_back(tape.grad(id));
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p].at(i) = saved + eps;
      const double fp = eval_loss(build, params);
      params[p].at(i) = saved - eps;
      const double fm = eval_loss(build, params);
      params[p].at(i) = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = relative_error(analytic[p][i], numeric);
      if (err > result.max_rel_error) {
        result = {err, p, i, analytic[p][i], numeric};
      }
    }
  }
  return result;
}

}  // namespace flowcast
