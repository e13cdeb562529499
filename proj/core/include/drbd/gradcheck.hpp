#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drbd/tensor.hpp"

namespace drbd {

struct GradCheckOptions {
  double step = 1e-5;        // central difference half-width
  double tolerance = 1e-4;   // on the relative error
  double floor = 1e-3;       // denominator floor for near-zero gradients
  std::size_t max_entries = 48;  // per input; larger inputs are sampled
  std::uint64_t seed = 7;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor);

struct GradCheckResult {
  std::string name;
  std::string op;  // tape op the case targets; "composite" for whole graphs
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;  // "input<k>[i]" of the worst entry
  bool passed = false;
};

/// Scalar function of its leaves.
using GradFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Differentiates `f` once by reverse mode and compares each gradient entry
/// (all of them, or a seeded sample of `max_entries` per input) against a
/// central difference. Relu gates are frozen at the base point during the
/// differences, so a step that would cross a kink still sees the smooth
/// piece whose derivative backprop reports. `inputs` are used as given and
/// are marked as requiring grad.
GradCheckResult check_gradients(const std::string& name, const std::string& op, const GradFn& f,
                                const std::vector<TensorD>& inputs, const GradCheckOptions& opts = {});

struct GradCheckCase {
  std::string name;
  std::string op;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

/// One case per differentiable op (several for ops with modes), the full
/// selective scan in both directions, the bidirectional block and the
/// CE-Dice loss through a small network with the quantizer off.
std::vector<GradCheckCase> gradcheck_cases();

/// Runs the cases whose op or name equals `filter` (all when empty).
/// Throws DomainError when the filter matches nothing.
std::vector<GradCheckResult> run_gradcheck(const std::string& filter = {}, const GradCheckOptions& opts = {});

}  // namespace drbd
