#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "swgrid/tape.hpp"

namespace swgrid {

struct GradCheckResult {
  /// max over checked elements of |analytic - numeric| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t elements = 0;
  /// Input index and element offset of the worst element.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
};

/// Function under test. It must build its result from `inputs` through ops
/// recorded on the tape and be deterministic.
using GradCheckFn = std::function<Tensor<double>(Tape<double>&)>;

/// Compares backward() against central differences with step `eps`.
///
/// Non-scalar outputs are reduced to sum_j w_j f_j with fixed weights
/// w_j = 1 + ((5 j) mod 8) / 8 so that every output element matters.
/// `inputs` are handles the function reads from; each is perturbed in place
/// and restored.
GradCheckResult grad_check(const GradCheckFn& f, std::span<Tensor<double>> inputs, double eps = 1e-6);

}  // namespace swgrid
