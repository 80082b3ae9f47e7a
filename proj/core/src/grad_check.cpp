#include "swgrid/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "swgrid/error.hpp"

namespace swgrid {
namespace {

double projection_weight(std::size_t j) { return 1.0 + static_cast<double>((5 * j) % 8) / 8.0; }

double project(const Tensor<double>& out) {
  if (out.numel() == 1) return out[0];
  double acc = 0.0;
  for (std::size_t j = 0; j < out.numel(); ++j) acc += projection_weight(j) * out[j];
  return acc;
}

// Scalar sum_j w_j out_j recorded on the tape.
Tensor<double> projected_loss(const Tensor<double>& out, Tape<double>& tape) {
  if (out.numel() == 1) return out;
  Tensor<double> loss = Tensor<double>::scalar(project(out));
  if (out.requires_grad()) {
    tape.record(loss, [out = out, loss]() mutable {
      const double g = loss.grad()[0];
      auto gx = out.grad();
      for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += g * projection_weight(j);
    });
  }
  return loss;
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& f, std::span<Tensor<double>> inputs, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.clear_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = projected_loss(f(tape), tape);
    if (loss.requires_grad()) tape.backward(loss);
    for (auto& in : inputs) {
      analytic.push_back(in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                       : std::vector<double>(in.numel(), 0.0));
    }
  }

  auto evaluate = [&]() {
    Tape<double> tape;
    return project(f(tape));
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double plus = evaluate();
      values[i] = original - eps;
      const double minus = evaluate();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_rel_error || result.elements == 0) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_input = k;
        result.worst_element = i;
      }
      ++result.elements;
    }
  }
  for (auto& in : inputs) in.clear_grad();
  return result;
}

}  // namespace swgrid
