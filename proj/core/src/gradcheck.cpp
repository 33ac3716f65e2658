#include "splatnorm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "splatnorm/rng.hpp"

namespace splatnorm {
namespace {

double eval_scalar(const GraphBuilder& builder, const std::vector<Tensor>& inputs, int which,
                   int64_t coord, double delta) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor v = inputs[i];
    if (static_cast<int>(i) == which) {
      v = v.clone();
      v.unique_data()[coord] += delta;
    }
    leaves.push_back(tape.constant(std::move(v)));
  }
  Var root = builder(tape, leaves);
  double f = root.value().scalar_value();
  if (!std::isfinite(f))
    throw std::runtime_error("finite_diff_check: non-finite value at input " +
                             std::to_string(which) + " coord " + std::to_string(coord));
  return f;
}

}  // namespace

GradCheckResult finite_diff_check(const GraphBuilder& builder, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options) {
  // Analytic pass.
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& x : inputs) leaves.push_back(tape.leaf(x));
  Var root = builder(tape, leaves);
  if (root.value().numel() != 1)
    throw std::invalid_argument("finite_diff_check: builder must return a scalar");
  double f0 = root.value().scalar_value();
  if (!std::isfinite(f0)) throw std::runtime_error("finite_diff_check: non-finite base value");
  tape.backward(root);

  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  // A leaf the root never touches has gradient zero; FD confirms it below.
  for (const Var& leaf : leaves)
    analytic.push_back(tape.has_grad(leaf.id()) ? leaf.grad()
                                                : Tensor::zeros(leaf.value().shape()));

  GradCheckResult result;
  double h = options.step;
  Rng coord_rng(options.coord_seed);
  for (size_t i = 0; i < inputs.size(); ++i) {
    int64_t n = inputs[i].numel();
    std::vector<int64_t> coords;
    if (options.max_coords_per_input >= 0 && n > options.max_coords_per_input) {
      std::vector<int64_t> all(n);
      for (int64_t k = 0; k < n; ++k) all[k] = k;
      for (int64_t k = 0; k < options.max_coords_per_input; ++k) {
        int64_t j = k + static_cast<int64_t>(coord_rng.next_below(n - k));
        std::swap(all[k], all[j]);
        coords.push_back(all[k]);
      }
    } else {
      coords.resize(n);
      for (int64_t k = 0; k < n; ++k) coords[k] = k;
    }
    for (int64_t c : coords) {
      double fp = eval_scalar(builder, inputs, static_cast<int>(i), c, h);
      double fm = eval_scalar(builder, inputs, static_cast<int>(i), c, -h);
      double dp = (fp - f0) / h;
      double dm = (f0 - fm) / h;
      if (std::fabs(dp - dm) > options.kink_tol * (std::fabs(dp) + std::fabs(dm) + 1.0)) {
        ++result.skipped_kinks;
        continue;
      }
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[i].at(c);
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      double rel = std::fabs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = static_cast<int>(i);
        result.worst_coord = c;
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<Var(Tape&, Var)>& builder, const Tensor& x,
                                  double step) {
  GradCheckOptions opt;
  opt.step = step;
  return finite_diff_check(
      [&builder](Tape& t, const std::vector<Var>& leaves) { return builder(t, leaves[0]); }, {x},
      opt);
}

}  // namespace splatnorm
