#include "mscc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mscc/ops.hpp"

namespace mscc {

GradCheckReport finite_difference_check(const GraphFragment& fragment, std::vector<Tensor> inputs,
                                        double h, std::uint64_t seed, double floor) {
  auto make_vars = [&](bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(make_leaf(t, requires_grad));
    return vars;
  };

  auto probe = fragment(make_vars(false));
  Rng rng(seed);
  Tensor projection = random_uniform(probe->value.shape(), -1.0, 1.0, rng);
  auto objective = [&](const std::vector<Var>& vars) {
    return ops::weighted_sum(fragment(vars), projection);
  };

  auto vars = make_vars(true);
  backward(objective(vars));

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto analytic = std::as_const(vars[k]->value).grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = inputs[k][i];
      inputs[k][i] = original + h;
      const double plus = objective(make_vars(false))->value[0];
      inputs[k][i] = original - h;
      const double minus = objective(make_vars(false))->value[0];
      inputs[k][i] = original;

      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = rel;
        report.input_index = k;
        report.element_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mscc
