// SPDX-License-Identifier: Apache-2.0
#include "manager/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "manager/error.hpp"

namespace manager {

double GradcheckReport::max_relative_error() const {
  double m = 0.0;
  for (const auto& p : parameters) m = std::max(m, p.max_relative_error);
  return m;
}

std::size_t GradcheckReport::flagged() const {
  std::size_t n = 0;
  for (const auto& p : parameters) n += p.flagged;
  return n;
}

GradcheckReport gradcheck(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& inputs,
                          const GradcheckOptions& options) {
  for (auto in : inputs) {
    if (!in.tensor.is_leaf()) throw ContractError("gradcheck input '" + in.name + "' is not a leaf");
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  loss().backward();

  GradcheckReport report;
  report.threshold = options.threshold;
  NoGradGuard no_grad;
  for (auto in : inputs) {
    ParameterGradError err;
    err.name = in.name;
    auto values = in.tensor.mutable_data();
    err.entries = values.size();
    std::vector<double> grad(values.size(), 0.0);
    if (in.tensor.has_grad()) {
      auto g = in.tensor.grad();
      std::copy(g.begin(), g.end(), grad.begin());
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = loss().item();
      values[i] = original - options.step;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double abs_err = std::abs(numeric - grad[i]);
      const double denom = std::max({std::abs(numeric), std::abs(grad[i]), options.relative_floor});
      const double rel = abs_err / denom;
      if (rel > err.max_relative_error) {
        err.max_relative_error = rel;
        err.worst_index = i;
      }
      err.max_absolute_error = std::max(err.max_absolute_error, abs_err);
      if (rel > options.threshold) ++err.flagged;
    }
    report.parameters.push_back(std::move(err));
  }
  return report;
}

}  // namespace manager
