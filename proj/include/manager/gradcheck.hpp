// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "manager/params.hpp"

namespace manager {

struct GradcheckOptions {
  double step = 1e-4;
  double threshold = 1e-3;
  /// Denominator floor of the relative error; keeps near-zero gradients from
  /// being judged by round-off alone.
  double relative_floor = 1e-6;
};

struct ParameterGradError {
  std::string name;
  std::size_t entries = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t flagged = 0;  // entries above the threshold
};

struct GradcheckReport {
  std::vector<ParameterGradError> parameters;
  double threshold = 0.0;

  double max_relative_error() const;
  std::size_t flagged() const;
  bool passed() const { return flagged() == 0; }
};

/// Compares analytic gradients of the scalar `loss` against central
/// differences (f(x+h) - f(x-h)) / 2h for every entry of every input.
/// `loss` must be deterministic (noise disabled).
GradcheckReport gradcheck(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& inputs,
                          const GradcheckOptions& options = {});

}  // namespace manager
