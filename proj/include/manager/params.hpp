// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "manager/tensor.hpp"

namespace manager {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// How a freshly registered parameter is filled.
struct Init {
  enum class Kind { Normal, Constant } kind = Kind::Normal;
  double value = 0.02;  // stddev for Normal, fill value for Constant

  static Init normal(double stddev = 0.02) { return {Kind::Normal, stddev}; }
  static Init constant(double v) { return {Kind::Constant, v}; }
  static Init zeros() { return constant(0.0); }
  static Init ones() { return constant(1.0); }
};

/// Ordered registry of every learnable tensor of a model.
///
/// Random initialization draws from a stream derived from (seed, name), so a
/// parameter's initial value does not depend on registration order or on
/// which other parameters exist.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor add(std::string name, Shape shape, Init init);
  const std::vector<NamedTensor>& entries() const { return entries_; }
  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);
  const Tensor& at(std::string_view name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::uint64_t seed_;
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace manager
