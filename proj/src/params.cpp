// SPDX-License-Identifier: Apache-2.0
#include "manager/params.hpp"

#include "manager/error.hpp"
#include "manager/rng.hpp"

namespace manager {

Tensor ParameterStore::add(std::string name, Shape shape, Init init) {
  if (index_.count(name)) throw ContractError("parameter '" + name + "' registered twice");
  std::vector<double> values(shape_numel(shape));
  if (init.kind == Init::Kind::Constant) {
    std::fill(values.begin(), values.end(), init.value);
  } else {
    Rng rng(seed_, name);
    for (auto& v : values) v = rng.normal(0.0, init.value);
  }
  Tensor t = Tensor::from_vector(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), t});
  return t;
}

const Tensor* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

Tensor* ParameterStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

const Tensor& ParameterStore::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw ContractError("no parameter named '" + std::string(name) + "'");
  return *t;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

}  // namespace manager
