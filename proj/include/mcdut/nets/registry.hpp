#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcdut/core/autograd.hpp"

namespace mcdut::nets {

// Ordered, named collection of trainable parameters. Registration order is
// deterministic and doubles as the checkpoint blob layout.
template <typename T>
class ParamRegistry {
 public:
  void add(const std::string& name, const Variable<T>& var) {
    require(var.defined(), ErrorKind::InternalConsistency, "registering undefined parameter: " + name);
    require(find(name) == nullptr, ErrorKind::InternalConsistency, "duplicate parameter name: " + name);
    items_.emplace_back(name, var);
  }

  const Variable<T>* find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return &v;
    return nullptr;
  }

  std::vector<Variable<T>> variables() const {
    std::vector<Variable<T>> out;
    out.reserve(items_.size());
    for (const auto& [n, v] : items_) out.push_back(v);
    return out;
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().numel();
    return n;
  }

  size_t size() const { return items_.size(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  // True when no parameter tensor is shared between the two registries.
  static bool disjoint(const ParamRegistry& a, const ParamRegistry& b) {
    for (const auto& [na, va] : a)
      for (const auto& [nb, vb] : b)
        if (va.same_storage(vb)) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Variable<T>>> items_;
};

}  // namespace mcdut::nets
