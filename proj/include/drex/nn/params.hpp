#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>

#include "drex/matrix.hpp"

namespace drex::nn {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Named trainable arrays with matching gradient buffers. Registration order
/// is the serialization order. Element addresses are stable (deque).
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, std::size_t rows, std::size_t cols) {
    if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter '" + name + "'");
    params_.push_back({std::move(name), Matrix<T>(rows, cols), Matrix<T>(rows, cols)});
    return params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  const Parameter<T>& at(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.value.flat())
        if (!std::isfinite(v)) return false;
    return true;
  }

  /// Copies values (not gradients) from a store of identical layout.
  void assign_values(const ParamStore& other) {
    check_layout(other);
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
  }

  void check_layout(const ParamStore& other) const {
    if (other.params_.size() != params_.size())
      throw std::invalid_argument("parameter stores differ in length");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name || !params_[i].value.same_shape(other.params_[i].value))
        throw std::invalid_argument("parameter layout mismatch at '" + params_[i].name + "'");
    }
  }

 private:
  std::deque<Parameter<T>> params_;
};

}  // namespace drex::nn
