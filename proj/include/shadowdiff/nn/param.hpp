#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shadowdiff/rng.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff::nn {

/// A learnable tensor with its gradient and AdamW moments.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;
  bool trainable = true;

  Param() = default;
  explicit Param(Shape shape, T fill = T(0)) : value(shape, fill), grad(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv and linear layers.
template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
}

/// Named, non-owning view over every parameter of a module tree.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Param<T>* param;
  };

  void add(std::string name, Param<T>& p) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::invalid_argument("duplicate parameter name " + name);
    entries_.push_back({std::move(name), &p});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Param<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.param;
    return nullptr;
  }

  std::size_t num_values(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (!trainable_only || e.param->trainable) n += e.param->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.param->zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& e : entries_) e.param->trainable = on;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
      h = fnv1a(e.name.data(), e.name.size(), h);
      h = shadowdiff::checksum(e.param->value, h);
    }
    return h;
  }

  /// Copy values from a structurally identical store.
  void copy_values_from(const ParamStore& other) {
    require_same_structure(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].param->value = other.entries_[i].param->value;
  }

  void require_same_structure(const ParamStore& other) const {
    if (other.entries_.size() != entries_.size())
      throw std::invalid_argument("parameter stores differ in size");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].param->value.shape() != other.entries_[i].param->value.shape())
        throw std::invalid_argument("parameter stores differ at " + entries_[i].name);
    }
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace shadowdiff::nn
