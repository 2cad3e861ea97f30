#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssdu/autodiff.hpp"

namespace ssdu {

/// Named real-valued trainable tensors with gradient and Adam moment buffers.
template <class Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    Tensor<Real> adam_m;
    Tensor<Real> adam_v;
    bool trainable = true;
  };

  void add(std::string name, Tensor<Real> value, bool trainable = true) {
    if (index_.count(name)) throw UsageError("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    Shape shape = value.shape();
    entries_.push_back(Entry{std::move(name), std::move(value), Tensor<Real>(shape), Tensor<Real>(shape), Tensor<Real>(shape), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& at(const std::string& name) { return entries_.at(lookup(name)); }
  const Entry& at(const std::string& name) const { return entries_.at(lookup(name)); }
  Tensor<Real>& value(const std::string& name) { return at(name).value; }
  const Tensor<Real>& value(const std::string& name) const { return at(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total number of scalar parameters.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(Real(0));
  }

  /// Tape leaves for every parameter, in store order.
  class Bound {
   public:
    const ad::Var<Real>& operator[](const std::string& name) const { return vars_.at(store_->lookup(name)); }
    const std::vector<ad::Var<Real>>& all() const { return vars_; }

   private:
    friend class ParamStore;
    const ParamStore* store_ = nullptr;
    std::vector<ad::Var<Real>> vars_;
  };

  /// Registers every parameter on the tape. The same leaves are meant to be
  /// reused wherever a parameter appears, so gradients of shared weights sum.
  Bound bind(ad::Tape<Real>& tape, bool differentiable = true) const {
    Bound b;
    b.store_ = this;
    for (const auto& e : entries_)
      b.vars_.push_back(differentiable && e.trainable ? tape.variable(e.value) : tape.constant(e.value));
    return b;
  }

  /// Adds the tape cotangents of the bound leaves into the gradient buffers.
  void accumulate_grads(const ad::Tape<Real>& tape, const Bound& bound) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (const auto* g = tape.template grad_if_any<Real>(bound.vars_[i].id())) entries_[i].grad += *g;
    }
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Reverse sweep from a scalar loss followed by gradient accumulation into
/// the store that produced `bound`.
template <class Real>
void backward(const ad::Var<Real>& loss, ParamStore<Real>& params, const typename ParamStore<Real>::Bound& bound) {
  loss.tape().backward(loss);
  params.accumulate_grads(loss.tape(), bound);
}

}  // namespace ssdu
