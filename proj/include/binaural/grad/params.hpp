#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "binaural/errors.hpp"
#include "binaural/grad/tape.hpp"
#include "binaural/grad/tensor.hpp"

namespace binaural::grad {

/// Named, insertion-ordered collection of trainable tensors.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw UsageError("parameter '" + name + "' registered twice");
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    value.requires_grad = true;
    tensors_.push_back(std::move(value));
    return tensors_.back();
  }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& operator[](const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor& operator[](const std::string& name) const { return tensors_[index_of(name)]; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool operator==(const ParameterSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].shape != other.tensors_[i].shape || tensors_[i].data != other.tensors_[i].data) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// A ParameterSet's tensors placed on a tape, either as gradient leaves or constants.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& set, bool trainable = true) : set_(&set) {
    vars_.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
      vars_.push_back(trainable ? tape.variable(set.tensor(i)) : tape.constant(set.tensor(i)));
  }

  Var operator[](const std::string& name) const { return vars_[set_->index_of(name)]; }
  Var at(std::size_t i) const { return vars_.at(i); }
  std::size_t size() const { return vars_.size(); }
  const ParameterSet& set() const { return *set_; }

  /// Gradients from the tape's last backward pass, one per parameter; unused ones are zero.
  std::vector<Tensor> gradients() const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (Var v : vars_) out.push_back(v.tape->grad_or_zero(v));
    return out;
  }

 private:
  const ParameterSet* set_;
  std::vector<Var> vars_;
};

}  // namespace binaural::grad
