#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cafe/tensor.hpp"

namespace cafe {

using ParamId = std::size_t;

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;      // participates in the L2 term
  bool trainable = true;  // frozen tensors (pretrained embeddings) are read-only
};

// Owns every parameter of a model. Ids are dense and insertion-ordered; the
// name is the checkpoint identity and must be unique.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value, bool decay, bool trainable = true);

  Parameter& operator[](ParamId id) { return params_.at(id); }
  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  std::optional<ParamId> find(const std::string& name) const;
  ParamId id(const std::string& name) const;  // throws when missing

  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Round every value to the nearest float. Keeps training state exactly
  // representable in the 32-bit checkpoint format.
  void round_to_float();

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, ParamId> index_;
};

// One gradient buffer per parameter of a store, zero for unreached ones.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(const ParameterStore& store);

  Tensor& operator[](ParamId id) { return grads_.at(id); }
  const Tensor& operator[](ParamId id) const { return grads_.at(id); }
  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return grads_.size(); }

  void zero();
  void add(const GradientMap& other);
  void scale(double s);
  double global_norm() const;
  bool all_finite() const;

 private:
  const ParameterStore* store_ = nullptr;
  std::vector<Tensor> grads_;
};

}  // namespace cafe
