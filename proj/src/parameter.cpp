#include "cafe/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace cafe {

ParamId ParameterStore::add(std::string name, Tensor value, bool decay, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const ParamId id = params_.size();
  index_.emplace(name, id);
  params_.push_back(Parameter{std::move(name), std::move(value), decay, trainable});
  return id;
}

std::optional<ParamId> ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamId ParameterStore::id(const std::string& name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("no parameter named " + name);
  return *found;
}

void ParameterStore::round_to_float() {
  for (auto& p : params_)
    for (auto& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
}

GradientMap::GradientMap(const ParameterStore& store) : store_(&store) {
  grads_.reserve(store.size());
  for (const auto& p : store) {
    // Frozen parameters never receive gradient; a scalar zero stands in.
    if (p.trainable)
      grads_.emplace_back(p.value.shape(), 0.0);
    else
      grads_.emplace_back();
  }
}

const Tensor& GradientMap::at(const std::string& name) const {
  if (!store_) throw std::logic_error("gradient map is not bound to a parameter store");
  return grads_.at(store_->id(name));
}

void GradientMap::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

void GradientMap::add(const GradientMap& other) {
  if (other.grads_.size() != grads_.size())
    throw std::invalid_argument("gradient maps cover different parameter sets");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].values();
    auto src = other.grads_[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

void GradientMap::scale(double s) {
  for (auto& g : grads_)
    for (auto& v : g.values()) v *= s;
}

double GradientMap::global_norm() const {
  double acc = 0.0;
  for (const auto& g : grads_)
    for (double v : g.values()) acc += v * v;
  return std::sqrt(acc);
}

bool GradientMap::all_finite() const {
  for (const auto& g : grads_)
    for (double v : g.values())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cafe
