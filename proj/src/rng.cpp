#include "cafe/rng.hpp"

#include <cmath>

namespace cafe {

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(std::move(shape), limit, rng);
}

}  // namespace cafe
