#pragma once

#include <functional>
#include <span>
#include <string>

#include "cafe/parameter.hpp"
#include "cafe/tape.hpp"

namespace cafe {

// Relative error used throughout: |a - n| / max(1e-7, |a| + |n|).
double gradient_rel_error(double analytic, double numeric);

using InputFn = std::function<Var(Tape&, Var)>;
using ParamFn = std::function<Var(Tape&)>;

// Max relative error between the tape gradient of f at `point` and central
// differences with step `epsilon`. f must return a scalar. Pass `store` when
// f reads parameters; they are held fixed.
double check_gradients(const InputFn& f, const Tensor& point, double epsilon = 1e-5,
                       const ParameterStore* store = nullptr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t coordinates = 0;
};

// Same check over the trainable parameters of `store` (all of them when
// `subset` is empty). `stride` > 1 samples every stride-th coordinate.
GradCheckReport check_parameter_gradients(ParameterStore& store, const ParamFn& f,
                                          double epsilon = 1e-5,
                                          std::span<const ParamId> subset = {},
                                          std::size_t stride = 1);

}  // namespace cafe
