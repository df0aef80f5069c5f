#include "cafe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cafe {

double gradient_rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-7, std::fabs(analytic) + std::fabs(numeric));
}

namespace {

double eval_scalar(Tape& tape, Var out) {
  const Tensor& v = tape.value(out);
  if (v.numel() != 1)
    throw ShapeError("gradient check needs a scalar-valued function, got " + shape_str(v.shape()));
  return v[0];
}

}  // namespace

double check_gradients(const InputFn& f, const Tensor& point, double epsilon,
                       const ParameterStore* store) {
  Tensor analytic;
  {
    Tape tape(store);
    Var x = tape.leaf(point, true);
    Var y = f(tape, x);
    eval_scalar(tape, y);
    tape.backward(y);
    analytic = tape.grad(x);
  }
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + epsilon;
    Tape plus(store);
    const double fp = eval_scalar(plus, f(plus, plus.constant(probe)));
    probe[i] = orig - epsilon;
    Tape minus(store);
    const double fm = eval_scalar(minus, f(minus, minus.constant(probe)));
    probe[i] = orig;
    worst = std::max(worst, gradient_rel_error(analytic[i], (fp - fm) / (2.0 * epsilon)));
  }
  return worst;
}

GradCheckReport check_parameter_gradients(ParameterStore& store, const ParamFn& f,
                                          double epsilon, std::span<const ParamId> subset,
                                          std::size_t stride) {
  std::vector<ParamId> ids(subset.begin(), subset.end());
  if (ids.empty())
    for (ParamId i = 0; i < store.size(); ++i) ids.push_back(i);
  stride = std::max<std::size_t>(stride, 1);

  GradientMap analytic;
  {
    Tape tape(&store);
    Var y = f(tape);
    eval_scalar(tape, y);
    analytic = tape.backward(y);
  }

  GradCheckReport report;
  for (ParamId id : ids) {
    Parameter& p = store[id];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.numel(); i += stride) {
      const double orig = p.value[i];
      p.value[i] = orig + epsilon;
      Tape plus(&store);
      const double fp = eval_scalar(plus, f(plus));
      p.value[i] = orig - epsilon;
      Tape minus(&store);
      const double fm = eval_scalar(minus, f(minus));
      p.value[i] = orig;
      const double err = gradient_rel_error(analytic[id][i], (fp - fm) / (2.0 * epsilon));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace cafe
