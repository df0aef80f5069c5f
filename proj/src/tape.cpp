#include "cafe/tape.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "cafe/kernels.hpp"

namespace cafe {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::MaskedSoftmax: return "masked_softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Pick: return "pick";
    case OpKind::SumAll: return "sum";
    case OpKind::ReduceRows: return "reduce_rows";
    case OpKind::Dropout: return "dropout";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Fm: return "fm";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_fail(OpKind k, const std::string& what) {
  throw ShapeError(std::string(op_name(k)) + ": " + what);
}

[[noreturn]] void shape_fail(OpKind k, const Shape& a, const Shape& b) {
  shape_fail(k, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// b broadcasts onto a when it has the same shape, a single element, or
// matches a's trailing dimensions.
void check_broadcast(OpKind k, const Shape& a, const Shape& b) {
  if (a == b || shape_numel(b) == 1) return;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) return;
  shape_fail(k, a, b);
}

// Outer / axis / inner decomposition for concat and slice.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

Var Tape::push(Node node) {
  if (nodes_.size() >= UINT32_MAX - 1) throw std::length_error("tape is full");
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::param(ParamId id) {
  if (!store_) throw std::logic_error("tape has no parameter store");
  if (auto it = param_nodes_.find(id); it != param_nodes_.end()) return Var{it->second};
  const Parameter& p = (*store_)[id];
  Node n;
  n.kind = OpKind::Param;
  n.ref = &p.value;
  n.param = id;
  n.requires_grad = p.trainable;
  Var v = push(std::move(n));
  param_nodes_.emplace(id, v.id);
  return v;
}

Var Tape::affine(Var x, double scale, double shift) {
  Attrs a;
  a.scale = scale;
  a.shift = shift;
  return apply(OpKind::Affine, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::matmul(Var a, Var b, bool transpose_b) {
  Attrs at;
  at.transpose_b = transpose_b;
  const Var in[2] = {a, b};
  return apply(OpKind::MatMul, in, std::move(at));
}

Var Tape::transpose(Var x) { return apply1(OpKind::Transpose, x); }

Var Tape::concat(std::span<const Var> xs, std::size_t axis) {
  Attrs a;
  a.axis = axis;
  return apply(OpKind::Concat, xs, std::move(a));
}

Var Tape::slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  Attrs a;
  a.axis = axis;
  a.start = start;
  a.length = length;
  return apply(OpKind::Slice, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::reshape(Var x, Shape shape) {
  Attrs a;
  a.shape = std::move(shape);
  return apply(OpKind::Reshape, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::masked_softmax(Var x, std::vector<double> mask) {
  Attrs a;
  a.mask = std::move(mask);
  return apply(OpKind::MaskedSoftmax, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::pick(Var x, std::vector<std::size_t> indices) {
  Attrs a;
  a.indices = std::move(indices);
  return apply(OpKind::Pick, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::reduce_rows(Var x, Reduce kind, std::vector<double> mask, std::size_t group) {
  Attrs a;
  a.reduce = kind;
  a.mask = std::move(mask);
  a.group = group;
  return apply(OpKind::ReduceRows, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::dropout(Var x, double keep, std::uint64_t seed) {
  Attrs a;
  a.keep = keep;
  a.seed = seed;
  return apply(OpKind::Dropout, std::span<const Var>(&x, 1), std::move(a));
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> indices, bool pad_row_zero) {
  Attrs a;
  a.indices = std::move(indices);
  a.pad_row_zero = pad_row_zero;
  return apply(OpKind::GatherRows, std::span<const Var>(&table, 1), std::move(a));
}

Var Tape::fm(Var x, Var w0, Var w, Var v) {
  const Var in[4] = {x, w0, w, v};
  return apply(OpKind::Fm, in);
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).val(); }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(n.val().shape(), 0.0);
}

Var Tape::apply(OpKind kind, std::span<const Var> inputs, Attrs attrs) {
  if (kind == OpKind::Leaf || kind == OpKind::Param)
    throw std::invalid_argument("apply: leaves are created with leaf() / param()");
  Node n;
  n.kind = kind;
  n.attrs = std::move(attrs);
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    if (!v.valid() || v.id >= nodes_.size())
      throw std::invalid_argument(std::string(op_name(kind)) + ": input is not on this tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  forward(n);
  return push(std::move(n));
}

void Tape::forward(Node& n) {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs.at(i)].val(); };
  const OpKind k = n.kind;
  auto need_inputs = [&](std::size_t count) {
    if (n.inputs.size() != count)
      shape_fail(k, "expects " + std::to_string(count) + " inputs, got " +
                        std::to_string(n.inputs.size()));
  };

  switch (k) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      need_inputs(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      check_broadcast(k, a.shape(), b.shape());
      n.value = Tensor(a.shape());
      const std::size_t nb = b.numel();
      double* y = n.value.data();
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const double bv = b[i % nb];
        y[i] = k == OpKind::Add ? a[i] + bv : k == OpKind::Sub ? a[i] - bv : a[i] * bv;
      }
      break;
    }
    case OpKind::Affine: {
      need_inputs(1);
      const Tensor& x = in(0);
      n.value = Tensor(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i)
        n.value[i] = n.attrs.scale * x[i] + n.attrs.shift;
      break;
    }
    case OpKind::MatMul: {
      need_inputs(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2) shape_fail(k, a.shape(), b.shape());
      const bool tb = n.attrs.transpose_b;
      const std::size_t m = a.dim(0), kk = a.dim(1);
      const std::size_t bk = tb ? b.dim(1) : b.dim(0);
      const std::size_t nn = tb ? b.dim(0) : b.dim(1);
      if (bk != kk) shape_fail(k, a.shape(), b.shape());
      n.value = Tensor(Shape{m, nn});
      kernels::gemm({m, nn, kk, a.data(), kernels::Trans::No, b.data(),
                     tb ? kernels::Trans::Yes : kernels::Trans::No, n.value.data(), false});
      break;
    }
    case OpKind::Transpose: {
      need_inputs(1);
      const Tensor& x = in(0);
      if (x.rank() != 2) shape_fail(k, "needs a matrix, got " + shape_str(x.shape()));
      const std::size_t r = x.dim(0), c = x.dim(1);
      n.value = Tensor(Shape{c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n.value[j * r + i] = x[i * c + j];
      break;
    }
    case OpKind::Concat: {
      if (n.inputs.empty()) shape_fail(k, "needs at least one input");
      const std::size_t axis = n.attrs.axis;
      const Shape& s0 = in(0).shape();
      if (axis >= s0.size()) shape_fail(k, "axis out of range for " + shape_str(s0));
      Shape out = s0;
      out[axis] = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Shape& si = in(i).shape();
        bool ok = si.size() == s0.size();
        for (std::size_t d = 0; ok && d < si.size(); ++d)
          if (d != axis && si[d] != s0[d]) ok = false;
        if (!ok) shape_fail(k, s0, si);
        out[axis] += si[axis];
      }
      n.value = Tensor(out);
      const AxisView ov = axis_view(out, axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& x = in(i);
        const AxisView iv = axis_view(x.shape(), axis);
        const std::size_t block = iv.extent * iv.inner;
        for (std::size_t o = 0; o < iv.outer; ++o)
          std::copy_n(x.data() + o * block, block,
                      n.value.data() + o * ov.extent * ov.inner + offset * ov.inner);
        offset += iv.extent;
      }
      break;
    }
    case OpKind::Slice: {
      need_inputs(1);
      const Tensor& x = in(0);
      const std::size_t axis = n.attrs.axis;
      if (axis >= x.rank() || n.attrs.length == 0 ||
          n.attrs.start + n.attrs.length > x.dim(axis))
        shape_fail(k, "bad range [" + std::to_string(n.attrs.start) + ", +" +
                          std::to_string(n.attrs.length) + ") on axis " + std::to_string(axis) +
                          " of " + shape_str(x.shape()));
      Shape out = x.shape();
      out[axis] = n.attrs.length;
      n.value = Tensor(out);
      const AxisView iv = axis_view(x.shape(), axis);
      const std::size_t block = n.attrs.length * iv.inner;
      for (std::size_t o = 0; o < iv.outer; ++o)
        std::copy_n(x.data() + o * iv.extent * iv.inner + n.attrs.start * iv.inner, block,
                    n.value.data() + o * block);
      break;
    }
    case OpKind::Reshape: {
      need_inputs(1);
      const Tensor& x = in(0);
      if (shape_numel(n.attrs.shape) != x.numel()) shape_fail(k, x.shape(), n.attrs.shape);
      n.value = x.reshaped(n.attrs.shape);
      break;
    }
    case OpKind::Sigmoid:
    case OpKind::Tanh:
    case OpKind::Relu: {
      need_inputs(1);
      const Tensor& x = in(0);
      n.value = Tensor(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        n.value[i] = k == OpKind::Sigmoid ? 1.0 / (1.0 + std::exp(-v))
                     : k == OpKind::Tanh  ? std::tanh(v)
                                          : (v > 0.0 ? v : 0.0);
      }
      break;
    }
    case OpKind::MaskedSoftmax: {
      need_inputs(1);
      const Tensor& x = in(0);
      const std::size_t cols = last_dim(x);
      if (n.attrs.mask.empty()) n.attrs.mask.assign(cols, 1.0);
      if (n.attrs.mask.size() != cols)
        shape_fail(k, x.shape(), Shape{n.attrs.mask.size()});
      n.value = Tensor(x.shape());
      kernels::masked_softmax({x.numel() / cols, cols, x.data(), n.attrs.mask.data(), n.value.data()});
      break;
    }
    case OpKind::LogSoftmax: {
      need_inputs(1);
      const Tensor& x = in(0);
      const std::size_t cols = last_dim(x);
      n.value = Tensor(x.shape());
      for (std::size_t r = 0; r < x.numel() / cols; ++r) {
        const double* xr = x.data() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) n.value[r * cols + c] = xr[c] - lse;
      }
      break;
    }
    case OpKind::Pick: {
      need_inputs(1);
      const Tensor& x = in(0);
      const std::size_t rows = x.rows(), cols = x.cols();
      if (n.attrs.indices.size() != rows)
        shape_fail(k, x.shape(), Shape{n.attrs.indices.size()});
      n.value = Tensor(Shape{rows});
      for (std::size_t r = 0; r < rows; ++r) {
        if (n.attrs.indices[r] >= cols)
          throw std::out_of_range("pick: index " + std::to_string(n.attrs.indices[r]) +
                                  " out of range for " + std::to_string(cols) + " columns");
        n.value[r] = x[r * cols + n.attrs.indices[r]];
      }
      break;
    }
    case OpKind::SumAll: {
      need_inputs(1);
      double acc = 0.0;
      for (double v : in(0).values()) acc += v;
      n.value = Tensor::scalar(acc);
      break;
    }
    case OpKind::ReduceRows: {
      need_inputs(1);
      const Tensor& x = in(0);
      if (x.rank() != 2) shape_fail(k, "needs a matrix, got " + shape_str(x.shape()));
      const std::size_t rows = x.dim(0), cols = x.dim(1);
      std::size_t group = n.attrs.group == 0 ? rows : n.attrs.group;
      if (rows % group != 0) shape_fail(k, "group size does not divide " + shape_str(x.shape()));
      n.attrs.group = group;
      if (n.attrs.mask.empty()) n.attrs.mask.assign(rows, 1.0);
      if (n.attrs.mask.size() != rows) shape_fail(k, x.shape(), Shape{n.attrs.mask.size()});
      const std::size_t groups = rows / group;
      n.value = Tensor(Shape{groups, cols});
      n.saved.assign(groups, 0.0);  // valid rows per group
      if (n.attrs.reduce == Reduce::Max) n.saved_idx.assign(groups * cols, 0);
      for (std::size_t g = 0; g < groups; ++g) {
        std::size_t count = 0;
        for (std::size_t r = g * group; r < (g + 1) * group; ++r)
          if (n.attrs.mask[r] != 0.0) ++count;
        if (count == 0)
          throw std::invalid_argument("reduce_rows: group " + std::to_string(g) +
                                      " has no valid rows");
        n.saved[g] = static_cast<double>(count);
        for (std::size_t c = 0; c < cols; ++c) {
          double acc = n.attrs.reduce == Reduce::Max ? -INFINITY : 0.0;
          std::size_t arg = 0;
          for (std::size_t r = g * group; r < (g + 1) * group; ++r) {
            if (n.attrs.mask[r] == 0.0) continue;
            const double v = x[r * cols + c];
            if (n.attrs.reduce == Reduce::Max) {
              if (v > acc) {
                acc = v;
                arg = r;
              }
            } else {
              acc += v;
            }
          }
          if (n.attrs.reduce == Reduce::Mean) acc /= static_cast<double>(count);
          if (n.attrs.reduce == Reduce::Max) n.saved_idx[g * cols + c] = arg;
          n.value[g * cols + c] = acc;
        }
      }
      break;
    }
    case OpKind::Dropout: {
      need_inputs(1);
      const Tensor& x = in(0);
      const double keep = n.attrs.keep;
      if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("dropout: keep must be in (0, 1]");
      n.value = x;
      if (keep < 1.0) {
        std::mt19937_64 rng(n.attrs.seed);
        std::bernoulli_distribution draw(keep);
        n.saved.resize(x.numel());
        for (std::size_t i = 0; i < x.numel(); ++i) {
          n.saved[i] = draw(rng) ? 1.0 / keep : 0.0;
          n.value[i] *= n.saved[i];
        }
      }
      break;
    }
    case OpKind::GatherRows: {
      need_inputs(1);
      const Tensor& table = in(0);
      if (table.rank() != 2) shape_fail(k, "table must be a matrix, got " + shape_str(table.shape()));
      const std::size_t width = table.dim(1);
      const auto& idx = n.attrs.indices;
      if (idx.empty()) shape_fail(k, "no indices");
      n.value = Tensor(Shape{idx.size(), width});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= table.dim(0))
          throw std::out_of_range("gather_rows: id " + std::to_string(idx[r]) +
                                  " outside table of " + std::to_string(table.dim(0)) + " rows");
        if (n.attrs.pad_row_zero && idx[r] == 0) continue;
        std::copy_n(table.data() + idx[r] * width, width, n.value.data() + r * width);
      }
      break;
    }
    case OpKind::Fm: {
      need_inputs(4);
      const Tensor& x = in(0);
      const Tensor& w0 = in(1);
      const Tensor& w = in(2);
      const Tensor& v = in(3);
      if (x.rank() < 1 || x.rank() > 2) shape_fail(k, "input must be a vector or matrix");
      const std::size_t nn = x.cols(), rows = x.rows();
      if (w0.numel() != 1) shape_fail(k, "bias must be a scalar, got " + shape_str(w0.shape()));
      if (w.numel() != nn) shape_fail(k, x.shape(), w.shape());
      if (v.rank() != 2 || v.dim(0) != nn) shape_fail(k, x.shape(), v.shape());
      const std::size_t f = v.dim(1);
      n.value = Tensor(Shape{rows});
      n.saved.assign(rows * f, 0.0);
      kernels::fm_forward({rows, nn, f, x.data(), w0[0], w.data(), v.data(), n.value.data(),
                           n.saved.data()});
      break;
    }
    case OpKind::Leaf:
    case OpKind::Param:
      break;
  }
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.val().shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward_node(Node& n) {
  const Tensor& g = n.grad;
  auto in_val = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].val(); };
  auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
  auto gbuf = [&](std::size_t i) -> Tensor& { return grad_buffer(n.inputs[i]); };

  switch (n.kind) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const std::size_t nb = b.numel();
      if (wants(0)) {
        Tensor& da = gbuf(0);
        for (std::size_t i = 0; i < g.numel(); ++i)
          da[i] += n.kind == OpKind::Mul ? g[i] * b[i % nb] : g[i];
      }
      if (wants(1)) {
        Tensor& db = gbuf(1);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double d = n.kind == OpKind::Add ? g[i] : n.kind == OpKind::Sub ? -g[i] : g[i] * a[i];
          db[i % nb] += d;
        }
      }
      break;
    }
    case OpKind::Affine: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += n.attrs.scale * g[i];
      }
      break;
    }
    case OpKind::MatMul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const bool tb = n.attrs.transpose_b;
      const std::size_t m = a.dim(0), kk = a.dim(1), nn = n.value.dim(1);
      using kernels::Trans;
      if (wants(0)) {
        // dA = G * op(B)^T
        kernels::gemm({m, kk, nn, g.data(), Trans::No, b.data(), tb ? Trans::No : Trans::Yes,
                       gbuf(0).data(), true});
      }
      if (wants(1)) {
        if (!tb)  // dB = A^T G
          kernels::gemm({kk, nn, m, a.data(), Trans::Yes, g.data(), Trans::No, gbuf(1).data(), true});
        else  // dB = G^T A
          kernels::gemm({nn, kk, m, g.data(), Trans::Yes, a.data(), Trans::No, gbuf(1).data(), true});
      }
      break;
    }
    case OpKind::Transpose: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const std::size_t r = dx.dim(0), c = dx.dim(1);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
      }
      break;
    }
    case OpKind::Concat: {
      const std::size_t axis = n.attrs.axis;
      const AxisView ov = axis_view(n.value.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const AxisView iv = axis_view(in_val(i).shape(), axis);
        if (wants(i)) {
          Tensor& dx = gbuf(i);
          const std::size_t block = iv.extent * iv.inner;
          for (std::size_t o = 0; o < iv.outer; ++o) {
            const double* src = g.data() + o * ov.extent * ov.inner + offset * ov.inner;
            double* dst = dx.data() + o * block;
            for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
          }
        }
        offset += iv.extent;
      }
      break;
    }
    case OpKind::Slice: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const AxisView iv = axis_view(dx.shape(), n.attrs.axis);
        const std::size_t block = n.attrs.length * iv.inner;
        for (std::size_t o = 0; o < iv.outer; ++o) {
          double* dst = dx.data() + o * iv.extent * iv.inner + n.attrs.start * iv.inner;
          const double* src = g.data() + o * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
      break;
    }
    case OpKind::Reshape: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
      }
      break;
    }
    case OpKind::Sigmoid:
    case OpKind::Tanh:
    case OpKind::Relu: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const Tensor& y = n.value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double d = n.kind == OpKind::Sigmoid ? y[i] * (1.0 - y[i])
                           : n.kind == OpKind::Tanh  ? 1.0 - y[i] * y[i]
                                                     : (y[i] > 0.0 ? 1.0 : 0.0);
          dx[i] += g[i] * d;
        }
      }
      break;
    }
    case OpKind::MaskedSoftmax: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const Tensor& y = n.value;
        const std::size_t cols = last_dim(y);
        for (std::size_t r = 0; r < y.numel() / cols; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            dx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
      break;
    }
    case OpKind::LogSoftmax: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const Tensor& y = n.value;
        const std::size_t cols = last_dim(y);
        for (std::size_t r = 0; r < y.numel() / cols; ++r) {
          double gs = 0.0;
          for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            dx[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gs;
        }
      }
      break;
    }
    case OpKind::Pick: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const std::size_t cols = dx.cols();
        for (std::size_t r = 0; r < n.attrs.indices.size(); ++r)
          dx[r * cols + n.attrs.indices[r]] += g[r];
      }
      break;
    }
    case OpKind::SumAll: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        for (auto& v : dx.values()) v += g[0];
      }
      break;
    }
    case OpKind::ReduceRows: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        const std::size_t cols = dx.dim(1), group = n.attrs.group;
        const std::size_t groups = n.value.dim(0);
        for (std::size_t gi = 0; gi < groups; ++gi)
          for (std::size_t c = 0; c < cols; ++c) {
            const double gv = g[gi * cols + c];
            if (n.attrs.reduce == Reduce::Max) {
              dx[n.saved_idx[gi * cols + c] * cols + c] += gv;
              continue;
            }
            const double share = n.attrs.reduce == Reduce::Mean ? gv / n.saved[gi] : gv;
            for (std::size_t r = gi * group; r < (gi + 1) * group; ++r)
              if (n.attrs.mask[r] != 0.0) dx[r * cols + c] += share;
          }
      }
      break;
    }
    case OpKind::Dropout: {
      if (wants(0)) {
        Tensor& dx = gbuf(0);
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx[i] += n.saved.empty() ? g[i] : g[i] * n.saved[i];
      }
      break;
    }
    case OpKind::GatherRows: {
      if (wants(0)) {
        Tensor& dt = gbuf(0);
        const std::size_t width = dt.dim(1);
        for (std::size_t r = 0; r < n.attrs.indices.size(); ++r) {
          const std::size_t id = n.attrs.indices[r];
          if (n.attrs.pad_row_zero && id == 0) continue;
          for (std::size_t c = 0; c < width; ++c) dt[id * width + c] += g[r * width + c];
        }
      }
      break;
    }
    case OpKind::Fm: {
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(2);
      const Tensor& v = in_val(3);
      kernels::fm_backward({x.rows(), x.cols(), v.dim(1), x.data(), w.data(), v.data(),
                            n.saved.data(), g.data(), wants(0) ? gbuf(0).data() : nullptr,
                            wants(1) ? gbuf(1).data() : nullptr, wants(2) ? gbuf(2).data() : nullptr,
                            wants(3) ? gbuf(3).data() : nullptr});
      break;
    }
    case OpKind::Leaf:
    case OpKind::Param:
      break;
  }
}

void Tape::run_backward(Var loss) {
  if (!loss.valid() || loss.id >= nodes_.size())
    throw std::invalid_argument("backward: loss is not on this tape");
  if (nodes_[loss.id].val().numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(nodes_[loss.id].val().shape()));
  for (auto& n : nodes_) n.has_grad = false;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    backward_node(n);
  }
}

GradientMap Tape::backward(Var loss) {
  if (!store_) {
    run_backward(loss);
    return GradientMap();
  }
  GradientMap map(*store_);
  backward(loss, map);
  return map;
}

void Tape::backward(Var loss, GradientMap& into) {
  run_backward(loss);
  for (const auto& [pid, nid] : param_nodes_) {
    const Node& n = nodes_[nid];
    if (!n.has_grad || !n.requires_grad) continue;
    Tensor& dst = into[pid];
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += n.grad[i];
  }
}

}  // namespace cafe
