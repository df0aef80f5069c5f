#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "cafe/parameter.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

enum class OpKind : std::uint8_t {
  Leaf,
  Param,
  Add,
  Sub,
  Mul,
  Affine,
  MatMul,
  Transpose,
  Concat,
  Slice,
  Reshape,
  Sigmoid,
  Tanh,
  Relu,
  MaskedSoftmax,
  LogSoftmax,
  Pick,
  SumAll,
  ReduceRows,
  Dropout,
  GatherRows,
  Fm,
};

const char* op_name(OpKind kind);

enum class Reduce : std::uint8_t { Sum, Mean, Max };

// Per-primitive attributes. Only the fields a primitive reads are meaningful.
struct Attrs {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  double scale = 1.0;
  double shift = 0.0;
  bool transpose_b = false;
  Reduce reduce = Reduce::Sum;
  std::size_t group = 0;  // ReduceRows: rows per output row
  Shape shape;            // Reshape
  std::vector<double> mask;
  std::vector<std::size_t> indices;  // Pick / GatherRows
  bool pad_row_zero = false;         // GatherRows: index 0 yields zeros, no gradient
  double keep = 1.0;                 // Dropout
  std::uint64_t seed = 0;            // Dropout
};

// Handle to a node on a tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// Records a forward computation and replays it in reverse. A tape is
// single-threaded; separate workers use separate tapes over the same
// read-only ParameterStore.
class Tape {
 public:
  explicit Tape(const ParameterStore* store = nullptr) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var leaf(Tensor value, bool requires_grad);
  // Parameter values are referenced, not copied. Frozen parameters behave as
  // constants. Repeated calls return the same node.
  Var param(ParamId id);

  Var apply(OpKind kind, std::span<const Var> inputs, Attrs attrs = {});

  Var add(Var a, Var b) { return apply2(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return apply2(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return apply2(OpKind::Mul, a, b); }
  Var affine(Var x, double scale, double shift);
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var transpose(Var x);
  Var concat(std::span<const Var> xs, std::size_t axis);
  Var concat(std::initializer_list<Var> xs, std::size_t axis) {
    return concat(std::span<const Var>(xs.begin(), xs.size()), axis);
  }
  Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
  Var reshape(Var x, Shape shape);
  Var sigmoid(Var x) { return apply1(OpKind::Sigmoid, x); }
  Var tanh(Var x) { return apply1(OpKind::Tanh, x); }
  Var relu(Var x) { return apply1(OpKind::Relu, x); }
  Var masked_softmax(Var x, std::vector<double> mask);
  Var log_softmax(Var x) { return apply1(OpKind::LogSoftmax, x); }
  Var pick(Var x, std::vector<std::size_t> indices);
  Var sum(Var x) { return apply1(OpKind::SumAll, x); }
  Var reduce_rows(Var x, Reduce kind, std::vector<double> mask, std::size_t group = 0);
  Var dropout(Var x, double keep, std::uint64_t seed);
  Var gather_rows(Var table, std::vector<std::size_t> indices, bool pad_row_zero);
  Var fm(Var x, Var w0, Var w, Var v);

  const Tensor& value(Var v) const;
  // Gradient of the last backward pass; zeros when the node was not reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::uint32_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

  // Reverse pass from a scalar. Parameter gradients are returned as a map
  // over the whole store (zeros for unreached parameters).
  GradientMap backward(Var loss);
  // Same, accumulating into an existing map.
  void backward(Var loss, GradientMap& into);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::uint32_t> inputs;
    Attrs attrs;
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    ParamId param = 0;
    std::vector<double> saved;
    std::vector<std::size_t> saved_idx;

    const Tensor& val() const { return ref ? *ref : value; }
  };

  Var apply1(OpKind k, Var x) { return apply(k, std::span<const Var>(&x, 1)); }
  Var apply2(OpKind k, Var a, Var b) {
    const Var in[2] = {a, b};
    return apply(k, in);
  }
  Var push(Node node);
  void forward(Node& node);
  void backward_node(Node& node);
  Tensor& grad_buffer(std::uint32_t id);
  void run_backward(Var loss);

  const ParameterStore* store_;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::uint32_t> param_nodes_;
};

}  // namespace cafe
