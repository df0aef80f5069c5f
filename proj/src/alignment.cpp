#include "cafe/alignment.hpp"

#include <stdexcept>

namespace cafe {

Var soft_align(Tape& tape, Var scores, Var values, const std::vector<double>& key_mask) {
  return tape.matmul(tape.masked_softmax(scores, key_mask), values);
}

static void require_nonempty(const EncodedSequence& s, const char* who) {
  if (s.length == 0) throw std::invalid_argument(std::string(who) + ": empty sequence");
}

InterAlignment inter_align(Tape& tape, const EncodedSequence& premise,
                           const EncodedSequence& hypothesis, const Dense& projection) {
  require_nonempty(premise, "inter_align");
  require_nonempty(hypothesis, "inter_align");
  Var fp = projection.forward(tape, premise.vectors);
  Var fh = projection.forward(tape, hypothesis.vectors);
  InterAlignment out;
  out.scores = tape.matmul(fp, fh, true);
  out.beta = soft_align(tape, tape.transpose(out.scores), premise.vectors, premise.mask);
  out.alpha = soft_align(tape, out.scores, hypothesis.vectors, hypothesis.mask);
  return out;
}

Var intra_align(Tape& tape, const EncodedSequence& seq, const Dense& projection) {
  require_nonempty(seq, "intra_align");
  Var g = projection.forward(tape, seq.vectors);
  return soft_align(tape, tape.matmul(g, g, true), seq.vectors, seq.mask);
}

FactorizationMachine FactorizationMachine::create(ParameterStore& store, const std::string& name,
                                                  std::size_t n, std::size_t factors, Rng& rng) {
  if (n == 0 || factors == 0) throw std::invalid_argument(name + ": FM sizes must be positive");
  FactorizationMachine fm;
  fm.n = n;
  fm.k = factors;
  fm.bias = store.add(name + "/w0", Tensor(Shape{1}, 0.0), false);
  fm.linear = store.add(name + "/w", xavier_uniform(Shape{n}, n, 1, rng), true);
  Tensor v = xavier_uniform(Shape{n, factors}, n, factors, rng);
  for (auto& x : v.values()) x *= 0.1;
  fm.factors = store.add(name + "/v", std::move(v), true);
  return fm;
}

Var FactorizationMachine::score(Tape& tape, Var x) const {
  return tape.fm(x, tape.param(bias), tape.param(linear), tape.param(factors));
}

Compressor Compressor::create(ParameterStore& store, const std::string& name, Comparison kind,
                              std::size_t n, std::size_t fm_factors, std::size_t hidden, Rng& rng) {
  Compressor c;
  c.kind = kind;
  switch (kind) {
    case Comparison::Fm:
      c.fm = FactorizationMachine::create(store, name, n, fm_factors, rng);
      break;
    case Comparison::FcLinear1:
      c.fc.push_back(Dense::create(store, name + "/fc0", n, 1, Activation::None, rng));
      break;
    case Comparison::FcRelu1:
      c.fc.push_back(Dense::create(store, name + "/fc0", n, 1, Activation::Relu, rng));
      break;
    case Comparison::FcRelu2:
      c.fc.push_back(Dense::create(store, name + "/fc0", n, hidden, Activation::Relu, rng));
      c.fc.push_back(Dense::create(store, name + "/fc1", hidden, 1, Activation::Relu, rng));
      break;
  }
  return c;
}

Var Compressor::score(Tape& tape, Var x) const {
  if (fm) {
    const std::size_t rows = tape.value(x).rows();
    return tape.reshape(fm->score(tape, x), Shape{rows, 1});
  }
  for (const auto& layer : fc) x = layer.forward(tape, x);
  return x;
}

AlignmentFactorizer AlignmentFactorizer::create(ParameterStore& store, const std::string& name,
                                                Comparison kind, std::size_t d_model,
                                                std::size_t fm_factors, std::array<bool, 3> enabled,
                                                Rng& rng) {
  AlignmentFactorizer af;
  for (std::size_t op = 0; op < 3; ++op) {
    if (!enabled[op]) continue;
    const std::size_t n = op == static_cast<std::size_t>(CompareOp::Cat) ? 2 * d_model : d_model;
    af.ops[op] = Compressor::create(store, name + "/" + kCompareOpNames[op], kind, n, fm_factors,
                                    d_model, rng);
  }
  return af;
}

std::size_t AlignmentFactorizer::width() const {
  std::size_t w = 0;
  for (const auto& op : ops) w += op.has_value();
  return w;
}

Var AlignmentFactorizer::factorize(Tape& tape, Var a, Var b) const {
  const Shape sa = tape.value(a).shape();
  const Shape sb = tape.value(b).shape();
  if (sa != sb) throw ShapeError("factorize: pair shapes " + shape_str(sa) + " vs " + shape_str(sb));
  if (width() == 0) throw std::logic_error("factorize: every comparison op is disabled");
  std::vector<Var> cols;
  if (ops[0]) cols.push_back(ops[0]->score(tape, tape.concat({a, b}, 1)));
  if (ops[1]) cols.push_back(ops[1]->score(tape, tape.sub(a, b)));
  if (ops[2]) cols.push_back(ops[2]->score(tape, tape.mul(a, b)));
  return cols.size() == 1 ? cols[0] : tape.concat(cols, 1);
}

AugmentedSequence augment(Tape& tape, const EncodedSequence& seq, std::optional<Var> intra_features,
                          std::optional<Var> inter_features, std::optional<Var> intra_vector) {
  const std::size_t extent = tape.value(seq.vectors).dim(0);
  std::vector<Var> parts{seq.vectors};
  for (const auto& part : {intra_features, inter_features, intra_vector}) {
    if (!part) continue;
    const Tensor& v = tape.value(*part);
    if (v.rank() != 2 || v.dim(0) != extent)
      throw ShapeError("augment: feature block " + shape_str(v.shape()) + " does not cover " +
                       std::to_string(extent) + " tokens");
    parts.push_back(*part);
  }
  Var u = parts.size() == 1 ? parts[0] : tape.concat(parts, 1);
  return AugmentedSequence{u, seq.mask, seq.length};
}

}  // namespace cafe
