#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cafe/layers.hpp"

namespace cafe {

// weights = softmax_masked(scores) row-wise, result = weights * values.
// scores: queries x keys, values: keys x d, key_mask: keys.
Var soft_align(Tape& tape, Var scores, Var values, const std::vector<double>& key_mask);

struct InterAlignment {
  Var scores;  // premise x hypothesis, e_ij = F(p_i) . F(h_j)
  Var beta;    // hypothesis x d: premise mixture aligned to each hypothesis token
  Var alpha;   // premise x d: hypothesis mixture aligned to each premise token
};

InterAlignment inter_align(Tape& tape, const EncodedSequence& premise,
                           const EncodedSequence& hypothesis, const Dense& projection);

// s'_i = sum_j softmax_j(G(s_i) . G(s_j)) s_j over real tokens of one sentence.
Var intra_align(Tape& tape, const EncodedSequence& seq, const Dense& projection);

// Factorization machine Z(x) = w0 + <w, x> + sum_{i<j} <v_i, v_j> x_i x_j,
// evaluated in O(n f) per row.
struct FactorizationMachine {
  ParamId bias = 0;     // [1]
  ParamId linear = 0;   // [n]
  ParamId factors = 0;  // [n, f]
  std::size_t n = 0;
  std::size_t k = 0;

  static FactorizationMachine create(ParameterStore& store, const std::string& name,
                                     std::size_t n, std::size_t factors, Rng& rng);
  // x: rows x n (or n). Returns [rows].
  Var score(Tape& tape, Var x) const;
};

enum class Comparison { Fm, FcLinear1, FcRelu1, FcRelu2 };

// Compresses one comparison vector per token into a scalar: an FM by
// default, or the fully connected stand-ins used for ablations.
struct Compressor {
  Comparison kind = Comparison::Fm;
  std::optional<FactorizationMachine> fm;
  std::vector<Dense> fc;

  static Compressor create(ParameterStore& store, const std::string& name, Comparison kind,
                           std::size_t n, std::size_t fm_factors, std::size_t hidden, Rng& rng);
  Var score(Tape& tape, Var x) const;  // rows x n -> rows x 1
};

enum class CompareOp { Cat = 0, Sub = 1, Mul = 2 };
constexpr std::array<const char*, 3> kCompareOpNames = {"cat", "sub", "mul"};

// The three compressors for one alignment family (inter or intra). Disabled
// ops are absent.
struct AlignmentFactorizer {
  std::array<std::optional<Compressor>, 3> ops;

  static AlignmentFactorizer create(ParameterStore& store, const std::string& name,
                                    Comparison kind, std::size_t d_model, std::size_t fm_factors,
                                    std::array<bool, 3> enabled, Rng& rng);
  std::size_t width() const;
  // a, b: rows x d. Returns rows x width(), columns in (cat, sub, mul) order.
  Var factorize(Tape& tape, Var a, Var b) const;
};

struct AugmentedSequence {
  Var vectors;  // extent x (d_model + features [+ d_model])
  std::vector<double> mask;
  std::size_t length = 0;
};

// u_i = [s_i ; intra features ; inter features ; s'_i (optional)].
AugmentedSequence augment(Tape& tape, const EncodedSequence& seq, std::optional<Var> intra_features,
                          std::optional<Var> inter_features, std::optional<Var> intra_vector);

}  // namespace cafe
