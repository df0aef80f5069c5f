#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cafe/parameter.hpp"
#include "cafe/rng.hpp"
#include "cafe/tape.hpp"

namespace cafe {

// Inverted dropout with one derived seed per call site. In eval mode it is
// the identity and records nothing.
class DropoutContext {
 public:
  DropoutContext(bool train, double keep, std::uint64_t seed)
      : train_(train), keep_(keep), seed_(seed) {}
  static DropoutContext eval() { return DropoutContext(false, 1.0, 0); }

  Var apply(Tape& tape, Var x);
  bool train() const { return train_; }

 private:
  bool train_;
  double keep_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

enum class Activation { None, Relu, Sigmoid, Tanh };

Var activate(Tape& tape, Var x, Activation act);

// y = act(x W + b), W stored input-major (in x out).
struct Dense {
  ParamId weight = 0;
  ParamId bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::None;

  static Dense create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Activation act, Rng& rng);
  Var forward(Tape& tape, Var x) const;
};

// y = H(x) * T(x) + (1 - T(x)) * x'  with H = relu affine, T = sigmoid affine.
// x' = x when widths agree, otherwise a relu projection of x.
struct Highway {
  Dense transform;
  Dense gate;
  std::optional<Dense> projection;

  static Highway create(ParameterStore& store, const std::string& name, std::size_t in,
                        std::size_t out, Rng& rng);
  Var forward(Tape& tape, Var x) const;
  std::size_t in() const { return transform.in; }
  std::size_t out() const { return transform.out; }
};

// Per-sentence token ids, padded to a common extent. `length` leading tokens
// are real; the rest is padding (id 0 everywhere).
struct TokenIds {
  std::vector<std::size_t> words;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> chars;        // extent x char_width, PAD = 0
  std::vector<std::size_t> char_counts;  // real characters per token
  std::size_t char_width = 0;
  std::size_t length = 0;

  std::size_t extent() const { return words.size(); }
  std::vector<double> mask() const;
};

// Character convolution with max pooling over valid window positions.
struct CharCnn {
  ParamId embedding = 0;  // |chars| x char_dim
  ParamId filters = 0;    // (window * char_dim) x num_filters
  ParamId bias = 0;
  std::size_t char_dim = 0;
  std::size_t window = 0;
  std::size_t num_filters = 0;

  static CharCnn create(ParameterStore& store, const std::string& name, std::size_t num_chars,
                        std::size_t char_dim, std::size_t window, std::size_t num_filters,
                        Rng& rng);
  // chars: tokens x width ids (width >= window), counts: real chars per token.
  Var encode(Tape& tape, const std::vector<std::size_t>& chars, std::size_t width,
             const std::vector<std::size_t>& counts) const;
  Var encode_word(Tape& tape, const std::vector<std::size_t>& word_chars) const;
};

struct EncodedSequence {
  Var vectors;  // extent x d_model
  std::vector<double> mask;
  std::size_t length = 0;
};

// Left-to-right LSTM, gate order (input, forget, cell, output).
struct Lstm {
  ParamId w_input = 0;   // in x 4h
  ParamId w_hidden = 0;  // h x 4h
  ParamId bias = 0;      // 4h, forget slice starts at 1
  std::size_t in = 0;
  std::size_t hidden = 0;

  static Lstm create(ParameterStore& store, const std::string& name, std::size_t in,
                     std::size_t hidden, Rng& rng);
  // x: extent x in. Returns extent x hidden; rows past `length` repeat the
  // last state. `reverse` runs right-to-left over the real tokens.
  Var forward(Tape& tape, Var x, std::size_t length, bool reverse = false) const;
};

struct InputEncoderConfig {
  std::size_t word_dim = 300;
  std::size_t d_model = 300;
  bool use_char = true;
  std::size_t num_chars = 0;
  std::size_t char_dim = 16;
  std::size_t char_window = 3;
  std::size_t char_filters = 50;
  bool use_pos = true;
  std::size_t num_pos = 0;
  std::size_t pos_dim = 20;
  bool highway = true;  // false: dense relu layers instead
  std::size_t depth = 2;
};

// [word ; char-cnn ; pos] per token followed by a two-layer highway stack.
struct InputEncoder {
  ParamId word_embedding = 0;  // frozen
  std::optional<CharCnn> chars;
  std::optional<ParamId> pos_embedding;
  std::vector<Highway> highways;
  std::vector<Dense> dense;

  static InputEncoder create(ParameterStore& store, const std::string& name,
                             const InputEncoderConfig& cfg, Tensor word_vectors, Rng& rng);
  EncodedSequence encode(Tape& tape, const TokenIds& ids, DropoutContext& dropout) const;
  std::size_t input_width(const ParameterStore& store) const;
};

}  // namespace cafe
