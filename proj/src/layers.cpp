#include "cafe/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace cafe {

Var DropoutContext::apply(Tape& tape, Var x) {
  if (!train_ || keep_ >= 1.0) return x;
  return tape.dropout(x, keep_, derive_seed(seed_, ++calls_));
}

Var activate(Tape& tape, Var x, Activation act) {
  switch (act) {
    case Activation::None: return x;
    case Activation::Relu: return tape.relu(x);
    case Activation::Sigmoid: return tape.sigmoid(x);
    case Activation::Tanh: return tape.tanh(x);
  }
  return x;
}

Dense Dense::create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t out, Activation act, Rng& rng) {
  Dense d;
  d.in = in;
  d.out = out;
  d.act = act;
  d.weight = store.add(name + "/W", xavier_uniform(Shape{in, out}, in, out, rng), true);
  d.bias = store.add(name + "/b", Tensor(Shape{out}, 0.0), false);
  return d;
}

Var Dense::forward(Tape& tape, Var x) const {
  const Tensor& xv = tape.value(x);
  if (xv.cols() != in)
    throw ShapeError("dense layer expects width " + std::to_string(in) + ", got " +
                     shape_str(xv.shape()));
  if (xv.rank() == 1) x = tape.reshape(x, Shape{1, in});
  Var y = tape.add(tape.matmul(x, tape.param(weight)), tape.param(bias));
  return activate(tape, y, act);
}

Highway Highway::create(ParameterStore& store, const std::string& name, std::size_t in,
                        std::size_t out, Rng& rng) {
  Highway h;
  h.transform = Dense::create(store, name + "/H", in, out, Activation::Relu, rng);
  h.gate = Dense::create(store, name + "/T", in, out, Activation::Sigmoid, rng);
  if (in != out) h.projection = Dense::create(store, name + "/P", in, out, Activation::Relu, rng);
  return h;
}

Var Highway::forward(Tape& tape, Var x) const {
  Var h = transform.forward(tape, x);
  Var t = gate.forward(tape, x);
  Var carry_in = projection ? projection->forward(tape, x) : x;
  if (tape.value(carry_in).rank() == 1) carry_in = tape.reshape(carry_in, Shape{1, out()});
  Var carry = tape.affine(t, -1.0, 1.0);
  return tape.add(tape.mul(h, t), tape.mul(carry, carry_in));
}

std::vector<double> TokenIds::mask() const {
  std::vector<double> m(extent(), 0.0);
  std::fill_n(m.begin(), std::min(length, m.size()), 1.0);
  return m;
}

CharCnn CharCnn::create(ParameterStore& store, const std::string& name, std::size_t num_chars,
                        std::size_t char_dim, std::size_t window, std::size_t num_filters,
                        Rng& rng) {
  if (window == 0 || num_filters == 0 || char_dim == 0 || num_chars < 2)
    throw std::invalid_argument(name + ": char cnn dimensions must be positive");
  CharCnn c;
  c.char_dim = char_dim;
  c.window = window;
  c.num_filters = num_filters;
  c.embedding = store.add(name + "/embedding",
                          xavier_uniform(Shape{num_chars, char_dim}, num_chars, char_dim, rng), true);
  const std::size_t fan_in = window * char_dim;
  c.filters = store.add(name + "/filters",
                        xavier_uniform(Shape{fan_in, num_filters}, fan_in, num_filters, rng), true);
  c.bias = store.add(name + "/bias", Tensor(Shape{num_filters}, 0.0), false);
  return c;
}

Var CharCnn::encode(Tape& tape, const std::vector<std::size_t>& chars, std::size_t width,
                    const std::vector<std::size_t>& counts) const {
  if (width < window)
    throw ShapeError("char cnn: width " + std::to_string(width) + " is below the window " +
                     std::to_string(window));
  const std::size_t tokens = counts.size();
  if (tokens == 0 || chars.size() != tokens * width)
    throw ShapeError("char cnn: expected " + std::to_string(tokens) + " x " +
                     std::to_string(width) + " char ids, got " + std::to_string(chars.size()));
  const std::size_t positions = width - window + 1;
  std::vector<std::size_t> windows;
  windows.reserve(tokens * positions * window);
  std::vector<double> mask(tokens * positions, 0.0);
  for (std::size_t t = 0; t < tokens; ++t) {
    const std::size_t count = std::min(counts[t], width);
    const std::size_t valid = count > window ? count - window + 1 : 1;
    for (std::size_t p = 0; p < positions; ++p) {
      if (p < valid) mask[t * positions + p] = 1.0;
      for (std::size_t k = 0; k < window; ++k) windows.push_back(chars[t * width + p + k]);
    }
  }
  Var emb = tape.gather_rows(tape.param(embedding), std::move(windows), true);
  Var cols = tape.reshape(emb, Shape{tokens * positions, window * char_dim});
  Var conv = tape.add(tape.matmul(cols, tape.param(filters)), tape.param(bias));
  return tape.reduce_rows(conv, Reduce::Max, std::move(mask), positions);
}

Var CharCnn::encode_word(Tape& tape, const std::vector<std::size_t>& word_chars) const {
  if (word_chars.empty()) throw std::invalid_argument("char cnn: empty word");
  std::vector<std::size_t> padded = word_chars;
  if (padded.size() < window) padded.resize(window, 0);
  const std::size_t width = padded.size();
  return tape.reshape(encode(tape, padded, width, {word_chars.size()}), Shape{num_filters});
}

Lstm Lstm::create(ParameterStore& store, const std::string& name, std::size_t in,
                  std::size_t hidden, Rng& rng) {
  Lstm l;
  l.in = in;
  l.hidden = hidden;
  l.w_input = store.add(name + "/W_x", xavier_uniform(Shape{in, 4 * hidden}, in, 4 * hidden, rng), true);
  l.w_hidden =
      store.add(name + "/W_h", xavier_uniform(Shape{hidden, 4 * hidden}, hidden, 4 * hidden, rng), true);
  Tensor b(Shape{4 * hidden}, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
  l.bias = store.add(name + "/b", std::move(b), false);
  return l;
}

Var Lstm::forward(Tape& tape, Var x, std::size_t length, bool reverse) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.dim(1) != in)
    throw ShapeError("lstm expects ? x " + std::to_string(in) + ", got " + shape_str(xv.shape()));
  const std::size_t extent = xv.dim(0);
  if (length == 0 || length > extent)
    throw std::invalid_argument("lstm: sequence length must be in [1, " + std::to_string(extent) + "]");

  Var projected = tape.add(tape.matmul(x, tape.param(w_input)), tape.param(bias));
  Var wh = tape.param(w_hidden);
  Var h = tape.constant(Tensor(Shape{1, hidden}, 0.0));
  Var c = h;
  std::vector<Var> rows(extent);
  for (std::size_t step = 0; step < length; ++step) {
    const std::size_t t = reverse ? length - 1 - step : step;
    Var gates = tape.add(tape.slice(projected, 0, t, 1), tape.matmul(h, wh));
    Var i = tape.sigmoid(tape.slice(gates, 1, 0, hidden));
    Var f = tape.sigmoid(tape.slice(gates, 1, hidden, hidden));
    Var g = tape.tanh(tape.slice(gates, 1, 2 * hidden, hidden));
    Var o = tape.sigmoid(tape.slice(gates, 1, 3 * hidden, hidden));
    c = tape.add(tape.mul(f, c), tape.mul(i, g));
    h = tape.mul(o, tape.tanh(c));
    rows[t] = h;
  }
  for (std::size_t t = length; t < extent; ++t) rows[t] = h;
  return tape.concat(rows, 0);
}

InputEncoder InputEncoder::create(ParameterStore& store, const std::string& name,
                                  const InputEncoderConfig& cfg, Tensor word_vectors, Rng& rng) {
  if (word_vectors.rank() != 2 || word_vectors.dim(1) != cfg.word_dim)
    throw std::invalid_argument(name + "/word_embedding: table " + shape_str(word_vectors.shape()) +
                                " does not match word_dim " + std::to_string(cfg.word_dim));
  InputEncoder enc;
  enc.word_embedding = store.add(name + "/word_embedding", std::move(word_vectors), false, false);
  std::size_t width = cfg.word_dim;
  if (cfg.use_char) {
    enc.chars = CharCnn::create(store, name + "/char_cnn", cfg.num_chars, cfg.char_dim,
                                cfg.char_window, cfg.char_filters, rng);
    width += cfg.char_filters;
  }
  if (cfg.use_pos) {
    if (cfg.num_pos < 2) throw std::invalid_argument(name + ": POS vocabulary is empty");
    enc.pos_embedding = store.add(name + "/pos_embedding",
                                  xavier_uniform(Shape{cfg.num_pos, cfg.pos_dim}, cfg.num_pos,
                                                 cfg.pos_dim, rng),
                                  true);
    width += cfg.pos_dim;
  }
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t in = l == 0 ? width : cfg.d_model;
    const std::string layer = name + "/layer" + std::to_string(l);
    if (cfg.highway)
      enc.highways.push_back(Highway::create(store, layer, in, cfg.d_model, rng));
    else
      enc.dense.push_back(Dense::create(store, layer, in, cfg.d_model, Activation::Relu, rng));
  }
  return enc;
}

EncodedSequence InputEncoder::encode(Tape& tape, const TokenIds& ids, DropoutContext& dropout) const {
  const std::size_t extent = ids.extent();
  if (ids.length == 0 || extent == 0) throw std::invalid_argument("input encoder: empty sentence");
  if (ids.length > extent) throw std::invalid_argument("input encoder: length exceeds padded extent");

  Var table = tape.param(word_embedding);
  const std::size_t vocab = tape.value(table).dim(0);
  std::vector<std::size_t> words = ids.words;
  for (auto& w : words)
    if (w >= vocab) w = 1;  // OOV
  std::vector<Var> parts{tape.gather_rows(table, std::move(words), true)};

  if (chars) {
    if (ids.char_counts.size() != extent)
      throw std::invalid_argument("input encoder: char ids cover " +
                                  std::to_string(ids.char_counts.size()) + " tokens, expected " +
                                  std::to_string(extent));
    parts.push_back(chars->encode(tape, ids.chars, ids.char_width, ids.char_counts));
  }
  if (pos_embedding) {
    if (ids.pos.size() != extent)
      throw std::invalid_argument("input encoder: POS ids cover " + std::to_string(ids.pos.size()) +
                                  " tokens, expected " + std::to_string(extent));
    Var pos_table = tape.param(*pos_embedding);
    const std::size_t npos = tape.value(pos_table).dim(0);
    std::vector<std::size_t> pos = ids.pos;
    for (auto& p : pos)
      if (p >= npos) p = 1;
    parts.push_back(tape.gather_rows(pos_table, std::move(pos), true));
  }
  Var x = parts.size() == 1 ? parts[0] : tape.concat(parts, 1);
  for (const auto& hw : highways) x = dropout.apply(tape, hw.forward(tape, x));
  for (const auto& d : dense) x = dropout.apply(tape, d.forward(tape, x));
  return EncodedSequence{x, ids.mask(), ids.length};
}

std::size_t InputEncoder::input_width(const ParameterStore& store) const {
  std::size_t w = store[word_embedding].value.dim(1);
  if (chars) w += chars->num_filters;
  if (pos_embedding) w += store[*pos_embedding].value.dim(1);
  return w;
}

}  // namespace cafe
