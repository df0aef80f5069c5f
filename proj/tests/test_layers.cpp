#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cafe/gradcheck.hpp"
#include "cafe/layers.hpp"
#include "test_util.hpp"

using namespace cafe;
using testutil::random_tensor;
using testutil::uniform_int;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x (rows x in) W (in x out) + b, by loops.
std::vector<double> dense_oracle(const ParameterStore& s, const Dense& d, const Tensor& x) {
  const Tensor& w = s[d.weight].value;
  const Tensor& b = s[d.bias].value;
  const std::size_t rows = x.rows();
  std::vector<double> y(rows * d.out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += x[r * d.in + i] * w.at(i, o);
      y[r * d.out + o] = acc;
    }
  return y;
}

std::set<std::string> touched_params(const Tape& tape, const ParameterStore& store) {
  std::set<std::string> out;
  for (std::uint32_t id = 0; id < tape.size(); ++id)
    if (tape.kind(Var{id}) == OpKind::Param)
      for (const auto& p : store)
        if (&p.value == &tape.value(Var{id})) out.insert(p.name);
  return out;
}

}  // namespace

TEST(Highway, EquationHoldsExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = uniform_int(rng, 1, 6), rows = uniform_int(rng, 1, 4);
    ParameterStore store;
    Rng init(trial);
    Highway hw = Highway::create(store, "hw", d, d, init);
    store[hw.gate.bias].value = random_tensor({d}, rng);
    store[hw.transform.bias].value = random_tensor({d}, rng);
    const Tensor x = random_tensor({rows, d}, rng);
    Tape tape(&store);
    const Tensor y = tape.value(hw.forward(tape, tape.constant(x)));
    const auto h = dense_oracle(store, hw.transform, x), t = dense_oracle(store, hw.gate, x);
    for (std::size_t i = 0; i < rows * d; ++i) {
      const double g = sigmoid(t[i]);
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
      EXPECT_NEAR(y[i], std::max(0.0, h[i]) * g + (1.0 - g) * x[i], 1e-14);
    }
  }
}

TEST(Highway, GateLimits) {
  std::mt19937_64 rng(2);
  ParameterStore store;
  Rng init(3);
  Highway hw = Highway::create(store, "hw", 4, 4, init);
  const Tensor x = random_tensor({2, 4}, rng);
  const auto h = dense_oracle(store, hw.transform, x);

  store[hw.gate.bias].value.fill(60.0);
  {
    Tape tape(&store);
    const Tensor y = tape.value(hw.forward(tape, tape.constant(x)));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y[i], std::max(0.0, h[i]), 1e-12);
  }
  store[hw.gate.bias].value.fill(-60.0);
  {
    Tape tape(&store);
    const Tensor y = tape.value(hw.forward(tape, tape.constant(x)));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
  }
}

TEST(Highway, ProjectsCarryWhenWidthsDiffer) {
  std::mt19937_64 rng(4);
  ParameterStore store;
  Rng init(5);
  Highway hw = Highway::create(store, "hw", 5, 3, init);
  ASSERT_TRUE(hw.projection.has_value());
  store[hw.gate.bias].value.fill(-60.0);
  const Tensor x = random_tensor({2, 5}, rng);
  Tape tape(&store);
  const Tensor y = tape.value(hw.forward(tape, tape.constant(x)));
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  const auto p = dense_oracle(store, *hw.projection, x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], std::max(0.0, p[i]), 1e-12);
}

TEST(Highway, RejectsWidthMismatch) {
  ParameterStore store;
  Rng init(1);
  Highway hw = Highway::create(store, "hw", 4, 4, init);
  Tape tape(&store);
  EXPECT_THROW(hw.forward(tape, tape.constant(Tensor(Shape{2, 3}))), ShapeError);
}

TEST(Highway, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (std::size_t out : {4, 2}) {
    ParameterStore store;
    Rng init(7);
    Highway hw = Highway::create(store, "hw", 4, out, init);
    for (auto id : {hw.gate.bias, hw.transform.bias}) store[id].value = random_tensor({out}, rng, -0.5, 0.5);
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor r = random_tensor({3, out}, rng);
    auto probe = [&](Tape& t, Var v) { return t.sum(t.mul(hw.forward(t, v), t.constant(r))); };
    EXPECT_LT(check_gradients(probe, x, 1e-5, &store), 1e-5);
    auto report = check_parameter_gradients(store, [&](Tape& t) { return probe(t, t.constant(x)); });
    EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
  }
}

namespace {

// Max over valid window positions of a direct convolution.
std::vector<double> conv_oracle(const ParameterStore& s, const CharCnn& cnn, const std::vector<std::size_t>& word) {
  std::vector<std::size_t> padded = word;
  if (padded.size() < cnn.window) padded.resize(cnn.window, 0);
  const Tensor& emb = s[cnn.embedding].value;
  const Tensor& filt = s[cnn.filters].value;
  const Tensor& bias = s[cnn.bias].value;
  const std::size_t positions = padded.size() - cnn.window + 1;
  std::vector<double> best(cnn.num_filters, -INFINITY);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t f = 0; f < cnn.num_filters; ++f) {
      double acc = bias[f];
      for (std::size_t k = 0; k < cnn.window; ++k) {
        const std::size_t ch = padded[p + k];
        for (std::size_t e = 0; e < cnn.char_dim; ++e)
          acc += (ch == 0 ? 0.0 : emb.at(ch, e)) * filt.at(k * cnn.char_dim + e, f);
      }
      best[f] = std::max(best[f], acc);
    }
  return best;
}

}  // namespace

TEST(CharCnn, MatchesSlidingWindowOracle) {
  std::mt19937_64 rng(8);
  ParameterStore store;
  Rng init(9);
  CharCnn cnn = CharCnn::create(store, "cnn", 12, 4, 3, 5, init);
  store[cnn.bias].value = random_tensor({5}, rng);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> word(uniform_int(rng, 1, 9));
    for (auto& c : word) c = uniform_int(rng, 2, 11);
    Tape tape(&store);
    const Tensor y = tape.value(cnn.encode_word(tape, word));
    ASSERT_EQ(y.shape(), Shape{5});
    const auto expect = conv_oracle(store, cnn, word);
    for (std::size_t f = 0; f < 5; ++f) EXPECT_NEAR(y[f], expect[f], 1e-12);
  }
}

TEST(CharCnn, WordOfWindowLengthIsOneConvolution) {
  ParameterStore store;
  Rng init(10);
  CharCnn cnn = CharCnn::create(store, "cnn", 6, 2, 3, 2, init);
  store[cnn.bias].value = Tensor::vector({0.5, -0.5});
  const std::vector<std::size_t> word = {2, 3, 4};
  Tape tape(&store);
  const Tensor y = tape.value(cnn.encode_word(tape, word));
  const Tensor& emb = store[cnn.embedding].value;
  const Tensor& filt = store[cnn.filters].value;
  for (std::size_t f = 0; f < 2; ++f) {
    double acc = store[cnn.bias].value[f];
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t e = 0; e < 2; ++e) acc += emb.at(word[k], e) * filt.at(k * 2 + e, f);
    EXPECT_NEAR(y[f], acc, 1e-14);
  }
}

TEST(CharCnn, InvariantToTrailingCharPadding) {
  std::mt19937_64 rng(11);
  ParameterStore store;
  Rng init(12);
  CharCnn cnn = CharCnn::create(store, "cnn", 10, 3, 3, 4, init);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = uniform_int(rng, 1, 6), width = std::max<std::size_t>(len, 3);
    std::vector<std::size_t> chars(width, 0);
    for (std::size_t i = 0; i < len; ++i) chars[i] = uniform_int(rng, 2, 9);
    std::vector<std::size_t> wide = chars;
    const std::size_t extra = uniform_int(rng, 1, 8);
    wide.resize(width + extra, 0);
    Tape tape(&store);
    const Tensor a = tape.value(cnn.encode(tape, chars, width, {len}));
    const Tensor b = tape.value(cnn.encode(tape, wide, width + extra, {len}));
    EXPECT_EQ(a, b);
  }
}

TEST(CharCnn, IdenticalWordsIdenticalOutputsAndEmptyRejected) {
  ParameterStore store;
  Rng init(13);
  CharCnn cnn = CharCnn::create(store, "cnn", 8, 2, 3, 3, init);
  Tape tape(&store);
  const Tensor a = tape.value(cnn.encode_word(tape, {2, 5, 7, 3}));
  const Tensor b = tape.value(cnn.encode_word(tape, {2, 5, 7, 3}));
  EXPECT_EQ(a, b);
  EXPECT_THROW(cnn.encode_word(tape, {}), std::invalid_argument);
}

TEST(CharCnn, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  ParameterStore store;
  Rng init(15);
  CharCnn cnn = CharCnn::create(store, "cnn", 7, 3, 2, 4, init);
  const std::vector<std::size_t> chars = {2, 3, 6, 0, 4, 5, 0, 0};
  const Tensor r = random_tensor({2, 4}, rng);
  auto report = check_parameter_gradients(store, [&](Tape& t) {
    return t.sum(t.mul(cnn.encode(t, chars, 4, {3, 2}), t.constant(r)));
  });
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
}

namespace {

// Step-by-step recurrence with gate order (i, f, g, o).
std::vector<double> lstm_oracle(const ParameterStore& s, const Lstm& l, const Tensor& x, std::size_t length,
                                bool reverse) {
  const std::size_t H = l.hidden, extent = x.rows();
  const Tensor& wx = s[l.w_input].value;
  const Tensor& wh = s[l.w_hidden].value;
  const Tensor& b = s[l.bias].value;
  std::vector<double> h(H, 0.0), c(H, 0.0), out(extent * H);
  for (std::size_t step = 0; step < length; ++step) {
    const std::size_t t = reverse ? length - 1 - step : step;
    std::vector<double> z(4 * H);
    for (std::size_t j = 0; j < 4 * H; ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < l.in; ++i) acc += x.at(t, i) * wx.at(i, j);
      for (std::size_t i = 0; i < H; ++i) acc += h[i] * wh.at(i, j);
      z[j] = acc;
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigmoid(z[j]), fg = sigmoid(z[H + j]), gg = std::tanh(z[2 * H + j]),
                   og = sigmoid(z[3 * H + j]);
      c[j] = fg * c[j] + ig * gg;
      h[j] = og * std::tanh(c[j]);
    }
    std::copy(h.begin(), h.end(), out.begin() + t * H);
  }
  for (std::size_t t = length; t < extent; ++t) std::copy(h.begin(), h.end(), out.begin() + t * H);
  return out;
}

}  // namespace

TEST(Lstm, MatchesUnrolledRecurrence) {
  std::mt19937_64 rng(16);
  ParameterStore store;
  Rng init(17);
  Lstm lstm = Lstm::create(store, "lstm", 3, 4, init);
  for (bool reverse : {false, true})
    for (std::size_t length : {1, 2, 4}) {
      const Tensor x = random_tensor({6, 3}, rng);
      Tape tape(&store);
      const Tensor y = tape.value(lstm.forward(tape, tape.constant(x), length, reverse));
      ASSERT_EQ(y.shape(), (Shape{6, 4}));
      const auto expect = lstm_oracle(store, lstm, x, length, reverse);
      for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
    }
}

TEST(Lstm, ForgetBiasStartsAtOne) {
  ParameterStore store;
  Rng init(18);
  Lstm lstm = Lstm::create(store, "lstm", 2, 3, init);
  const Tensor& b = store[lstm.bias].value;
  for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(b[j], (j >= 3 && j < 6) ? 1.0 : 0.0);
}

TEST(Lstm, PrefixPropertyUnderPadding) {
  std::mt19937_64 rng(19);
  ParameterStore store;
  Rng init(20);
  Lstm lstm = Lstm::create(store, "lstm", 3, 3, init);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t len = uniform_int(rng, 1, 5), extra = uniform_int(rng, 1, 8);
    const Tensor x = random_tensor({len, 3}, rng);
    Tensor padded(Shape{len + extra, 3}, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) padded[i] = x[i];
    for (std::size_t i = x.numel(); i < padded.numel(); ++i) padded[i] = 100.0 * static_cast<double>(i % 7);
    for (bool reverse : {false, true}) {
      Tape tape(&store);
      const Tensor a = tape.value(lstm.forward(tape, tape.constant(x), len, reverse));
      const Tensor b = tape.value(lstm.forward(tape, tape.constant(padded), len, reverse));
      for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
    }
  }
}

TEST(Lstm, RejectsBadLength) {
  ParameterStore store;
  Rng init(21);
  Lstm lstm = Lstm::create(store, "lstm", 2, 2, init);
  Tape tape(&store);
  Var x = tape.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(lstm.forward(tape, x, 0), std::invalid_argument);
  EXPECT_THROW(lstm.forward(tape, x, 4), std::invalid_argument);
  EXPECT_THROW(lstm.forward(tape, tape.constant(Tensor(Shape{3, 5})), 2), ShapeError);
}

TEST(Lstm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(22);
  ParameterStore store;
  Rng init(23);
  Lstm lstm = Lstm::create(store, "lstm", 3, 3, init);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor r = random_tensor({4, 3}, rng);
  for (bool reverse : {false, true}) {
    auto probe = [&](Tape& t, Var v) { return t.sum(t.mul(lstm.forward(t, v, 3, reverse), t.constant(r))); };
    EXPECT_LT(check_gradients(probe, x, 1e-5, &store), 1e-5);
    auto report = check_parameter_gradients(store, [&](Tape& t) { return probe(t, t.constant(x)); });
    EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
  }
}

namespace {

InputEncoderConfig small_encoder(bool chars, bool pos) {
  InputEncoderConfig c;
  c.word_dim = 4;
  c.d_model = 5;
  c.use_char = chars;
  c.num_chars = 9;
  c.char_dim = 2;
  c.char_window = 2;
  c.char_filters = 3;
  c.use_pos = pos;
  c.num_pos = 5;
  c.pos_dim = 2;
  return c;
}

}  // namespace

TEST(InputEncoder, WidthFollowsEnabledChannels) {
  std::mt19937_64 rng(24);
  for (bool chars : {false, true})
    for (bool pos : {false, true}) {
      ParameterStore store;
      Rng init(25);
      auto cfg = small_encoder(chars, pos);
      InputEncoder enc = InputEncoder::create(store, "enc", cfg, random_tensor({8, 4}, rng), init);
      EXPECT_EQ(enc.input_width(store), 4u + (chars ? 3u : 0u) + (pos ? 2u : 0u));
      EXPECT_EQ(enc.highways.size(), 2u);
      EXPECT_EQ(enc.highways[0].in(), enc.input_width(store));
      Tape tape(&store);
      auto drop = DropoutContext::eval();
      auto seq = enc.encode(tape, testutil::random_ids(rng, 3, 5, 8, 9, 5, 4), drop);
      EXPECT_EQ(tape.value(seq.vectors).shape(), (Shape{5, 5}));
      EXPECT_EQ(seq.mask, (std::vector<double>{1, 1, 1, 0, 0}));
      EXPECT_EQ(seq.length, 3u);
    }
}

TEST(InputEncoder, RejectsEmptyAndMismatchedSentences) {
  std::mt19937_64 rng(26);
  ParameterStore store;
  Rng init(27);
  InputEncoder enc = InputEncoder::create(store, "enc", small_encoder(true, true), random_tensor({8, 4}, rng), init);
  Tape tape(&store);
  auto drop = DropoutContext::eval();
  auto ids = testutil::random_ids(rng, 3, 3, 8, 9, 5, 4);
  auto empty = ids;
  empty.length = 0;
  EXPECT_THROW(enc.encode(tape, empty, drop), std::invalid_argument);
  auto short_pos = ids;
  short_pos.pos.pop_back();
  EXPECT_THROW(enc.encode(tape, short_pos, drop), std::invalid_argument);
  EXPECT_THROW(InputEncoder::create(store, "enc2", small_encoder(false, false), random_tensor({8, 3}, rng), init),
               std::invalid_argument);
}

TEST(InputEncoder, WordEmbeddingsFrozenAndPadRowSilent) {
  std::mt19937_64 rng(28);
  ParameterStore store;
  Rng init(29);
  InputEncoder enc = InputEncoder::create(store, "enc", small_encoder(true, true), random_tensor({8, 4}, rng), init);
  EXPECT_FALSE(store[enc.word_embedding].trainable);
  Tape tape(&store);
  auto drop = DropoutContext::eval();
  auto seq = enc.encode(tape, testutil::random_ids(rng, 3, 5, 8, 9, 5, 4), drop);
  GradientMap g = tape.backward(tape.sum(seq.vectors));
  const Tensor& wg = g[enc.word_embedding];
  for (double v : wg.values()) EXPECT_EQ(v, 0.0);
  const Tensor& pg = g[*enc.pos_embedding];
  for (std::size_t c = 0; c < pg.cols(); ++c) EXPECT_EQ(pg.at(0, c), 0.0);
  const Tensor& cg = g[enc.chars->embedding];
  for (std::size_t c = 0; c < cg.cols(); ++c) EXPECT_EQ(cg.at(0, c), 0.0);
}

TEST(InputEncoder, OutOfRangeWordIdsUseOovRow) {
  std::mt19937_64 rng(30);
  ParameterStore store;
  Rng init(31);
  InputEncoder enc = InputEncoder::create(store, "enc", small_encoder(false, false), random_tensor({8, 4}, rng), init);
  auto ids = testutil::random_ids(rng, 2, 2, 8, 9, 5, 4);
  auto oov = ids;
  ids.words[1] = 1;
  oov.words[1] = 999;
  auto drop = DropoutContext::eval();
  Tape t1(&store), t2(&store);
  EXPECT_EQ(t1.value(enc.encode(t1, ids, drop).vectors), t2.value(enc.encode(t2, oov, drop).vectors));
}

TEST(InputEncoder, SiameseParameterSetIsOrderIndependent) {
  std::mt19937_64 rng(32);
  ParameterStore store;
  Rng init(33);
  InputEncoder enc = InputEncoder::create(store, "enc", small_encoder(true, true), random_tensor({8, 4}, rng), init);
  const auto p = testutil::random_ids(rng, 3, 3, 8, 9, 5, 4), h = testutil::random_ids(rng, 2, 2, 8, 9, 5, 4);
  auto drop = DropoutContext::eval();
  Tape a(&store), b(&store), only_p(&store);
  enc.encode(a, p, drop);
  enc.encode(a, h, drop);
  enc.encode(b, h, drop);
  enc.encode(b, p, drop);
  enc.encode(only_p, p, drop);
  EXPECT_EQ(touched_params(a, store), touched_params(b, store));
  EXPECT_EQ(touched_params(a, store), touched_params(only_p, store));
}

TEST(Dropout, EvalContextIsIdentityAndTrainIsSeeded) {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{50}, 1.0));
  auto eval = DropoutContext::eval();
  EXPECT_EQ(eval.apply(tape, x).id, x.id);
  DropoutContext a(true, 0.5, 9), b(true, 0.5, 9);
  const Tensor ya = tape.value(a.apply(tape, x));
  const Tensor yb = tape.value(b.apply(tape, x));
  EXPECT_EQ(ya, yb);
  const Tensor ya2 = tape.value(a.apply(tape, x));
  EXPECT_NE(ya, ya2);
}
