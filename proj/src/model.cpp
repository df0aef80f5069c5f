#include "cafe/model.hpp"

#include <cmath>
#include <exception>
#include <map>
#include <stdexcept>

namespace cafe {

Var pool(Tape& tape, Var hidden, const std::vector<double>& mask, Pooling kind) {
  switch (kind) {
    case Pooling::AvgMax:
      return tape.concat({tape.reduce_rows(hidden, Reduce::Max, mask),
                          tape.reduce_rows(hidden, Reduce::Mean, mask)},
                         1);
    case Pooling::Sum: return tape.reduce_rows(hidden, Reduce::Sum, mask);
    case Pooling::Avg: return tape.reduce_rows(hidden, Reduce::Mean, mask);
    case Pooling::Max: return tape.reduce_rows(hidden, Reduce::Max, mask);
  }
  throw std::invalid_argument("unknown pooling");
}

PredictionHead PredictionHead::create(ParameterStore& store, const std::string& name, std::size_t in,
                                      HeadKind kind, std::size_t width, std::size_t depth,
                                      std::size_t classes, Rng& rng) {
  PredictionHead head;
  std::size_t w = in;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string layer = name + "/layer" + std::to_string(l);
    if (kind == HeadKind::Highway)
      head.highways.push_back(Highway::create(store, layer, w, width, rng));
    else
      head.dense.push_back(Dense::create(store, layer, w, width, Activation::Relu, rng));
    w = width;
  }
  head.output = Dense::create(store, name + "/output", w, classes, Activation::None, rng);
  return head;
}

std::size_t PredictionHead::input_width() const {
  if (!highways.empty()) return highways.front().in();
  if (!dense.empty()) return dense.front().in;
  return output.in;
}

Var PredictionHead::features(Tape& tape, Var xp, Var xh) const {
  const Shape sp = tape.value(xp).shape();
  const Shape sh = tape.value(xh).shape();
  if (sp != sh || 4 * tape.value(xp).cols() != input_width())
    throw ShapeError("prediction head: pooled shapes " + shape_str(sp) + " and " + shape_str(sh) +
                     " do not fit head input width " + std::to_string(input_width()));
  return tape.concat({xp, xh, tape.mul(xp, xh), tape.sub(xp, xh)}, 1);
}

Var PredictionHead::logits(Tape& tape, Var xp, Var xh, DropoutContext& dropout) const {
  Var x = features(tape, xp, xh);
  for (const auto& hw : highways) x = dropout.apply(tape, hw.forward(tape, x));
  for (const auto& d : dense) x = dropout.apply(tape, d.forward(tape, x));
  return output.forward(tape, x);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t cols = logits.cols(), rows = logits.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = logits[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += out[r * cols + c] = std::exp(logits[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return out;
}

Model::Model(ModelConfig config, VocabSizes sizes, Tensor word_vectors)
    : config_(std::move(config)), sizes_(sizes) {
  config_.validate();
  const auto& c = config_;
  if (word_vectors.rank() != 2 || word_vectors.dim(0) != sizes.words)
    throw std::invalid_argument("encoder/word_embedding: table " + shape_str(word_vectors.shape()) +
                                " does not have " + std::to_string(sizes.words) + " rows");
  if (c.use_char && sizes.chars < 2)
    throw std::invalid_argument("encoder/char_cnn: character vocabulary is empty");
  if (c.use_pos && sizes.pos < 2)
    throw std::invalid_argument("encoder/pos_embedding: POS vocabulary is empty");

  Rng rng(derive_seed(c.seed, hash_string("init")));
  InputEncoderConfig ec;
  ec.word_dim = c.word_dim;
  ec.d_model = c.d_model;
  ec.use_char = c.use_char;
  ec.num_chars = sizes.chars;
  ec.char_dim = c.char_dim;
  ec.char_window = c.char_window;
  ec.char_filters = c.char_filters;
  ec.use_pos = c.use_pos;
  ec.num_pos = sizes.pos;
  ec.pos_dim = c.pos_dim;
  ec.highway = c.encoder_highway;
  ec.depth = c.encoder_depth;
  encoder_ = InputEncoder::create(store_, "encoder", ec, std::move(word_vectors), rng);

  const std::size_t d = c.d_model;
  if (c.use_inter_attention) {
    inter_projection_ = Dense::create(store_, "align/F", d, d, Activation::Relu, rng);
    inter_ = AlignmentFactorizer::create(store_, "inter", c.comparison, d, c.fm_factors,
                                         c.compare_ops(), rng);
  }
  intra_projection_ = Dense::create(store_, c.share_intra_projection ? "align/G" : "align/G_premise",
                                    d, d, Activation::Relu, rng);
  if (!c.share_intra_projection)
    intra_projection_h_ = Dense::create(store_, "align/G_hypothesis", d, d, Activation::Relu, rng);
  intra_ = AlignmentFactorizer::create(store_, "intra", c.comparison, d, c.fm_factors,
                                       c.compare_ops(), rng);

  lstm_ = Lstm::create(store_, "lstm", augmented_width(), c.lstm_hidden, rng);
  if (c.bidirectional)
    lstm_reverse_ = Lstm::create(store_, "lstm_reverse", augmented_width(), c.lstm_hidden, rng);
  head_ = PredictionHead::create(store_, "head", 4 * pooled_width(), c.head, c.head_width,
                                 c.head_depth, c.num_classes, rng);
  if (c.float32_params) store_.round_to_float();
}

std::size_t Model::augmented_width() const {
  std::size_t w = config_.d_model + intra_.width();
  if (config_.use_inter_attention) w += inter_.width();
  if (config_.include_intra_vector) w += config_.d_model;
  return w;
}

std::size_t Model::pooled_width() const {
  const std::size_t per_direction = config_.pooling == Pooling::AvgMax ? 2 : 1;
  return per_direction * config_.lstm_hidden * (config_.bidirectional ? 2 : 1);
}

Var Model::encode_sentence(Tape& tape, const AugmentedSequence& seq, DropoutContext& dropout) const {
  Var h = lstm_.forward(tape, seq.vectors, seq.length);
  if (lstm_reverse_) h = tape.concat({h, lstm_reverse_->forward(tape, seq.vectors, seq.length, true)}, 1);
  return dropout.apply(tape, h);
}

PairGraph Model::forward_example(Tape& tape, const TokenIds& premise, const TokenIds& hypothesis,
                                 DropoutContext& dropout) const {
  PairGraph g;
  g.premise = encoder_.encode(tape, premise, dropout);
  g.hypothesis = encoder_.encode(tape, hypothesis, dropout);

  if (config_.use_inter_attention) {
    g.inter = inter_align(tape, g.premise, g.hypothesis, inter_projection_);
    g.premise_inter = inter_.factorize(tape, g.inter->alpha, g.premise.vectors);
    g.hypothesis_inter = inter_.factorize(tape, g.inter->beta, g.hypothesis.vectors);
  }
  g.premise_intra_vector = intra_align(tape, g.premise, intra_projection(false));
  g.hypothesis_intra_vector = intra_align(tape, g.hypothesis, intra_projection(true));
  g.premise_intra = intra_.factorize(tape, g.premise.vectors, g.premise_intra_vector);
  g.hypothesis_intra = intra_.factorize(tape, g.hypothesis.vectors, g.hypothesis_intra_vector);

  auto vec = [&](Var v) -> std::optional<Var> {
    if (config_.include_intra_vector) return v;
    return std::nullopt;
  };
  g.premise_aug = augment(tape, g.premise, g.premise_intra, g.premise_inter, vec(g.premise_intra_vector));
  g.hypothesis_aug =
      augment(tape, g.hypothesis, g.hypothesis_intra, g.hypothesis_inter, vec(g.hypothesis_intra_vector));

  g.premise_hidden = encode_sentence(tape, g.premise_aug, dropout);
  g.hypothesis_hidden = encode_sentence(tape, g.hypothesis_aug, dropout);
  g.x_p = pool(tape, g.premise_hidden, g.premise_aug.mask, config_.pooling);
  g.x_h = pool(tape, g.hypothesis_hidden, g.hypothesis_aug.mask, config_.pooling);
  g.logits = head_.logits(tape, g.x_p, g.x_h, dropout);
  return g;
}

PairFeatures Model::capture_features(const Tape& tape, const PairGraph& g) const {
  auto fill = [&](SentenceFeatures& out, std::size_t length, std::optional<Var> inter, Var intra) {
    out.values = Tensor(Shape{length, 6}, 0.0);
    auto copy = [&](Var block, const AlignmentFactorizer& fz, std::size_t base) {
      const Tensor& v = tape.value(block);
      std::size_t col = 0;
      for (std::size_t op = 0; op < 3; ++op) {
        if (!fz.ops[op]) continue;
        for (std::size_t t = 0; t < length; ++t) out.values.at(t, base + op) = v.at(t, col);
        ++col;
      }
    };
    if (inter) copy(*inter, inter_, kInterCat);
    copy(intra, intra_, kIntraCat);
  };
  PairFeatures pf;
  fill(pf.premise, g.premise.length, g.premise_inter, g.premise_intra);
  fill(pf.hypothesis, g.hypothesis.length, g.hypothesis_inter, g.hypothesis_intra);
  return pf;
}

ForwardResult forward_pair(const Model& model, const Batch& batch, bool train_mode,
                           std::uint64_t dropout_seed, bool capture_features) {
  const std::size_t n = batch.size();
  if (n == 0 || batch.hypotheses.size() != n)
    throw std::invalid_argument("forward_pair: batch is empty or premises/hypotheses differ in count");
  const std::size_t classes = model.config().num_classes;
  ForwardResult result;
  result.logits = Tensor(Shape{n, classes});
  if (capture_features) result.features.resize(n);

  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      const auto b = static_cast<std::size_t>(i);
      Tape tape(&model.params());
      DropoutContext dropout(train_mode, model.config().keep_prob, derive_seed(dropout_seed, b));
      PairGraph g = model.forward_example(tape, batch.premises[b], batch.hypotheses[b], dropout);
      const Tensor& logits = tape.value(g.logits);
      for (std::size_t c = 0; c < classes; ++c) result.logits.at(b, c) = logits[c];
      if (capture_features) result.features[b] = model.capture_features(tape, g);
    } catch (...) {
#pragma omp critical(cafe_forward_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return result;
}

Var cross_entropy(Tape& tape, Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& lv = tape.value(logits);
  const std::size_t rows = lv.rows(), classes = lv.cols();
  if (labels.size() != rows)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(rows) + " rows");
  for (auto y : labels)
    if (y >= classes)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(classes) + ")");
  Var picked = tape.pick(tape.log_softmax(logits), labels);
  return tape.affine(tape.sum(picked), -1.0 / static_cast<double>(rows), 0.0);
}

Var l2_penalty(Tape& tape, const ParameterStore& store, double lambda) {
  std::optional<Var> acc;
  for (ParamId id = 0; id < store.size(); ++id) {
    const Parameter& p = store[id];
    if (!p.decay || !p.trainable) continue;
    Var w = tape.param(id);
    Var sq = tape.sum(tape.mul(w, w));
    acc = acc ? tape.add(*acc, sq) : sq;
  }
  if (!acc) return tape.constant(Tensor::scalar(0.0));
  return tape.affine(*acc, lambda, 0.0);
}

Var total_loss(Tape& tape, Var logits, const std::vector<std::size_t>& labels,
               const ParameterStore& store, double lambda) {
  Var ce = cross_entropy(tape, logits, labels);
  if (lambda == 0.0) return ce;
  return tape.add(ce, l2_penalty(tape, store, lambda));
}

ParamCount count_params(const ParameterStore& store) {
  ParamCount pc;
  std::map<std::string, std::size_t> by_component;
  std::vector<std::string> order;
  for (const auto& p : store) {
    if (!p.trainable) continue;
    const std::string comp = p.name.substr(0, p.name.find('/'));
    if (!by_component.count(comp)) order.push_back(comp);
    by_component[comp] += p.value.numel();
    pc.total += p.value.numel();
  }
  for (const auto& comp : order) pc.components.emplace_back(comp, by_component[comp]);
  return pc;
}

}  // namespace cafe
