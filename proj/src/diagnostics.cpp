#include "cafe/diagnostics.hpp"

#include <algorithm>
#include <memory>
#include <tuple>

#include "cafe/gradcheck.hpp"
#include "cafe/kernels.hpp"
#include "cafe/rng.hpp"

namespace cafe {

namespace {

// Scalar probe sum(out * R) with R fixed by `seed`, so every output
// coordinate contributes with a distinct weight.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r = uniform_tensor(tape.value(out).shape(), 1.0, rng);
  return tape.sum(tape.mul(out, tape.constant(std::move(r))));
}

Tensor random_input(Shape shape, Rng& rng) { return uniform_tensor(std::move(shape), 1.0, rng); }

std::vector<ParamId> ids_with_prefix(const ParameterStore& store, const std::string& prefix) {
  std::vector<ParamId> ids;
  for (ParamId id = 0; id < store.size(); ++id)
    if (store[id].name.rfind(prefix, 0) == 0 && store[id].trainable) ids.push_back(id);
  return ids;
}

class Suite {
 public:
  explicit Suite(double eps) : eps_(eps) {}

  void input(const std::string& name, const InputFn& f, const Tensor& point,
             const ParameterStore* store = nullptr) {
    entries.push_back({name + " (input)", check_gradients(f, point, eps_, store), point.numel()});
  }
  void params(const std::string& name, ParameterStore& store, const ParamFn& f,
              std::vector<ParamId> subset = {}) {
    GradCheckReport r = check_parameter_gradients(store, f, eps_, subset);
    entries.push_back({name + " (params)", r.max_rel_error, r.coordinates});
  }

  std::vector<GradSuiteEntry> entries;

 private:
  double eps_;
};

IndexedExample micro_example() {
  IndexedExample ex;
  ex.pair_id = "micro";
  ex.premise.words = {2, 3, 4, 1};
  ex.premise.pos = {2, 3, 2, 4};
  ex.premise.chars = {{2, 3, 4}, {5, 2}, {6, 7, 8, 9}, {3}};
  ex.hypothesis.words = {2, 5, 6};
  ex.hypothesis.pos = {2, 3, 4};
  ex.hypothesis.chars = {{2, 3}, {4, 4, 5}, {9, 8}};
  ex.label = 2;
  return ex;
}

}  // namespace

MicroFixture make_micro_fixture(std::uint64_t seed, ModelConfig config) {
  config.seed = seed;
  config.float32_params = false;
  VocabSizes sizes{8, 10, 5};
  Rng rng(derive_seed(seed, hash_string("micro-words")));
  Tensor words = uniform_tensor(Shape{sizes.words, config.word_dim}, 0.5, rng);
  for (std::size_t c = 0; c < config.word_dim; ++c) words.at(0, c) = 0.0;
  MicroFixture fx;
  fx.model = std::make_unique<Model>(config, sizes, std::move(words));
  IndexedExample ex = micro_example();
  // Pad the hypothesis so both padding paths are exercised.
  IndexedExample padded = ex;
  fx.batch = make_batch({&padded}, config.char_window);
  TokenIds& h = fx.batch.hypotheses[0];
  h.words.push_back(0);
  h.pos.push_back(0);
  h.char_counts.push_back(0);
  h.chars.resize(h.chars.size() + h.char_width, 0);
  return fx;
}

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, double epsilon) {
  Suite suite(epsilon);
  Rng rng(derive_seed(seed, hash_string("gradsuite")));

  {
    ParameterStore store;
    const Highway same = Highway::create(store, "hw_same", 5, 5, rng);
    const Highway proj = Highway::create(store, "hw_proj", 5, 3, rng);
    const Tensor x = random_input({3, 5}, rng);
    for (const auto& [name, hw, prefix] : {std::tuple{"highway 5->5", &same, "hw_same/"},
                                           std::tuple{"highway 5->3", &proj, "hw_proj/"}}) {
      suite.input(name, [&](Tape& t, Var v) { return probe(t, hw->forward(t, v), 11); }, x, &store);
      suite.params(name, store, [&](Tape& t) { return probe(t, hw->forward(t, t.constant(x)), 11); },
                   ids_with_prefix(store, prefix));
    }
  }

  {
    ParameterStore store;
    const CharCnn cnn = CharCnn::create(store, "cnn", 10, 3, 2, 4, rng);
    const std::vector<std::size_t> chars = {2, 3, 4, 0, 0, 5, 0, 0, 0, 0, 6, 7, 8, 9, 2};
    const std::vector<std::size_t> counts = {3, 1, 5};
    suite.params("char cnn", store, [&](Tape& t) { return probe(t, cnn.encode(t, chars, 5, counts), 12); });
  }

  {
    ParameterStore store;
    const Lstm lstm = Lstm::create(store, "lstm", 4, 3, rng);
    const Tensor x = random_input({5, 4}, rng);
    for (bool reverse : {false, true}) {
      const std::string name = reverse ? "lstm reverse" : "lstm";
      suite.input(name, [&](Tape& t, Var v) { return probe(t, lstm.forward(t, v, 4, reverse), 13); }, x,
                  &store);
      suite.params(name, store,
                   [&](Tape& t) { return probe(t, lstm.forward(t, t.constant(x), 4, reverse), 13); });
    }
  }

  {
    ParameterStore store;
    const Dense f = Dense::create(store, "F", 4, 4, Activation::Relu, rng);
    const Dense g = Dense::create(store, "G", 4, 4, Activation::Relu, rng);
    const Tensor p = random_input({4, 4}, rng), h = random_input({3, 4}, rng);
    const std::vector<double> pmask = {1, 1, 1, 0}, hmask = {1, 1, 1};
    auto inter = [&](Tape& t, Var pv, Var hv) {
      InterAlignment a = inter_align(t, {pv, pmask, 3}, {hv, hmask, 3}, f);
      return t.add(probe(t, a.beta, 14), probe(t, a.alpha, 15));
    };
    suite.input("inter attention wrt premise",
                [&](Tape& t, Var v) { return inter(t, v, t.constant(h)); }, p, &store);
    suite.input("inter attention wrt hypothesis",
                [&](Tape& t, Var v) { return inter(t, t.constant(p), v); }, h, &store);
    suite.params("inter attention", store, [&](Tape& t) { return inter(t, t.constant(p), t.constant(h)); },
                 ids_with_prefix(store, "F/"));
    auto intra = [&](Tape& t, Var v) { return probe(t, intra_align(t, {v, pmask, 3}, g), 16); };
    suite.input("intra attention", intra, p, &store);
    suite.params("intra attention", store, [&](Tape& t) { return intra(t, t.constant(p)); },
                 ids_with_prefix(store, "G/"));
  }

  {
    const Tensor hidden = random_input({5, 3}, rng);
    const std::vector<double> mask = {1, 1, 1, 1, 0};
    for (Pooling kind : {Pooling::AvgMax, Pooling::Sum, Pooling::Avg, Pooling::Max})
      suite.input(std::string("pooling ") + to_string(kind),
                  [&](Tape& t, Var v) { return probe(t, pool(t, v, mask, kind), 17); }, hidden);
  }

  ModelConfig micro = preset_config("micro");
  micro.use_pos = true;
  micro.l2 = 0.01;
  MicroFixture fx = make_micro_fixture(seed, micro);
  Model& model = *fx.model;
  ParameterStore& store = model.params();
  const std::size_t d = micro.d_model;

  for (int family = 0; family < 2; ++family) {
    const AlignmentFactorizer& fz = family == 0 ? model.inter_factorizer() : model.intra_factorizer();
    const std::string prefix = family == 0 ? "inter/" : "intra/";
    const Tensor a = random_input({3, d}, rng), b = random_input({3, d}, rng);
    std::size_t column = 0;
    for (std::size_t op = 0; op < 3; ++op) {
      if (!fz.ops[op]) continue;
      const std::string name = "fm " + prefix + kCompareOpNames[op];
      auto f = [&, column](Tape& t, Var av, Var bv) {
        return probe(t, t.slice(fz.factorize(t, av, bv), 1, column, 1), 18 + column);
      };
      suite.input(name, [&](Tape& t, Var v) { return f(t, v, t.constant(b)); }, a, &store);
      suite.params(name, store, [&](Tape& t) { return f(t, t.constant(a), t.constant(b)); },
                   ids_with_prefix(store, prefix + kCompareOpNames[op] + "/"));
      ++column;
    }
  }

  {
    const std::size_t k = model.pooled_width();
    const Tensor xp = random_input({1, k}, rng), xh = random_input({1, k}, rng);
    auto head = [&](Tape& t, Var p, Var h) {
      DropoutContext off = DropoutContext::eval();
      return probe(t, model.head().logits(t, p, h, off), 21);
    };
    suite.input("prediction head", [&](Tape& t, Var v) { return head(t, v, t.constant(xh)); }, xp, &store);
    suite.params("prediction head", store, [&](Tape& t) { return head(t, t.constant(xp), t.constant(xh)); },
                 ids_with_prefix(store, "head/"));
  }

  auto end_to_end = [&](const std::string& name, MicroFixture& f) {
    const Model& m = *f.model;
    suite.params(name, f.model->params(), [&](Tape& t) {
      DropoutContext off = DropoutContext::eval();
      PairGraph g = m.forward_example(t, f.batch.premises[0], f.batch.hypotheses[0], off);
      return total_loss(t, g.logits, f.batch.labels, m.params(), m.config().l2);
    });
  };
  end_to_end("end-to-end micro model", fx);

  ModelConfig variant = micro;
  variant.bidirectional = true;
  variant.pooling = Pooling::Max;
  variant.head = HeadKind::Dense;
  variant.comparison = Comparison::FcRelu2;
  variant.share_intra_projection = false;
  MicroFixture fv = make_micro_fixture(seed + 1, variant);
  end_to_end("end-to-end micro variant", fv);

  return suite.entries;
}

double fm_max_deviation(std::size_t trials, std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_string("fmcheck")));
  std::uniform_int_distribution<std::size_t> n_dist(1, 64), f_dist(1, 16);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = n_dist(rng), f = f_dist(rng);
    std::vector<double> x(n), w(n), v(n * f), sums(f);
    for (auto& e : x) e = u(rng);
    for (auto& e : w) e = u(rng);
    for (auto& e : v) e = u(rng);
    const double w0 = u(rng);
    double fast = 0.0;
    kernels::serial::fm_forward({1, n, f, x.data(), w0, w.data(), v.data(), &fast, sums.data()});
    worst = std::max(worst, std::abs(fast - kernels::fm_bruteforce(x, w0, w, v, f)));
  }
  return worst;
}

}  // namespace cafe
