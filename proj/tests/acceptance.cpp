// Acceptance run: one PASS / FAIL / SKIP line per criterion, exit status 1 on
// any FAIL. Tolerances and budgets are fixed here.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "cafe/checkpoint.hpp"
#include "cafe/diagnostics.hpp"
#include "cafe/train.hpp"
#include "param_formula.hpp"
#include "synth_fixture.hpp"
#include "test_util.hpp"

using namespace cafe;

namespace {

constexpr double kFmTolerance = 1e-10;
constexpr double kFmBudgetSeconds = 10.0;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kMaskTolerance = 1e-6;
constexpr std::size_t kMaxPadding = 8;
constexpr std::size_t kOverfitPairs = 64;
constexpr std::size_t kOverfitEpochs = 300;
constexpr double kOverfitBudgetSeconds = 300.0;
constexpr std::size_t kAblationTrain = 2000;
constexpr std::size_t kAblationDev = 500;
constexpr std::size_t kAblationEpochs = 15;
constexpr std::size_t kDeterminismEpochs = 10;
constexpr double kSnliDevTarget = 0.55;
constexpr double kSnliBudgetSeconds = 3600.0;

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

Outcome pass_if(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

Outcome fm_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const double dev = fm_max_deviation(1000, 42);
  const double secs = seconds_since(t0);
  return pass_if(dev < kFmTolerance && secs < kFmBudgetSeconds,
                 fmt("max |linear - pairwise| %.3e over 1000 draws (tol %.0e), %.2f s", dev, kFmTolerance, secs));
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t entries = 0;
  for (const auto& e : run_gradient_suite(42)) {
    ++entries;
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  const double secs = seconds_since(t0);
  return pass_if(worst < kGradTolerance && secs < kGradBudgetSeconds,
                 fmt("%zu checks, worst %.3e (%s), tol %.0e, %.1f s", entries, worst, worst_name.c_str(),
                     kGradTolerance, secs));
}

ModelConfig micro_double() {
  ModelConfig c = preset_config("micro");
  c.float32_params = false;
  return c;
}

Model random_model(const ModelConfig& c, const VocabSizes& sizes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor words = testutil::random_tensor({sizes.words, c.word_dim}, rng, -0.5, 0.5);
  for (std::size_t i = 0; i < c.word_dim; ++i) words.at(0, i) = 0.0;
  return Model(c, sizes, std::move(words));
}

Outcome channel_contract() {
  const VocabSizes sizes{12, 10, 6};
  ModelConfig c = micro_double();
  c.include_intra_vector = false;
  const std::size_t full = random_model(c, sizes, 1).augmented_width();
  c.use_inter_attention = false;
  const std::size_t no_inter = random_model(c, sizes, 1).augmented_width();
  c.use_inter_attention = true;

  Model m = random_model(c, sizes, 1);
  std::mt19937_64 rng(9);
  const auto p = testutil::random_ids(rng, 4, 4, sizes.words, sizes.chars, sizes.pos, 5);
  const auto h = testutil::random_ids(rng, 3, 3, sizes.words, sizes.chars, sizes.pos, 5);
  auto capture = [&] {
    Tape tape(&m.params());
    auto drop = DropoutContext::eval();
    auto g = m.forward_example(tape, p, h, drop);
    return m.capture_features(tape, g);
  };
  const PairFeatures base = capture();
  std::size_t isolated = 0;
  const std::array<const AlignmentFactorizer*, 2> families = {&m.inter_factorizer(), &m.intra_factorizer()};
  for (std::size_t fam = 0; fam < 2; ++fam)
    for (std::size_t op = 0; op < 3; ++op) {
      const std::size_t channel = fam * 3 + op;
      Tensor& bias = m.params()[families[fam]->ops[op]->fm->bias].value;
      const double saved = bias[0];
      bias[0] += 0.25;
      const PairFeatures moved = capture();
      bias[0] = saved;
      bool ok = true;
      for (auto side : {&PairFeatures::premise, &PairFeatures::hypothesis}) {
        const Tensor& a = (base.*side).values;
        const Tensor& b = (moved.*side).values;
        for (std::size_t t = 0; t < a.rows(); ++t)
          for (std::size_t ch = 0; ch < 6; ++ch) {
            const double delta = b.at(t, ch) - a.at(t, ch);
            ok = ok && (ch == channel ? std::abs(delta - 0.25) < 1e-12 : delta == 0.0);
          }
      }
      isolated += ok;
    }
  const bool widths = full == c.d_model + 6 && no_inter + 3 == full;
  return pass_if(widths && isolated == 6,
                 fmt("dim(u) = %zu (d_model + 6 = %zu), without inter %zu; %zu/6 FM instances isolated", full,
                     c.d_model + 6, no_inter, isolated));
}

Outcome masking() {
  const VocabSizes sizes{12, 10, 6};
  std::mt19937_64 rng(11);
  double worst = 0.0;
  std::size_t cases = 0;
  for (bool bidirectional : {false, true})
    for (auto pooling : {Pooling::AvgMax, Pooling::Sum, Pooling::Avg, Pooling::Max}) {
      ModelConfig c = micro_double();
      c.bidirectional = bidirectional;
      c.pooling = pooling;
      Model m = random_model(c, sizes, 3);
      auto logits = [&](const TokenIds& p, const TokenIds& h) {
        Tape tape(&m.params());
        auto drop = DropoutContext::eval();
        return Tensor(tape.value(m.forward_example(tape, p, h, drop).logits));
      };
      for (int trial = 0; trial < 5; ++trial) {
        const std::size_t lp = testutil::uniform_int(rng, 1, 6), lh = testutil::uniform_int(rng, 1, 6);
        const auto pt = testutil::random_ids(rng, lp, lp, sizes.words, sizes.chars, sizes.pos, 5);
        const auto ht = testutil::random_ids(rng, lh, lh, sizes.words, sizes.chars, sizes.pos, 5);
        const Tensor base = logits(pt, ht);
        for (std::size_t extra = 1; extra <= kMaxPadding; ++extra) {
          for (const Tensor& t : {logits(testutil::pad_more(pt, extra), ht), logits(pt, testutil::pad_more(ht, extra)),
                                  logits(testutil::pad_more(pt, extra), testutil::pad_more(ht, extra))}) {
            worst = std::max(worst, max_abs_diff(base, t));
            ++cases;
          }
        }
      }
    }
  return pass_if(worst < kMaskTolerance,
                 fmt("max logit change %.3e over %zu padded variants (tol %.0e)", worst, cases, kMaskTolerance));
}

Outcome overfit() {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto t0 = std::chrono::steady_clock::now();
  auto s = testutil::synth_setup(preset_config("micro"), kOverfitPairs, 42);
  Model m = s.model();
  TrainOptions opt;
  opt.max_epochs = kOverfitEpochs;
  opt.stop_at_perfect_train = true;
  const TrainResult r = train(m, s.data, {}, opt);
  const double secs = seconds_since(t0);
  omp_set_num_threads(saved);
  const double acc = r.log.empty() ? 0.0 : r.log.back().train_acc;
  return pass_if(acc == 1.0 && secs < kOverfitBudgetSeconds,
                 fmt("train accuracy %.4f after %zu epochs (budget %zu), 1 thread, %.1f s (budget %.0f s)", acc,
                     r.log.size(), kOverfitEpochs, secs, kOverfitBudgetSeconds));
}

ModelConfig ablation_config(std::uint64_t seed, bool inter) {
  ModelConfig c = preset_config("micro");
  c.word_dim = 32;
  c.d_model = 16;
  c.lstm_hidden = 16;
  c.fm_factors = 4;
  c.head_width = 16;
  c.char_dim = 4;
  c.char_window = 2;
  c.char_filters = 8;
  c.learning_rate = 3e-3;
  c.batch_size = 32;
  c.epochs = kAblationEpochs;
  c.seed = seed;
  c.use_inter_attention = inter;
  return c;
}

Outcome ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    double acc[2];
    for (bool inter : {true, false}) {
      auto s = testutil::synth_setup(ablation_config(seed, inter), kAblationTrain + kAblationDev, 100 + seed);
      Model m = s.model();
      const auto tr = s.slice(0, kAblationTrain), dev = s.slice(kAblationTrain, kAblationTrain + kAblationDev);
      TrainOptions opt;
      opt.restore_best = false;
      train(m, tr, dev, opt);
      acc[inter ? 0 : 1] = evaluate(m, dev).metrics.accuracy;
    }
    wins += acc[0] > acc[1];
    detail += fmt("%sseed %d: full %.3f vs no-inter %.3f", detail.empty() ? "" : "; ", static_cast<int>(seed),
                  acc[0], acc[1]);
  }
  return pass_if(wins >= 2, detail + fmt(" (%zu/3 seeds degrade, %.0f s)", wins, seconds_since(t0)));
}

std::string strip_seconds(const std::string& log) {
  std::string out;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line);) {
    const auto at = line.find(",\"seconds\":");
    const auto end = line.find(',', at + 1);
    out += (at == std::string::npos ? line : line.substr(0, at) + line.substr(end)) + "\n";
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  testutil::TempDir dir("accept");
  auto s = testutil::synth_setup(preset_config("micro"), 90, 7);
  const auto tr = s.slice(0, 72), dev = s.slice(72, 90);
  std::vector<TrainResult> runs;
  for (const char* name : {"a", "b"}) {
    Model m = s.model();
    TrainOptions opt;
    opt.max_epochs = kDeterminismEpochs;
    opt.log_path = dir.file(std::string(name) + ".jsonl");
    opt.checkpoint_path = dir.file(std::string(name) + ".cafe");
    runs.push_back(train(m, tr, dev, opt));
  }
  bool same_log = runs[0].log.size() == kDeterminismEpochs && runs[1].log.size() == kDeterminismEpochs;
  for (std::size_t e = 0; same_log && e < kDeterminismEpochs; ++e) {
    const auto &x = runs[0].log[e], &y = runs[1].log[e];
    same_log = x.train_loss == y.train_loss && x.train_acc == y.train_acc && x.dev_acc == y.dev_acc;
  }
  same_log = same_log && strip_seconds(slurp(dir.file("a.jsonl"))) == strip_seconds(slurp(dir.file("b.jsonl")));
  const bool same_ckpt = slurp(dir.file("a.cafe")) == slurp(dir.file("b.cafe"));

  Model restored = load_checkpoint(dir.file("a.cafe"));
  const double acc = evaluate(restored, dev).metrics.accuracy;
  const bool persisted = acc == runs[0].best_dev_acc;
  return pass_if(same_log && same_ckpt && persisted,
                 fmt("%zu-epoch logs %s (wall-clock field excluded), checkpoints %s; reloaded dev accuracy %.6f vs "
                     "%.6f",
                     kDeterminismEpochs, same_log ? "identical" : "differ", same_ckpt ? "identical" : "differ", acc,
                     runs[0].best_dev_acc));
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

Outcome majority_and_snli() {
  const LabelMap nli({"entailment", "neutral", "contradiction"});
  const LabelMap scitail({"entails", "neutral"});
  std::vector<std::string> parts;
  bool ran = false, ok = true;

  auto majority = [&](const char* eval_var, const char* train_var, const LabelMap& labels, double target,
                      const char* name) {
    const char* eval_path = env(eval_var);
    if (!eval_path) return;
    ran = true;
    auto ids = [&](const char* path) {
      std::vector<IndexedExample> v;
      for (const auto& e : parse_nli_jsonl(std::string(path), labels).examples) v.push_back({e.pair_id, {}, {}, e.label});
      return v;
    };
    const auto eval_set = ids(eval_path);
    const char* train_path = env(train_var);
    const std::size_t label = majority_label(train_path ? ids(train_path) : eval_set, labels.size());
    const double acc = 100.0 * evaluate_constant(eval_set, label, labels.size()).metrics.accuracy;
    const bool hit = std::abs(std::round(acc * 10.0) / 10.0 - target) < 1e-9;
    ok = ok && hit;
    parts.push_back(fmt("%s majority (%s) %.2f%% vs %.1f%%", name, labels.name(label).c_str(), acc, target));
  };
  majority("CAFE_SCITAIL_TEST", "CAFE_SCITAIL_TRAIN", scitail, 60.3, "SciTail test");
  majority("CAFE_MNLI_DEV_MATCHED", "CAFE_MNLI_TRAIN", nli, 36.5, "MultiNLI matched");

  const char* snli_train = env("CAFE_SNLI_TRAIN");
  const char* snli_dev = env("CAFE_SNLI_DEV");
  if (snli_train && snli_dev) {
    ran = true;
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig c = preset_config("small");
    c.epochs = 10;
    auto train_ex = parse_nli_jsonl(std::string(snli_train), nli).examples;
    std::mt19937_64 rng(c.seed);
    std::shuffle(train_ex.begin(), train_ex.end(), rng);
    train_ex.resize(std::min<std::size_t>(train_ex.size(), 10000));
    const auto dev_ex = parse_nli_jsonl(std::string(snli_dev), nli).examples;
    c.use_pos = std::all_of(train_ex.begin(), train_ex.end(), [](const Example& e) { return !e.premise_pos.empty(); });
    Vocabularies vocab;
    vocab.add_corpus(train_ex);
    vocab.add_corpus(dev_ex);
    const char* vectors = env("CAFE_EMBEDDINGS");
    EmbeddingTable table = vectors ? load_pretrained_embeddings(vectors, vocab.words, c.seed, c.oov_range)
                                   : random_embeddings(vocab.words, c.word_dim, c.seed, c.oov_range);
    c.word_dim = table.matrix.dim(1);
    Model m(c, {vocab.words.size(), vocab.chars.size(), vocab.pos.size()}, std::move(table.matrix));
    const auto tr = index_examples(train_ex, vocab, c.max_word_chars, c.use_pos);
    const auto dev = index_examples(dev_ex, vocab, c.max_word_chars, c.use_pos);
    const TrainResult r = train(m, tr, dev, TrainOptions{});
    const double secs = seconds_since(t0);
    const bool hit = r.best_dev_acc > kSnliDevTarget && secs < kSnliBudgetSeconds;
    ok = ok && hit;
    parts.push_back(fmt("SNLI 10k subsample dev %.4f (> %.2f), %.0f s", r.best_dev_acc, kSnliDevTarget, secs));
  }
  if (!ran)
    return {Status::Skip,
            "no dataset paths set (CAFE_SCITAIL_TEST, CAFE_MNLI_DEV_MATCHED, CAFE_SNLI_TRAIN + CAFE_SNLI_DEV)"};
  std::string detail;
  for (const auto& p : parts) detail += (detail.empty() ? "" : "; ") + p;
  return pass_if(ok, detail);
}

Outcome param_accounting() {
  std::string detail;
  bool ok = true;
  const std::vector<std::pair<std::string, VocabSizes>> cases = {
      {"micro", {40, 30, 12}}, {"small", {5000, 90, 48}}, {"300d", {20000, 120, 48}}};
  for (const auto& [preset, sizes] : cases) {
    const ModelConfig c = preset_config(preset);
    const Model m(c, sizes, Tensor(Shape{sizes.words, c.word_dim}, 0.0));
    const std::size_t got = count_params(m).total, expect = testutil::analytic_param_count(c, sizes);
    ok = ok && got == expect;
    detail += fmt("%s%s %zu vs %zu", detail.empty() ? "" : "; ", preset.c_str(), got, expect);
  }
  return pass_if(ok, detail);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"FM oracle equivalence", fm_oracle},
      {"gradient suite", gradient_suite},
      {"shape and channel contract", channel_contract},
      {"masking invariance", masking},
      {"overfit capacity", overfit},
      {"ablation direction", ablation},
      {"determinism and persistence", determinism},
      {"majority baseline / SNLI sanity", majority_and_snli},
      {"parameter accounting", param_accounting},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    std::printf("%s %zu %s: %s\n", tag, i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failures += o.status == Status::Fail;
  }
  return failures ? 1 : 0;
}
