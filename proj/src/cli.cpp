#include "cafe/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "cafe/checkpoint.hpp"
#include "cafe/diagnostics.hpp"
#include "cafe/features.hpp"
#include "cafe/train.hpp"

namespace cafe {

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::string data;
  std::string dev;
  std::string checkpoint;
  std::string out;
  std::string embeddings;
  std::string annotations;
  std::string majority_from;
  std::uint64_t seed = 42;
  std::size_t trials = 1000;
  std::size_t count = 64;
  std::size_t epochs = 0;
  std::vector<std::string> sets;
  bool resume = false;
  bool majority = false;
};

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string vocab_path(const std::string& checkpoint) { return checkpoint + ".vocab.json"; }

ModelConfig resolve_config(const Options& o, bool seed_given) {
  ModelConfig cfg = o.config.empty() ? (o.preset.empty() ? ModelConfig{} : preset_config(o.preset))
                                     : ModelConfig::from_file(o.config);
  cfg.apply_overrides(o.sets);
  if (seed_given) cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw CliError(std::string(command) + " needs " + flag);
}

std::vector<Example> ingest(const std::string& path, const LabelMap& labels, const char* what,
                            std::ostream& out, std::ostream& err, bool require_label = true) {
  IngestResult r = parse_nli_jsonl(path, labels, require_label);
  out << what << ": " << r.examples.size() << " pairs from " << path << " (" << r.skipped
      << " without gold label, " << r.errors.size() << " malformed)\n";
  for (std::size_t i = 0; i < r.errors.size() && i < 5; ++i)
    err << "  line " << r.errors[i].line << ": " << r.errors[i].message << '\n';
  if (r.examples.empty()) throw CliError(std::string(what) + " set " + path + " has no usable pairs");
  return std::move(r.examples);
}

std::unique_ptr<std::ostream> open_output(const std::string& path) {
  auto f = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*f) throw CliError("cannot write " + path);
  return f;
}

void print_params(std::ostream& out, const Model& model) {
  const ParamCount pc = count_params(model);
  out << "trainable parameters: " << pc.total << " (";
  for (std::size_t i = 0; i < pc.components.size(); ++i)
    out << (i ? ", " : "") << pc.components[i].first << ' ' << pc.components[i].second;
  out << ")\n";
}

int cmd_train(const Options& o, bool seed_given, std::ostream& out, std::ostream& err) {
  require(o.data, "--data", "train");
  require(o.checkpoint, "--checkpoint", "train");
  ModelConfig cfg = resolve_config(o, seed_given);

  Vocabularies vocab;
  std::unique_ptr<Model> model;
  TrainState state;
  if (o.resume) {
    const std::string last = o.checkpoint + ".last";
    Checkpoint ckpt = read_checkpoint(last);
    model = std::make_unique<Model>(load_checkpoint(last));
    state = load_train_state(*model, ckpt);
    vocab = Vocabularies::load(vocab_path(o.checkpoint));
    cfg = model->config();
    out << "resuming after epoch " << state.epoch << " from " << last << '\n';
  }
  const LabelMap labels(cfg.label_names());
  const auto train_examples = ingest(o.data, labels, "train", out, err);
  std::vector<Example> dev_examples;
  if (!o.dev.empty()) dev_examples = ingest(o.dev, labels, "dev", out, err);

  if (!o.resume) {
    vocab.add_corpus(train_examples);
    vocab.add_corpus(dev_examples);
    EmbeddingTable table;
    if (!o.embeddings.empty()) {
      table = load_pretrained_embeddings(o.embeddings, vocab.words, cfg.seed, cfg.oov_range);
      if (table.matrix.dim(1) != cfg.word_dim)
        throw CliError("embeddings in " + o.embeddings + " have dimension " + std::to_string(table.matrix.dim(1)) +
                       " but word_dim = " + std::to_string(cfg.word_dim));
      char buf[96];
      std::snprintf(buf, sizeof buf, "embeddings: %zu of %zu tokens found (coverage %.4f)\n", table.found,
                    vocab.words.size(), table.coverage);
      out << buf;
    } else {
      table = random_embeddings(vocab.words, cfg.word_dim, cfg.seed, cfg.oov_range);
    }
    model = std::make_unique<Model>(cfg, VocabSizes{vocab.words.size(), vocab.chars.size(), vocab.pos.size()},
                                    std::move(table.matrix));
    vocab.save(vocab_path(o.checkpoint));
  }
  print_params(out, *model);

  const auto train_set = index_examples(train_examples, vocab, cfg.max_word_chars, cfg.use_pos);
  const auto dev_set = index_examples(dev_examples, vocab, cfg.max_word_chars, cfg.use_pos);

  TrainOptions opts;
  opts.max_epochs = o.epochs;
  opts.checkpoint_path = o.checkpoint;
  opts.log_path = o.out.empty() ? o.checkpoint + ".log.jsonl" : o.out;
  opts.on_epoch = [&](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.4f  train %.4f  dev %.4f  %.1fs%s\n", r.epoch,
                  r.train_loss, r.train_acc, r.dev_acc, r.seconds, r.clipped_steps ? "  (clipped)" : "");
    out << buf << std::flush;
  };
  const TrainResult result = train(*model, train_set, dev_set, opts, &state);
  for (const auto& incident : result.incidents) err << "incident: " << incident << '\n';
  char buf[128];
  std::snprintf(buf, sizeof buf, "best %s accuracy %.4f at epoch %zu; checkpoint %s\n",
                dev_set.empty() ? "train" : "dev", result.best_dev_acc, result.best_epoch, o.checkpoint.c_str());
  out << buf;
  return result.aborted ? 1 : 0;
}

struct Loaded {
  std::unique_ptr<Model> model;
  Vocabularies vocab;
};

Loaded load_model(const std::string& checkpoint) {
  Loaded l;
  l.model = std::make_unique<Model>(load_checkpoint(checkpoint));
  l.vocab = Vocabularies::load(vocab_path(checkpoint));
  return l;
}

int cmd_eval(const Options& o, bool seed_given, std::ostream& out, std::ostream& err) {
  require(o.data, "--data", "eval");
  Evaluation ev;
  std::unique_ptr<LabelMap> labels;
  if (o.majority) {
    const ModelConfig cfg = resolve_config(o, seed_given);
    labels = std::make_unique<LabelMap>(cfg.label_names());
    const auto data = ingest(o.data, *labels, "eval", out, err);
    auto ids = [](const std::vector<Example>& exs) {
      std::vector<IndexedExample> v;
      for (const auto& e : exs) v.push_back({e.pair_id, {}, {}, e.label});
      return v;
    };
    const auto eval_set = ids(data);
    const auto source = o.majority_from.empty() ? eval_set : ids(ingest(o.majority_from, *labels, "majority source", out, err));
    const std::size_t label = majority_label(source, labels->size());
    out << "majority class: " << labels->name(label) << '\n';
    ev = evaluate_constant(eval_set, label, labels->size());
  } else {
    require(o.checkpoint, "--checkpoint", "eval");
    Loaded l = load_model(o.checkpoint);
    const ModelConfig& cfg = l.model->config();
    labels = std::make_unique<LabelMap>(cfg.label_names());
    const auto data = ingest(o.data, *labels, "eval", out, err);
    ev = evaluate(*l.model, index_examples(data, l.vocab, cfg.max_word_chars, cfg.use_pos), cfg.batch_size);
  }
  write_metrics(out, ev.metrics, *labels);
  if (!o.out.empty()) {
    auto f = open_output(o.out);
    write_predictions(*f, ev.predictions, *labels);
  }
  if (!o.annotations.empty()) {
    std::ifstream ann(o.annotations);
    if (!ann) throw CliError("cannot open annotations " + o.annotations);
    write_category_report(out, category_breakdown(ev.predictions, ann));
  }
  return 0;
}

int cmd_predict(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.data, "--data", "predict");
  require(o.checkpoint, "--checkpoint", "predict");
  Loaded l = load_model(o.checkpoint);
  const ModelConfig& cfg = l.model->config();
  const LabelMap labels(cfg.label_names());
  std::ostream& log = o.out.empty() ? err : out;
  const auto data = ingest(o.data, labels, "predict", log, err, false);
  const Evaluation ev =
      evaluate(*l.model, index_examples(data, l.vocab, cfg.max_word_chars, cfg.use_pos), cfg.batch_size);
  std::unique_ptr<std::ostream> file;
  if (!o.out.empty()) file = open_output(o.out);
  std::ostream& dst = file ? *file : out;
  dst << "pair_id\tpredicted";
  for (const auto& name : labels.names()) dst << "\tp_" << name;
  dst << '\n';
  char buf[32];
  for (const auto& p : ev.predictions) {
    dst << p.pair_id << '\t' << labels.name(p.predicted);
    for (double v : p.probs) {
      std::snprintf(buf, sizeof buf, "%.6g", v);
      dst << '\t' << buf;
    }
    dst << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  constexpr double kTolerance = 1e-4;
  double worst = 0.0;
  char buf[160];
  for (const auto& e : run_gradient_suite(o.seed)) {
    std::snprintf(buf, sizeof buf, "%-44s %10.3e  (%zu coords)\n", e.name.c_str(), e.max_rel_error, e.coordinates);
    out << buf;
    worst = std::max(worst, e.max_rel_error);
  }
  std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.0e)\n", worst, kTolerance);
  out << buf;
  return worst < kTolerance ? 0 : 1;
}

int cmd_fmcheck(const Options& o, std::ostream& out) {
  constexpr double kTolerance = 1e-10;
  const double dev = fm_max_deviation(o.trials, o.seed);
  char buf[128];
  std::snprintf(buf, sizeof buf, "max deviation %.3e over %zu trials (tolerance %.0e)\n", dev, o.trials, kTolerance);
  out << buf;
  return dev < kTolerance ? 0 : 1;
}

int cmd_export(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.data, "--data", "export-features");
  require(o.checkpoint, "--checkpoint", "export-features");
  require(o.out, "--out", "export-features");
  Loaded l = load_model(o.checkpoint);
  const LabelMap labels(l.model->config().label_names());
  const auto pairs = ingest(o.data, labels, "export", out, err, false);
  export_features(*l.model, pairs, l.vocab, o.out);
  out << "wrote " << o.out << '\n';
  return 0;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const auto examples = generate_synthetic(o.count, o.seed);
  if (o.out.empty()) {
    write_nli_jsonl(out, examples);
  } else {
    auto f = open_output(o.out);
    write_nli_jsonl(*f, examples);
  }
  return 0;
}

int cmd_heatmap(const Options& o, std::ostream& out) {
  require(o.data, "--data", "render-heatmap");
  require(o.out, "--out", "render-heatmap");
  render_heatmap(o.data, o.out);
  out << "wrote " << o.out << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CAFE natural language inference: training, evaluation and feature export", "cafe"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "config file of key = value lines");
    c->add_option("--preset", o.preset, "micro, small or 300d (ignored with --config)");
    c->add_option("--set", o.sets, "override one config field, key=value")->allow_extra_args(false);
  };
  std::vector<CLI::Option*> seed_flags;
  auto add_seed = [&](CLI::App* c) { seed_flags.push_back(c->add_option("--seed", o.seed, "random seed")); };

  auto* train = app.add_subcommand("train", "train a model and keep the best-dev checkpoint");
  add_config(train);
  add_seed(train);
  train->add_option("--data", o.data, "training JSONL");
  train->add_option("--dev", o.dev, "development JSONL");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint path to write");
  train->add_option("--out", o.out, "training log (JSONL); default <checkpoint>.log.jsonl");
  train->add_option("--embeddings", o.embeddings, "text word vectors");
  train->add_option("--epochs", o.epochs, "epoch budget, overrides the config");
  train->add_flag("--resume", o.resume, "continue from <checkpoint>.last");

  auto* eval = app.add_subcommand("eval", "metrics on a labelled set");
  add_config(eval);
  add_seed(eval);
  eval->add_option("--data", o.data, "labelled JSONL");
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  eval->add_option("--out", o.out, "per-example predictions (TSV)");
  eval->add_option("--annotations", o.annotations, "JSONL of {pair_id, categories}");
  eval->add_flag("--majority", o.majority, "predict the majority class instead of running a model");
  eval->add_option("--majority-from", o.majority_from, "labelled JSONL that defines the majority class");

  auto* predict = app.add_subcommand("predict", "label pairs with a trained model");
  add_seed(predict);
  predict->add_option("--data", o.data, "JSONL pairs");
  predict->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  predict->add_option("--out", o.out, "output TSV; default stdout");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_seed(gradcheck);
  auto* fmcheck = app.add_subcommand("fmcheck", "linear-time FM against the pairwise sum");
  add_seed(fmcheck);
  fmcheck->add_option("--trials", o.trials, "random draws")->check(CLI::PositiveNumber);

  auto* exportf = app.add_subcommand("export-features", "propagated features per token as CSV");
  add_seed(exportf);
  exportf->add_option("--data", o.data, "JSONL pairs");
  exportf->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  exportf->add_option("--out", o.out, "CSV path");

  auto* heatmap = app.add_subcommand("render-heatmap", "SVG heatmap from an exported CSV");
  heatmap->add_option("--data", o.data, "exported CSV");
  heatmap->add_option("--out", o.out, "SVG path");

  auto* synth = app.add_subcommand("synth-data", "write the templated synthetic corpus");
  add_seed(synth);
  synth->add_option("--n", o.count, "number of pairs")->check(CLI::PositiveNumber);
  synth->add_option("--out", o.out, "JSONL path; default stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  bool seed_given = false;
  for (auto* f : seed_flags) seed_given = seed_given || f->count() > 0;
  try {
    if (*train) return cmd_train(o, seed_given, out, err);
    if (*eval) return cmd_eval(o, seed_given, out, err);
    if (*predict) return cmd_predict(o, out, err);
    if (*gradcheck) return cmd_gradcheck(o, out);
    if (*fmcheck) return cmd_fmcheck(o, out);
    if (*exportf) return cmd_export(o, out, err);
    if (*heatmap) return cmd_heatmap(o, out);
    if (*synth) return cmd_synth(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace cafe
