#include "cafe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "cafe/checkpoint.hpp"
#include "cafe/rng.hpp"
#include "json.hpp"

namespace cafe {

namespace {

constexpr std::size_t kShards = 8;

float to_float(double v) { return static_cast<float>(v); }

std::size_t argmax(const double* p, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

std::vector<Tensor> snapshot(const ParameterStore& store) {
  std::vector<Tensor> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back(p.trainable ? p.value : Tensor());
  return out;
}

void restore(ParameterStore& store, const std::vector<Tensor>& values) {
  for (ParamId id = 0; id < store.size(); ++id)
    if (store[id].trainable) store[id].value = values.at(id);
}

}  // namespace

AdamState AdamState::create(const ParameterStore& store, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& p : store) {
    s.m.push_back(p.trainable ? Tensor(p.value.shape(), 0.0) : Tensor());
    s.v.push_back(p.trainable ? Tensor(p.value.shape(), 0.0) : Tensor());
  }
  return s;
}

StepOutcome adam_step(ParameterStore& store, AdamState& state, const GradientMap& grads,
                      double clip_norm, bool round_to_float) {
  if (state.m.size() != store.size() || state.v.size() != store.size() || grads.size() != store.size())
    throw std::invalid_argument("adam_step: optimizer state, gradients and parameters differ in count");
  StepOutcome out;
  if (!grads.all_finite()) {
    out.incident = "non-finite gradient, step " + std::to_string(state.step + 1) + " rejected";
    return out;
  }
  out.grad_norm = grads.global_norm();
  double scale = 1.0;
  if (clip_norm > 0.0 && out.grad_norm > clip_norm) {
    scale = clip_norm / out.grad_norm;
    out.clipped = true;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (ParamId id = 0; id < store.size(); ++id) {
    Parameter& p = store[id];
    if (!p.trainable) continue;
    auto w = p.value.values();
    auto g = grads[id].values();
    auto m = state.m[id].values();
    auto v = state.v[id].values();
    if (g.size() != w.size() || m.size() != w.size())
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * scale;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      if (round_to_float) {
        m[j] = to_float(m[j]);
        v[j] = to_float(v[j]);
      }
      w[j] -= state.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.epsilon);
      if (round_to_float) w[j] = to_float(w[j]);
    }
  }
  out.applied = true;
  return out;
}

BatchGradient batch_gradient(const Model& model, const Batch& batch, std::uint64_t dropout_seed) {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("batch_gradient: empty batch");
  const ModelConfig& cfg = model.config();
  const ParameterStore& store = model.params();
  const std::size_t shards = std::min(kShards, n);
  std::vector<GradientMap> grads;
  grads.reserve(shards);
  for (std::size_t s = 0; s < shards; ++s) grads.emplace_back(store);
  std::vector<double> loss(shards, 0.0);
  std::vector<std::size_t> correct(shards, 0);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(shards);
#pragma omp parallel for schedule(static, 1)
  for (std::ptrdiff_t si = 0; si < count; ++si) {
    try {
      const auto s = static_cast<std::size_t>(si);
      const std::size_t begin = s * n / shards, end = (s + 1) * n / shards;
      for (std::size_t b = begin; b < end; ++b) {
        Tape tape(&store);
        DropoutContext dropout(true, cfg.keep_prob, derive_seed(dropout_seed, b));
        PairGraph g = model.forward_example(tape, batch.premises[b], batch.hypotheses[b], dropout);
        const Tensor& logits = tape.value(g.logits);
        if (argmax(logits.data(), logits.numel()) == batch.labels[b]) ++correct[s];
        Var ce = tape.affine(cross_entropy(tape, g.logits, {batch.labels[b]}), inv_n, 0.0);
        loss[s] += tape.value(ce).item();
        tape.backward(ce, grads[s]);
      }
      if (s == 0 && cfg.l2 > 0.0) {
        Tape tape(&store);
        Var l2 = l2_penalty(tape, store, cfg.l2);
        loss[s] += tape.value(l2).item();
        tape.backward(l2, grads[s]);
      }
    } catch (...) {
#pragma omp critical(cafe_gradient_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  BatchGradient out{std::move(grads[0]), loss[0], correct[0]};
  for (std::size_t s = 1; s < shards; ++s) {
    out.grads.add(grads[s]);
    out.loss += loss[s];
    out.correct += correct[s];
  }
  return out;
}

Metrics compute_metrics(const std::vector<Prediction>& predictions, std::size_t num_classes) {
  if (predictions.empty()) throw std::invalid_argument("metrics: empty dataset");
  Metrics m;
  m.total = predictions.size();
  m.support.assign(num_classes, 0);
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  double loss = 0.0;
  for (const auto& p : predictions) {
    if (p.gold >= num_classes || p.predicted >= num_classes)
      throw std::invalid_argument("metrics: label outside the class range for " + p.pair_id);
    ++m.confusion[p.gold][p.predicted];
    ++m.support[p.gold];
    const double prob = p.gold < p.probs.size() ? p.probs[p.gold] : 0.0;
    loss -= std::log(std::max(prob, std::numeric_limits<double>::min()));
  }
  std::size_t trace = 0;
  m.precision.assign(num_classes, 0.0);
  m.recall.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    trace += m.confusion[c][c];
    std::size_t predicted = 0;
    for (std::size_t g = 0; g < num_classes; ++g) predicted += m.confusion[g][c];
    if (predicted) m.precision[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(predicted);
    if (m.support[c]) m.recall[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(m.support[c]);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(m.total);
  m.loss = loss / static_cast<double>(m.total);
  return m;
}

Evaluation evaluate(const Model& model, const std::vector<IndexedExample>& data, std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t classes = model.config().num_classes;
  Evaluation ev;
  ev.predictions.reserve(data.size());
  std::size_t offset = 0;
  for (const Batch& batch : sequential_batches(data, batch_size, model.config().char_window)) {
    const Tensor probs = softmax_rows(forward_pair(model, batch, false).logits);
    for (std::size_t b = 0; b < batch.size(); ++b, ++offset) {
      Prediction p;
      p.pair_id = data[offset].pair_id;
      p.gold = data[offset].label;
      p.probs.assign(probs.data() + b * classes, probs.data() + (b + 1) * classes);
      p.predicted = argmax(p.probs.data(), classes);
      ev.predictions.push_back(std::move(p));
    }
  }
  ev.metrics = compute_metrics(ev.predictions, classes);
  return ev;
}

Evaluation evaluate_constant(const std::vector<IndexedExample>& data, std::size_t label,
                             std::size_t num_classes) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (label >= num_classes) throw std::invalid_argument("evaluate_constant: label outside class range");
  Evaluation ev;
  for (const auto& ex : data) {
    Prediction p{ex.pair_id, ex.label, label, std::vector<double>(num_classes, 0.0)};
    p.probs[label] = 1.0;
    ev.predictions.push_back(std::move(p));
  }
  ev.metrics = compute_metrics(ev.predictions, num_classes);
  return ev;
}

std::size_t majority_label(const std::vector<IndexedExample>& data, std::size_t num_classes) {
  if (data.empty()) throw std::invalid_argument("majority_label: empty dataset");
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& ex : data) ++counts.at(ex.label);
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions,
                       const LabelMap& labels) {
  out << "pair_id\tgold\tpredicted";
  for (const auto& name : labels.names()) out << "\tp_" << name;
  out << '\n';
  char buf[32];
  for (const auto& p : predictions) {
    out << p.pair_id << '\t' << labels.name(p.gold) << '\t' << labels.name(p.predicted);
    for (double v : p.probs) {
      std::snprintf(buf, sizeof buf, "%.6g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

std::vector<Prediction> read_predictions(std::istream& in, const LabelMap& labels) {
  std::vector<Prediction> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (row++ == 0) continue;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (cells.size() != 3 + labels.size())
      throw std::invalid_argument("predictions row " + std::to_string(row) + ": expected " +
                                  std::to_string(3 + labels.size()) + " columns");
    auto gold = labels.id(cells[1]);
    auto pred = labels.id(cells[2]);
    if (!gold || !pred) throw std::invalid_argument("predictions row " + std::to_string(row) + ": unknown label");
    Prediction p{cells[0], *gold, *pred, {}};
    for (std::size_t c = 0; c < labels.size(); ++c) p.probs.push_back(std::stod(cells[3 + c]));
    out.push_back(std::move(p));
  }
  return out;
}

void write_metrics(std::ostream& out, const Metrics& m, const LabelMap& labels) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "accuracy %.4f (%zu examples), loss %.4f\n", m.accuracy, m.total, m.loss);
  out << buf;
  for (std::size_t c = 0; c < m.support.size(); ++c) {
    std::snprintf(buf, sizeof buf, "  %-14s precision %.4f recall %.4f support %zu\n",
                  labels.name(c).c_str(), m.precision[c], m.recall[c], m.support[c]);
    out << buf;
  }
  out << "confusion (rows gold, columns predicted)\n";
  for (const auto& row : m.confusion) {
    out << ' ';
    for (auto v : row) out << ' ' << v;
    out << '\n';
  }
}

CategoryReport category_breakdown(const std::vector<Prediction>& predictions, std::istream& annotations) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) by_id.emplace(p.pair_id, &p);
  CategoryReport report;
  std::vector<std::string> order;
  std::unordered_map<std::string, CategoryRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(annotations, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
      if (!obj.at("pair_id").is_string() || !obj.at("categories").is_array())
        throw std::invalid_argument("wrong field types");
    } catch (const std::exception& e) {
      throw std::invalid_argument("annotation line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string id = obj["pair_id"].get<std::string>();
    auto it = by_id.find(id);
    for (const auto& c : obj["categories"]) {
      const std::string cat = c.get<std::string>();
      if (!rows.count(cat)) {
        order.push_back(cat);
        rows[cat].category = cat;
      }
      if (it == by_id.end()) continue;
      CategoryRow& row = rows[cat];
      ++row.count;
      if (it->second->predicted == it->second->gold) ++row.correct;
    }
    if (it == by_id.end())
      report.unmatched.push_back(id);
    else
      ++report.annotated;
  }
  for (const auto& cat : order) {
    CategoryRow row = rows[cat];
    if (row.count == 0) {
      report.omitted.push_back(cat);
      continue;
    }
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.count);
    report.rows.push_back(row);
  }
  return report;
}

void write_category_report(std::ostream& out, const CategoryReport& report) {
  char buf[160];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-32s %6zu %8.4f\n", row.category.c_str(), row.count, row.accuracy);
    out << buf;
  }
  for (const auto& cat : report.omitted) out << "note: category '" << cat << "' has no matched pairs\n";
  if (!report.unmatched.empty())
    out << "note: " << report.unmatched.size() << " annotated pair ids had no prediction and were excluded\n";
}

std::string to_json(const EpochRecord& r) {
  nlohmann::ordered_json obj;
  obj["epoch"] = r.epoch;
  obj["train_loss"] = r.train_loss;
  obj["train_acc"] = r.train_acc;
  obj["dev_acc"] = r.dev_acc;
  obj["seconds"] = r.seconds;
  obj["clipped_steps"] = r.clipped_steps;
  obj["rejected_steps"] = r.rejected_steps;
  return obj.dump();
}

TrainResult train(Model& model, const std::vector<IndexedExample>& train_set,
                  const std::vector<IndexedExample>& dev_set, const TrainOptions& options,
                  TrainState* state) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const ModelConfig& cfg = model.config();
  cfg.validate();
  ParameterStore& store = model.params();
  TrainState local;
  TrainState& st = state ? *state : local;
  if (st.adam.m.empty()) st.adam = AdamState::create(store, cfg.learning_rate);

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log " + options.log_path);
  }

  TrainResult result;
  const std::size_t epochs = options.max_epochs ? options.max_epochs : cfg.epochs;
  for (std::size_t epoch = st.epoch + 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = make_batches(train_set, cfg.batch_size, cfg.bucketing,
                                      derive_seed(cfg.seed, hash_string("epoch"), epoch), cfg.char_window);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      BatchGradient bg =
          batch_gradient(model, batches[bi], derive_seed(cfg.seed, hash_string("dropout"), epoch, bi));
      if (!std::isfinite(bg.loss)) {
        result.aborted = true;
        result.incidents.push_back("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(bi) + "; training aborted");
        break;
      }
      StepOutcome step = adam_step(store, st.adam, bg.grads, cfg.clip_norm, cfg.float32_params);
      if (!step.applied) {
        ++rec.rejected_steps;
        result.incidents.push_back("epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) + ": " +
                                   step.incident);
      }
      if (step.clipped) ++rec.clipped_steps;
      loss_sum += bg.loss * static_cast<double>(batches[bi].size());
    }
    if (result.aborted) break;

    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_acc = evaluate(model, train_set, cfg.batch_size).metrics.accuracy;
    rec.dev_acc = dev_set.empty() ? rec.train_acc : evaluate(model, dev_set, cfg.batch_size).metrics.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.epoch = epoch;
    st.log.push_back(rec);
    result.log.push_back(rec);
    if (log.is_open()) log << to_json(rec) << '\n' << std::flush;

    if (rec.dev_acc > st.best_dev_acc) {
      st.best_dev_acc = rec.dev_acc;
      st.best_epoch = epoch;
      st.bad_epochs = 0;
      st.best_params = snapshot(store);
      if (!options.checkpoint_path.empty()) save_checkpoint(model, options.checkpoint_path);
    } else {
      ++st.bad_epochs;
    }
    if (!options.checkpoint_path.empty()) save_checkpoint(model, options.checkpoint_path + ".last", &st);
    if (options.on_epoch) options.on_epoch(rec);

    if (options.stop_at_perfect_train && rec.train_acc == 1.0) break;
    if (cfg.patience > 0 && st.bad_epochs >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (options.restore_best && !st.best_params.empty()) restore(store, st.best_params);
  result.best_epoch = st.best_epoch;
  result.best_dev_acc = std::max(0.0, st.best_dev_acc);
  return result;
}

}  // namespace cafe
