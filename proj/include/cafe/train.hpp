#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cafe/data.hpp"
#include "cafe/model.hpp"
#include "cafe/parameter.hpp"

namespace cafe {

struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;  // indexed like the parameter store
  std::vector<Tensor> v;

  static AdamState create(const ParameterStore& store, double learning_rate);
};

struct StepOutcome {
  bool applied = false;
  bool clipped = false;
  double grad_norm = 0.0;
  std::string incident;  // set when the step was rejected
};

// Bias-corrected Adam over trainable parameters. Non-finite gradients leave
// parameters and moments untouched. With round_to_float, parameters and
// moments are rounded to float after the update.
StepOutcome adam_step(ParameterStore& store, AdamState& state, const GradientMap& grads,
                      double clip_norm = 0.0, bool round_to_float = false);

struct BatchGradient {
  GradientMap grads;
  double loss = 0.0;  // mean cross entropy plus the L2 term
  std::size_t correct = 0;
};

// Loss gradient of one minibatch. Examples are split into a fixed number of
// shards whose partial gradients are summed in shard order, so the result
// does not depend on the thread count.
BatchGradient batch_gradient(const Model& model, const Batch& batch, std::uint64_t dropout_seed);

struct Prediction {
  std::string pair_id;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::vector<double> probs;
};

struct Metrics {
  std::size_t total = 0;
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross entropy
  std::vector<std::size_t> support;
  std::vector<double> precision;  // 0 for a class never predicted
  std::vector<double> recall;     // 0 for a class with no support
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
};

Metrics compute_metrics(const std::vector<Prediction>& predictions, std::size_t num_classes);

struct Evaluation {
  Metrics metrics;
  std::vector<Prediction> predictions;
};

// Eval-mode forward over a labelled dataset, in input order.
Evaluation evaluate(const Model& model, const std::vector<IndexedExample>& data,
                    std::size_t batch_size = 256);
// Every example predicted as the given class, probability one.
Evaluation evaluate_constant(const std::vector<IndexedExample>& data, std::size_t label,
                             std::size_t num_classes);
std::size_t majority_label(const std::vector<IndexedExample>& data, std::size_t num_classes);

// Tab separated: pair_id, gold, predicted, then one probability per class.
void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions,
                       const LabelMap& labels);
std::vector<Prediction> read_predictions(std::istream& in, const LabelMap& labels);
void write_metrics(std::ostream& out, const Metrics& metrics, const LabelMap& labels);

struct CategoryRow {
  std::string category;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct CategoryReport {
  std::vector<CategoryRow> rows;        // first-seen order
  std::vector<std::string> omitted;     // categories left with no matched pair
  std::vector<std::string> unmatched;   // annotated pair ids without a prediction
  std::size_t annotated = 0;            // matched annotated pairs
};

// Annotations are JSONL {"pair_id": ..., "categories": [...]}.
CategoryReport category_breakdown(const std::vector<Prediction>& predictions, std::istream& annotations);
void write_category_report(std::ostream& out, const CategoryReport& report);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double dev_acc = 0.0;
  double seconds = 0.0;
  std::size_t clipped_steps = 0;
  std::size_t rejected_steps = 0;
};

std::string to_json(const EpochRecord& record);

struct TrainState {
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  double best_dev_acc = -1.0;
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;
  std::vector<Tensor> best_params;  // empty until the first dev evaluation
  std::vector<EpochRecord> log;
};

struct TrainOptions {
  std::size_t max_epochs = 0;           // 0 uses config.epochs
  bool stop_at_perfect_train = false;
  bool restore_best = true;             // reload best-dev parameters at the end
  std::string log_path;                 // JSONL, appended per epoch
  std::string checkpoint_path;          // best-dev checkpoint; "<path>.last" holds resume state
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::vector<std::string> incidents;
  bool aborted = false;
  bool early_stopped = false;
  std::size_t best_epoch = 0;
  double best_dev_acc = 0.0;
};

// Adam training with per-epoch eval-mode accuracy on both sets, patience on
// dev accuracy and best-dev selection. An empty dev set selects on train
// accuracy. `state` carries optimizer and loop state across calls, so a run
// can be resumed from a saved state.
TrainResult train(Model& model, const std::vector<IndexedExample>& train_set,
                  const std::vector<IndexedExample>& dev_set, const TrainOptions& options,
                  TrainState* state = nullptr);

}  // namespace cafe
