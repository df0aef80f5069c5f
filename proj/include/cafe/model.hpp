#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cafe/alignment.hpp"
#include "cafe/batch.hpp"
#include "cafe/config.hpp"
#include "cafe/layers.hpp"

namespace cafe {

struct VocabSizes {
  std::size_t words = 0;
  std::size_t chars = 0;
  std::size_t pos = 0;
};

// Temporal pooling over real rows: avgmax = [max ; mean]. Returns 1 x k.
Var pool(Tape& tape, Var hidden, const std::vector<double>& mask, Pooling kind);

// Head over [x_p ; x_h ; x_p * x_h ; x_p - x_h] followed by a linear layer
// producing unnormalized class scores.
struct PredictionHead {
  std::vector<Highway> highways;
  std::vector<Dense> dense;
  Dense output;

  static PredictionHead create(ParameterStore& store, const std::string& name, std::size_t in,
                               HeadKind kind, std::size_t width, std::size_t depth,
                               std::size_t classes, Rng& rng);
  Var features(Tape& tape, Var xp, Var xh) const;
  Var logits(Tape& tape, Var xp, Var xh, DropoutContext& dropout) const;
  std::size_t input_width() const;
};

// Row-wise softmax of a logits matrix.
Tensor softmax_rows(const Tensor& logits);

// Six propagated scalars per token in fixed channel order; disabled channels
// stay zero.
enum FeatureChannel { kInterCat, kInterSub, kInterMul, kIntraCat, kIntraSub, kIntraMul };
constexpr std::array<const char*, 6> kChannelNames = {"inter_cat", "inter_sub", "inter_mul",
                                                      "intra_cat", "intra_sub", "intra_mul"};

struct SentenceFeatures {
  Tensor values;  // length x 6 (real tokens only)
};

struct PairFeatures {
  SentenceFeatures premise;
  SentenceFeatures hypothesis;
};

// Everything one premise/hypothesis pair produces on a tape.
struct PairGraph {
  EncodedSequence premise;
  EncodedSequence hypothesis;
  std::optional<InterAlignment> inter;
  Var premise_intra_vector, hypothesis_intra_vector;
  std::optional<Var> premise_inter, hypothesis_inter;  // extent x |ops|
  Var premise_intra, hypothesis_intra;                 // extent x |ops|
  AugmentedSequence premise_aug, hypothesis_aug;
  Var premise_hidden, hypothesis_hidden;
  Var x_p, x_h;
  Var logits;  // 1 x classes
};

class Model {
 public:
  Model(ModelConfig config, VocabSizes sizes, Tensor word_vectors);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const VocabSizes& vocab_sizes() const { return sizes_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  const InputEncoder& encoder() const { return encoder_; }
  const Dense& inter_projection() const { return inter_projection_; }
  const Dense& intra_projection(bool hypothesis) const {
    return hypothesis && intra_projection_h_ ? *intra_projection_h_ : intra_projection_;
  }
  const AlignmentFactorizer& inter_factorizer() const { return inter_; }
  const AlignmentFactorizer& intra_factorizer() const { return intra_; }
  const Lstm& lstm() const { return lstm_; }
  const std::optional<Lstm>& lstm_reverse() const { return lstm_reverse_; }
  const PredictionHead& head() const { return head_; }

  std::size_t augmented_width() const;
  std::size_t pooled_width() const;

  PairGraph forward_example(Tape& tape, const TokenIds& premise, const TokenIds& hypothesis,
                            DropoutContext& dropout) const;
  PairFeatures capture_features(const Tape& tape, const PairGraph& graph) const;

 private:
  Var encode_sentence(Tape& tape, const AugmentedSequence& seq, DropoutContext& dropout) const;

  ModelConfig config_;
  VocabSizes sizes_;
  ParameterStore store_;
  InputEncoder encoder_;
  Dense inter_projection_;
  Dense intra_projection_;
  std::optional<Dense> intra_projection_h_;
  AlignmentFactorizer inter_;
  AlignmentFactorizer intra_;
  Lstm lstm_;
  std::optional<Lstm> lstm_reverse_;
  PredictionHead head_;
};

struct ForwardResult {
  Tensor logits;  // batch x classes
  std::vector<PairFeatures> features;
};

// Batched forward. Each pair runs on its own tape; pairs are processed in
// parallel. train_mode toggles dropout only.
ForwardResult forward_pair(const Model& model, const Batch& batch, bool train_mode,
                           std::uint64_t dropout_seed = 0, bool capture_features = false);

// Mean cross entropy from logits (log-sum-exp form).
Var cross_entropy(Tape& tape, Var logits, const std::vector<std::size_t>& labels);
// lambda * sum of squares over decay-flagged trainable parameters.
Var l2_penalty(Tape& tape, const ParameterStore& store, double lambda);
Var total_loss(Tape& tape, Var logits, const std::vector<std::size_t>& labels,
               const ParameterStore& store, double lambda);

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> components;  // by top-level name prefix
};

// Trainable scalars only; frozen embeddings are excluded.
ParamCount count_params(const ParameterStore& store);
inline ParamCount count_params(const Model& model) { return count_params(model.params()); }

}  // namespace cafe
