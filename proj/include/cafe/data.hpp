#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cafe/batch.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

struct Example {
  std::string pair_id;
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  std::vector<std::string> premise_pos;  // empty when the source has no parse
  std::vector<std::string> hypothesis_pos;
  std::size_t label = 0;
  std::string gold_label;
};

struct ParseLeaves {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

// Leaves of a bracketed constituency parse, "(TAG token)" pairs in order.
ParseLeaves extract_pos_from_parse(std::string_view parse);

// Whitespace split with ASCII lowercasing.
std::vector<std::string> tokenize(std::string_view sentence);

// Splits a token into UTF-8 code points. Invalid lead or continuation bytes
// become single-byte units rendered as U+FFFD so the result is valid UTF-8.
std::vector<std::string> utf8_chars(std::string_view token);

class LabelMap {
 public:
  explicit LabelMap(std::vector<std::string> names);
  std::optional<std::size_t> id(const std::string& name) const;
  const std::string& name(std::size_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

struct IngestError {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  std::vector<Example> examples;
  std::size_t skipped = 0;  // gold_label "-"
  std::vector<IngestError> errors;
  std::size_t lines = 0;    // non-blank lines seen
};

// SNLI / MultiNLI / SciTail JSONL. Bad lines are recorded and skipped. With
// require_label off, a missing gold_label yields label 0 and an empty name.
IngestResult parse_nli_jsonl(std::istream& in, const LabelMap& labels, bool require_label = true);
IngestResult parse_nli_jsonl(const std::string& path, const LabelMap& labels, bool require_label = true);
void write_nli_jsonl(std::ostream& out, const std::vector<Example>& examples);

// Token -> dense id map with PAD = 0 and OOV = 1 reserved.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kOov = 1;

  Vocab();
  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Vocabularies {
  Vocab words;
  Vocab chars;  // one entry per UTF-8 code point seen
  Vocab pos;

  void add_corpus(const std::vector<Example>& examples);
  void save(const std::string& path) const;
  static Vocabularies load(const std::string& path);
};

struct EmbeddingTable {
  Tensor matrix;  // |vocab| x dim, PAD row zero
  std::size_t found = 0;
  double coverage = 0.0;  // found / |vocab|
};

// Text vectors, "token v1 ... vd" per line. Tokens missing from the file get a
// vector drawn from U(-range, range) seeded by (seed, token).
EmbeddingTable load_pretrained_embeddings(const std::string& path, const Vocab& vocab,
                                          std::uint64_t seed, double range = 0.05);
EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed,
                                 double range = 0.05);

struct IdSentence {
  std::vector<std::size_t> words;
  std::vector<std::size_t> pos;
  std::vector<std::vector<std::size_t>> chars;
};

struct IndexedExample {
  std::string pair_id;
  IdSentence premise;
  IdSentence hypothesis;
  std::size_t label = 0;
};

IndexedExample index_example(const Example& ex, const Vocabularies& vocab, std::size_t max_word_chars,
                             bool require_pos);
std::vector<IndexedExample> index_examples(const std::vector<Example>& examples,
                                           const Vocabularies& vocab, std::size_t max_word_chars,
                                           bool require_pos);

// Pads a group of examples to batch-wise maxima.
Batch make_batch(const std::vector<const IndexedExample*>& group, std::size_t min_char_width);

// Length buckets at {10, 20, 30, 40, inf} on the longer sentence; examples are
// shuffled within buckets and the resulting batch order is shuffled too.
std::vector<Batch> make_batches(const std::vector<IndexedExample>& examples, std::size_t batch_size,
                                bool bucketing, std::uint64_t seed, std::size_t min_char_width);
// Input order, no shuffling; for evaluation.
std::vector<Batch> sequential_batches(const std::vector<IndexedExample>& examples,
                                      std::size_t batch_size, std::size_t min_char_width);

// Templated three-class corpus with balanced labels (class = index mod 3).
//   entailment:    one premise modifier dropped, nothing new
//   neutral:       one modifier dropped, the other replaced by an unseen one
//   contradiction: one modifier dropped, verb replaced by its antonym
std::vector<Example> generate_synthetic(std::size_t n, std::uint64_t seed);

}  // namespace cafe
