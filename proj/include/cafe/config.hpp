#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/alignment.hpp"

namespace cafe {

enum class Pooling { AvgMax, Sum, Avg, Max };
enum class HeadKind { Highway, Dense };

// Every architectural and training hyperparameter. Serialized as flat
// `key = value` text; every field is addressable by key.
struct ModelConfig {
  // architecture
  std::size_t word_dim = 300;
  std::size_t d_model = 300;
  std::size_t lstm_hidden = 300;
  std::size_t fm_factors = 10;
  std::size_t num_classes = 3;
  Pooling pooling = Pooling::AvgMax;
  HeadKind head = HeadKind::Highway;
  std::size_t head_width = 300;
  std::size_t head_depth = 2;
  bool encoder_highway = true;
  std::size_t encoder_depth = 2;
  bool use_char = true;
  std::size_t char_dim = 16;
  std::size_t char_window = 3;
  std::size_t char_filters = 50;
  std::size_t max_word_chars = 16;
  bool use_pos = true;
  std::size_t pos_dim = 20;
  bool use_inter_attention = true;
  bool include_intra_vector = true;
  bool share_intra_projection = true;
  Comparison comparison = Comparison::Fm;
  bool use_cat = true;
  bool use_sub = true;
  bool use_mul = true;
  bool bidirectional = false;

  // training
  double keep_prob = 0.8;
  double l2 = 1e-6;
  double learning_rate = 3e-4;
  std::size_t batch_size = 256;
  std::uint64_t seed = 42;
  std::size_t epochs = 30;
  std::size_t patience = 5;  // 0 disables early stopping
  double clip_norm = 5.0;    // 0 disables clipping
  bool bucketing = true;
  bool float32_params = true;
  double oov_range = 0.05;
  std::string labels = "entailment,neutral,contradiction";

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  static ModelConfig from_file(const std::string& path);
  void apply_overrides(const std::vector<std::string>& assignments);  // "key=value"

  void validate() const;
  std::array<bool, 3> compare_ops() const { return {use_cat, use_sub, use_mul}; }
  std::vector<std::string> label_names() const;
};

// Named starting points: "micro" (desk-scale tests), "small", "300d" (defaults).
ModelConfig preset_config(const std::string& name);

const char* to_string(Pooling p);
const char* to_string(HeadKind h);
const char* to_string(Comparison c);

}  // namespace cafe
