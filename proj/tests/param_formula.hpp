#pragma once

#include <cstddef>

#include "cafe/config.hpp"
#include "cafe/model.hpp"

// Closed-form trainable-parameter count, layer by layer, written against the
// architecture description rather than the model code.
namespace testutil {

inline std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

inline std::size_t highway_count(std::size_t in, std::size_t out) {
  return 2 * dense_count(in, out) + (in != out ? dense_count(in, out) : 0);
}

inline std::size_t compressor_count(const cafe::ModelConfig& c, std::size_t n) {
  switch (c.comparison) {
    case cafe::Comparison::Fm: return 1 + n + n * c.fm_factors;
    case cafe::Comparison::FcLinear1:
    case cafe::Comparison::FcRelu1: return dense_count(n, 1);
    case cafe::Comparison::FcRelu2: return dense_count(n, c.d_model) + dense_count(c.d_model, 1);
  }
  return 0;
}

inline std::size_t analytic_param_count(const cafe::ModelConfig& c, const cafe::VocabSizes& v) {
  const std::size_t d = c.d_model;
  std::size_t total = 0;

  std::size_t width = c.word_dim;
  if (c.use_char) {
    total += v.chars * c.char_dim + c.char_window * c.char_dim * c.char_filters + c.char_filters;
    width += c.char_filters;
  }
  if (c.use_pos) {
    total += v.pos * c.pos_dim;
    width += c.pos_dim;
  }
  for (std::size_t l = 0; l < c.encoder_depth; ++l) {
    const std::size_t in = l == 0 ? width : d;
    total += c.encoder_highway ? highway_count(in, d) : dense_count(in, d);
  }

  const std::size_t ops = std::size_t{c.use_cat} + c.use_sub + c.use_mul;
  std::size_t family = 0;
  if (c.use_cat) family += compressor_count(c, 2 * d);
  if (c.use_sub) family += compressor_count(c, d);
  if (c.use_mul) family += compressor_count(c, d);

  total += dense_count(d, d) * (c.share_intra_projection ? 1 : 2) + family;
  if (c.use_inter_attention) total += dense_count(d, d) + family;

  const std::size_t aug = d + ops * (c.use_inter_attention ? 2 : 1) + (c.include_intra_vector ? d : 0);
  const std::size_t h = c.lstm_hidden;
  const std::size_t directions = c.bidirectional ? 2 : 1;
  total += directions * (aug * 4 * h + h * 4 * h + 4 * h);

  const std::size_t pooled = (c.pooling == cafe::Pooling::AvgMax ? 2 : 1) * h * directions;
  std::size_t in = 4 * pooled;
  for (std::size_t l = 0; l < c.head_depth; ++l) {
    total += c.head == cafe::HeadKind::Highway ? highway_count(in, c.head_width) : dense_count(in, c.head_width);
    in = c.head_width;
  }
  total += dense_count(in, c.num_classes);
  return total;
}

}  // namespace testutil
