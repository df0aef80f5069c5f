#pragma once

#include <array>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "cafe/data.hpp"
#include "cafe/model.hpp"

namespace cafe {

struct FeatureRecord {
  std::string pair_id;
  std::string side;  // "premise" or "hypothesis"
  std::size_t token_index = 0;
  std::string token;
  std::array<double, 6> values{};  // kChannelNames order
};

// Eval-mode forward over the pairs, capturing the six propagated scalars of
// every real token. Order: pair, then premise before hypothesis, then index.
std::vector<FeatureRecord> collect_features(const Model& model, const std::vector<Example>& pairs,
                                            const Vocabularies& vocab, std::size_t batch_size = 64);

// Header plus one row per record, values with 6 significant digits.
void write_features_csv(std::ostream& out, const std::vector<FeatureRecord>& records);
void export_features(const Model& model, const std::vector<Example>& pairs, const Vocabularies& vocab,
                     const std::string& path);

class CsvError : public std::invalid_argument {
 public:
  CsvError(std::size_t row, const std::string& message)
      : std::invalid_argument("row " + std::to_string(row) + ": " + message), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Parses an export; rows are numbered from 1 with the header as row 1.
std::vector<FeatureRecord> read_features_csv(std::istream& in);

// Maps t in [0, 1] to a "#rrggbb" colour on a light-to-dark blue ramp.
std::string heat_color(double t);
// Position of v inside [lo, hi]; 0.5 for a constant channel.
double normalize_channel(double v, double lo, double hi);

// One 6 x tokens grid per sentence, each channel scaled to its own min/max
// within that sentence.
std::string heatmap_svg(const std::vector<FeatureRecord>& records);
void render_heatmap(const std::string& csv_path, const std::string& out_path);

}  // namespace cafe
