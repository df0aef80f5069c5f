#include "cafe/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cafe {

namespace {

constexpr const char* kHeader =
    "pair_id,side,token_index,token,inter_cat,inter_sub,inter_mul,intra_cat,intra_sub,intra_mul";

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line, std::size_t row) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw CsvError(row, "unterminated quoted field");
  cells.push_back(std::move(cur));
  return cells;
}

double parse_number(const std::string& s, std::size_t row, const char* column) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v))
    throw CsvError(row, std::string("column ") + column + ": '" + s + "' is not a finite number");
  return v;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<FeatureRecord> collect_features(const Model& model, const std::vector<Example>& pairs,
                                            const Vocabularies& vocab, std::size_t batch_size) {
  if (pairs.empty()) throw std::invalid_argument("export: no pairs to export");
  const ModelConfig& cfg = model.config();
  const auto indexed = index_examples(pairs, vocab, cfg.max_word_chars, cfg.use_pos);
  std::vector<FeatureRecord> out;
  std::size_t offset = 0;
  for (const Batch& batch : sequential_batches(indexed, batch_size, cfg.char_window)) {
    const ForwardResult fr = forward_pair(model, batch, false, 0, true);
    for (std::size_t b = 0; b < batch.size(); ++b, ++offset) {
      const Example& ex = pairs[offset];
      auto emit = [&](const char* side, const std::vector<std::string>& tokens, const SentenceFeatures& f) {
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          FeatureRecord r{ex.pair_id, side, t, tokens[t], {}};
          for (std::size_t c = 0; c < 6; ++c) r.values[c] = f.values.at(t, c);
          out.push_back(std::move(r));
        }
      };
      emit("premise", ex.premise, fr.features[b].premise);
      emit("hypothesis", ex.hypothesis, fr.features[b].hypothesis);
    }
  }
  return out;
}

void write_features_csv(std::ostream& out, const std::vector<FeatureRecord>& records) {
  out << kHeader << '\n';
  char buf[32];
  for (const auto& r : records) {
    out << csv_cell(r.pair_id) << ',' << r.side << ',' << r.token_index << ',' << csv_cell(r.token);
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, "%.6g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

void export_features(const Model& model, const std::vector<Example>& pairs, const Vocabularies& vocab,
                     const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write features to " + path);
  write_features_csv(out, collect_features(model, pairs, vocab));
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<FeatureRecord> read_features_csv(std::istream& in) {
  std::vector<FeatureRecord> out;
  std::string line;
  std::size_t row = 0;
  std::string group_id, group_side;
  std::size_t expected_index = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1) {
      if (line != kHeader) throw CsvError(row, "unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv(line, row);
    if (cells.size() != 10) throw CsvError(row, "expected 10 columns, found " + std::to_string(cells.size()));
    FeatureRecord r;
    r.pair_id = cells[0];
    r.side = cells[1];
    if (r.side != "premise" && r.side != "hypothesis") throw CsvError(row, "side must be premise or hypothesis");
    const double index = parse_number(cells[2], row, "token_index");
    if (index < 0 || index != std::floor(index)) throw CsvError(row, "token_index must be a non-negative integer");
    r.token_index = static_cast<std::size_t>(index);
    r.token = cells[3];
    for (std::size_t c = 0; c < 6; ++c) r.values[c] = parse_number(cells[4 + c], row, kChannelNames[c]);
    if (r.pair_id != group_id || r.side != group_side) {
      group_id = r.pair_id;
      group_side = r.side;
      expected_index = 0;
    }
    if (r.token_index != expected_index)
      throw CsvError(row, "token_index " + std::to_string(r.token_index) + ", expected " +
                              std::to_string(expected_index));
    ++expected_index;
    out.push_back(std::move(r));
  }
  if (row == 0) throw CsvError(1, "empty file");
  return out;
}

std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr double lo[3] = {247, 251, 255};
  static constexpr double hi[3] = {8, 48, 107};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * t));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

double normalize_channel(double v, double lo, double hi) {
  if (!(hi > lo)) return 0.5;
  return (v - lo) / (hi - lo);
}

std::string heatmap_svg(const std::vector<FeatureRecord>& records) {
  if (records.empty()) throw std::invalid_argument("heatmap: no records");
  constexpr int kCell = 26, kRowH = 18, kLabelW = 80, kTitleH = 22, kTokenH = 70, kGap = 20;

  struct Group {
    std::size_t begin, end;
  };
  std::vector<Group> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i == 0 || records[i].pair_id != records[i - 1].pair_id || records[i].side != records[i - 1].side)
      groups.push_back({i, i});
    groups.back().end = i + 1;
  }

  std::size_t max_tokens = 0;
  for (const auto& g : groups) max_tokens = std::max(max_tokens, g.end - g.begin);
  const int block_h = kTitleH + 6 * kRowH + kTokenH + kGap;
  const int width = kLabelW + static_cast<int>(max_tokens) * kCell + 20;
  const int height = static_cast<int>(groups.size()) * block_h;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  int y0 = 0;
  for (const auto& g : groups) {
    svg << "<g class=\"sentence\" data-pair=\"" << xml_escape(records[g.begin].pair_id) << "\" data-side=\""
        << records[g.begin].side << "\">\n";
    svg << "<text x=\"4\" y=\"" << y0 + 15 << "\" font-weight=\"bold\">" << xml_escape(records[g.begin].pair_id)
        << " (" << records[g.begin].side << ")</text>\n";
    for (std::size_t c = 0; c < 6; ++c) {
      double lo = records[g.begin].values[c], hi = lo;
      for (std::size_t i = g.begin; i < g.end; ++i) {
        lo = std::min(lo, records[i].values[c]);
        hi = std::max(hi, records[i].values[c]);
      }
      const int y = y0 + kTitleH + static_cast<int>(c) * kRowH;
      std::string label = kChannelNames[c];
      std::replace(label.begin(), label.end(), '_', ' ');
      svg << "<text x=\"4\" y=\"" << y + 13 << "\">" << label << "</text>\n";
      for (std::size_t i = g.begin; i < g.end; ++i) {
        const int x = kLabelW + static_cast<int>(i - g.begin) * kCell;
        char value[32];
        std::snprintf(value, sizeof value, "%.6g", records[i].values[c]);
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kRowH
            << "\" fill=\"" << heat_color(normalize_channel(records[i].values[c], lo, hi))
            << "\" data-channel=\"" << kChannelNames[c] << "\"><title>" << value << "</title></rect>\n";
      }
    }
    const int ty = y0 + kTitleH + 6 * kRowH + 6;
    for (std::size_t i = g.begin; i < g.end; ++i) {
      const int x = kLabelW + static_cast<int>(i - g.begin) * kCell + kCell / 2;
      svg << "<text x=\"" << x << "\" y=\"" << ty << "\" transform=\"rotate(60 " << x << ' ' << ty
          << ")\">" << xml_escape(records[i].token) << "</text>\n";
    }
    svg << "</g>\n";
    y0 += block_h;
  }
  svg << "</svg>\n";
  return svg.str();
}

void render_heatmap(const std::string& csv_path, const std::string& out_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  const std::string svg = heatmap_svg(read_features_csv(in));
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << svg;
}

}  // namespace cafe
