#include "cafe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cafe {

const char* to_string(Pooling p) {
  switch (p) {
    case Pooling::AvgMax: return "avgmax";
    case Pooling::Sum: return "sum";
    case Pooling::Avg: return "avg";
    case Pooling::Max: return "max";
  }
  return "?";
}

const char* to_string(HeadKind h) { return h == HeadKind::Highway ? "highway" : "dense"; }

const char* to_string(Comparison c) {
  switch (c) {
    case Comparison::Fm: return "fm";
    case Comparison::FcLinear1: return "fc-linear-1";
    case Comparison::FcRelu1: return "fc-relu-1";
    case Comparison::FcRelu2: return "fc-relu-2";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v);
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Field {
  std::function<void(ModelConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ModelConfig&)> get;
};

template <typename T>
Field size_field(T ModelConfig::*m) {
  return {[m](ModelConfig& c, const std::string& k, const std::string& v) {
            c.*m = static_cast<T>(parse_size(k, v));
          },
          [m](const ModelConfig& c) { return std::to_string(c.*m); }};
}

Field double_field(double ModelConfig::*m) {
  return {[m](ModelConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); },
          [m](const ModelConfig& c) { return fmt_double(c.*m); }};
}

Field bool_field(bool ModelConfig::*m) {
  return {[m](ModelConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const ModelConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

// Ordered by declaration so that to_text() is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"word_dim", size_field(&ModelConfig::word_dim)},
      {"d_model", size_field(&ModelConfig::d_model)},
      {"lstm_hidden", size_field(&ModelConfig::lstm_hidden)},
      {"fm_factors", size_field(&ModelConfig::fm_factors)},
      {"num_classes", size_field(&ModelConfig::num_classes)},
      {"pooling",
       {[](ModelConfig& c, const std::string& k, const std::string& v) {
          if (v == "avgmax") c.pooling = Pooling::AvgMax;
          else if (v == "sum") c.pooling = Pooling::Sum;
          else if (v == "avg") c.pooling = Pooling::Avg;
          else if (v == "max") c.pooling = Pooling::Max;
          else bad_value(k, v);
        },
        [](const ModelConfig& c) { return std::string(to_string(c.pooling)); }}},
      {"head",
       {[](ModelConfig& c, const std::string& k, const std::string& v) {
          if (v == "highway") c.head = HeadKind::Highway;
          else if (v == "dense") c.head = HeadKind::Dense;
          else bad_value(k, v);
        },
        [](const ModelConfig& c) { return std::string(to_string(c.head)); }}},
      {"head_width", size_field(&ModelConfig::head_width)},
      {"head_depth", size_field(&ModelConfig::head_depth)},
      {"encoder_highway", bool_field(&ModelConfig::encoder_highway)},
      {"encoder_depth", size_field(&ModelConfig::encoder_depth)},
      {"use_char", bool_field(&ModelConfig::use_char)},
      {"char_dim", size_field(&ModelConfig::char_dim)},
      {"char_window", size_field(&ModelConfig::char_window)},
      {"char_filters", size_field(&ModelConfig::char_filters)},
      {"max_word_chars", size_field(&ModelConfig::max_word_chars)},
      {"use_pos", bool_field(&ModelConfig::use_pos)},
      {"pos_dim", size_field(&ModelConfig::pos_dim)},
      {"use_inter_attention", bool_field(&ModelConfig::use_inter_attention)},
      {"include_intra_vector", bool_field(&ModelConfig::include_intra_vector)},
      {"share_intra_projection", bool_field(&ModelConfig::share_intra_projection)},
      {"comparison",
       {[](ModelConfig& c, const std::string& k, const std::string& v) {
          if (v == "fm") c.comparison = Comparison::Fm;
          else if (v == "fc-linear-1") c.comparison = Comparison::FcLinear1;
          else if (v == "fc-relu-1") c.comparison = Comparison::FcRelu1;
          else if (v == "fc-relu-2") c.comparison = Comparison::FcRelu2;
          else bad_value(k, v);
        },
        [](const ModelConfig& c) { return std::string(to_string(c.comparison)); }}},
      {"use_cat", bool_field(&ModelConfig::use_cat)},
      {"use_sub", bool_field(&ModelConfig::use_sub)},
      {"use_mul", bool_field(&ModelConfig::use_mul)},
      {"bidirectional", bool_field(&ModelConfig::bidirectional)},
      {"keep_prob", double_field(&ModelConfig::keep_prob)},
      {"l2", double_field(&ModelConfig::l2)},
      {"learning_rate", double_field(&ModelConfig::learning_rate)},
      {"batch_size", size_field(&ModelConfig::batch_size)},
      {"seed", size_field(&ModelConfig::seed)},
      {"epochs", size_field(&ModelConfig::epochs)},
      {"patience", size_field(&ModelConfig::patience)},
      {"clip_norm", double_field(&ModelConfig::clip_norm)},
      {"bucketing", bool_field(&ModelConfig::bucketing)},
      {"float32_params", bool_field(&ModelConfig::float32_params)},
      {"oov_range", double_field(&ModelConfig::oov_range)},
      {"labels",
       {[](ModelConfig& c, const std::string&, const std::string& v) { c.labels = v; },
        [](const ModelConfig& c) { return c.labels; }}},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

void ModelConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, trim(value));
}

std::string ModelConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& ModelConfig::keys() {
  static const std::vector<std::string> ks = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return ks;
}

std::string ModelConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ModelConfig ModelConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void ModelConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + a + "' is not key=value");
    set(trim(a.substr(0, eq)), a.substr(eq + 1));
  }
}

std::vector<std::string> ModelConfig::label_names() const {
  std::vector<std::string> out;
  std::stringstream ss(labels);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
  };
  positive(word_dim, "word_dim");
  positive(d_model, "d_model");
  positive(lstm_hidden, "lstm_hidden");
  positive(fm_factors, "fm_factors");
  positive(head_width, "head_width");
  positive(batch_size, "batch_size");
  positive(encoder_depth, "encoder_depth");
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (label_names().size() != num_classes)
    throw std::invalid_argument("config: labels lists " + std::to_string(label_names().size()) +
                                " names but num_classes = " + std::to_string(num_classes));
  if (use_char) {
    positive(char_dim, "char_dim");
    positive(char_window, "char_window");
    positive(char_filters, "char_filters");
    if (max_word_chars < char_window)
      throw std::invalid_argument("config: max_word_chars must be >= char_window");
  }
  if (use_pos) positive(pos_dim, "pos_dim");
  if (!use_cat && !use_sub && !use_mul)
    throw std::invalid_argument("config: at least one of use_cat/use_sub/use_mul must be on");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw std::invalid_argument("config: keep_prob must be in (0, 1]");
  if (l2 < 0.0 || learning_rate < 0.0 || clip_norm < 0.0)
    throw std::invalid_argument("config: l2, learning_rate and clip_norm must be >= 0");
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "300d") return c;
  if (name == "micro") {
    c.word_dim = 8;
    c.d_model = 8;
    c.lstm_hidden = 8;
    c.fm_factors = 4;
    c.head_width = 8;
    c.head_depth = 1;
    c.encoder_depth = 1;
    c.char_dim = 4;
    c.char_window = 2;
    c.char_filters = 4;
    c.max_word_chars = 12;
    c.use_pos = false;
    c.keep_prob = 1.0;
    c.l2 = 0.0;
    c.learning_rate = 5e-3;
    c.batch_size = 16;
    c.epochs = 300;
    c.patience = 0;
    return c;
  }
  if (name == "small") {
    c.word_dim = 50;
    c.d_model = 50;
    c.lstm_hidden = 50;
    c.fm_factors = 5;
    c.head_width = 50;
    c.encoder_depth = 1;
    c.char_dim = 8;
    c.char_filters = 20;
    c.pos_dim = 10;
    c.keep_prob = 0.9;
    c.learning_rate = 1e-3;
    c.batch_size = 64;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (expected micro, small or 300d)");
}

}  // namespace cafe
