#include "cafe/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cafe/rng.hpp"
#include "json.hpp"

namespace cafe {

using json = nlohmann::json;

ParseLeaves extract_pos_from_parse(std::string_view parse) {
  std::vector<std::string> toks;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) toks.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : parse) {
    if (ch == '(' || ch == ')') {
      flush();
      toks.emplace_back(1, ch);
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur += ch;
    }
  }
  flush();

  ParseLeaves out;
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> void {
    throw std::invalid_argument("malformed parse: " + why);
  };
  // Iterative walk; depth tracks balance.
  long depth = 0;
  while (i < toks.size()) {
    if (toks[i] == "(") {
      ++depth;
      // "(" TAG word ")" is a leaf.
      if (i + 3 < toks.size() + 0 && toks[i + 1] != "(" && toks[i + 1] != ")" && toks[i + 2] != "(" &&
          toks[i + 2] != ")" && toks[i + 3] == ")") {
        out.tags.push_back(toks[i + 1]);
        out.tokens.push_back(toks[i + 2]);
        i += 4;
        --depth;
        continue;
      }
      i += 1;
      if (i < toks.size() && toks[i] != "(" && toks[i] != ")") ++i;  // phrase label
    } else if (toks[i] == ")") {
      if (--depth < 0) fail("unbalanced ')'");
      ++i;
    } else {
      fail("unexpected token '" + toks[i] + "' outside a leaf");
    }
  }
  if (depth != 0) fail("unbalanced '('");
  if (out.tokens.empty()) fail("no leaves");
  return out;
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

LabelMap::LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw std::invalid_argument("label map needs at least two labels");
}

std::optional<std::size_t> LabelMap::id(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

namespace {

void sentence_from(const json& obj, const char* text_key, const char* parse_key,
                   std::vector<std::string>& tokens, std::vector<std::string>& tags) {
  if (obj.contains(parse_key) && obj[parse_key].is_string() && !obj[parse_key].get<std::string>().empty()) {
    ParseLeaves leaves = extract_pos_from_parse(obj[parse_key].get<std::string>());
    tokens.clear();
    for (const auto& leaf : leaves.tokens) {
      auto lowered = tokenize(leaf);
      tokens.push_back(lowered.empty() ? leaf : lowered.front());
    }
    tags = std::move(leaves.tags);
    return;
  }
  if (!obj.contains(text_key) || !obj[text_key].is_string())
    throw std::invalid_argument(std::string("missing string field ") + text_key);
  tokens = tokenize(obj[text_key].get<std::string>());
  tags.clear();
}

}  // namespace

IngestResult parse_nli_jsonl(std::istream& in, const LabelMap& labels, bool require_label) {
  IngestResult res;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    ++res.lines;
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) throw std::invalid_argument("line is not a JSON object");
      const bool has_gold = obj.contains("gold_label") && obj["gold_label"].is_string();
      if (!has_gold && require_label) throw std::invalid_argument("missing string field gold_label");
      const std::string gold = has_gold ? obj["gold_label"].get<std::string>() : std::string();
      if (gold == "-") {
        ++res.skipped;
        continue;
      }
      Example ex;
      if (has_gold) {
        auto label = labels.id(gold);
        if (!label) throw std::invalid_argument("unknown label '" + gold + "'");
        ex.label = *label;
        ex.gold_label = gold;
      }
      sentence_from(obj, "sentence1", "sentence1_parse", ex.premise, ex.premise_pos);
      sentence_from(obj, "sentence2", "sentence2_parse", ex.hypothesis, ex.hypothesis_pos);
      if (ex.premise.empty() || ex.hypothesis.empty()) throw std::invalid_argument("empty sentence");
      if (obj.contains("pairID") && obj["pairID"].is_string())
        ex.pair_id = obj["pairID"].get<std::string>();
      else if (obj.contains("pair_id") && obj["pair_id"].is_string())
        ex.pair_id = obj["pair_id"].get<std::string>();
      else
        ex.pair_id = "line" + std::to_string(lineno);
      res.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      res.errors.push_back({lineno, e.what()});
    }
  }
  return res;
}

IngestResult parse_nli_jsonl(const std::string& path, const LabelMap& labels, bool require_label) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return parse_nli_jsonl(in, labels, require_label);
}

static std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

void write_nli_jsonl(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& ex : examples) {
    json obj;
    obj["gold_label"] = ex.gold_label;
    obj["sentence1"] = join(ex.premise);
    obj["sentence2"] = join(ex.hypothesis);
    obj["pairID"] = ex.pair_id;
    out << obj.dump() << '\n';
  }
}

Vocab::Vocab() {
  add("<pad>");
  add("<oov>");
}

std::size_t Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

std::vector<std::string> utf8_chars(std::string_view token) {
  static const std::string kReplacement = "\xEF\xBF\xBD";
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < token.size()) {
    const auto lead = static_cast<unsigned char>(token[i]);
    std::size_t n = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 0;
    bool ok = n > 0 && i + n <= token.size();
    for (std::size_t k = 1; ok && k < n; ++k) ok = (static_cast<unsigned char>(token[i + k]) >> 6) == 0x2;
    if (ok) {
      out.emplace_back(token.substr(i, n));
      i += n;
    } else {
      out.push_back(kReplacement);
      ++i;
    }
  }
  return out;
}

void Vocabularies::add_corpus(const std::vector<Example>& examples) {
  auto add_tokens = [&](const std::vector<std::string>& toks) {
    for (const auto& t : toks) {
      words.add(t);
      for (const auto& ch : utf8_chars(t)) chars.add(ch);
    }
  };
  for (const auto& ex : examples) {
    add_tokens(ex.premise);
    add_tokens(ex.hypothesis);
    for (const auto& t : ex.premise_pos) pos.add(t);
    for (const auto& t : ex.hypothesis_pos) pos.add(t);
  }
}

void Vocabularies::save(const std::string& path) const {
  json obj;
  auto dump = [](const Vocab& v) {
    return std::vector<std::string>(v.tokens().begin() + 2, v.tokens().end());
  };
  obj["words"] = dump(words);
  obj["chars"] = dump(chars);
  obj["pos"] = dump(pos);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path);
  out << obj.dump() << '\n';
}

Vocabularies Vocabularies::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path);
  json obj = json::parse(in);
  Vocabularies v;
  for (const auto& t : obj.at("words")) v.words.add(t.get<std::string>());
  for (const auto& t : obj.at("chars")) v.chars.add(t.get<std::string>());
  for (const auto& t : obj.at("pos")) v.pos.add(t.get<std::string>());
  return v;
}

namespace {

void seeded_row(Tensor& m, std::size_t row, const std::string& token, std::uint64_t seed, double range) {
  Rng rng(derive_seed(seed, hash_string(token)));
  std::uniform_real_distribution<double> dist(-range, range);
  const std::size_t dim = m.dim(1);
  for (std::size_t c = 0; c < dim; ++c) m.at(row, c) = dist(rng);
}

}  // namespace

EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, std::uint64_t seed, double range) {
  EmbeddingTable t;
  t.matrix = Tensor(Shape{vocab.size(), dim}, 0.0);
  for (std::size_t i = 1; i < vocab.size(); ++i) seeded_row(t.matrix, i, vocab.token(i), seed, range);
  return t;
}

EmbeddingTable load_pretrained_embeddings(const std::string& path, const Vocab& vocab,
                                          std::uint64_t seed, double range) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings " + path);
  std::vector<std::vector<double>> rows(vocab.size());
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof())
      throw std::invalid_argument("embeddings line " + std::to_string(lineno) + ": non-numeric component");
    if (dim == 0) dim = values.size();
    if (values.size() != dim || dim == 0)
      throw std::invalid_argument("embeddings line " + std::to_string(lineno) + ": dimension " +
                                  std::to_string(values.size()) + ", expected " + std::to_string(dim));
    if (!vocab.contains(token)) continue;
    const std::size_t id = vocab.id(token);
    if (id == Vocab::kPad) continue;
    rows[id] = std::move(values);
  }
  if (dim == 0) throw std::invalid_argument("embeddings file " + path + " is empty");
  EmbeddingTable t = random_embeddings(vocab, dim, seed, range);
  for (std::size_t id = 0; id < rows.size(); ++id) {
    if (rows[id].empty()) continue;
    std::copy(rows[id].begin(), rows[id].end(), t.matrix.data() + id * dim);
    ++t.found;
  }
  t.coverage = static_cast<double>(t.found) / static_cast<double>(vocab.size());
  return t;
}

namespace {

IdSentence index_sentence(const std::vector<std::string>& toks, const std::vector<std::string>& tags,
                          const Vocabularies& v, std::size_t max_word_chars) {
  IdSentence s;
  for (const auto& t : toks) {
    s.words.push_back(v.words.id(t));
    std::vector<std::size_t> cs;
    for (const auto& ch : utf8_chars(t)) {
      if (cs.size() == max_word_chars) break;
      cs.push_back(v.chars.id(ch));
    }
    s.chars.push_back(std::move(cs));
  }
  for (const auto& t : tags) s.pos.push_back(v.pos.id(t));
  return s;
}

}  // namespace

IndexedExample index_example(const Example& ex, const Vocabularies& vocab, std::size_t max_word_chars,
                             bool require_pos) {
  if (ex.premise.empty() || ex.hypothesis.empty())
    throw std::invalid_argument("example " + ex.pair_id + ": empty sentence");
  auto check_tags = [&](const std::vector<std::string>& toks, const std::vector<std::string>& tags) {
    if (tags.empty() && !require_pos) return;
    if (tags.size() != toks.size())
      throw std::invalid_argument("example " + ex.pair_id + ": " + std::to_string(tags.size()) +
                                  " POS tags for " + std::to_string(toks.size()) +
                                  " tokens (POS channel needs parse fields)");
  };
  check_tags(ex.premise, ex.premise_pos);
  check_tags(ex.hypothesis, ex.hypothesis_pos);
  IndexedExample out;
  out.pair_id = ex.pair_id;
  out.label = ex.label;
  out.premise = index_sentence(ex.premise, ex.premise_pos, vocab, max_word_chars);
  out.hypothesis = index_sentence(ex.hypothesis, ex.hypothesis_pos, vocab, max_word_chars);
  return out;
}

std::vector<IndexedExample> index_examples(const std::vector<Example>& examples,
                                           const Vocabularies& vocab, std::size_t max_word_chars,
                                           bool require_pos) {
  std::vector<IndexedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(index_example(ex, vocab, max_word_chars, require_pos));
  return out;
}

namespace {

TokenIds pad_sentence(const IdSentence& s, std::size_t extent, std::size_t width) {
  TokenIds t;
  t.length = s.words.size();
  t.char_width = width;
  t.words.assign(extent, 0);
  t.pos.assign(extent, 0);
  t.chars.assign(extent * width, 0);
  t.char_counts.assign(extent, 0);
  for (std::size_t i = 0; i < t.length; ++i) {
    t.words[i] = s.words[i];
    if (i < s.pos.size()) t.pos[i] = s.pos[i];
    const auto& cs = s.chars[i];
    t.char_counts[i] = cs.size();
    std::copy(cs.begin(), cs.end(), t.chars.begin() + i * width);
  }
  return t;
}

}  // namespace

Batch make_batch(const std::vector<const IndexedExample*>& group, std::size_t min_char_width) {
  Batch b;
  std::size_t lp = 1, lh = 1, width = std::max<std::size_t>(min_char_width, 1);
  for (const auto* ex : group) {
    lp = std::max(lp, ex->premise.words.size());
    lh = std::max(lh, ex->hypothesis.words.size());
    for (const auto& cs : ex->premise.chars) width = std::max(width, cs.size());
    for (const auto& cs : ex->hypothesis.chars) width = std::max(width, cs.size());
  }
  for (const auto* ex : group) {
    b.premises.push_back(pad_sentence(ex->premise, lp, width));
    b.hypotheses.push_back(pad_sentence(ex->hypothesis, lh, width));
    b.labels.push_back(ex->label);
    b.pair_ids.push_back(ex->pair_id);
  }
  return b;
}

std::vector<Batch> make_batches(const std::vector<IndexedExample>& examples, std::size_t batch_size,
                                bool bucketing, std::uint64_t seed, std::size_t min_char_width) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  static constexpr std::array<std::size_t, 4> kBounds = {10, 20, 30, 40};
  Rng rng(derive_seed(seed, hash_string("batches")));
  std::vector<std::vector<std::size_t>> buckets(bucketing ? kBounds.size() + 1 : 1);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::size_t b = 0;
    if (bucketing) {
      const std::size_t len =
          std::max(examples[i].premise.words.size(), examples[i].hypothesis.words.size());
      while (b < kBounds.size() && len > kBounds[b]) ++b;
    }
    buckets[b].push_back(i);
  }
  std::vector<std::vector<std::size_t>> groups;
  for (auto& bucket : buckets) {
    std::shuffle(bucket.begin(), bucket.end(), rng);
    for (std::size_t s = 0; s < bucket.size(); s += batch_size)
      groups.emplace_back(bucket.begin() + s, bucket.begin() + std::min(bucket.size(), s + batch_size));
  }
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<Batch> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<const IndexedExample*> ptrs;
    for (auto i : g) ptrs.push_back(&examples[i]);
    out.push_back(make_batch(ptrs, min_char_width));
  }
  return out;
}

std::vector<Batch> sequential_batches(const std::vector<IndexedExample>& examples,
                                      std::size_t batch_size, std::size_t min_char_width) {
  if (batch_size == 0) throw std::invalid_argument("sequential_batches: batch_size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t s = 0; s < examples.size(); s += batch_size) {
    std::vector<const IndexedExample*> ptrs;
    for (std::size_t i = s; i < std::min(examples.size(), s + batch_size); ++i) ptrs.push_back(&examples[i]);
    out.push_back(make_batch(ptrs, min_char_width));
  }
  return out;
}

namespace {

const std::vector<std::string> kSubjects = {"man",    "woman",  "boy",     "girl",  "dog",  "cat",
                                            "chef",   "farmer", "doctor",  "pilot", "artist", "nurse"};
const std::vector<std::string> kObjects = {"apple",  "ball",  "book",   "car",    "guitar", "kite",
                                           "letter", "pizza", "boat",   "camera", "bottle", "hat"};
const std::vector<std::pair<std::string, std::string>> kVerbAntonyms = {
    {"buys", "sells"},  {"opens", "closes"}, {"finds", "loses"}, {"lifts", "drops"},
    {"pushes", "pulls"}, {"likes", "hates"}, {"fixes", "breaks"}, {"catches", "throws"}};
const std::vector<std::string> kAdjectives = {"red",   "blue",  "green", "old",    "young",  "small",
                                              "big",   "happy", "tired", "quiet",  "shiny",  "wooden",
                                              "famous", "clever", "busy", "dusty"};
const std::vector<std::string> kPlaces = {"park", "kitchen", "garden", "street", "office", "market"};
const std::array<const char*, 3> kSyntheticLabels = {"entailment", "neutral", "contradiction"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

}  // namespace

std::vector<Example> generate_synthetic(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  Rng rng(derive_seed(seed, hash_string("synthetic")));
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 3;
    const std::string& subj = pick(kSubjects, rng);
    const std::string& obj = pick(kObjects, rng);
    const auto& verbs = pick(kVerbAntonyms, rng);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    const std::string& verb = flip ? verbs.second : verbs.first;
    const std::string& antonym = flip ? verbs.first : verbs.second;
    std::string adj_s = pick(kAdjectives, rng);
    std::string adj_o = pick(kAdjectives, rng);
    while (adj_o == adj_s) adj_o = pick(kAdjectives, rng);
    const bool with_place = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    const std::string& place = pick(kPlaces, rng);
    // Which noun keeps (or receives) the hypothesis modifier.
    const bool keep_subject = std::uniform_int_distribution<int>(0, 1)(rng) == 1;

    Example ex;
    ex.pair_id = "synth-" + std::to_string(i);
    ex.label = label;
    ex.gold_label = kSyntheticLabels[label];
    ex.premise = {"the", adj_s, subj, verb, "the", adj_o, obj};

    std::string hyp_adj = keep_subject ? adj_s : adj_o;
    std::string hyp_verb = verb;
    if (label == 1) {
      do {
        hyp_adj = pick(kAdjectives, rng);
      } while (hyp_adj == adj_s || hyp_adj == adj_o);
    } else if (label == 2) {
      hyp_verb = antonym;
    }
    if (keep_subject)
      ex.hypothesis = {"the", hyp_adj, subj, hyp_verb, "the", obj};
    else
      ex.hypothesis = {"the", subj, hyp_verb, "the", hyp_adj, obj};
    if (with_place) {
      for (auto* s : {&ex.premise, &ex.hypothesis}) s->insert(s->end(), {"in", "the", place});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace cafe
