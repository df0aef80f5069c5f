#include "cafe/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cafe {

namespace {

constexpr char kMagic[5] = {'C', 'A', 'F', 'E', '1'};
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n)
      throw CheckpointError("truncated checkpoint: " + std::string(what) + " at byte " + std::to_string(pos_) +
                            " needs " + std::to_string(n) + " bytes, " + std::to_string(buf_.size() - pos_) +
                            " remain");
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

void add_record(Writer& w, const std::string& name, const Tensor& t) {
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f32(static_cast<float>(v));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor to_tensor(const CheckpointRecord& r) {
  std::vector<double> values(r.values.begin(), r.values.end());
  return Tensor(r.shape, std::move(values));
}

const std::string& meta_at(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw CheckpointError("checkpoint is missing meta." + key);
  return it->second;
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void save_checkpoint(const Model& model, const std::string& path, const TrainState* state) {
  const ParameterStore& store = model.params();
  std::string text = model.config().to_text();
  std::map<std::string, std::string> meta;
  meta["vocab.words"] = std::to_string(model.vocab_sizes().words);
  meta["vocab.chars"] = std::to_string(model.vocab_sizes().chars);
  meta["vocab.pos"] = std::to_string(model.vocab_sizes().pos);
  std::size_t count = store.size();
  if (state) {
    meta["adam.step"] = std::to_string(state->adam.step);
    meta["adam.learning_rate"] = fmt_double(state->adam.learning_rate);
    meta["train.epoch"] = std::to_string(state->epoch);
    meta["train.best_dev_acc"] = fmt_double(state->best_dev_acc);
    meta["train.best_epoch"] = std::to_string(state->best_epoch);
    meta["train.bad_epochs"] = std::to_string(state->bad_epochs);
    for (const auto& p : store) {
      if (!p.trainable) continue;
      count += 2;
      if (!state->best_params.empty()) ++count;
    }
  }
  for (const auto& [k, v] : meta) text += "meta." + k + " = " + v + "\n";

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& p : store) add_record(w, p.name, p.value);
  if (state) {
    for (ParamId id = 0; id < store.size(); ++id) {
      if (!store[id].trainable) continue;
      add_record(w, "adam/m/" + store[id].name, state->adam.m.at(id));
      add_record(w, "adam/v/" + store[id].name, state->adam.v.at(id));
      if (!state->best_params.empty()) add_record(w, "best/" + store[id].name, state->best_params.at(id));
    }
  }
  // Write to a sibling file and rename, so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError("write failed for checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.remaining() < sizeof kMagic || r.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic))
    throw CheckpointError(path + " is not a CAFE1 checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const std::string text = r.bytes(r.u32("text length"), "config text");

  Checkpoint ckpt;
  std::string config_text, line;
  std::istringstream lines(text);
  while (std::getline(lines, line)) {
    if (line.rfind("meta.", 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw CheckpointError("malformed meta line: " + line);
      ckpt.meta[line.substr(5, eq - 5)] = line.substr(eq + 3);
    } else {
      config_text += line + "\n";
    }
  }
  try {
    ckpt.config = ModelConfig::from_text(config_text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const std::uint32_t name_len = r.u32("record name length");
    if (name_len == 0 || name_len > kMaxName) throw CheckpointError("record " + std::to_string(i) + ": bad name length");
    rec.name = r.bytes(name_len, "record name");
    const std::uint32_t rank = r.u32("record rank");
    if (rank > kMaxRank) throw CheckpointError("record " + rec.name + ": rank " + std::to_string(rank) + " too large");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("record dims");
      if (dim == 0) throw CheckpointError("record " + rec.name + ": zero extent");
      rec.shape.push_back(dim);
      numel *= dim;
      if (numel > r.remaining() / 4 + 1) r.need(numel * 4, "record values");
    }
    r.need(numel * 4, "record values");
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.f32("record values");
    ckpt.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0)
    throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

void load_parameters(Model& model, const Checkpoint& ckpt) {
  ParameterStore& store = model.params();
  std::vector<const CheckpointRecord*> matched(store.size(), nullptr);
  for (ParamId id = 0; id < store.size(); ++id) {
    const Parameter& p = store[id];
    const CheckpointRecord* rec = ckpt.find(p.name);
    if (!rec) throw CheckpointError("parameter " + p.name + " is missing from the checkpoint");
    if (rec->shape != p.value.shape())
      throw CheckpointError("parameter " + p.name + ": checkpoint shape " + shape_str(rec->shape) +
                            " does not match model shape " + shape_str(p.value.shape()));
    matched[id] = rec;
  }
  for (const auto& rec : ckpt.records) {
    if (rec.name.rfind("adam/", 0) == 0 || rec.name.rfind("best/", 0) == 0) continue;
    if (!store.find(rec.name)) throw CheckpointError("checkpoint parameter " + rec.name + " does not exist in the model");
  }
  for (ParamId id = 0; id < store.size(); ++id) store[id].value = to_tensor(*matched[id]);
}

TrainState load_train_state(const Model& model, const Checkpoint& ckpt) {
  const ParameterStore& store = model.params();
  TrainState st;
  st.adam = AdamState::create(store, std::stod(meta_at(ckpt, "adam.learning_rate")));
  st.adam.step = std::stoull(meta_at(ckpt, "adam.step"));
  st.epoch = std::stoull(meta_at(ckpt, "train.epoch"));
  st.best_dev_acc = std::stod(meta_at(ckpt, "train.best_dev_acc"));
  st.best_epoch = std::stoull(meta_at(ckpt, "train.best_epoch"));
  st.bad_epochs = std::stoull(meta_at(ckpt, "train.bad_epochs"));
  bool have_best = false;
  for (ParamId id = 0; id < store.size(); ++id) {
    if (!store[id].trainable) continue;
    const std::string& name = store[id].name;
    for (auto* slot : {&st.adam.m[id], &st.adam.v[id]}) {
      const std::string key = (slot == &st.adam.m[id] ? "adam/m/" : "adam/v/") + name;
      const CheckpointRecord* rec = ckpt.find(key);
      if (!rec) throw CheckpointError("optimizer state " + key + " is missing from the checkpoint");
      if (rec->shape != slot->shape()) throw CheckpointError("optimizer state " + key + ": shape mismatch");
      *slot = to_tensor(*rec);
    }
    if (ckpt.find("best/" + name)) have_best = true;
  }
  if (have_best) {
    for (const auto& p : store) {
      if (!p.trainable) {
        st.best_params.emplace_back();
        continue;
      }
      const CheckpointRecord* rec = ckpt.find("best/" + p.name);
      if (!rec || rec->shape != p.value.shape())
        throw CheckpointError("best-parameter snapshot for " + p.name + " is missing or misshapen");
      st.best_params.push_back(to_tensor(*rec));
    }
  }
  return st;
}

Model load_checkpoint(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  VocabSizes sizes;
  sizes.words = std::stoull(meta_at(ckpt, "vocab.words"));
  sizes.chars = std::stoull(meta_at(ckpt, "vocab.chars"));
  sizes.pos = std::stoull(meta_at(ckpt, "vocab.pos"));
  const CheckpointRecord* words = ckpt.find("encoder/word_embedding");
  if (!words) throw CheckpointError("checkpoint has no encoder/word_embedding record");
  Model model(ckpt.config, sizes, to_tensor(*words));
  load_parameters(model, ckpt);
  return model;
}

}  // namespace cafe
