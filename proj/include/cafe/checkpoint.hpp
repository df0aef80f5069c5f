#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cafe/model.hpp"
#include "cafe/train.hpp"

namespace cafe {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, little endian:
//   "CAFE1" | u32 version | u32 n + text (config then "meta.key = value" lines)
//   u32 records | per record: u32 n + name, u32 rank, u32 dims[rank], f32 values
// Optimizer moments are stored as records named "adam/m/<param>", "adam/v/<param>".
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> meta;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

void save_checkpoint(const Model& model, const std::string& path, const TrainState* state = nullptr);
Checkpoint read_checkpoint(const std::string& path);

// Validates every record against the model before writing anything; on
// error the model is untouched and the first mismatching parameter is named.
void load_parameters(Model& model, const Checkpoint& ckpt);
// Optimizer and loop counters saved with a TrainState.
TrainState load_train_state(const Model& model, const Checkpoint& ckpt);

// Rebuilds the model from the stored config, vocabulary sizes and frozen
// embeddings, then loads every parameter.
Model load_checkpoint(const std::string& path);

}  // namespace cafe
