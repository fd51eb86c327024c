#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bifusion/tensor.hpp"

namespace bifusion {

// One named piece of model state. Parameters point at their tensor's storage;
// batch-norm running statistics are non-trainable items in the same list.
struct StateItem {
  std::string name;
  Shape shape;
  std::vector<double>* data = nullptr;
  bool trainable = true;
  bool decay_exempt = false;
};

// Trainable parameter handle for the optimizer.
struct ParamRef {
  std::string name;
  TensorPtr tensor;
  bool decay_exempt = false;
};

// Container: magic (4 bytes), u32 version, u32 entry count, then a manifest of
// (name, shape, offset) records followed by raw little-endian f64 blobs.
// Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<StateItem>& items);

// Fills every item from the file; a missing name or shape mismatch is a
// LoadError. Entries in the file that the model does not own are ignored.
void load_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<StateItem>& items);

std::string checkpoint_magic(const std::string& path);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};
std::vector<CheckpointEntry> read_checkpoint(const std::string& path,
                                             std::string* magic_out = nullptr);

}  // namespace bifusion
