#pragma once

#include <cstdint>
#include <vector>

#include "bifusion/dataset.hpp"
#include "bifusion/rng.hpp"

namespace bifusion {

struct BatchSpec {
  std::int64_t p = 4;  // identities per batch
  std::int64_t k = 4;  // sequences per identity
  std::int64_t t = 30;  // frames per sequence
};

struct BatchItem {
  const SequenceEntry* entry = nullptr;
  std::int64_t label = 0;  // dense index into train_ids
  std::int64_t start = 0;  // window start frame
};

// P identities without replacement, K sequences each (with replacement when an
// identity has fewer), random contiguous T-frame windows that wrap when the
// sequence is shorter than T.
std::vector<BatchItem> sample_batch(const DatasetIndex& index,
                                    const std::vector<std::int64_t>& train_ids,
                                    const BatchSpec& spec, Rng& rng);

// frame indices of the window; wraps with period seq_len when seq_len < t
std::vector<std::int64_t> window_frames(std::int64_t seq_len, std::int64_t start, std::int64_t t);

}  // namespace bifusion
