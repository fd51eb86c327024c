#pragma once

#include <cstdint>
#include <vector>

#include "bifusion/checkpoint.hpp"
#include "bifusion/ops.hpp"
#include "bifusion/rng.hpp"

namespace bifusion {

struct SilhouetteEncoderConfig {
  std::int64_t parts = 16;
  std::int64_t micro_window = 3;  // odd
  static constexpr std::int64_t kFeatureDim = 128;
  static constexpr std::int64_t kMaskSize = 64;
};

// Part-based silhouette encoder: three 3x3 conv+relu stages (1->32->64->128)
// with 2x2 max pooling after the first two, horizontal part pooling,
// per-part micro-motion temporal convolution, and temporal max pooling.
class SilhouetteModel {
 public:
  SilhouetteModel(SilhouetteEncoderConfig cfg, Rng& init_rng);

  // frames [M,1,64,64] -> feature maps [M,128,16,16]
  TensorPtr encode_frames(Tape* tape, const TensorPtr& frames) const;

  // frames [B*T,1,64,64] -> per-frame part vectors [B,T,parts,128]
  TensorPtr frame_parts(Tape* tape, const TensorPtr& frames, std::int64_t batch,
                        std::int64_t t) const;

  // micro-motion and temporal max: [B,T,parts,128] -> [B,parts,128]
  TensorPtr aggregate_parts(Tape* tape, const TensorPtr& parts) const;

  // full pipeline; requires T >= 3
  TensorPtr forward(Tape* tape, const TensorPtr& frames, std::int64_t batch, std::int64_t t) const;

  std::vector<StateItem> state_items();
  std::vector<ParamRef> trainable_params();

  // fresh parameter tensors with the same values and zeroed gradients; used by
  // per-sequence worker tapes so gradient accumulation stays race-free
  SilhouetteModel clone_detached() const;

  const SilhouetteEncoderConfig& config() const { return cfg_; }

 private:
  SilhouetteEncoderConfig cfg_;
  TensorPtr conv1_w_, conv1_b_;  // [32,1,3,3], [32]
  TensorPtr conv2_w_, conv2_b_;  // [64,32,3,3], [64]
  TensorPtr conv3_w_, conv3_b_;  // [128,64,3,3], [128]
  TensorPtr micro_w_, micro_b_;  // [parts, window], [parts]
};

}  // namespace bifusion
