#include "bifusion/silhouette.hpp"

#include <cmath>

namespace bifusion {

namespace {

TensorPtr conv_init(Shape shape, Rng& rng) {
  const std::int64_t fan_in = shape[1] * shape[2] * shape[3];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = make_tensor(std::move(shape), true);
  for (auto& v : t->data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

SilhouetteModel::SilhouetteModel(SilhouetteEncoderConfig cfg, Rng& init_rng) : cfg_(cfg) {
  if (cfg_.micro_window % 2 == 0)
    throw ConfigError("micro-motion window must be odd, got " + std::to_string(cfg_.micro_window));
  if (cfg_.parts < 1 || 16 % cfg_.parts != 0)
    throw ConfigError("parts must divide the 16 feature rows, got " + std::to_string(cfg_.parts));
  conv1_w_ = conv_init({32, 1, 3, 3}, init_rng);
  conv1_b_ = make_tensor({32}, true);
  conv2_w_ = conv_init({64, 32, 3, 3}, init_rng);
  conv2_b_ = make_tensor({64}, true);
  conv3_w_ = conv_init({128, 64, 3, 3}, init_rng);
  conv3_b_ = make_tensor({128}, true);
  micro_w_ = make_tensor({cfg_.parts, cfg_.micro_window}, true);
  for (std::int64_t p = 0; p < cfg_.parts; ++p)
    micro_w_->data[p * cfg_.micro_window + cfg_.micro_window / 2] = 1.0;  // identity start
  micro_b_ = make_tensor({cfg_.parts}, true);
}

TensorPtr SilhouetteModel::encode_frames(Tape* tape, const TensorPtr& frames) const {
  if (frames->rank() != 4 || frames->shape[1] != 1 ||
      frames->shape[2] != SilhouetteEncoderConfig::kMaskSize ||
      frames->shape[3] != SilhouetteEncoderConfig::kMaskSize)
    throw DimensionError("encode_frames: expected [M,1,64,64], got " + shape_str(frames->shape));
  auto x = relu(tape, add_channel_bias(tape, conv2d(tape, frames, conv1_w_, 1, 1), conv1_b_));
  x = maxpool2x2(tape, x);
  x = relu(tape, add_channel_bias(tape, conv2d(tape, x, conv2_w_, 1, 1), conv2_b_));
  x = maxpool2x2(tape, x);
  x = relu(tape, add_channel_bias(tape, conv2d(tape, x, conv3_w_, 1, 1), conv3_b_));
  return x;
}

TensorPtr SilhouetteModel::frame_parts(Tape* tape, const TensorPtr& frames, std::int64_t batch,
                                       std::int64_t t) const {
  auto fmaps = encode_frames(tape, frames);
  auto parts = split_pool_parts(tape, fmaps, cfg_.parts);  // [B*T, parts, 128]
  return reshape(tape, parts, {batch, t, cfg_.parts, SilhouetteEncoderConfig::kFeatureDim});
}

TensorPtr SilhouetteModel::aggregate_parts(Tape* tape, const TensorPtr& parts) const {
  auto motion = temporal_conv(tape, parts, micro_w_);
  motion = relu(tape, add_node_bias(tape, motion, micro_b_));
  return pool(tape, motion, 1, PoolKind::max);  // max over frames -> [B, parts, 128]
}

TensorPtr SilhouetteModel::forward(Tape* tape, const TensorPtr& frames, std::int64_t batch,
                                   std::int64_t t) const {
  if (t < 3)
    throw InputLengthError("silhouette encoder needs at least 3 frames, got " + std::to_string(t));
  return aggregate_parts(tape, frame_parts(tape, frames, batch, t));
}

std::vector<StateItem> SilhouetteModel::state_items() {
  std::vector<StateItem> items;
  auto add_param = [&](const std::string& name, const TensorPtr& t) {
    items.push_back({name, t->shape, &t->data, true, false});
  };
  add_param("conv1.w", conv1_w_);
  add_param("conv1.b", conv1_b_);
  add_param("conv2.w", conv2_w_);
  add_param("conv2.b", conv2_b_);
  add_param("conv3.w", conv3_w_);
  add_param("conv3.b", conv3_b_);
  add_param("micro.w", micro_w_);
  add_param("micro.b", micro_b_);
  return items;
}

SilhouetteModel SilhouetteModel::clone_detached() const {
  Rng throwaway(0);
  SilhouetteModel copy(cfg_, throwaway);
  auto clone = [](const TensorPtr& src) {
    auto t = make_tensor(src->shape, src->data, true);
    return t;
  };
  copy.conv1_w_ = clone(conv1_w_);
  copy.conv1_b_ = clone(conv1_b_);
  copy.conv2_w_ = clone(conv2_w_);
  copy.conv2_b_ = clone(conv2_b_);
  copy.conv3_w_ = clone(conv3_w_);
  copy.conv3_b_ = clone(conv3_b_);
  copy.micro_w_ = clone(micro_w_);
  copy.micro_b_ = clone(micro_b_);
  return copy;
}

std::vector<ParamRef> SilhouetteModel::trainable_params() {
  return {
      {"conv1.w", conv1_w_, false}, {"conv1.b", conv1_b_, false},
      {"conv2.w", conv2_w_, false}, {"conv2.b", conv2_b_, false},
      {"conv3.w", conv3_w_, false}, {"conv3.b", conv3_b_, false},
      {"micro.w", micro_w_, false}, {"micro.b", micro_b_, false},
  };
}

}  // namespace bifusion
