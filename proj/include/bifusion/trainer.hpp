#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bifusion/config.hpp"
#include "bifusion/dataset.hpp"
#include "bifusion/fusion.hpp"
#include "bifusion/sampler.hpp"

namespace bifusion {

struct TrainHooks {
  bool fixed_batch = false;  // sample one batch up front and reuse it
  double stop_below = -1.0;  // stop early once total loss falls below this
};

struct TrainStats {
  std::int64_t iterations = 0;   // iterations actually run
  double final_loss = 0.0;
  std::int64_t first_below = -1;  // 1-based iteration where loss < stop_below
};

// the first train_ids (or 60%) of the dataset's identities, ascending
std::vector<std::int64_t> training_identities(const DatasetIndex& data, const CliConfig& cfg);

TrainStats train_msgg_pretrain(const DatasetIndex& data, const CliConfig& cfg,
                               const std::string& out_checkpoint, const std::string& log_path,
                               const TrainHooks& hooks = {});

TrainStats train_sil_pretrain(const DatasetIndex& data, const CliConfig& cfg,
                              const std::string& out_checkpoint, const std::string& log_path,
                              const TrainHooks& hooks = {});

// two parameter groups: pretrained skeleton/silhouette backbones at
// global_lr_pretrained, fusion/compact/heads at global_lr_new
TrainStats train_global(const DatasetIndex& data, const CliConfig& cfg,
                        const std::string& msgg_checkpoint, const std::string& sil_checkpoint,
                        const std::string& out_checkpoint, const std::string& log_path,
                        const TrainHooks& hooks = {});

// Per-sequence encoder forward on worker tapes. The returned leaf holds the
// gathered [B,T,parts,128] part vectors; backward() propagates leaf gradients
// through each sequence's tape and reduces parameter gradients in sequence
// order, so results are bit-identical for any thread count.
struct EncodedBatch {
  TensorPtr leaf;
  std::function<void()> backward;
};
EncodedBatch encode_frames_parallel(SilhouetteModel& model,
                                    const std::vector<TensorPtr>& frames, std::int64_t t,
                                    std::int64_t threads);

}  // namespace bifusion
