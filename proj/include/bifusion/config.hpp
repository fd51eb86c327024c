#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bifusion/graph.hpp"

namespace bifusion {

enum class PyramidKind { full, joints_limbs, joints, joints3 };
std::string to_string(PyramidKind p);
PyramidKind pyramid_from_string(const std::string& name);

// Flat key = value configuration shared by every subcommand. Unknown keys are
// rejected; dump() emits the fully resolved state.
struct CliConfig {
  // dataset generation
  std::int64_t ids = 20;
  std::int64_t frames = 30;
  std::int64_t train_ids = 0;  // 0 = 60% of ids
  std::uint64_t seed = 0;

  // skeleton network
  std::array<std::int64_t, 3> channels{16, 32, 64};
  std::int64_t temporal_kernel = 9;
  Partition partition = Partition::gait_temporal;
  bool semp = true;
  PyramidKind pyramid = PyramidKind::full;
  SelfLoopMode self_loops = SelfLoopMode::all_subsets;
  bool normalize_input = true;

  // silhouette network
  std::int64_t parts = 16;
  std::int64_t micro_window = 3;

  // fusion
  std::int64_t compact_dim = 32;
  double compact_dropout = 0.3;
  std::int64_t fused_dim = 128;

  // losses / optimizer
  double margin = 0.2;
  std::array<double, 3> loss_weights{3.0, 2.0, 1.0};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::string sil_tp_source = "fused";  // fused | raw

  // batches
  std::int64_t batch_p = 4;
  std::int64_t batch_k = 4;
  std::int64_t batch_t = 30;

  // schedules
  double pretrain_lr = 0.1;
  std::int64_t pretrain_iters = 4000;
  std::int64_t pretrain_milestone_every = 1000;
  std::int64_t pretrain_milestones = 3;
  double global_lr_pretrained = 1e-4;
  double global_lr_new = 0.1;
  std::int64_t global_iters = 2000;
  std::int64_t global_milestone_every = 400;
  std::int64_t global_milestones = 4;

  // evaluation
  std::int64_t rank_k = 1;

  // runtime
  std::int64_t threads = 1;
  bool deterministic = false;

  // first `train_ids` identities train; default is the first 60%
  std::int64_t effective_train_ids(std::int64_t dataset_ids) const {
    std::int64_t t = train_ids > 0 ? train_ids : (dataset_ids * 6 + 5) / 10;
    if (t < 1) t = 1;
    return t < dataset_ids ? t : dataset_ids;
  }
};

struct ConfigKeyDoc {
  std::string key;
  std::string help;
};

// every key, in stable order, with one-line help
const std::vector<ConfigKeyDoc>& config_key_docs();

// throws ConfigError on unknown keys or malformed values
void apply_config_kv(CliConfig& cfg, const std::string& key, const std::string& value);

// `key = value` lines; '#' comments; blank lines ignored
void load_config_file(CliConfig& cfg, const std::string& path);

// fully resolved `key = value` text in the stable key order
std::string dump_config(const CliConfig& cfg);

}  // namespace bifusion
