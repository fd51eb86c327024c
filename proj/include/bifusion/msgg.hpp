#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "bifusion/checkpoint.hpp"
#include "bifusion/config.hpp"
#include "bifusion/graph.hpp"
#include "bifusion/ops.hpp"
#include "bifusion/rng.hpp"

namespace bifusion {

struct MsggConfig {
  std::array<std::int64_t, 3> channels{16, 32, 64};
  std::int64_t temporal_kernel = 9;  // odd
  std::int64_t blocks = 6;  // the architecture uses 6; tests shrink miniatures
  Partition partition = Partition::gait_temporal;
  bool semp_enabled = true;
  PyramidKind pyramid = PyramidKind::full;
  SelfLoopMode self_loops = SelfLoopMode::all_subsets;
  std::int64_t num_classes = 0;  // 0 disables the classifier head

  static MsggConfig from_cli(const CliConfig& c, std::int64_t num_classes) {
    MsggConfig m;
    m.channels = c.channels;
    m.temporal_kernel = c.temporal_kernel;
    m.partition = c.partition;
    m.semp_enabled = c.semp;
    m.pyramid = c.pyramid;
    m.self_loops = c.self_loops;
    m.num_classes = num_classes;
    return m;
  }
};

struct MsggOutput {
  // post-GAP raw embeddings, shallow branch first, each [B, c3]
  std::vector<TensorPtr> branch_embeddings;
  TensorPtr logits;  // [B, num_classes] from the deepest branch, null when headless
};

struct BnLayer {
  TensorPtr gamma, beta;
  BatchNormState state;
};

// Multi-scale spatial-temporal graph network over the joint pyramid: six
// cross-scale blocks, learnable edge importance, per-node temporal kernels,
// and semantic pooling between branches.
class MsggModel {
 public:
  MsggModel(MsggConfig cfg, Rng& init_rng);

  // kp: [B, T, 12, 3]
  MsggOutput forward(Tape* tape, const TensorPtr& kp, Mode mode);

  // one cross-scale spatial-temporal block of one branch: S-Agg, BN, ReLU,
  // T-Agg, BN, ReLU, plus the residual for every block after the first
  TensorPtr run_block(Tape* tape, std::int64_t branch, std::int64_t block, const TensorPtr& x,
                      Mode mode);

  std::vector<StateItem> state_items();
  std::vector<ParamRef> trainable_params();

  const MsggConfig& config() const { return cfg_; }
  const PyramidGraph& graph() const { return graph_; }
  std::int64_t branch_count() const { return static_cast<std::int64_t>(branches_.size()); }
  std::int64_t embedding_dim() const {
    return cfg_.channels[static_cast<std::size_t>(std::min<std::int64_t>((cfg_.blocks - 1) / 2, 2))];
  }

 private:
  struct Block {
    std::vector<TensorPtr> wk;  // K x [Cin, Cout]
    std::vector<TensorPtr> we;  // K x [N, N], edge importance
    BnLayer bn1, bn2;
    TensorPtr tkernel;   // [N, G]
    TensorPtr res_proj;  // [Cin, Cout] when channels grow, else null
  };
  struct Branch {
    const ScaleGraph* scale_graph;
    std::vector<TensorPtr> bases;  // K x [N, N] constants: subset + self loops
    std::vector<Block> blocks;
  };

  TensorPtr spatial_aggregate(Tape* tape, const Branch& br, Block& blk, const TensorPtr& x);
  TensorPtr block_forward(Tape* tape, Branch& br, std::int64_t block_index, const TensorPtr& x,
                          Mode mode);

  MsggConfig cfg_;
  PyramidGraph graph_;
  std::vector<Branch> branches_;
  std::vector<TensorPtr> semp_matrices_;  // per adjacent branch pair: [N_hi, N_lo]
  BnLayer head_bn_;
  TensorPtr head_w_, head_b_;
};

// message passing from a lower-semantics branch: out = current + mean of the
// mapped node pair, expressed as a dense [N_hi, N_lo] matrix apply
TensorPtr semantic_pool(Tape* tape, const TensorPtr& lower, const TensorPtr& current,
                        const TensorPtr& pool_matrix);
TensorPtr pool_matrix_from_map(const PoolMap& map, std::int64_t n_lo, std::int64_t n_hi);

// Per-subset spatial aggregation: each base (A_k + I) is masked by its edge
// importance, normalized by the live degree of the masked matrix, applied
// along the node axis, and channel-transformed; subsets are summed.
// bases: K x [N,N]; edge_importance: K x [N,N]; channel_maps: K x [Cin,Cout];
// x: [B,T,N,Cin]
TensorPtr graph_spatial_aggregate(Tape* tape, const std::vector<TensorPtr>& bases,
                                  const std::vector<TensorPtr>& edge_importance,
                                  const std::vector<TensorPtr>& channel_maps, const TensorPtr& x);

}  // namespace bifusion
