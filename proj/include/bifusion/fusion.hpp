#pragma once

#include <cstdint>
#include <vector>

#include "bifusion/checkpoint.hpp"
#include "bifusion/msgg.hpp"
#include "bifusion/ops.hpp"
#include "bifusion/silhouette.hpp"

namespace bifusion {

// batch norm -> dropout -> linear reduction of the deepest skeleton embedding
class CompactBlock {
 public:
  CompactBlock(std::int64_t in_dim, std::int64_t out_dim, double dropout_rate, Rng& init_rng);

  TensorPtr forward(Tape* tape, const TensorPtr& embedding, Mode mode, Rng& dropout_rng);

  std::int64_t out_dim() const { return fc_w_->shape[1]; }
  double dropout_rate() const { return dropout_rate_; }

  std::vector<StateItem> state_items();
  std::vector<ParamRef> trainable_params();

 private:
  BnLayer bn_;
  double dropout_rate_;
  TensorPtr fc_w_, fc_b_;
};

// N separate fully connected maps, one per part: fused^n = FC_n([s^n, k])
class FusionHead {
 public:
  FusionHead(std::int64_t parts, std::int64_t part_dim, std::int64_t compact_dim,
             std::int64_t out_dim, Rng& init_rng);

  // parts [B, N, part_dim], compact [B, compact_dim] -> N tensors [B, out_dim]
  std::vector<TensorPtr> forward(Tape* tape, const TensorPtr& parts,
                                 const TensorPtr& compact) const;

  std::int64_t parts() const { return static_cast<std::int64_t>(w_.size()); }
  std::int64_t out_dim() const { return w_.front()->shape[1]; }

  std::vector<StateItem> state_items();
  std::vector<ParamRef> trainable_params();

 private:
  std::vector<TensorPtr> w_;  // each [part_dim + compact_dim, out_dim]
  std::vector<TensorPtr> b_;  // each [out_dim]
};

// weighted branch triplet losses plus cross entropy; weights are taken from
// the deep end of `weights` when fewer than three branches exist
TensorPtr msgg_pretrain_loss(Tape* tape, const MsggOutput& out,
                             const std::vector<std::int64_t>& labels, double margin,
                             const std::array<double, 3>& weights);

struct GlobalLossParts {
  TensorPtr total;
  TensorPtr sil_tp;  // mean over parts of the per-part triplet
  TensorPtr ske_tp;  // triplet on the deepest branch embedding
  TensorPtr ske_ce;  // cross entropy on the classifier logits
};

GlobalLossParts global_loss(Tape* tape, const std::vector<TensorPtr>& part_features,
                            const TensorPtr& deep_embedding, const TensorPtr& logits,
                            const std::vector<std::int64_t>& labels, double margin);

// weighted-branch decomposition used by the pretraining telemetry
struct PretrainLossParts {
  TensorPtr total;
  TensorPtr deep_tp;  // unweighted triplet on the deepest branch
  TensorPtr ce;       // null when the model is headless
};
PretrainLossParts msgg_pretrain_loss_parts(Tape* tape, const MsggOutput& out,
                                           const std::vector<std::int64_t>& labels, double margin,
                                           const std::array<double, 3>& weights);

// the whole bimodal network: skeleton branch, silhouette branch, compact
// reduction, and the per-part fusion maps
struct BiFusionModel {
  MsggModel msgg;
  SilhouetteModel sil;
  CompactBlock compact;
  FusionHead fuse;

  BiFusionModel(const CliConfig& cfg, std::int64_t num_classes, Rng& init_rng);

  // items namespaced msgg./sil./compact./fuse.
  std::vector<StateItem> state_items();
};

std::vector<StateItem> with_prefix(const std::string& prefix, std::vector<StateItem> items);

}  // namespace bifusion
