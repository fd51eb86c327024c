#include "bifusion/fusion.hpp"

#include <cmath>

namespace bifusion {

namespace {

TensorPtr uniform_init(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = make_tensor(std::move(shape), true);
  for (auto& v : t->data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

CompactBlock::CompactBlock(std::int64_t in_dim, std::int64_t out_dim, double dropout_rate,
                           Rng& init_rng)
    : dropout_rate_(dropout_rate) {
  bn_.gamma = make_tensor({in_dim}, true);
  std::fill(bn_.gamma->data.begin(), bn_.gamma->data.end(), 1.0);
  bn_.beta = make_tensor({in_dim}, true);
  bn_.state.running_mean.assign(static_cast<std::size_t>(in_dim), 0.0);
  bn_.state.running_var.assign(static_cast<std::size_t>(in_dim), 1.0);
  fc_w_ = uniform_init({in_dim, out_dim}, in_dim, init_rng);
  fc_b_ = make_tensor({out_dim}, true);
}

TensorPtr CompactBlock::forward(Tape* tape, const TensorPtr& embedding, Mode mode,
                                Rng& dropout_rng) {
  auto x = batch_norm(tape, embedding, bn_.gamma, bn_.beta, bn_.state, mode);
  x = dropout(tape, x, dropout_rate_, mode, dropout_rng);
  return add_row_bias(tape, matmul(tape, x, fc_w_), fc_b_);
}

std::vector<StateItem> CompactBlock::state_items() {
  std::vector<StateItem> items;
  items.push_back({"bn.gamma", bn_.gamma->shape, &bn_.gamma->data, true, true});
  items.push_back({"bn.beta", bn_.beta->shape, &bn_.beta->data, true, true});
  const auto dim = static_cast<std::int64_t>(bn_.state.running_mean.size());
  items.push_back({"bn.rmean", {dim}, &bn_.state.running_mean, false, false});
  items.push_back({"bn.rvar", {dim}, &bn_.state.running_var, false, false});
  items.push_back({"fc.w", fc_w_->shape, &fc_w_->data, true, false});
  items.push_back({"fc.b", fc_b_->shape, &fc_b_->data, true, false});
  return items;
}

std::vector<ParamRef> CompactBlock::trainable_params() {
  return {{"bn.gamma", bn_.gamma, true},
          {"bn.beta", bn_.beta, true},
          {"fc.w", fc_w_, false},
          {"fc.b", fc_b_, false}};
}

FusionHead::FusionHead(std::int64_t parts, std::int64_t part_dim, std::int64_t compact_dim,
                       std::int64_t out_dim, Rng& init_rng) {
  for (std::int64_t p = 0; p < parts; ++p) {
    w_.push_back(uniform_init({part_dim + compact_dim, out_dim}, part_dim + compact_dim, init_rng));
    b_.push_back(make_tensor({out_dim}, true));
  }
}

std::vector<TensorPtr> FusionHead::forward(Tape* tape, const TensorPtr& parts,
                                           const TensorPtr& compact) const {
  if (parts->rank() != 3 || parts->shape[1] != static_cast<std::int64_t>(w_.size()))
    throw DimensionError("fusion: part features " + shape_str(parts->shape) + " vs " +
                         std::to_string(w_.size()) + " fusion maps");
  if (parts->shape[2] + compact->shape[1] != w_.front()->shape[0])
    throw DimensionError("fusion: concatenated width " +
                         std::to_string(parts->shape[2] + compact->shape[1]) +
                         " vs fusion map input " + std::to_string(w_.front()->shape[0]));
  std::vector<TensorPtr> fused;
  for (std::size_t p = 0; p < w_.size(); ++p) {
    auto s = take_node(tape, parts, static_cast<std::int64_t>(p));
    auto joined = concat(tape, s, compact);
    fused.push_back(add_row_bias(tape, matmul(tape, joined, w_[p]), b_[p]));
  }
  return fused;
}

std::vector<StateItem> FusionHead::state_items() {
  std::vector<StateItem> items;
  for (std::size_t p = 0; p < w_.size(); ++p) {
    items.push_back({"fc" + std::to_string(p) + ".w", w_[p]->shape, &w_[p]->data, true, false});
    items.push_back({"fc" + std::to_string(p) + ".b", b_[p]->shape, &b_[p]->data, true, false});
  }
  return items;
}

std::vector<ParamRef> FusionHead::trainable_params() {
  std::vector<ParamRef> out;
  for (std::size_t p = 0; p < w_.size(); ++p) {
    out.push_back({"fc" + std::to_string(p) + ".w", w_[p], false});
    out.push_back({"fc" + std::to_string(p) + ".b", b_[p], false});
  }
  return out;
}

PretrainLossParts msgg_pretrain_loss_parts(Tape* tape, const MsggOutput& out,
                                           const std::vector<std::int64_t>& labels, double margin,
                                           const std::array<double, 3>& weights) {
  const std::size_t branches = out.branch_embeddings.size();
  PretrainLossParts parts;
  for (std::size_t b = 0; b < branches; ++b) {
    // deepest branch always takes the last weight
    const double w = weights[3 - branches + b];
    auto tp = batch_all_triplet(tape, out.branch_embeddings[b], labels, margin);
    if (b + 1 == branches) parts.deep_tp = tp;
    auto term = mul_scalar(tape, tp, w);
    parts.total = parts.total ? add(tape, parts.total, term) : term;
  }
  if (out.logits) {
    parts.ce = softmax_cross_entropy(tape, out.logits, labels);
    parts.total = parts.total ? add(tape, parts.total, parts.ce) : parts.ce;
  }
  return parts;
}

TensorPtr msgg_pretrain_loss(Tape* tape, const MsggOutput& out,
                             const std::vector<std::int64_t>& labels, double margin,
                             const std::array<double, 3>& weights) {
  return msgg_pretrain_loss_parts(tape, out, labels, margin, weights).total;
}

BiFusionModel::BiFusionModel(const CliConfig& cfg, std::int64_t num_classes, Rng& init_rng)
    : msgg(MsggConfig::from_cli(cfg, num_classes), init_rng),
      sil(SilhouetteEncoderConfig{cfg.parts, cfg.micro_window}, init_rng),
      compact(cfg.channels[2], cfg.compact_dim, cfg.compact_dropout, init_rng),
      fuse(cfg.parts, SilhouetteEncoderConfig::kFeatureDim, cfg.compact_dim, cfg.fused_dim,
           init_rng) {}

std::vector<StateItem> with_prefix(const std::string& prefix, std::vector<StateItem> items) {
  for (auto& it : items) it.name = prefix + it.name;
  return items;
}

std::vector<StateItem> BiFusionModel::state_items() {
  std::vector<StateItem> items;
  for (auto& it : with_prefix("msgg.", msgg.state_items())) items.push_back(it);
  for (auto& it : with_prefix("sil.", sil.state_items())) items.push_back(it);
  for (auto& it : with_prefix("compact.", compact.state_items())) items.push_back(it);
  for (auto& it : with_prefix("fuse.", fuse.state_items())) items.push_back(it);
  return items;
}

GlobalLossParts global_loss(Tape* tape, const std::vector<TensorPtr>& part_features,
                            const TensorPtr& deep_embedding, const TensorPtr& logits,
                            const std::vector<std::int64_t>& labels, double margin) {
  GlobalLossParts parts;
  TensorPtr sil_sum;
  for (const auto& f : part_features) {
    auto term = batch_all_triplet(tape, f, labels, margin);
    sil_sum = sil_sum ? add(tape, sil_sum, term) : term;
  }
  parts.sil_tp =
      mul_scalar(tape, sil_sum, 1.0 / static_cast<double>(part_features.size()));
  parts.ske_tp = batch_all_triplet(tape, deep_embedding, labels, margin);
  parts.ske_ce = softmax_cross_entropy(tape, logits, labels);
  parts.total = add(tape, add(tape, parts.sil_tp, parts.ske_tp), parts.ske_ce);
  return parts;
}

}  // namespace bifusion
