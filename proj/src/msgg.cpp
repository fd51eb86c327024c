#include "bifusion/msgg.hpp"

#include <algorithm>
#include <cmath>

namespace bifusion {

namespace {

TensorPtr uniform_init(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = make_tensor(std::move(shape), true);
  for (auto& v : t->data) v = rng.uniform(-bound, bound);
  return t;
}

TensorPtr ones_init(Shape shape) {
  auto t = make_tensor(shape, true);
  std::fill(t->data.begin(), t->data.end(), 1.0);
  return t;
}

BnLayer bn_init(std::int64_t dim) {
  BnLayer bn;
  bn.gamma = ones_init({dim});
  bn.beta = make_tensor({dim}, true);
  bn.state.running_mean.assign(static_cast<std::size_t>(dim), 0.0);
  bn.state.running_var.assign(static_cast<std::size_t>(dim), 1.0);
  return bn;
}

TensorPtr one_hot_center_kernels(std::int64_t nodes, std::int64_t window) {
  auto t = make_tensor({nodes, window}, true);
  for (std::int64_t n = 0; n < nodes; ++n) t->data[n * window + window / 2] = 1.0;
  return t;
}

// BN over the channel axis of [B,T,N,C]
TensorPtr bn_channels(Tape* tape, const TensorPtr& x, BnLayer& bn, Mode mode) {
  const Shape original = x->shape;
  const std::int64_t c = original.back();
  auto flat = reshape(tape, x, {x->numel() / c, c});
  auto normed = batch_norm(tape, flat, bn.gamma, bn.beta, bn.state, mode);
  return reshape(tape, normed, original);
}

TensorPtr channels_linear(Tape* tape, const TensorPtr& x, const TensorPtr& w) {
  const Shape original = x->shape;
  const std::int64_t cin = original.back();
  auto flat = reshape(tape, x, {x->numel() / cin, cin});
  auto mixed = matmul(tape, flat, w);
  Shape out_shape = original;
  out_shape.back() = w->shape[1];
  return reshape(tape, mixed, out_shape);
}

}  // namespace

TensorPtr pool_matrix_from_map(const PoolMap& map, std::int64_t n_lo, std::int64_t n_hi) {
  auto m = make_tensor({n_hi, n_lo});
  for (const auto& p : map.pairs) {
    m->data[p.target * n_lo + p.a] += 0.5;
    m->data[p.target * n_lo + p.b] += 0.5;
  }
  return m;
}

TensorPtr semantic_pool(Tape* tape, const TensorPtr& lower, const TensorPtr& current,
                        const TensorPtr& pool_matrix) {
  if (lower->shape.back() != current->shape.back())
    throw DimensionError("semantic_pool: channel mismatch " + shape_str(lower->shape) + " vs " +
                         shape_str(current->shape));
  return add(tape, current, node_matmul(tape, pool_matrix, lower));
}

MsggModel::MsggModel(MsggConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  if (cfg_.temporal_kernel % 2 == 0)
    throw ConfigError("temporal kernel must be odd, got " + std::to_string(cfg_.temporal_kernel));
  graph_ = build_pyramid_graph();

  std::vector<const ScaleGraph*> scales;
  switch (cfg_.pyramid) {
    case PyramidKind::full:
      scales = {&graph_.joints, &graph_.limbs, &graph_.bodyparts};
      break;
    case PyramidKind::joints_limbs:
      scales = {&graph_.joints, &graph_.limbs};
      break;
    case PyramidKind::joints:
      scales = {&graph_.joints};
      break;
    case PyramidKind::joints3:
      scales = {&graph_.joints, &graph_.joints, &graph_.joints};
      break;
  }

  for (std::size_t b = 0; b + 1 < scales.size(); ++b) {
    if (cfg_.pyramid == PyramidKind::joints3) {
      auto eye = make_tensor({kJointCount, kJointCount});
      for (std::int64_t i = 0; i < kJointCount; ++i) eye->data[i * kJointCount + i] = 1.0;
      semp_matrices_.push_back(eye);
    } else {
      const PoolMap& map = b == 0 ? graph_.joints_to_limbs : graph_.limbs_to_bodyparts;
      semp_matrices_.push_back(
          pool_matrix_from_map(map, scales[b]->node_count, scales[b + 1]->node_count));
    }
  }

  for (const ScaleGraph* sg : scales) {
    Branch br;
    br.scale_graph = sg;
    auto labeling = partition_neighbors(*sg, cfg_.partition, &sg->canonical_coords);
    for (auto& base : subset_bases(*sg, labeling, cfg_.self_loops))
      br.bases.push_back(make_tensor({sg->node_count, sg->node_count}, std::move(base)));
    const std::int64_t k = static_cast<std::int64_t>(br.bases.size());

    std::int64_t cin = 3;
    for (std::int64_t blk = 0; blk < cfg_.blocks; ++blk) {
      const std::int64_t cout =
          cfg_.channels[static_cast<std::size_t>(std::min<std::int64_t>(blk / 2, 2))];
      Block block;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        block.wk.push_back(uniform_init({cin, cout}, cin, init_rng));
        block.we.push_back(ones_init({sg->node_count, sg->node_count}));
      }
      block.bn1 = bn_init(cout);
      block.tkernel = one_hot_center_kernels(sg->node_count, cfg_.temporal_kernel);
      block.bn2 = bn_init(cout);
      if (blk > 0 && cin != cout) block.res_proj = uniform_init({cin, cout}, cin, init_rng);
      br.blocks.push_back(std::move(block));
      cin = cout;
    }
    branches_.push_back(std::move(br));
  }

  if (cfg_.num_classes > 0) {
    const std::int64_t dim = embedding_dim();
    head_bn_ = bn_init(dim);
    head_w_ = uniform_init({dim, cfg_.num_classes}, dim, init_rng);
    head_b_ = make_tensor({cfg_.num_classes}, true);
  }
}

TensorPtr graph_spatial_aggregate(Tape* tape, const std::vector<TensorPtr>& bases,
                                  const std::vector<TensorPtr>& edge_importance,
                                  const std::vector<TensorPtr>& channel_maps, const TensorPtr& x) {
  if (bases.empty() || bases.size() != edge_importance.size() ||
      bases.size() != channel_maps.size())
    throw DimensionError("graph_spatial_aggregate: one base, mask, and map per subset");
  if (x->rank() != 4 || x->shape[2] != bases.front()->shape[0])
    throw DimensionError("graph_spatial_aggregate: features " + shape_str(x->shape) +
                         " vs graph of " + std::to_string(bases.front()->shape[0]) + " nodes");
  const std::int64_t n = bases.front()->shape[0];
  TensorPtr acc;
  for (std::size_t k = 0; k < bases.size(); ++k) {
    auto masked = mul(tape, bases[k], edge_importance[k]);
    auto degree = add_scalar(tape, sum_axis(tape, masked, 1), 1e-6);
    auto inv_root = pow_scalar(tape, degree, -0.5);
    auto outer = matmul(tape, reshape(tape, inv_root, {n, 1}), reshape(tape, inv_root, {1, n}));
    auto normalized = mul(tape, masked, outer);
    auto mixed = node_matmul(tape, normalized, x);
    auto projected = channels_linear(tape, mixed, channel_maps[k]);
    acc = acc ? add(tape, acc, projected) : projected;
  }
  return acc;
}

TensorPtr MsggModel::spatial_aggregate(Tape* tape, const Branch& br, Block& blk,
                                       const TensorPtr& x) {
  return graph_spatial_aggregate(tape, br.bases, blk.we, blk.wk, x);
}

TensorPtr MsggModel::block_forward(Tape* tape, Branch& br, std::int64_t block_index,
                                   const TensorPtr& x, Mode mode) {
  Block& blk = br.blocks[static_cast<std::size_t>(block_index)];
  auto y = spatial_aggregate(tape, br, blk, x);
  y = relu(tape, bn_channels(tape, y, blk.bn1, mode));
  y = temporal_conv(tape, y, blk.tkernel);
  y = relu(tape, bn_channels(tape, y, blk.bn2, mode));
  if (block_index > 0) {
    auto res = blk.res_proj ? channels_linear(tape, x, blk.res_proj) : x;
    y = add(tape, y, res);
  }
  return y;
}

TensorPtr MsggModel::run_block(Tape* tape, std::int64_t branch, std::int64_t block,
                               const TensorPtr& x, Mode mode) {
  if (branch < 0 || branch >= branch_count() || block < 0 || block >= cfg_.blocks)
    throw IndexError("run_block: branch " + std::to_string(branch) + ", block " +
                     std::to_string(block));
  return block_forward(tape, branches_[static_cast<std::size_t>(branch)], block, x, mode);
}

MsggOutput MsggModel::forward(Tape* tape, const TensorPtr& kp, Mode mode) {
  if (kp->rank() != 4 || kp->shape[2] != kJointCount || kp->shape[3] != 3)
    throw DimensionError("msgg: keypoints must be [B,T,12,3], got " + shape_str(kp->shape));
  if (kp->shape[1] < cfg_.temporal_kernel)
    throw InputLengthError("msgg: sequence of " + std::to_string(kp->shape[1]) +
                           " frames is shorter than the temporal kernel " +
                           std::to_string(cfg_.temporal_kernel));

  // branch inputs: successive pooled views of the keypoints
  std::vector<TensorPtr> state;
  state.push_back(kp);
  for (std::size_t b = 1; b < branches_.size(); ++b)
    state.push_back(node_matmul(tape, semp_matrices_[b - 1], state[b - 1]));

  for (std::int64_t blk = 0; blk < cfg_.blocks; ++blk) {
    for (std::size_t b = 0; b < branches_.size(); ++b)
      state[b] = block_forward(tape, branches_[b], blk, state[b], mode);
    if (cfg_.semp_enabled)
      for (std::size_t b = 1; b < branches_.size(); ++b)
        state[b] = semantic_pool(tape, state[b - 1], state[b], semp_matrices_[b - 1]);
  }

  MsggOutput out;
  for (auto& s : state) {
    auto over_nodes = pool(tape, s, 2, PoolKind::mean);
    out.branch_embeddings.push_back(pool(tape, over_nodes, 1, PoolKind::mean));
  }
  if (cfg_.num_classes > 0) {
    auto normed = batch_norm(tape, out.branch_embeddings.back(), head_bn_.gamma, head_bn_.beta,
                             head_bn_.state, mode);
    out.logits = add_row_bias(tape, matmul(tape, normed, head_w_), head_b_);
  }
  return out;
}

std::vector<StateItem> MsggModel::state_items() {
  std::vector<StateItem> items;
  auto add_param = [&](const std::string& name, const TensorPtr& t, bool exempt = false) {
    items.push_back({name, t->shape, &t->data, true, exempt});
  };
  auto add_bn = [&](const std::string& prefix, BnLayer& bn) {
    add_param(prefix + ".gamma", bn.gamma, true);
    add_param(prefix + ".beta", bn.beta, true);
    const auto dim = static_cast<std::int64_t>(bn.state.running_mean.size());
    items.push_back({prefix + ".rmean", {dim}, &bn.state.running_mean, false, false});
    items.push_back({prefix + ".rvar", {dim}, &bn.state.running_var, false, false});
  };
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto& br = branches_[b];
    for (std::size_t blk = 0; blk < br.blocks.size(); ++blk) {
      const std::string prefix =
          "branch" + std::to_string(b) + ".block" + std::to_string(blk);
      auto& block = br.blocks[blk];
      for (std::size_t k = 0; k < block.wk.size(); ++k) {
        add_param(prefix + ".wk" + std::to_string(k), block.wk[k]);
        add_param(prefix + ".we" + std::to_string(k), block.we[k], true);
      }
      add_bn(prefix + ".bn1", block.bn1);
      add_param(prefix + ".tkernel", block.tkernel);
      add_bn(prefix + ".bn2", block.bn2);
      if (block.res_proj) add_param(prefix + ".res", block.res_proj);
    }
  }
  if (cfg_.num_classes > 0) {
    add_bn("head.bn", head_bn_);
    add_param("head.fc.w", head_w_);
    add_param("head.fc.b", head_b_);
  }
  return items;
}

std::vector<ParamRef> MsggModel::trainable_params() {
  std::vector<ParamRef> out;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto& br = branches_[b];
    for (std::size_t blk = 0; blk < br.blocks.size(); ++blk) {
      const std::string prefix = "branch" + std::to_string(b) + ".block" + std::to_string(blk);
      auto& block = br.blocks[blk];
      for (std::size_t k = 0; k < block.wk.size(); ++k) {
        out.push_back({prefix + ".wk" + std::to_string(k), block.wk[k], false});
        out.push_back({prefix + ".we" + std::to_string(k), block.we[k], true});
      }
      out.push_back({prefix + ".bn1.gamma", block.bn1.gamma, true});
      out.push_back({prefix + ".bn1.beta", block.bn1.beta, true});
      out.push_back({prefix + ".tkernel", block.tkernel, false});
      out.push_back({prefix + ".bn2.gamma", block.bn2.gamma, true});
      out.push_back({prefix + ".bn2.beta", block.bn2.beta, true});
      if (block.res_proj) out.push_back({prefix + ".res", block.res_proj, false});
    }
  }
  if (cfg_.num_classes > 0) {
    out.push_back({"head.bn.gamma", head_bn_.gamma, true});
    out.push_back({"head.bn.beta", head_bn_.beta, true});
    out.push_back({"head.fc.w", head_w_, false});
    out.push_back({"head.fc.b", head_b_, false});
  }
  return out;
}

}  // namespace bifusion
