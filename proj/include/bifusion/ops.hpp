#pragma once

#include "bifusion/rng.hpp"
#include "bifusion/tensor.hpp"

namespace bifusion {

enum class Mode { train, eval };
enum class PoolKind { max, mean };

// ---- elementwise and shape ----
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add_scalar(Tape* tape, const TensorPtr& a, double c);
TensorPtr mul_scalar(Tape* tape, const TensorPtr& a, double c);
TensorPtr pow_scalar(Tape* tape, const TensorPtr& a, double p);
TensorPtr relu(Tape* tape, const TensorPtr& a);
TensorPtr reshape(Tape* tape, const TensorPtr& a, Shape shape);
// values of a precede values of b along the last axis
TensorPtr concat(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr pool(Tape* tape, const TensorPtr& a, std::int64_t axis, PoolKind kind);
TensorPtr sum_axis(Tape* tape, const TensorPtr& a, std::int64_t axis);
TensorPtr sum_all(Tape* tape, const TensorPtr& a);

// ---- linear algebra ----
TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add_row_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias);      // [M,D] + [D]

// ---- convolution kernels ----
// x: [C,H,W] or [M,C,H,W]; kernels: [Co,Ci,kh,kw]; cross-correlation convention
// (kernels are not flipped). Output extents must divide exactly.
TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& kernels,
                 std::int64_t stride, std::int64_t pad);
TensorPtr add_channel_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias);   // [M,C,H,W] + [C]
TensorPtr maxpool2x2(Tape* tape, const TensorPtr& x);
// x: [T,D]; w: [G,D] (per-channel kernels) or [G,1] (shared); G odd
TensorPtr conv1d_time(Tape* tape, const TensorPtr& x, const TensorPtr& w);
TensorPtr conv1d_time(Tape* tape, const TensorPtr& x, const TensorPtr& w, std::int64_t pad);
// x: [B,T,N,C]; w: [N,G]; per-node kernel shared across channels, zero pad G/2
// confined to each sequence
TensorPtr temporal_conv(Tape* tape, const TensorPtr& x, const TensorPtr& w);
// s: [N_out,N_in]; x: [B,T,N_in,C]; out[b,t,i,c] = sum_j s[i,j] x[b,t,j,c]
TensorPtr node_matmul(Tape* tape, const TensorPtr& s, const TensorPtr& x);
TensorPtr add_node_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias);       // [B,T,N,C] + [N]
TensorPtr take_node(Tape* tape, const TensorPtr& x, std::int64_t node);               // [B,N,C] -> [B,C]
// x: [M,C,H,W] -> [M,parts,C]; part p = max over its H/parts rows and all columns
TensorPtr split_pool_parts(Tape* tape, const TensorPtr& x, std::int64_t parts);

// ---- normalization and regularization ----
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// x: [B,D]. Train mode normalizes by batch statistics (population variance)
// and updates running statistics with the given momentum; eval mode uses the
// running statistics.
TensorPtr batch_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, Mode mode,
                     double eps = 1e-5, double momentum = 0.1);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is exactly the identity.
TensorPtr dropout(Tape* tape, const TensorPtr& x, double rate, Mode mode, Rng& rng);

// ---- losses ----
// logits: [B,C]; stabilized by max subtraction; mean over the batch
TensorPtr softmax_cross_entropy(Tape* tape, const TensorPtr& logits,
                                const std::vector<std::int64_t>& labels);
// Batch-all triplet with Euclidean distances; mean over triples with strictly
// positive hinge (0 when none)
TensorPtr batch_all_triplet(Tape* tape, const TensorPtr& embeddings,
                            const std::vector<std::int64_t>& labels, double margin);

}  // namespace bifusion
