#pragma once

#include <cstdint>
#include <vector>

#include "partner/tensor.hpp"

// Dense kernels with hand-written vector-Jacobian products. Every forward here has a
// matching *_vjp that maps an upstream gradient (shaped like the output) to input gradients.
namespace partner::kernels
{

// ---- linear: x[..., Cin] * W[Cin, Cout] + b[Cout]; pass an empty tensor for no bias.
Tensor linear(const Tensor & x, const Tensor & w, const Tensor & b);

struct LinearGrad
{
  Tensor dx;
  Tensor dw;
  Tensor db;  // empty when the forward had no bias
};
LinearGrad linear_vjp(const Tensor & x, const Tensor & w, bool has_bias, const Tensor & upstream);

// ---- element-wise
Tensor relu(const Tensor & x);
Tensor relu_vjp(const Tensor & x, const Tensor & upstream);
Tensor sigmoid(const Tensor & x);
/// Takes the forward *output* y.
Tensor sigmoid_vjp(const Tensor & y, const Tensor & upstream);

/// Stack of linear -> relu layers; no relu after the last layer.
struct MlpLayer
{
  Tensor w;
  Tensor b;
};
Tensor mlp(const Tensor & x, const std::vector<MlpLayer> & layers);

// ---- conv2d over an [H, W, Cin] map with kernel [kh, kw, Cin, Cout], "same" padding.
// Axis 0 (radial) is zero padded; axis 1 (angular) wraps when `circular` is set.
struct Conv2dSpec
{
  std::size_t stride{1};
  bool circular{true};
};
Tensor conv2d(const Tensor & x, const Tensor & k, const Tensor & b, Conv2dSpec spec);

struct Conv2dGrad
{
  Tensor dx;
  Tensor dk;
  Tensor db;
};
Conv2dGrad conv2d_vjp(
  const Tensor & x, const Tensor & k, bool has_bias, Conv2dSpec spec, const Tensor & upstream);

// ---- softmax along the trailing axis, max-subtracted.
Tensor softmax(const Tensor & x);
/// Takes the forward *output* y.
Tensor softmax_vjp(const Tensor & y, const Tensor & upstream);

// ---- batched multi-head scaled dot-product attention.
// Q[B, m, d], K[B, n, d], V[B, n, d]; key_mask (B*n bytes, 1 = attend) may be empty.
// Each head uses d / n_heads channels and scales logits by 1/sqrt(d / n_heads).
struct AttentionSpec
{
  std::size_t n_heads{1};
};
Tensor attention(
  const Tensor & q, const Tensor & k, const Tensor & v, const std::vector<std::uint8_t> & key_mask,
  AttentionSpec spec);

struct AttentionGrad
{
  Tensor dq;
  Tensor dk;
  Tensor dv;
};
AttentionGrad attention_vjp(
  const Tensor & q, const Tensor & k, const Tensor & v, const std::vector<std::uint8_t> & key_mask,
  AttentionSpec spec, const Tensor & upstream);

/// Unbatched convenience form: Q[m, d], K[n, d], V[n, d].
Tensor scaled_dot_attention(const Tensor & q, const Tensor & k, const Tensor & v, std::size_t n_heads = 1);

// ---- relative positional encoding.
// deltas[B, m, n, P] holds query-minus-key positions; E[B, m, d] is the mean over unmasked keys
// of ReLU(delta * W_pos).
Tensor relpos_encoding(
  const Tensor & deltas, const std::vector<std::uint8_t> & key_mask, const Tensor & w_pos);
Tensor relpos_encoding_vjp(
  const Tensor & deltas, const std::vector<std::uint8_t> & key_mask, const Tensor & w_pos,
  const Tensor & upstream);

/// Pairwise encodings ReLU((p_i - p'_j) W_pos) for p[m, P], p'[n, P]; shape [m, n, d].
Tensor relative_pos_encoding_pairwise(const Tensor & p, const Tensor & p_prime, const Tensor & w_pos);
/// Query-shaped form [m, d]: pairwise encodings averaged uniformly over keys.
Tensor relative_pos_encoding(const Tensor & p, const Tensor & p_prime, const Tensor & w_pos);

// ---- losses. All return a scalar tensor of shape {1}.
inline constexpr double kProbClamp = 1e-6;

struct FocalSpec
{
  double alpha{1.0};
  double gamma{2.0};
};

/// Binary focal loss over probabilities h against a {0,1} target, divided by max(1, #positives)
/// unless `n_pos` is positive, in which case that value is used.
Tensor focal_loss(const Tensor & h, const Tensor & target, FocalSpec spec, double n_pos = 0.0);
Tensor focal_loss_vjp(
  const Tensor & h, const Tensor & target, FocalSpec spec, double n_pos, double upstream);

/// Penalty-reduced focal loss for Gaussian-splat heatmaps: positives are target == 1, negatives
/// are weighted by (1 - target)^beta. Divided by max(1, #positives).
Tensor gaussian_focal_loss(const Tensor & h, const Tensor & target, double gamma = 2.0, double beta = 4.0);
Tensor gaussian_focal_loss_vjp(
  const Tensor & h, const Tensor & target, double gamma, double beta, double upstream);

/// sum_i weight_i * smoothl1(pred_i - target_i); empty weight means all ones.
Tensor smooth_l1(const Tensor & pred, const Tensor & target, const Tensor & weight = {});
Tensor smooth_l1_vjp(
  const Tensor & pred, const Tensor & target, const Tensor & weight, double upstream);

// ---- indexing. x is viewed as [rows, C]; index -1 produces a zero row.
Tensor gather_rows(const Tensor & x, const std::vector<std::int64_t> & index);
Tensor gather_rows_vjp(
  const Shape & x_shape, const std::vector<std::int64_t> & index, const Tensor & upstream);

/// Concatenates along the trailing axis; leading axes must agree.
Tensor concat_last(const Tensor & a, const Tensor & b);

}  // namespace partner::kernels
