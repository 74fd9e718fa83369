#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "partner/graph.hpp"
#include "partner/params.hpp"
#include "partner/voxelize.hpp"

// Global representation re-alignment: condense each angular column to N representative
// pixels, re-align them with (shifted) angular window attention, broadcast back per column.
namespace partner::grr
{

struct GrrConfig
{
  std::size_t S{3};
  std::size_t N{4};
  std::size_t window{8};
  std::size_t shift{4};
  std::size_t n_stacks{2};
  std::size_t n_heads{4};

  /// Throws std::invalid_argument when the config does not fit an (R, A) map.
  void validate(std::size_t rows, std::size_t cols, bool periodic) const;
};

/// Query-minus-key position between two pixels of the grid, normalized by (r_max, pi):
/// (dr, da, dx, dy) with dx, dy expressed in the query pixel's azimuth frame, so the result
/// depends only on radial indices and the (wrapped) column difference.
std::array<double, 4> relative_position(
  const PolarGrid & grid, std::size_t iq, std::size_t jq, std::size_t ik, std::size_t jk);

/// (R, A) channel-wise max.
Tensor radial_scores(const FeatureMap & f);

/// Keeps a score iff it equals the max of its S x 1 radial neighborhood (zero padded);
/// suppressed entries become -infinity.
Tensor radial_local_max_suppress(const Tensor & scores, std::size_t s);

/// Per column, N radial indices ordered by descending score: surviving local maxima first,
/// then suppressed positions by their original score. Ties go to the lower index.
/// Result is column-major: index of rank n in column j is at [j * N + n].
std::vector<std::size_t> select_topk(const Tensor & scores, const Tensor & sparse, std::size_t n);

struct RepresentativeSet
{
  std::size_t n_per_col{0};
  std::vector<std::size_t> indices;  // [j * N + n]
  FeatureMap features;               // (N, A, C)
  Tensor positions;                  // (N, A, 4): r, a, x, y of the selected pixel centers
};

RepresentativeSet select_representatives(
  const FeatureMap & f, const PolarGrid & grid, std::size_t s, std::size_t n);

struct AttentionVars
{
  ad::Var wq;
  ad::Var wk;
  ad::Var wv;
  ad::Var wpos;
  ad::Var wo;
  std::size_t n_heads{1};
};

/// Tensor form of one attention block's weights: W_q, W_k, W_v (C x d), W_pos (4 x d),
/// W_o (d x C).
struct AttentionParams
{
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wpos;
  Tensor wo;
  std::size_t n_heads{1};
};

AttentionVars bind_attention(ParamBinder & bind, const std::string & prefix, std::size_t n_heads);
AttentionVars bind_attention(ad::Graph & g, const AttentionParams & p);
void declare_attention(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t dim);
void declare_params(
  std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, std::size_t dim,
  const GrrConfig & config);

/// Angular windows over a column-major token layout [j * N + n]: window w holds columns
/// (w * W + t - shift) for t in [0, W), wrapped on periodic grids and -1 (padding) otherwise.
std::vector<std::int64_t> angular_window_tokens(
  std::size_t cols, std::size_t n, std::size_t window, std::size_t shift, bool periodic,
  std::size_t & n_windows);

// Graph forms. Token tensors are [A * N, C] in column-major token order.
ad::Var condense_attention(
  ad::Graph & g, ad::Var f, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, const AttentionVars & w);
ad::Var angular_window_attention(
  ad::Graph & g, ad::Var tokens, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, std::size_t window, std::size_t shift, const AttentionVars & w);
ad::Var broadcast_attention(
  ad::Graph & g, ad::Var f, ad::Var tokens, const std::vector<std::size_t> & indices, std::size_t n,
  const PolarGrid & grid, const AttentionVars & w);
ad::Var grr_forward(
  ad::Graph & g, ad::Var f, const PolarGrid & grid, const GrrConfig & config, ParamBinder & bind,
  const std::string & prefix = "grr");

// Tensor forms. Representative maps are (N, A, C).
Tensor condense_attention(
  const FeatureMap & f, const RepresentativeSet & reps, const PolarGrid & grid, const AttentionParams & p);
Tensor angular_window_attention(
  const Tensor & f_rep, const RepresentativeSet & reps, const PolarGrid & grid, std::size_t window,
  std::size_t shift, const AttentionParams & p);
FeatureMap broadcast_attention(
  const FeatureMap & f, const Tensor & f_a, const RepresentativeSet & reps, const PolarGrid & grid,
  const AttentionParams & p);
FeatureMap grr_forward(
  const FeatureMap & f, const PolarGrid & grid, const GrrConfig & config, const ModelParams & params,
  const std::string & prefix = "grr");

/// (N, A, C) <-> [A * N, C] token layout.
Tensor rep_map_to_tokens(const Tensor & rep_map);
Tensor tokens_to_rep_map(const Tensor & tokens, std::size_t n, std::size_t cols);

}  // namespace partner::grr
