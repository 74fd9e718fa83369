#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "partner/geometry.hpp"
#include "partner/graph.hpp"
#include "partner/params.hpp"
#include "partner/voxelize.hpp"

// Geometry-aware adaptive module: auxiliary foreground / center-offset branches and
// geometry-conditioned window attention over the neck features.
namespace partner::ga
{

struct TargetMaps
{
  Tensor h_hat;                      // (R, A), 1 where the pixel center lies inside a box
  Tensor d_hat;                      // (R, A, 4): dx, dy, drho, dphi to the owner center
  std::vector<std::int64_t> owner;   // R * A, -1 for background
};

/// (R, A) foreground mask: pixel centers inside any box (boundary counts as inside).
Tensor foreground_target(const PolarGrid & grid, const std::vector<BoxBEV> & boxes);
Tensor foreground_target(const GridSpec & spec, const std::vector<BoxBEV> & boxes);

/// (x_c - x_p, y_c - y_p, rho_c - rho_p, wrap(phi_c - phi_p)).
std::array<double, 4> offset_to_center(const CartPoint & pixel, const CartPoint & center);

/// Foreground mask, owners and offsets. Pixels inside several boxes pick one uniformly with a
/// generator seeded by `seed`, visiting pixels in raster order.
TargetMaps center_offset_target(const PolarGrid & grid, const std::vector<BoxBEV> & boxes, std::uint64_t seed = 0);
TargetMaps center_offset_target(const GridSpec & spec, const std::vector<BoxBEV> & boxes, std::uint64_t seed = 0);

struct GaConfig
{
  std::size_t window{8};
  std::size_t shift{4};
  std::size_t n_stacks{2};
  std::size_t n_heads{1};
  std::vector<std::size_t> mlp_hidden{32};

  /// Throws std::invalid_argument when the window cannot tile the angular axis.
  void validate(std::size_t rows, std::size_t cols, bool periodic) const;
};

inline constexpr std::size_t kGeoChannels = 5;
inline constexpr std::size_t kPosChannels = 4;

/// (R, A, 4) positional clues divided by (r_max, pi, r_max, r_max).
Tensor normalized_positions(const PolarGrid & grid);

void declare_params(std::vector<ParamDecl> & out, const std::string & prefix, std::size_t channels, const GaConfig & config);

struct Prediction
{
  ad::Var h;  // (R, A, 1), sigmoid probabilities
  ad::Var d;  // (R, A, 4)
};

Prediction geometry_prediction(ad::Graph & g, ad::Var f_neck, ParamBinder & bind, const std::string & prefix, bool circular);

struct AuxLosses
{
  ad::Var fg;
  ad::Var dis;
};

/// Focal loss on H against h_hat (normalized by the positive count) and smooth-L1 on D masked
/// to foreground pixels, divided by max(1, #foreground).
AuxLosses auxiliary_losses(ad::Graph & g, const Prediction & pred, const TargetMaps & targets);

/// MLP(concat(G, P)) per pixel; hidden layers use ReLU, the last layer is linear. Returns (R, A, C).
ad::Var geometry_embedding(
  ad::Graph & g, ad::Var geo, ad::Var pos, const std::vector<std::pair<ad::Var, ad::Var>> & layers);

struct WindowVars
{
  ad::Var wq;
  ad::Var wk;
  ad::Var wv;
  ad::Var wo;
  std::size_t n_heads{1};
};

/// Window token layout: window (wr, wa) holds pixels (wr W - shift + u, wa W - shift + t) for
/// u, t in [0, W), row-major. Rows out of range are padding (-1); columns wrap on periodic grids
/// and are padding otherwise.
std::vector<std::int64_t> window_tokens(
  std::size_t rows, std::size_t cols, std::size_t window, std::size_t shift, bool periodic,
  std::size_t & n_windows);

/// One geometry-conditioned window attention stack:
/// F + W_o softmax(Q K^T / sqrt(d)) V with Q = F W_q + F^geo (same for K, V).
/// `valid` (R * A bytes, may be empty) removes pixels from every window's keys.
ad::Var ga_window_attention(
  ad::Graph & g, ad::Var f_neck, ad::Var f_geo, std::size_t window, std::size_t shift, bool periodic,
  const WindowVars & w, const std::vector<std::uint8_t> & valid = {});

struct GaOutputs
{
  ad::Var agg;
  Prediction pred;
};

/// Prediction, embedding from the predicted (H, D) and positional clues, then the stacked
/// window attention (stack s shifted by `shift` on both axes when s is odd).
GaOutputs ga_forward(
  ad::Graph & g, ad::Var f_neck, const PolarGrid & grid, const GaConfig & config, ParamBinder & bind,
  const std::string & prefix = "ga");

}  // namespace partner::ga
