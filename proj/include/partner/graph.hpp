#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "partner/kernels.hpp"

// Reverse-mode tape over the kernels in kernels.hpp. Nodes are appended in forward order, so
// a reverse sweep over the tape visits every node after all of its consumers.
namespace partner::ad
{

using Var = std::size_t;

class Graph
{
public:
  using BackwardFn = std::function<void(Graph &, const Tensor & upstream)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  Var record(Tensor value, const std::vector<Var> & parents, BackwardFn backward);

  const Tensor & value(Var v) const { return nodes_.at(v).value; }
  /// Gradient after backward(); a zero tensor for nodes the sweep never reached.
  const Tensor & grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(Var v, const Tensor & g);
  /// Seeds d(root)/d(root) = 1; root must hold a single value.
  void backward(Var root);

private:
  struct Node
  {
    Tensor value;
    Tensor grad;
    bool requires_grad{false};
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Var linear(Graph & g, Var x, Var w, std::optional<Var> b = std::nullopt);
Var relu(Graph & g, Var x);
Var sigmoid(Graph & g, Var x);
Var conv2d(Graph & g, Var x, Var k, std::optional<Var> b, kernels::Conv2dSpec spec);
Var attention(
  Graph & g, Var q, Var k, Var v, std::vector<std::uint8_t> key_mask, kernels::AttentionSpec spec);
/// `deltas` are treated as constants.
Var relpos(Graph & g, Tensor deltas, std::vector<std::uint8_t> key_mask, Var w_pos);
Var add(Graph & g, Var a, Var b);
Var scale(Graph & g, Var x, double factor);
Var reshape(Graph & g, Var x, Shape shape);
Var gather_rows(Graph & g, Var x, std::vector<std::int64_t> index);
Var concat_last(Graph & g, Var a, Var b);

Var focal_loss(Graph & g, Var h, Tensor target, kernels::FocalSpec spec, double n_pos = 0.0);
Var gaussian_focal_loss(Graph & g, Var h, Tensor target, double gamma = 2.0, double beta = 4.0);
Var smooth_l1(Graph & g, Var pred, Tensor target, Tensor weight = {});
/// sum_i w_i * x_i over scalar nodes.
Var weighted_sum(Graph & g, const std::vector<std::pair<Var, double>> & terms);

}  // namespace partner::ad
