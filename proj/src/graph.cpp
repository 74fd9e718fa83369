#include "partner/graph.hpp"

#include <stdexcept>

namespace partner::ad
{

Var Graph::constant(Tensor value)
{
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return nodes_.size() - 1;
}

Var Graph::parameter(Tensor value)
{
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return nodes_.size() - 1;
}

Var Graph::record(Tensor value, const std::vector<Var> & parents, BackwardFn backward)
{
  bool needs = false;
  for (const Var p : parents) {
    needs = needs || nodes_.at(p).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return nodes_.size() - 1;
}

const Tensor & Graph::grad(Var v)
{
  Node & n = nodes_.at(v);
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Tensor::zeros_like(n.value);
  }
  return n.grad;
}

void Graph::accumulate(Var v, const Tensor & g)
{
  Node & n = nodes_.at(v);
  if (!n.requires_grad) {
    return;
  }
  if (g.size() != n.value.size()) {
    throw std::logic_error("gradient size does not match node value");
  }
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.shape, g.data);
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    n.grad.data[i] += g.data[i];
  }
}

void Graph::backward(Var root)
{
  if (nodes_.at(root).value.size() != 1) {
    throw std::invalid_argument("backward root must be a scalar");
  }
  for (auto & n : nodes_) {
    n.grad = Tensor{};
  }
  accumulate(root, Tensor::scalar(1.0));
  for (std::size_t i = root + 1; i-- > 0;) {
    Node & n = nodes_[i];
    if (!n.backward || n.grad.empty()) {
      continue;
    }
    // the closure may append to parents' grads but never to this node
    const Tensor upstream = n.grad;
    n.backward(*this, upstream);
  }
}

Var linear(Graph & g, Var x, Var w, std::optional<Var> b)
{
  const Tensor empty;
  Tensor y = kernels::linear(g.value(x), g.value(w), b ? g.value(*b) : empty);
  std::vector<Var> parents{x, w};
  if (b) {
    parents.push_back(*b);
  }
  return g.record(std::move(y), parents, [x, w, b](Graph & gr, const Tensor & up) {
    auto grads = kernels::linear_vjp(gr.value(x), gr.value(w), b.has_value(), up);
    gr.accumulate(x, grads.dx);
    gr.accumulate(w, grads.dw);
    if (b) {
      gr.accumulate(*b, grads.db);
    }
  });
}

Var relu(Graph & g, Var x)
{
  return g.record(kernels::relu(g.value(x)), {x}, [x](Graph & gr, const Tensor & up) {
    gr.accumulate(x, kernels::relu_vjp(gr.value(x), up));
  });
}

Var sigmoid(Graph & g, Var x)
{
  const Var out = g.size();
  return g.record(kernels::sigmoid(g.value(x)), {x}, [x, out](Graph & gr, const Tensor & up) {
    gr.accumulate(x, kernels::sigmoid_vjp(gr.value(out), up));
  });
}

Var conv2d(Graph & g, Var x, Var k, std::optional<Var> b, kernels::Conv2dSpec spec)
{
  const Tensor empty;
  Tensor y = kernels::conv2d(g.value(x), g.value(k), b ? g.value(*b) : empty, spec);
  std::vector<Var> parents{x, k};
  if (b) {
    parents.push_back(*b);
  }
  return g.record(std::move(y), parents, [x, k, b, spec](Graph & gr, const Tensor & up) {
    auto grads = kernels::conv2d_vjp(gr.value(x), gr.value(k), b.has_value(), spec, up);
    gr.accumulate(x, grads.dx);
    gr.accumulate(k, grads.dk);
    if (b) {
      gr.accumulate(*b, grads.db);
    }
  });
}

Var attention(
  Graph & g, Var q, Var k, Var v, std::vector<std::uint8_t> key_mask, kernels::AttentionSpec spec)
{
  Tensor y = kernels::attention(g.value(q), g.value(k), g.value(v), key_mask, spec);
  return g.record(
    std::move(y), {q, k, v},
    [q, k, v, mask = std::move(key_mask), spec](Graph & gr, const Tensor & up) {
      auto grads = kernels::attention_vjp(gr.value(q), gr.value(k), gr.value(v), mask, spec, up);
      gr.accumulate(q, grads.dq);
      gr.accumulate(k, grads.dk);
      gr.accumulate(v, grads.dv);
    });
}

Var relpos(Graph & g, Tensor deltas, std::vector<std::uint8_t> key_mask, Var w_pos)
{
  Tensor y = kernels::relpos_encoding(deltas, key_mask, g.value(w_pos));
  return g.record(
    std::move(y), {w_pos},
    [d = std::move(deltas), mask = std::move(key_mask), w_pos](Graph & gr, const Tensor & up) {
      gr.accumulate(w_pos, kernels::relpos_encoding_vjp(d, mask, gr.value(w_pos), up));
    });
}

Var add(Graph & g, Var a, Var b)
{
  const Tensor & va = g.value(a);
  const Tensor & vb = g.value(b);
  if (va.size() != vb.size()) {
    throw std::invalid_argument("add: size mismatch " + shape_to_string(va.shape) + " vs " + shape_to_string(vb.shape));
  }
  Tensor y = va;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y.data[i] += vb.data[i];
  }
  return g.record(std::move(y), {a, b}, [a, b](Graph & gr, const Tensor & up) {
    gr.accumulate(a, up);
    gr.accumulate(b, up);
  });
}

Var scale(Graph & g, Var x, double factor)
{
  Tensor y = g.value(x);
  for (double & v : y.data) {
    v *= factor;
  }
  return g.record(std::move(y), {x}, [x, factor](Graph & gr, const Tensor & up) {
    Tensor d = up;
    for (double & v : d.data) {
      v *= factor;
    }
    gr.accumulate(x, d);
  });
}

Var reshape(Graph & g, Var x, Shape shape)
{
  return g.record(g.value(x).reshaped(std::move(shape)), {x}, [x](Graph & gr, const Tensor & up) {
    gr.accumulate(x, up);
  });
}

Var gather_rows(Graph & g, Var x, std::vector<std::int64_t> index)
{
  Tensor y = kernels::gather_rows(g.value(x), index);
  return g.record(std::move(y), {x}, [x, idx = std::move(index)](Graph & gr, const Tensor & up) {
    gr.accumulate(x, kernels::gather_rows_vjp(gr.value(x).shape, idx, up));
  });
}

Var concat_last(Graph & g, Var a, Var b)
{
  const std::size_t ca = g.value(a).cols();
  const std::size_t cb = g.value(b).cols();
  return g.record(kernels::concat_last(g.value(a), g.value(b)), {a, b}, [a, b, ca, cb](Graph & gr, const Tensor & up) {
    const std::size_t rows = up.size() / (ca + cb);
    Tensor da(gr.value(a).shape);
    Tensor db(gr.value(b).shape);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < ca; ++j) {
        da.data[r * ca + j] = up.data[r * (ca + cb) + j];
      }
      for (std::size_t j = 0; j < cb; ++j) {
        db.data[r * cb + j] = up.data[r * (ca + cb) + ca + j];
      }
    }
    gr.accumulate(a, da);
    gr.accumulate(b, db);
  });
}

Var focal_loss(Graph & g, Var h, Tensor target, kernels::FocalSpec spec, double n_pos)
{
  Tensor y = kernels::focal_loss(g.value(h), target, spec, n_pos);
  return g.record(std::move(y), {h}, [h, t = std::move(target), spec, n_pos](Graph & gr, const Tensor & up) {
    gr.accumulate(h, kernels::focal_loss_vjp(gr.value(h), t, spec, n_pos, up.data[0]));
  });
}

Var gaussian_focal_loss(Graph & g, Var h, Tensor target, double gamma, double beta)
{
  Tensor y = kernels::gaussian_focal_loss(g.value(h), target, gamma, beta);
  return g.record(std::move(y), {h}, [h, t = std::move(target), gamma, beta](Graph & gr, const Tensor & up) {
    gr.accumulate(h, kernels::gaussian_focal_loss_vjp(gr.value(h), t, gamma, beta, up.data[0]));
  });
}

Var smooth_l1(Graph & g, Var pred, Tensor target, Tensor weight)
{
  Tensor y = kernels::smooth_l1(g.value(pred), target, weight);
  return g.record(
    std::move(y), {pred},
    [pred, t = std::move(target), w = std::move(weight)](Graph & gr, const Tensor & up) {
      gr.accumulate(pred, kernels::smooth_l1_vjp(gr.value(pred), t, w, up.data[0]));
    });
}

Var weighted_sum(Graph & g, const std::vector<std::pair<Var, double>> & terms)
{
  double acc = 0.0;
  std::vector<Var> parents;
  for (const auto & [v, w] : terms) {
    acc += w * g.value(v).data.at(0);
    parents.push_back(v);
  }
  return g.record(Tensor::scalar(acc), parents, [terms](Graph & gr, const Tensor & up) {
    for (const auto & [v, w] : terms) {
      gr.accumulate(v, Tensor::scalar(w * up.data[0]));
    }
  });
}

}  // namespace partner::ad
