#include "partner/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace partner
{

std::string shape_to_string(const Shape & shape)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? ", " : "") << shape[i];
  }
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const
{
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(const Tensor & t, const Shape & expected, const char * what)
{
  if (t.shape != expected) {
    throw std::invalid_argument(
      std::string(what) + ": expected shape " + shape_to_string(expected) + ", got " +
      shape_to_string(t.shape));
  }
}

}  // namespace partner

namespace partner::kernels
{

namespace
{

void require(bool cond, const char * msg)
{
  if (!cond) {
    throw std::invalid_argument(msg);
  }
}

Shape with_last(Shape s, std::size_t last)
{
  s.back() = last;
  return s;
}

}  // namespace

Tensor linear(const Tensor & x, const Tensor & w, const Tensor & b)
{
  require(w.rank() == 2, "linear: weight must be rank 2");
  require(x.rank() >= 1 && x.cols() == w.dim(0), "linear: input width does not match weight");
  const bool has_bias = !b.empty();
  require(!has_bias || b.size() == w.dim(1), "linear: bias width does not match weight");
  const std::size_t m = x.rows();
  const std::size_t cin = w.dim(0);
  const std::size_t cout = w.dim(1);
  Tensor y(with_last(x.shape, cout));
  for (std::size_t r = 0; r < m; ++r) {
    double * yr = &y.data[r * cout];
    if (has_bias) {
      std::copy(b.data.begin(), b.data.end(), yr);
    }
    const double * xr = &x.data[r * cin];
    for (std::size_t k = 0; k < cin; ++k) {
      const double xv = xr[k];
      const double * wk = &w.data[k * cout];
      for (std::size_t j = 0; j < cout; ++j) {
        yr[j] += xv * wk[j];
      }
    }
  }
  return y;
}

LinearGrad linear_vjp(const Tensor & x, const Tensor & w, bool has_bias, const Tensor & upstream)
{
  const std::size_t m = x.rows();
  const std::size_t cin = w.dim(0);
  const std::size_t cout = w.dim(1);
  require(upstream.size() == m * cout, "linear_vjp: upstream shape mismatch");
  LinearGrad g{Tensor(x.shape), Tensor(w.shape), has_bias ? Tensor(Shape{cout}) : Tensor{}};
  for (std::size_t r = 0; r < m; ++r) {
    const double * ur = &upstream.data[r * cout];
    const double * xr = &x.data[r * cin];
    double * dxr = &g.dx.data[r * cin];
    for (std::size_t k = 0; k < cin; ++k) {
      const double * wk = &w.data[k * cout];
      double * dwk = &g.dw.data[k * cout];
      const double xv = xr[k];
      double acc = 0.0;
      for (std::size_t j = 0; j < cout; ++j) {
        acc += ur[j] * wk[j];
        dwk[j] += xv * ur[j];
      }
      dxr[k] = acc;
    }
    if (has_bias) {
      for (std::size_t j = 0; j < cout; ++j) {
        g.db.data[j] += ur[j];
      }
    }
  }
  return g;
}

Tensor relu(const Tensor & x)
{
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  }
  return y;
}

Tensor relu_vjp(const Tensor & x, const Tensor & upstream)
{
  Tensor g(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    g.data[i] = x.data[i] > 0.0 ? upstream.data[i] : 0.0;
  }
  return g;
}

Tensor sigmoid(const Tensor & x)
{
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    if (v >= 0.0) {
      y.data[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y.data[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor sigmoid_vjp(const Tensor & y, const Tensor & upstream)
{
  Tensor g(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) {
    g.data[i] = upstream.data[i] * y.data[i] * (1.0 - y.data[i]);
  }
  return g;
}

Tensor mlp(const Tensor & x, const std::vector<MlpLayer> & layers)
{
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = linear(h, layers[l].w, layers[l].b);
    if (l + 1 < layers.size()) {
      h = relu(h);
    }
  }
  return h;
}

namespace
{

struct ConvGeom
{
  std::size_t h, w, cin, kh, kw, cout, oh, ow;
  std::ptrdiff_t ph, pw;
};

ConvGeom conv_geom(const Tensor & x, const Tensor & k, std::size_t stride)
{
  require(x.rank() == 3 && k.rank() == 4, "conv2d: expects x[H,W,Cin] and k[kh,kw,Cin,Cout]");
  require(k.dim(2) == x.dim(2), "conv2d: channel mismatch");
  require(k.dim(0) % 2 == 1 && k.dim(1) % 2 == 1, "conv2d: kernel extents must be odd");
  require(stride >= 1, "conv2d: stride must be positive");
  ConvGeom g{};
  g.h = x.dim(0);
  g.w = x.dim(1);
  g.cin = x.dim(2);
  g.kh = k.dim(0);
  g.kw = k.dim(1);
  g.cout = k.dim(3);
  g.oh = (g.h + stride - 1) / stride;
  g.ow = (g.w + stride - 1) / stride;
  g.ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  g.pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  return g;
}

// Returns the source column or -1 when it falls in zero padding.
std::ptrdiff_t source_col(std::ptrdiff_t c, std::size_t w, bool circular)
{
  const auto iw = static_cast<std::ptrdiff_t>(w);
  if (c >= 0 && c < iw) {
    return c;
  }
  if (!circular) {
    return -1;
  }
  return ((c % iw) + iw) % iw;
}

}  // namespace

Tensor conv2d(const Tensor & x, const Tensor & k, const Tensor & b, Conv2dSpec spec)
{
  const ConvGeom g = conv_geom(x, k, spec.stride);
  const bool has_bias = !b.empty();
  require(!has_bias || b.size() == g.cout, "conv2d: bias mismatch");
  Tensor y(Shape{g.oh, g.ow, g.cout});
  const auto st = static_cast<std::ptrdiff_t>(spec.stride);
  for (std::size_t oi = 0; oi < g.oh; ++oi) {
    for (std::size_t oj = 0; oj < g.ow; ++oj) {
      double * yp = &y.data[(oi * g.ow + oj) * g.cout];
      if (has_bias) {
        std::copy(b.data.begin(), b.data.end(), yp);
      }
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi) * st + static_cast<std::ptrdiff_t>(ki) - g.ph;
        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) {
          continue;
        }
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const std::ptrdiff_t jj = source_col(
            static_cast<std::ptrdiff_t>(oj) * st + static_cast<std::ptrdiff_t>(kj) - g.pw, g.w,
            spec.circular);
          if (jj < 0) {
            continue;
          }
          const double * xp = &x.data[(static_cast<std::size_t>(ii) * g.w + static_cast<std::size_t>(jj)) * g.cin];
          const double * kp = &k.data[(ki * g.kw + kj) * g.cin * g.cout];
          for (std::size_t c = 0; c < g.cin; ++c) {
            const double xv = xp[c];
            const double * kc = kp + c * g.cout;
            for (std::size_t o = 0; o < g.cout; ++o) {
              yp[o] += xv * kc[o];
            }
          }
        }
      }
    }
  }
  return y;
}

Conv2dGrad conv2d_vjp(
  const Tensor & x, const Tensor & k, bool has_bias, Conv2dSpec spec, const Tensor & upstream)
{
  const ConvGeom g = conv_geom(x, k, spec.stride);
  require_shape(upstream, Shape{g.oh, g.ow, g.cout}, "conv2d_vjp upstream");
  Conv2dGrad out{Tensor(x.shape), Tensor(k.shape), has_bias ? Tensor(Shape{g.cout}) : Tensor{}};
  const auto st = static_cast<std::ptrdiff_t>(spec.stride);
  for (std::size_t oi = 0; oi < g.oh; ++oi) {
    for (std::size_t oj = 0; oj < g.ow; ++oj) {
      const double * up = &upstream.data[(oi * g.ow + oj) * g.cout];
      if (has_bias) {
        for (std::size_t o = 0; o < g.cout; ++o) {
          out.db.data[o] += up[o];
        }
      }
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi) * st + static_cast<std::ptrdiff_t>(ki) - g.ph;
        if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) {
          continue;
        }
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const std::ptrdiff_t jj = source_col(
            static_cast<std::ptrdiff_t>(oj) * st + static_cast<std::ptrdiff_t>(kj) - g.pw, g.w,
            spec.circular);
          if (jj < 0) {
            continue;
          }
          const std::size_t xoff = (static_cast<std::size_t>(ii) * g.w + static_cast<std::size_t>(jj)) * g.cin;
          const double * xp = &x.data[xoff];
          double * dxp = &out.dx.data[xoff];
          const std::size_t koff = (ki * g.kw + kj) * g.cin * g.cout;
          const double * kp = &k.data[koff];
          double * dkp = &out.dk.data[koff];
          for (std::size_t c = 0; c < g.cin; ++c) {
            const double * kc = kp + c * g.cout;
            double * dkc = dkp + c * g.cout;
            const double xv = xp[c];
            double acc = 0.0;
            for (std::size_t o = 0; o < g.cout; ++o) {
              acc += up[o] * kc[o];
              dkc[o] += xv * up[o];
            }
            dxp[c] += acc;
          }
        }
      }
    }
  }
  return out;
}

Tensor softmax(const Tensor & x)
{
  Tensor y(x.shape);
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double * xr = &x.data[r * n];
    double * yr = &y.data[r * n];
    const double mx = *std::max_element(xr, xr + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] /= sum;
    }
  }
  return y;
}

Tensor softmax_vjp(const Tensor & y, const Tensor & upstream)
{
  Tensor g(y.shape);
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double * yr = &y.data[r * n];
    const double * ur = &upstream.data[r * n];
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += yr[j] * ur[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      g.data[r * n + j] = yr[j] * (ur[j] - dot);
    }
  }
  return g;
}

namespace
{

struct AttnGeom
{
  std::size_t b, m, n, d, heads, dh;
};

AttnGeom attn_geom(
  const Tensor & q, const Tensor & k, const Tensor & v, const std::vector<std::uint8_t> & mask,
  AttentionSpec spec)
{
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention: expects rank-3 Q, K, V");
  AttnGeom g{q.dim(0), q.dim(1), k.dim(1), q.dim(2), spec.n_heads, 0};
  require(k.dim(0) == g.b && v.dim(0) == g.b, "attention: batch mismatch");
  require(k.dim(2) == g.d && v.dim(2) == g.d && v.dim(1) == g.n, "attention: K/V shape mismatch");
  require(g.heads >= 1 && g.d % g.heads == 0, "attention: d must be divisible by n_heads");
  require(mask.empty() || mask.size() == g.b * g.n, "attention: key mask size mismatch");
  g.dh = g.d / g.heads;
  return g;
}

// Row-wise attention probabilities for one (batch, head); masked keys get probability 0.
void attention_probs(
  const AttnGeom & g, const Tensor & q, const Tensor & k, const std::uint8_t * mask,
  std::size_t bi, std::size_t h, std::vector<double> & probs)
{
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.dh));
  probs.assign(g.m * g.n, 0.0);
  for (std::size_t i = 0; i < g.m; ++i) {
    const double * qi = &q.data[(bi * g.m + i) * g.d + h * g.dh];
    double * pr = &probs[i * g.n];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g.n; ++j) {
      if (mask && !mask[j]) {
        continue;
      }
      const double * kj = &k.data[(bi * g.n + j) * g.d + h * g.dh];
      double s = 0.0;
      for (std::size_t t = 0; t < g.dh; ++t) {
        s += qi[t] * kj[t];
      }
      pr[j] = s * scale;
      mx = std::max(mx, pr[j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      continue;  // no valid key: row stays zero
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < g.n; ++j) {
      if (mask && !mask[j]) {
        continue;
      }
      pr[j] = std::exp(pr[j] - mx);
      sum += pr[j];
    }
    for (std::size_t j = 0; j < g.n; ++j) {
      pr[j] /= sum;
    }
  }
}

}  // namespace

Tensor attention(
  const Tensor & q, const Tensor & k, const Tensor & v, const std::vector<std::uint8_t> & key_mask,
  AttentionSpec spec)
{
  const AttnGeom g = attn_geom(q, k, v, key_mask, spec);
  Tensor out(Shape{g.b, g.m, g.d});
  std::vector<double> probs;
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    const std::uint8_t * mask = key_mask.empty() ? nullptr : &key_mask[bi * g.n];
    for (std::size_t h = 0; h < g.heads; ++h) {
      attention_probs(g, q, k, mask, bi, h, probs);
      for (std::size_t i = 0; i < g.m; ++i) {
        double * oi = &out.data[(bi * g.m + i) * g.d + h * g.dh];
        for (std::size_t j = 0; j < g.n; ++j) {
          const double p = probs[i * g.n + j];
          if (p == 0.0) {
            continue;
          }
          const double * vj = &v.data[(bi * g.n + j) * g.d + h * g.dh];
          for (std::size_t t = 0; t < g.dh; ++t) {
            oi[t] += p * vj[t];
          }
        }
      }
    }
  }
  return out;
}

AttentionGrad attention_vjp(
  const Tensor & q, const Tensor & k, const Tensor & v, const std::vector<std::uint8_t> & key_mask,
  AttentionSpec spec, const Tensor & upstream)
{
  const AttnGeom g = attn_geom(q, k, v, key_mask, spec);
  require_shape(upstream, Shape{g.b, g.m, g.d}, "attention_vjp upstream");
  AttentionGrad out{Tensor(q.shape), Tensor(k.shape), Tensor(v.shape)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.dh));
  std::vector<double> probs;
  std::vector<double> dprobs;
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    const std::uint8_t * mask = key_mask.empty() ? nullptr : &key_mask[bi * g.n];
    for (std::size_t h = 0; h < g.heads; ++h) {
      attention_probs(g, q, k, mask, bi, h, probs);
      dprobs.assign(g.m * g.n, 0.0);
      for (std::size_t i = 0; i < g.m; ++i) {
        const double * ui = &upstream.data[(bi * g.m + i) * g.d + h * g.dh];
        for (std::size_t j = 0; j < g.n; ++j) {
          const double p = probs[i * g.n + j];
          if (mask && !mask[j]) {
            continue;
          }
          const double * vj = &v.data[(bi * g.n + j) * g.d + h * g.dh];
          double * dvj = &out.dv.data[(bi * g.n + j) * g.d + h * g.dh];
          double acc = 0.0;
          for (std::size_t t = 0; t < g.dh; ++t) {
            acc += ui[t] * vj[t];
            dvj[t] += p * ui[t];
          }
          dprobs[i * g.n + j] = acc;
        }
      }
      for (std::size_t i = 0; i < g.m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < g.n; ++j) {
          dot += probs[i * g.n + j] * dprobs[i * g.n + j];
        }
        const double * qi = &q.data[(bi * g.m + i) * g.d + h * g.dh];
        double * dqi = &out.dq.data[(bi * g.m + i) * g.d + h * g.dh];
        for (std::size_t j = 0; j < g.n; ++j) {
          if (mask && !mask[j]) {
            continue;
          }
          const double ds = probs[i * g.n + j] * (dprobs[i * g.n + j] - dot) * scale;
          if (ds == 0.0) {
            continue;
          }
          const double * kj = &k.data[(bi * g.n + j) * g.d + h * g.dh];
          double * dkj = &out.dk.data[(bi * g.n + j) * g.d + h * g.dh];
          for (std::size_t t = 0; t < g.dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor & q, const Tensor & k, const Tensor & v, std::size_t n_heads)
{
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "scaled_dot_attention: expects rank-2 inputs");
  const Tensor out = attention(
    q.reshaped({1, q.dim(0), q.dim(1)}), k.reshaped({1, k.dim(0), k.dim(1)}),
    v.reshaped({1, v.dim(0), v.dim(1)}), {}, AttentionSpec{n_heads});
  return out.reshaped({q.dim(0), q.dim(1)});
}

namespace
{

struct RelposGeom
{
  std::size_t b, m, n, p, d;
};

RelposGeom relpos_geom(
  const Tensor & deltas, const std::vector<std::uint8_t> & mask, const Tensor & w_pos)
{
  require(deltas.rank() == 4 && w_pos.rank() == 2, "relpos: expects deltas[B,m,n,P] and W_pos[P,d]");
  require(deltas.dim(3) == w_pos.dim(0), "relpos: position width mismatch");
  RelposGeom g{deltas.dim(0), deltas.dim(1), deltas.dim(2), deltas.dim(3), w_pos.dim(1)};
  require(mask.empty() || mask.size() == g.b * g.n, "relpos: key mask size mismatch");
  return g;
}

std::size_t count_valid(const std::uint8_t * mask, std::size_t n)
{
  if (!mask) {
    return n;
  }
  return static_cast<std::size_t>(std::count_if(mask, mask + n, [](std::uint8_t v) { return v != 0; }));
}

}  // namespace

Tensor relpos_encoding(
  const Tensor & deltas, const std::vector<std::uint8_t> & key_mask, const Tensor & w_pos)
{
  const RelposGeom g = relpos_geom(deltas, key_mask, w_pos);
  Tensor out(Shape{g.b, g.m, g.d});
  std::vector<double> pre(g.d);
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    const std::uint8_t * mask = key_mask.empty() ? nullptr : &key_mask[bi * g.n];
    const std::size_t valid = count_valid(mask, g.n);
    if (valid == 0) {
      continue;
    }
    const double inv = 1.0 / static_cast<double>(valid);
    for (std::size_t i = 0; i < g.m; ++i) {
      double * oi = &out.data[(bi * g.m + i) * g.d];
      for (std::size_t j = 0; j < g.n; ++j) {
        if (mask && !mask[j]) {
          continue;
        }
        const double * dl = &deltas.data[((bi * g.m + i) * g.n + j) * g.p];
        std::fill(pre.begin(), pre.end(), 0.0);
        for (std::size_t c = 0; c < g.p; ++c) {
          const double * wc = &w_pos.data[c * g.d];
          for (std::size_t t = 0; t < g.d; ++t) {
            pre[t] += dl[c] * wc[t];
          }
        }
        for (std::size_t t = 0; t < g.d; ++t) {
          if (pre[t] > 0.0) {
            oi[t] += pre[t] * inv;
          }
        }
      }
    }
  }
  return out;
}

Tensor relpos_encoding_vjp(
  const Tensor & deltas, const std::vector<std::uint8_t> & key_mask, const Tensor & w_pos,
  const Tensor & upstream)
{
  const RelposGeom g = relpos_geom(deltas, key_mask, w_pos);
  require_shape(upstream, Shape{g.b, g.m, g.d}, "relpos_vjp upstream");
  Tensor dw(w_pos.shape);
  std::vector<double> pre(g.d);
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    const std::uint8_t * mask = key_mask.empty() ? nullptr : &key_mask[bi * g.n];
    const std::size_t valid = count_valid(mask, g.n);
    if (valid == 0) {
      continue;
    }
    const double inv = 1.0 / static_cast<double>(valid);
    for (std::size_t i = 0; i < g.m; ++i) {
      const double * ui = &upstream.data[(bi * g.m + i) * g.d];
      for (std::size_t j = 0; j < g.n; ++j) {
        if (mask && !mask[j]) {
          continue;
        }
        const double * dl = &deltas.data[((bi * g.m + i) * g.n + j) * g.p];
        std::fill(pre.begin(), pre.end(), 0.0);
        for (std::size_t c = 0; c < g.p; ++c) {
          const double * wc = &w_pos.data[c * g.d];
          for (std::size_t t = 0; t < g.d; ++t) {
            pre[t] += dl[c] * wc[t];
          }
        }
        for (std::size_t c = 0; c < g.p; ++c) {
          if (dl[c] == 0.0) {
            continue;
          }
          double * dwc = &dw.data[c * g.d];
          const double s = dl[c] * inv;
          for (std::size_t t = 0; t < g.d; ++t) {
            if (pre[t] > 0.0) {
              dwc[t] += s * ui[t];
            }
          }
        }
      }
    }
  }
  return dw;
}

Tensor relative_pos_encoding_pairwise(const Tensor & p, const Tensor & p_prime, const Tensor & w_pos)
{
  require(p.rank() == 2 && p_prime.rank() == 2 && p.dim(1) == p_prime.dim(1), "relpos: position shape mismatch");
  const std::size_t m = p.dim(0);
  const std::size_t n = p_prime.dim(0);
  const std::size_t pd = p.dim(1);
  Tensor deltas(Shape{m * n, 1, 1, pd});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < pd; ++c) {
        deltas.data[(i * n + j) * pd + c] = p.at(i, c) - p_prime.at(j, c);
      }
    }
  }
  return relpos_encoding(deltas, {}, w_pos).reshaped({m, n, w_pos.dim(1)});
}

Tensor relative_pos_encoding(const Tensor & p, const Tensor & p_prime, const Tensor & w_pos)
{
  require(p.rank() == 2 && p_prime.rank() == 2 && p.dim(1) == p_prime.dim(1), "relpos: position shape mismatch");
  const std::size_t m = p.dim(0);
  const std::size_t n = p_prime.dim(0);
  const std::size_t pd = p.dim(1);
  Tensor deltas(Shape{1, m, n, pd});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < pd; ++c) {
        deltas.data[(i * n + j) * pd + c] = p.at(i, c) - p_prime.at(j, c);
      }
    }
  }
  return relpos_encoding(deltas, {}, w_pos).reshaped({m, w_pos.dim(1)});
}

namespace
{

double clamp_prob(double v)
{
  return std::clamp(v, kProbClamp, 1.0 - kProbClamp);
}

bool clamped(double v)
{
  return v < kProbClamp || v > 1.0 - kProbClamp;
}

double focal_norm(const Tensor & target, double n_pos)
{
  if (n_pos > 0.0) {
    return n_pos;
  }
  const auto pos = std::count_if(target.data.begin(), target.data.end(), [](double t) { return t == 1.0; });
  return std::max<double>(1.0, static_cast<double>(pos));
}

}  // namespace

Tensor focal_loss(const Tensor & h, const Tensor & target, FocalSpec spec, double n_pos)
{
  require(h.size() == target.size(), "focal_loss: shape mismatch");
  const double norm = focal_norm(target, n_pos);
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double p = clamp_prob(h.data[i]);
    const double t = target.data[i] == 1.0 ? p : 1.0 - p;
    acc += -spec.alpha * std::pow(1.0 - t, spec.gamma) * std::log(t);
  }
  return Tensor::scalar(acc / norm);
}

Tensor focal_loss_vjp(
  const Tensor & h, const Tensor & target, FocalSpec spec, double n_pos, double upstream)
{
  const double norm = focal_norm(target, n_pos);
  Tensor g(h.shape);
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (clamped(h.data[i])) {
      continue;
    }
    const double p = h.data[i];
    const bool pos = target.data[i] == 1.0;
    const double t = pos ? p : 1.0 - p;
    const double one_minus = 1.0 - t;
    // d/dt [-alpha (1-t)^gamma log t]
    double dt = -spec.alpha * std::pow(one_minus, spec.gamma) / t;
    if (spec.gamma != 0.0) {
      dt += spec.alpha * spec.gamma * std::pow(one_minus, spec.gamma - 1.0) * std::log(t);
    }
    g.data[i] = upstream * (pos ? dt : -dt) / norm;
  }
  return g;
}

namespace
{

double gaussian_norm(const Tensor & target)
{
  const auto pos = std::count_if(target.data.begin(), target.data.end(), [](double t) { return t == 1.0; });
  return std::max<double>(1.0, static_cast<double>(pos));
}

}  // namespace

Tensor gaussian_focal_loss(const Tensor & h, const Tensor & target, double gamma, double beta)
{
  require(h.size() == target.size(), "gaussian_focal_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double p = clamp_prob(h.data[i]);
    const double t = target.data[i];
    if (t == 1.0) {
      acc += -std::pow(1.0 - p, gamma) * std::log(p);
    } else {
      acc += -std::pow(1.0 - t, beta) * std::pow(p, gamma) * std::log(1.0 - p);
    }
  }
  return Tensor::scalar(acc / gaussian_norm(target));
}

Tensor gaussian_focal_loss_vjp(
  const Tensor & h, const Tensor & target, double gamma, double beta, double upstream)
{
  const double scale = upstream / gaussian_norm(target);
  Tensor g(h.shape);
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (clamped(h.data[i])) {
      continue;
    }
    const double p = h.data[i];
    const double t = target.data[i];
    double d = 0.0;
    if (t == 1.0) {
      d = gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) - std::pow(1.0 - p, gamma) / p;
    } else {
      const double wneg = std::pow(1.0 - t, beta);
      d = -wneg * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) - std::pow(p, gamma) / (1.0 - p));
    }
    g.data[i] = scale * d;
  }
  return g;
}

Tensor smooth_l1(const Tensor & pred, const Tensor & target, const Tensor & weight)
{
  require(pred.size() == target.size(), "smooth_l1: shape mismatch");
  require(weight.empty() || weight.size() == pred.size(), "smooth_l1: weight mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weight.empty() ? 1.0 : weight.data[i];
    if (w == 0.0) {
      continue;
    }
    const double d = std::abs(pred.data[i] - target.data[i]);
    acc += w * (d < 1.0 ? 0.5 * d * d : d - 0.5);
  }
  return Tensor::scalar(acc);
}

Tensor smooth_l1_vjp(
  const Tensor & pred, const Tensor & target, const Tensor & weight, double upstream)
{
  Tensor g(pred.shape);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weight.empty() ? 1.0 : weight.data[i];
    const double d = pred.data[i] - target.data[i];
    const double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
    g.data[i] = upstream * w * dd;
  }
  return g;
}

Tensor gather_rows(const Tensor & x, const std::vector<std::int64_t> & index)
{
  const std::size_t c = x.cols();
  const std::size_t rows = x.rows();
  Tensor out(Shape{index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t src = index[i];
    if (src < 0) {
      continue;
    }
    require(static_cast<std::size_t>(src) < rows, "gather_rows: index out of range");
    std::copy_n(&x.data[static_cast<std::size_t>(src) * c], c, &out.data[i * c]);
  }
  return out;
}

Tensor gather_rows_vjp(
  const Shape & x_shape, const std::vector<std::int64_t> & index, const Tensor & upstream)
{
  Tensor g(x_shape);
  const std::size_t c = g.cols();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t src = index[i];
    if (src < 0) {
      continue;
    }
    double * dst = &g.data[static_cast<std::size_t>(src) * c];
    const double * u = &upstream.data[i * c];
    for (std::size_t t = 0; t < c; ++t) {
      dst[t] += u[t];
    }
  }
  return g;
}

Tensor concat_last(const Tensor & a, const Tensor & b)
{
  require(a.rows() == b.rows(), "concat_last: leading axes differ");
  const std::size_t ca = a.cols();
  const std::size_t cb = b.cols();
  Shape s = a.shape;
  s.back() = ca + cb;
  Tensor out(s);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(&a.data[r * ca], ca, &out.data[r * (ca + cb)]);
    std::copy_n(&b.data[r * cb], cb, &out.data[r * (ca + cb) + ca]);
  }
  return out;
}

}  // namespace partner::kernels
