#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cenlab/nn/blas.hpp"
#include "cenlab/nn/tensor.hpp"

namespace cenlab::nn {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// Running statistics for one batch-norm layer; owned by the model, named
// so checkpoints can carry them next to the learnable parameters.
template <typename T>
struct BatchNormBuffersT {
  TensorT<T> running_mean;
  TensorT<T> running_var;

  explicit BatchNormBuffersT(int channels)
      : running_mean({channels}), running_var({channels}) {
    for (T& x : running_var.v) x = T(1);
  }
};

using BatchNormBuffers = BatchNormBuffersT<float>;

namespace detail {

inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
inline int tconv_out(int in, int k, int s, int p) { return (in - 1) * s - 2 * p + k; }

// x: [C,H,W] -> col: [C*k*k, OH*OW]
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int s, int p, T* col) {
  int oh = conv_out(h, k, s, p);
  int ow = conv_out(w, k, s, p);
  int np = oh * ow;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((ch * k + ky) * k + kx) * np;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * s - p + ky;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * s - p + kx;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(ch * h + iy) * w + ix]
                                    : T(0);
          }
        }
      }
}

// col: [C*k*k, OH*OW] accumulated back into x: [C,H,W]
template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int s, int p, T* x) {
  int oh = conv_out(h, k, s, p);
  int ow = conv_out(w, k, s, p);
  int np = oh * ow;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((ch * k + ky) * k + kx) * np;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) x[(ch * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

// Dynamic tape: ops append nodes during the forward pass, backward walks
// the tape in reverse creation order (a valid topological order). One
// graph instance serves one forward/backward pair and is then discarded.
template <typename T>
class GraphT {
 public:
  using Var = int;

  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  Var input(TensorT<T> t) { return push(std::move(t), false, nullptr); }

  Var param(ParamTensorT<T>& p) {
    Var id = push(p.value, true, nullptr);
    nodes_[id].back = [this, id, &p] {
      const TensorT<T>& g = nodes_[id].grad;
      for (size_t i = 0; i < g.size(); ++i) p.grad.v[i] += g.v[i];
    };
    return id;
  }

  const TensorT<T>& val(Var id) const { return nodes_.at(id).val; }

  T scalar(Var id) const {
    const TensorT<T>& t = val(id);
    if (t.size() != 1) throw std::invalid_argument("scalar() on non-scalar node");
    return t.v[0];
  }

  // --- elementwise and shape ops -----------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    TensorT<T> out = val(a);
    const TensorT<T>& bv = val(b);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
    Var id = push(std::move(out), needs(a) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a, b] {
        const TensorT<T>& g = nodes_[id].grad;
        if (needs(a)) accumulate(a, g.v.data());
        if (needs(b)) accumulate(b, g.v.data());
      };
    return id;
  }

  Var scale(Var a, T c) {
    TensorT<T> out = val(a);
    for (T& x : out.v) x *= c;
    Var id = push(std::move(out), needs(a));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a, c] {
        const TensorT<T>& g = nodes_[id].grad;
        TensorT<T>& ga = ensure_grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += c * g.v[i];
      };
    return id;
  }

  Var relu(Var a) {
    TensorT<T> out = val(a);
    for (T& x : out.v) x = x > T(0) ? x : T(0);
    Var id = push(std::move(out), needs(a));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& y = nodes_[id].val;
        TensorT<T>& ga = ensure_grad(a);
        for (size_t i = 0; i < g.size(); ++i)
          if (y.v[i] > T(0)) ga.v[i] += g.v[i];
      };
    return id;
  }

  Var tanh_(Var a) {
    TensorT<T> out = val(a);
    for (T& x : out.v) x = std::tanh(x);
    Var id = push(std::move(out), needs(a));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& y = nodes_[id].val;
        TensorT<T>& ga = ensure_grad(a);
        for (size_t i = 0; i < g.size(); ++i)
          ga.v[i] += g.v[i] * (T(1) - y.v[i] * y.v[i]);
      };
    return id;
  }

  Var reshape(Var a, std::vector<int> shape) {
    if (TensorT<T>::count(shape) != val(a).size())
      throw std::invalid_argument("reshape changes element count");
    TensorT<T> out(std::move(shape), val(a).v);
    Var id = push(std::move(out), needs(a));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a] { accumulate(a, nodes_[id].grad.v.data()); };
    return id;
  }

  // Concatenates along axis 1; accepts [N,A]+[N,B] or channel concat of
  // [N,C1,H,W]+[N,C2,H,W].
  Var concat(Var a, Var b) {
    const TensorT<T>& av = val(a);
    const TensorT<T>& bv = val(b);
    if (av.shape.empty() || bv.shape.empty() || av.shape[0] != bv.shape[0])
      throw std::invalid_argument("concat: batch dims differ");
    std::vector<int> shape;
    if (av.shape.size() == 2 && bv.shape.size() == 2) {
      shape = {av.shape[0], av.shape[1] + bv.shape[1]};
    } else if (av.shape.size() == 4 && bv.shape.size() == 4 &&
               av.shape[2] == bv.shape[2] && av.shape[3] == bv.shape[3]) {
      shape = {av.shape[0], av.shape[1] + bv.shape[1], av.shape[2], av.shape[3]};
    } else {
      throw std::invalid_argument("concat: incompatible shapes");
    }
    int n = av.shape[0];
    size_t sa = av.size() / n;
    size_t sb = bv.size() / n;
    TensorT<T> out(shape);
    for (int i = 0; i < n; ++i) {
      std::copy_n(av.v.data() + i * sa, sa, out.v.data() + i * (sa + sb));
      std::copy_n(bv.v.data() + i * sb, sb, out.v.data() + i * (sa + sb) + sa);
    }
    Var id = push(std::move(out), needs(a) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a, b, n, sa, sb] {
        const TensorT<T>& g = nodes_[id].grad;
        if (needs(a)) {
          TensorT<T>& ga = ensure_grad(a);
          for (int i = 0; i < n; ++i)
            for (size_t j = 0; j < sa; ++j)
              ga.v[i * sa + j] += g.v[i * (sa + sb) + j];
        }
        if (needs(b)) {
          TensorT<T>& gb = ensure_grad(b);
          for (int i = 0; i < n; ++i)
            for (size_t j = 0; j < sb; ++j)
              gb.v[i * sb + j] += g.v[i * (sa + sb) + sa + j];
        }
      };
    return id;
  }

  // Embedding lookup: w: [V,D], one row per index.
  Var rows(Var w, std::vector<int> idx) {
    const TensorT<T>& wv = val(w);
    if (wv.shape.size() != 2) throw std::invalid_argument("rows: weight must be 2d");
    int v = wv.shape[0], d = wv.shape[1];
    for (int i : idx)
      if (i < 0 || i >= v) throw std::invalid_argument("rows: index out of range");
    TensorT<T> out({static_cast<int>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(wv.v.data() + idx[i] * d, d, out.v.data() + i * d);
    Var id = push(std::move(out), needs(w));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, w, idx = std::move(idx), d] {
        const TensorT<T>& g = nodes_[id].grad;
        TensorT<T>& gw = ensure_grad(w);
        for (size_t i = 0; i < idx.size(); ++i)
          for (int j = 0; j < d; ++j) gw.v[idx[i] * d + j] += g.v[i * d + j];
      };
    return id;
  }

  // --- dense and conv layers ----------------------------------------------

  // x: [N,I], w: [O,I], b: [O]
  Var linear(Var x, Var w, Var b) {
    const TensorT<T>& xv = val(x);
    const TensorT<T>& wv = val(w);
    const TensorT<T>& bv = val(b);
    if (xv.shape.size() != 2 || wv.shape.size() != 2 || bv.shape.size() != 1 ||
        xv.shape[1] != wv.shape[1] || wv.shape[0] != bv.shape[0])
      throw std::invalid_argument("linear: shape mismatch");
    int n = xv.shape[0], in = xv.shape[1], out_f = wv.shape[0];
    TensorT<T> out({n, out_f});
    gemm(false, true, n, out_f, in, T(1), xv.v.data(), in, wv.v.data(), in, T(0),
         out.v.data(), out_f);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_f; ++j) out.v[i * out_f + j] += bv.v[j];
    Var id = push(std::move(out), needs(x) || needs(w) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, x, w, b, n, in, out_f] {
        const TensorT<T>& g = nodes_[id].grad;
        if (needs(x)) {
          TensorT<T>& gx = ensure_grad(x);
          gemm(false, false, n, in, out_f, T(1), g.v.data(), out_f,
               nodes_[w].val.v.data(), in, T(1), gx.v.data(), in);
        }
        if (needs(w)) {
          TensorT<T>& gw = ensure_grad(w);
          gemm(true, false, out_f, in, n, T(1), g.v.data(), out_f,
               nodes_[x].val.v.data(), in, T(1), gw.v.data(), in);
        }
        if (needs(b)) {
          TensorT<T>& gb = ensure_grad(b);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_f; ++j) gb.v[j] += g.v[i * out_f + j];
        }
      };
    return id;
  }

  // x: [N,C,H,W], w: [O,C,k,k], b: [O]; cross-correlation
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const TensorT<T>& xv = val(x);
    const TensorT<T>& wv = val(w);
    const TensorT<T>& bv = val(b);
    if (xv.shape.size() != 4 || wv.shape.size() != 4 || bv.shape.size() != 1 ||
        xv.shape[1] != wv.shape[1] || wv.shape[2] != wv.shape[3] ||
        wv.shape[0] != bv.shape[0])
      throw std::invalid_argument("conv2d: shape mismatch");
    int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    int o = wv.shape[0], k = wv.shape[2];
    int oh = detail::conv_out(h, k, stride, pad);
    int ow = detail::conv_out(wd, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
    int ckk = c * k * k, np = oh * ow;
    TensorT<T> out({n, o, oh, ow});
    std::vector<T> col(static_cast<size_t>(ckk) * np);
    for (int i = 0; i < n; ++i) {
      detail::im2col(xv.v.data() + static_cast<size_t>(i) * c * h * wd, c, h, wd, k,
                     stride, pad, col.data());
      T* y = out.v.data() + static_cast<size_t>(i) * o * np;
      gemm(false, false, o, np, ckk, T(1), wv.v.data(), ckk, col.data(), np, T(0), y,
           np);
      for (int ch = 0; ch < o; ++ch)
        for (int p = 0; p < np; ++p) y[ch * np + p] += bv.v[ch];
    }
    Var id = push(std::move(out), needs(x) || needs(w) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, x, w, b, n, c, h, wd, o, k, stride, pad, ckk,
                         np] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& xv2 = nodes_[x].val;
        const TensorT<T>& wv2 = nodes_[w].val;
        std::vector<T> col(static_cast<size_t>(ckk) * np);
        for (int i = 0; i < n; ++i) {
          const T* gy = g.v.data() + static_cast<size_t>(i) * o * np;
          if (needs(w)) {
            detail::im2col(xv2.v.data() + static_cast<size_t>(i) * c * h * wd, c, h,
                           wd, k, stride, pad, col.data());
            gemm(false, true, o, ckk, np, T(1), gy, np, col.data(), np, T(1),
                 ensure_grad(w).v.data(), ckk);
          }
          if (needs(x)) {
            gemm(true, false, ckk, np, o, T(1), wv2.v.data(), ckk, gy, np, T(0),
                 col.data(), np);
            detail::col2im(col.data(), c, h, wd, k, stride, pad,
                           ensure_grad(x).v.data() + static_cast<size_t>(i) * c * h * wd);
          }
          if (needs(b)) {
            TensorT<T>& gb = ensure_grad(b);
            for (int ch = 0; ch < o; ++ch)
              for (int p = 0; p < np; ++p) gb.v[ch] += gy[ch * np + p];
          }
        }
      };
    return id;
  }

  // x: [N,Cin,H,W], w: [Cin,Cout,k,k], b: [Cout]
  // output spatial size: (in-1)*stride - 2*pad + k
  Var conv2d_transposed(Var x, Var w, Var b, int stride, int pad) {
    const TensorT<T>& xv = val(x);
    const TensorT<T>& wv = val(w);
    const TensorT<T>& bv = val(b);
    if (xv.shape.size() != 4 || wv.shape.size() != 4 || bv.shape.size() != 1 ||
        xv.shape[1] != wv.shape[0] || wv.shape[2] != wv.shape[3] ||
        wv.shape[1] != bv.shape[0])
      throw std::invalid_argument("conv2d_transposed: shape mismatch");
    int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    int cout = wv.shape[1], k = wv.shape[2];
    int oh = detail::tconv_out(h, k, stride, pad);
    int ow = detail::tconv_out(wd, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d_transposed: empty output");
    int ckk = cout * k * k, np = h * wd;
    TensorT<T> out({n, cout, oh, ow});
    std::vector<T> col(static_cast<size_t>(ckk) * np);
    for (int i = 0; i < n; ++i) {
      // col = W^T x, then scatter patches into the output canvas
      gemm(true, false, ckk, np, cin, T(1), wv.v.data(), ckk,
           xv.v.data() + static_cast<size_t>(i) * cin * np, np, T(0), col.data(), np);
      T* y = out.v.data() + static_cast<size_t>(i) * cout * oh * ow;
      detail::col2im(col.data(), cout, oh, ow, k, stride, pad, y);
      for (int ch = 0; ch < cout; ++ch)
        for (int p = 0; p < oh * ow; ++p) y[ch * oh * ow + p] += bv.v[ch];
    }
    Var id = push(std::move(out), needs(x) || needs(w) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, x, w, b, n, cin, cout, k, stride, pad, ckk, np,
                         oh, ow] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& xv2 = nodes_[x].val;
        const TensorT<T>& wv2 = nodes_[w].val;
        std::vector<T> col(static_cast<size_t>(ckk) * np);
        for (int i = 0; i < n; ++i) {
          const T* gy = g.v.data() + static_cast<size_t>(i) * cout * oh * ow;
          detail::im2col(gy, cout, oh, ow, k, stride, pad, col.data());
          if (needs(x))
            gemm(false, false, cin, np, ckk, T(1), wv2.v.data(), ckk, col.data(), np,
                 T(1), ensure_grad(x).v.data() + static_cast<size_t>(i) * cin * np, np);
          if (needs(w))
            gemm(false, true, cin, ckk, np, T(1),
                 xv2.v.data() + static_cast<size_t>(i) * cin * np, np, col.data(), np,
                 T(1), ensure_grad(w).v.data(), ckk);
          if (needs(b)) {
            TensorT<T>& gb = ensure_grad(b);
            for (int ch = 0; ch < cout; ++ch)
              for (int p = 0; p < oh * ow; ++p) gb.v[ch] += gy[ch * oh * ow + p];
          }
        }
      };
    return id;
  }

  // x: [N,C] or [N,C,H,W]; per-channel statistics over batch and space.
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormBuffersT<T>& stats,
                 bool train) {
    const TensorT<T>& xv = val(x);
    if (xv.shape.size() != 2 && xv.shape.size() != 4)
      throw std::invalid_argument("batch_norm: input must be 2d or 4d");
    int n = xv.shape[0], c = xv.shape[1];
    int sp = xv.shape.size() == 4 ? xv.shape[2] * xv.shape[3] : 1;
    if (val(gamma).shape != std::vector<int>{c} ||
        val(beta).shape != std::vector<int>{c} ||
        stats.running_mean.shape != std::vector<int>{c})
      throw std::invalid_argument("batch_norm: channel mismatch");
    if (train && n < 2)
      throw std::invalid_argument("batch_norm: train mode needs batch size >= 2");

    size_t m = static_cast<size_t>(n) * sp;
    auto xhat = std::make_shared<TensorT<T>>(xv.shape);
    std::vector<T> invstd(c);
    const TensorT<T>& gv = val(gamma);
    const TensorT<T>& bv = val(beta);
    TensorT<T> out(xv.shape);

    auto idx = [c, sp](int i, int ch, int p) {
      return (static_cast<size_t>(i) * c + ch) * sp + p;
    };
    for (int ch = 0; ch < c; ++ch) {
      double mean, var;
      if (train) {
        double s = 0;
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < sp; ++p) s += xv.v[idx(i, ch, p)];
        mean = s / static_cast<double>(m);
        double s2 = 0;
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < sp; ++p) {
            double d = xv.v[idx(i, ch, p)] - mean;
            s2 += d * d;
          }
        var = s2 / static_cast<double>(m);
        double unbiased = m > 1 ? s2 / static_cast<double>(m - 1) : var;
        stats.running_mean.v[ch] = static_cast<T>(
            (1 - kBnMomentum) * stats.running_mean.v[ch] + kBnMomentum * mean);
        stats.running_var.v[ch] = static_cast<T>(
            (1 - kBnMomentum) * stats.running_var.v[ch] + kBnMomentum * unbiased);
      } else {
        mean = stats.running_mean.v[ch];
        var = stats.running_var.v[ch];
      }
      double is = 1.0 / std::sqrt(var + kBnEps);
      invstd[ch] = static_cast<T>(is);
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < sp; ++p) {
          T xh = static_cast<T>((xv.v[idx(i, ch, p)] - mean) * is);
          xhat->v[idx(i, ch, p)] = xh;
          out.v[idx(i, ch, p)] = gv.v[ch] * xh + bv.v[ch];
        }
    }

    Var id = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, x, gamma, beta, xhat, invstd = std::move(invstd),
                         n, c, sp, m, train, idx] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& gv2 = nodes_[gamma].val;
        for (int ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (int i = 0; i < n; ++i)
            for (int p = 0; p < sp; ++p) {
              double gy = g.v[idx(i, ch, p)];
              sum_g += gy;
              sum_gx += gy * xhat->v[idx(i, ch, p)];
            }
          if (needs(gamma)) ensure_grad(gamma).v[ch] += static_cast<T>(sum_gx);
          if (needs(beta)) ensure_grad(beta).v[ch] += static_cast<T>(sum_g);
          if (needs(x)) {
            TensorT<T>& gx = ensure_grad(x);
            double k0 = gv2.v[ch] * invstd[ch];
            for (int i = 0; i < n; ++i)
              for (int p = 0; p < sp; ++p) {
                double gy = g.v[idx(i, ch, p)];
                double d = train ? gy - sum_g / static_cast<double>(m) -
                                       xhat->v[idx(i, ch, p)] * sum_gx /
                                           static_cast<double>(m)
                                 : gy;
                gx.v[idx(i, ch, p)] += static_cast<T>(k0 * d);
              }
          }
        }
      };
    return id;
  }

  // --- probability heads and losses ---------------------------------------

  // Row-wise softmax over the last axis of a 2d tensor.
  Var softmax(Var x) {
    const TensorT<T>& xv = val(x);
    if (xv.shape.size() != 2) throw std::invalid_argument("softmax: input must be 2d");
    int n = xv.shape[0], d = xv.shape[1];
    TensorT<T> out(xv.shape);
    for (int i = 0; i < n; ++i) {
      const T* row = xv.v.data() + static_cast<size_t>(i) * d;
      T* y = out.v.data() + static_cast<size_t>(i) * d;
      T mx = row[0];
      for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      double z = 0;
      for (int j = 0; j < d; ++j) z += std::exp(static_cast<double>(row[j] - mx));
      for (int j = 0; j < d; ++j)
        y[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    Var id = push(std::move(out), needs(x));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, x, n, d] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& y = nodes_[id].val;
        TensorT<T>& gx = ensure_grad(x);
        for (int i = 0; i < n; ++i) {
          double dot = 0;
          for (int j = 0; j < d; ++j)
            dot += static_cast<double>(g.v[i * d + j]) * y.v[i * d + j];
          for (int j = 0; j < d; ++j)
            gx.v[i * d + j] +=
                y.v[i * d + j] * (g.v[i * d + j] - static_cast<T>(dot));
        }
      };
    return id;
  }

  // Mean squared error over all elements, accumulated in double.
  Var mse(Var a, Var b) {
    check_same_shape(a, b, "mse");
    const TensorT<T>& av = val(a);
    const TensorT<T>& bv = val(b);
    double s = 0;
    for (size_t i = 0; i < av.size(); ++i) {
      double d = static_cast<double>(av.v[i]) - bv.v[i];
      s += d * d;
    }
    size_t numel = av.size();
    TensorT<T> out({1});
    out.v[0] = static_cast<T>(s / static_cast<double>(numel));
    Var id = push(std::move(out), needs(a) || needs(b));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, a, b, numel] {
        T g = nodes_[id].grad.v[0];
        const TensorT<T>& av2 = nodes_[a].val;
        const TensorT<T>& bv2 = nodes_[b].val;
        T k = g * T(2) / static_cast<T>(numel);
        if (needs(a)) {
          TensorT<T>& ga = ensure_grad(a);
          for (size_t i = 0; i < av2.size(); ++i)
            ga.v[i] += k * (av2.v[i] - bv2.v[i]);
        }
        if (needs(b)) {
          TensorT<T>& gb = ensure_grad(b);
          for (size_t i = 0; i < av2.size(); ++i)
            gb.v[i] -= k * (av2.v[i] - bv2.v[i]);
        }
      };
    return id;
  }

  // Mean cross-entropy of logits [N,K] against integer labels; fused
  // log-softmax for stability.
  Var cross_entropy(Var logits, std::vector<int> labels) {
    const TensorT<T>& xv = val(logits);
    if (xv.shape.size() != 2 || static_cast<int>(labels.size()) != xv.shape[0])
      throw std::invalid_argument("cross_entropy: shape mismatch");
    int n = xv.shape[0], k = xv.shape[1];
    for (int l : labels)
      if (l < 0 || l >= k) throw std::invalid_argument("cross_entropy: bad label");
    auto probs = std::make_shared<TensorT<T>>(xv.shape);
    double loss = 0;
    for (int i = 0; i < n; ++i) {
      const T* row = xv.v.data() + static_cast<size_t>(i) * k;
      T mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double z = 0;
      for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
      double logz = std::log(z) + mx;
      for (int j = 0; j < k; ++j)
        probs->v[i * k + j] =
            static_cast<T>(std::exp(static_cast<double>(row[j]) - logz));
      loss -= static_cast<double>(row[labels[i]]) - logz;
    }
    TensorT<T> out({1});
    out.v[0] = static_cast<T>(loss / n);
    Var id = push(std::move(out), needs(logits));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, logits, labels = std::move(labels), probs, n, k] {
        T g = nodes_[id].grad.v[0];
        TensorT<T>& gx = ensure_grad(logits);
        T inv_n = T(1) / static_cast<T>(n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < k; ++j) {
            T p = probs->v[i * k + j];
            gx.v[i * k + j] += g * inv_n * (p - (j == labels[i] ? T(1) : T(0)));
          }
      };
    return id;
  }

  // Mean Shannon entropy of probability rows [N,D].
  Var entropy(Var p) {
    const TensorT<T>& pv = val(p);
    if (pv.shape.size() != 2) throw std::invalid_argument("entropy: input must be 2d");
    int n = pv.shape[0], d = pv.shape[1];
    double h = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        double q = std::max(static_cast<double>(pv.v[i * d + j]), 1e-12);
        h -= q * std::log(q);
      }
    TensorT<T> out({1});
    out.v[0] = static_cast<T>(h / n);
    Var id = push(std::move(out), needs(p));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, p, n, d] {
        T g = nodes_[id].grad.v[0];
        const TensorT<T>& pv2 = nodes_[p].val;
        TensorT<T>& gp = ensure_grad(p);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) {
            double q = std::max(static_cast<double>(pv2.v[i * d + j]), 1e-12);
            gp.v[i * d + j] -= g * static_cast<T>((std::log(q) + 1.0) / n);
          }
      };
    return id;
  }

  // Attention pooling: feat [N,C,H,W] weighted by attn [N,1,H,W] -> [N,C].
  Var attend(Var feat, Var attn) {
    const TensorT<T>& fv = val(feat);
    const TensorT<T>& av = val(attn);
    if (fv.shape.size() != 4 || av.shape.size() != 4 || av.shape[1] != 1 ||
        fv.shape[0] != av.shape[0] || fv.shape[2] != av.shape[2] ||
        fv.shape[3] != av.shape[3])
      throw std::invalid_argument("attend: shape mismatch");
    int n = fv.shape[0], c = fv.shape[1], sp = fv.shape[2] * fv.shape[3];
    TensorT<T> out({n, c});
    for (int i = 0; i < n; ++i) {
      const T* f = fv.v.data() + static_cast<size_t>(i) * c * sp;
      const T* a = av.v.data() + static_cast<size_t>(i) * sp;
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int p = 0; p < sp; ++p) s += static_cast<double>(f[ch * sp + p]) * a[p];
        out.v[i * c + ch] = static_cast<T>(s);
      }
    }
    Var id = push(std::move(out), needs(feat) || needs(attn));
    if (nodes_[id].needs_grad)
      nodes_[id].back = [this, id, feat, attn, n, c, sp] {
        const TensorT<T>& g = nodes_[id].grad;
        const TensorT<T>& fv2 = nodes_[feat].val;
        const TensorT<T>& av2 = nodes_[attn].val;
        for (int i = 0; i < n; ++i) {
          const T* gy = g.v.data() + static_cast<size_t>(i) * c;
          if (needs(feat)) {
            T* gf = ensure_grad(feat).v.data() + static_cast<size_t>(i) * c * sp;
            const T* a = av2.v.data() + static_cast<size_t>(i) * sp;
            for (int ch = 0; ch < c; ++ch)
              for (int p = 0; p < sp; ++p) gf[ch * sp + p] += gy[ch] * a[p];
          }
          if (needs(attn)) {
            T* ga = ensure_grad(attn).v.data() + static_cast<size_t>(i) * sp;
            const T* f = fv2.v.data() + static_cast<size_t>(i) * c * sp;
            for (int ch = 0; ch < c; ++ch)
              for (int p = 0; p < sp; ++p) ga[p] += gy[ch] * f[ch * sp + p];
          }
        }
      };
    return id;
  }

  // --- backward ------------------------------------------------------------

  void backward(Var loss) {
    if (val(loss).size() != 1) throw std::invalid_argument("backward: loss not scalar");
    if (!std::isfinite(static_cast<double>(scalar(loss))))
      throw std::runtime_error("backward: non-finite loss");
    ensure_grad(loss).v[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      Node& node = nodes_[i];
      if (node.grad.size() == 0 || !node.back) continue;
      node.back();
    }
  }

 private:
  struct Node {
    TensorT<T> val;
    TensorT<T> grad;  // empty until first accumulation
    std::function<void()> back;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;

  Var push(TensorT<T> v, bool needs_grad, std::function<void()> back = nullptr) {
    Node node;
    node.val = std::move(v);
    node.needs_grad = needs_grad;
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size() - 1);
  }

  bool needs(Var id) const { return nodes_[id].needs_grad; }

  TensorT<T>& ensure_grad(Var id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = TensorT<T>(node.val.shape);
    return node.grad;
  }

  void accumulate(Var id, const T* g) {
    TensorT<T>& dst = ensure_grad(id);
    for (size_t i = 0; i < dst.size(); ++i) dst.v[i] += g[i];
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (val(a).shape != val(b).shape)
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
};

using Graph = GraphT<float>;

}  // namespace cenlab::nn
