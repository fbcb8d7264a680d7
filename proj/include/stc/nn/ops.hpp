#pragma once

// Differentiable operations recorded on a Tape. Image tensors are NCHW.
// No op mutates its inputs.

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "stc/nn/tape.hpp"
#include "stc/nn/tensor.hpp"

namespace stc::nn {

struct Conv2dGeometry {
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
};

inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
inline int conv_transpose_out(int in, int k, int s, int p, int op) {
  return (in - 1) * s - 2 * p + k + op;
}

namespace detail {

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ArgumentError(std::string(what) + ": expected NCHW tensor, got " + to_string(s));
}

// Output columns [lo, hi) whose input column ox*s - p + j lies inside [0, w).
inline std::pair<int, int> valid_range(int ow, int w, int s, int p, int j) {
  const int off = j - p;
  int lo = off >= 0 ? 0 : (-off + s - 1) / s;
  int hi = w - 1 - off < 0 ? 0 : (w - 1 - off) / s + 1;
  lo = std::min(lo, ow);
  hi = std::clamp(hi, lo, ow);
  return {lo, hi};
}

// col[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*sh - ph + i, ox*sw - pw + j]
template <class T>
void im2col(const T* x, int c, int h, int w, const Conv2dGeometry& g, int oh, int ow, T* col) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + (static_cast<std::size_t>(ci * g.kh + i) * g.kw + j) * p;
        const T* plane = x + static_cast<std::size_t>(ci) * h * w;
        const auto [lo, hi] = valid_range(ow, w, g.sw, g.pw, j);
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * g.sh - g.ph + i;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (y < 0 || y >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + ow, T(0));
          const T* src = plane + static_cast<std::size_t>(y) * w + (lo * g.sw - g.pw + j);
          if (g.sw == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox, src += g.sw) dst[ox] = *src;
          }
        }
      }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
template <class T>
void col2im(const T* col, int c, int h, int w, const Conv2dGeometry& g, int oh, int ow, T* x) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + (static_cast<std::size_t>(ci * g.kh + i) * g.kw + j) * p;
        T* plane = x + static_cast<std::size_t>(ci) * h * w;
        const auto [lo, hi] = valid_range(ow, w, g.sw, g.pw, j);
        for (int oy = 0; oy < oh; ++oy) {
          const int y = oy * g.sh - g.ph + i;
          if (y < 0 || y >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(y) * w + (lo * g.sw - g.pw + j);
          if (g.sw == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox - lo] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox, dst += g.sw) *dst += src[ox];
          }
        }
      }
}

// Stride-1 convolution without im2col, for layers with few channels where the
// column buffer would dwarf the arithmetic. mode 0: y += w*x; 1: gx += w^T*gy;
// 2: gw += gy (x) x.
template <class T>
void direct_conv(int mode, const T* x, T* gx, const T* w, T* gw, T* y, const T* gy, int c, int h, int wd,
                 int o, const Conv2dGeometry& g, int oh, int ow) {
  for (int oc = 0; oc < o; ++oc)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < g.kh; ++i)
        for (int j = 0; j < g.kw; ++j) {
          const std::size_t widx = ((static_cast<std::size_t>(oc) * c + ci) * g.kh + i) * g.kw + j;
          const auto [lo, hi] = valid_range(ow, wd, 1, g.pw, j);
          const int shift = j - g.pw;
          T wacc = 0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy - g.ph + i;
            if (iy < 0 || iy >= h) continue;
            const std::size_t in_off = (static_cast<std::size_t>(ci) * h + iy) * wd + shift;
            const std::size_t out_off = (static_cast<std::size_t>(oc) * oh + oy) * ow;
            if (mode == 0) {
              const T wv = w[widx];
              const T* src = x + in_off;
              T* dst = y + out_off;
#pragma omp simd
              for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
            } else if (mode == 1) {
              const T wv = w[widx];
              const T* src = gy + out_off;
              T* dst = gx + in_off;
#pragma omp simd
              for (int ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
            } else {
              const T* a = gy + out_off;
              const T* b = x + in_off;
#pragma omp simd reduction(+ : wacc)
              for (int ox = lo; ox < hi; ++ox) wacc += a[ox] * b[ox];
            }
          }
          if (mode == 2) gw[widx] += wacc;
        }
}

inline bool use_direct(int o, int c, const Conv2dGeometry& g) {
  return g.sh == 1 && g.sw == 1 && static_cast<long>(o) * c <= 256;
}

}  // namespace detail

// w: (out_channels, in_channels, kh, kw); b: (out_channels).
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int sh, int sw, int ph, int pw) {
  const Shape xs = tape.shape(x), ws = tape.shape(w);
  detail::require_rank4(xs, "conv2d input");
  detail::require_rank4(ws, "conv2d weight");
  const int n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const int o = ws[0];
  const Conv2dGeometry g{ws[2], ws[3], sh, sw, ph, pw};
  if (ws[1] != c)
    throw ArgumentError("conv2d: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                        std::to_string(c));
  if (tape.shape(b) != Shape{o}) throw ArgumentError("conv2d: bias shape mismatch");
  if (sh < 1 || sw < 1 || ph < 0 || pw < 0) throw ArgumentError("conv2d: bad stride/padding");
  if (h + 2 * ph < g.kh || wd + 2 * pw < g.kw)
    throw ArgumentError("conv2d: kernel larger than padded input " + to_string(xs));
  const int oh = conv_out(h, g.kh, sh, ph), ow = conv_out(wd, g.kw, sw, pw);
  const int k = c * g.kh * g.kw, p = oh * ow;

  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out({n, o, oh, ow});
  const bool direct = detail::use_direct(o, c, g);
  std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(n) * k * p);
  for (int i = 0; i < n; ++i) {
    if (direct) {
      T* dst = out.data.data() + static_cast<std::size_t>(i) * o * p;
      for (int oc = 0; oc < o; ++oc) std::fill(dst + oc * p, dst + (oc + 1) * p, bv[oc]);
      detail::direct_conv<T>(0, xv.data.data() + static_cast<std::size_t>(i) * c * h * wd, nullptr, wv.data.data(),
                             nullptr, dst, nullptr, c, h, wd, o, g, oh, ow);
      continue;
    }
    T* col = cols.data() + static_cast<std::size_t>(i) * k * p;
    detail::im2col(xv.data.data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, g, oh, ow, col);
    T* dst = out.data.data() + static_cast<std::size_t>(i) * o * p;
    for (int oc = 0; oc < o; ++oc) std::fill(dst + oc * p, dst + (oc + 1) * p, bv[oc]);
    blas::gemm(false, false, o, p, k, T(1), wv.data.data(), k, col, p, T(1), dst, p);
  }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  return tape.record(std::move(out), rg,
                  [=, cols = std::move(cols)](Tape<T>& t, Var y) {
                    const Tensor<T>& gy = t.grad(y);
                    if (t.requires_grad(b)) {
                      Tensor<T>& gb = t.grad(b);
                      for (int i = 0; i < n; ++i)
                        for (int oc = 0; oc < o; ++oc) {
                          const T* src = gy.data.data() + (static_cast<std::size_t>(i) * o + oc) * p;
                          T acc = 0;
                          for (int q = 0; q < p; ++q) acc += src[q];
                          gb[oc] += acc;
                        }
                    }
                    if (direct) {
                      const Tensor<T>& xv2 = t.value(x);
                      const Tensor<T>& wv2 = t.value(w);
                      T* gw = t.requires_grad(w) ? t.grad(w).data.data() : nullptr;
                      T* gx = t.requires_grad(x) ? t.grad(x).data.data() : nullptr;
                      for (int i = 0; i < n; ++i) {
                        const T* gyi = gy.data.data() + static_cast<std::size_t>(i) * o * p;
                        const std::size_t xo = static_cast<std::size_t>(i) * c * h * wd;
                        if (gw)
                          detail::direct_conv<T>(2, xv2.data.data() + xo, nullptr, nullptr, gw, nullptr, gyi, c, h, wd,
                                                 o, g, oh, ow);
                        if (gx)
                          detail::direct_conv<T>(1, nullptr, gx + xo, wv2.data.data(), nullptr, nullptr, gyi, c, h,
                                                 wd, o, g, oh, ow);
                      }
                      return;
                    }
                    if (t.requires_grad(w)) {
                      Tensor<T>& gw = t.grad(w);
                      for (int i = 0; i < n; ++i)
                        blas::gemm(false, true, o, k, p, T(1),
                                   gy.data.data() + static_cast<std::size_t>(i) * o * p, p,
                                   cols.data() + static_cast<std::size_t>(i) * k * p, p, T(1),
                                   gw.data.data(), k);
                    }
                    if (t.requires_grad(x)) {
                      Tensor<T>& gx = t.grad(x);
                      const Tensor<T>& wv2 = t.value(w);
                      std::vector<T> dcol(static_cast<std::size_t>(k) * p);
                      for (int i = 0; i < n; ++i) {
                        blas::gemm(true, false, k, p, o, T(1), wv2.data.data(), k,
                                   gy.data.data() + static_cast<std::size_t>(i) * o * p, p, T(0),
                                   dcol.data(), p);
                        detail::col2im(dcol.data(), c, h, wd, g, oh, ow,
                                       gx.data.data() + static_cast<std::size_t>(i) * c * h * wd);
                      }
                    }
                  });
}

// Transposed convolution (adjoint of conv2d in x).
// w: (in_channels, out_channels, kh, kw); b: (out_channels).
template <class T>
Var conv2d_transpose(Tape<T>& tape, Var x, Var w, Var b, int sh, int sw, int ph, int pw, int oph,
                     int opw) {
  const Shape xs = tape.shape(x), ws = tape.shape(w);
  detail::require_rank4(xs, "conv2d_transpose input");
  detail::require_rank4(ws, "conv2d_transpose weight");
  const int n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const int cout = ws[1];
  const Conv2dGeometry g{ws[2], ws[3], sh, sw, ph, pw};
  if (ws[0] != cin)
    throw ArgumentError("conv2d_transpose: weight expects " + std::to_string(ws[0]) +
                        " input channels, got " + std::to_string(cin));
  if (tape.shape(b) != Shape{cout}) throw ArgumentError("conv2d_transpose: bias shape mismatch");
  if (sh < 1 || sw < 1 || ph < 0 || pw < 0) throw ArgumentError("conv2d_transpose: bad stride/padding");
  if (oph < 0 || opw < 0 || oph >= sh || opw >= sw)
    throw ArgumentError("conv2d_transpose: output padding must be smaller than stride");
  const int oh = conv_transpose_out(h, g.kh, sh, ph, oph);
  const int ow = conv_transpose_out(wd, g.kw, sw, pw, opw);
  if (oh < 1 || ow < 1 || conv_out(oh, g.kh, sh, ph) != h || conv_out(ow, g.kw, sw, pw) != wd)
    throw ArgumentError("conv2d_transpose: inconsistent geometry for input " + to_string(xs));
  const int k = cout * g.kh * g.kw, p = h * wd, q = oh * ow;

  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out({n, cout, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(k) * p);
  for (int i = 0; i < n; ++i) {
    blas::gemm(true, false, k, p, cin, T(1), wv.data.data(), k,
               xv.data.data() + static_cast<std::size_t>(i) * cin * p, p, T(0), col.data(), p);
    T* dst = out.data.data() + static_cast<std::size_t>(i) * cout * q;
    for (int oc = 0; oc < cout; ++oc) std::fill(dst + oc * q, dst + (oc + 1) * q, bv[oc]);
    detail::col2im(col.data(), cout, oh, ow, g, h, wd, dst);
  }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad(b);
      for (int i = 0; i < n; ++i)
        for (int oc = 0; oc < cout; ++oc) {
          const T* src = gy.data.data() + (static_cast<std::size_t>(i) * cout + oc) * q;
          T acc = 0;
          for (int r = 0; r < q; ++r) acc += src[r];
          gb[oc] += acc;
        }
    }
    if (!t.requires_grad(w) && !t.requires_grad(x)) return;
    std::vector<T> dcol(static_cast<std::size_t>(k) * p);
    for (int i = 0; i < n; ++i) {
      detail::im2col(gy.data.data() + static_cast<std::size_t>(i) * cout * q, cout, oh, ow, g, h, wd,
                     dcol.data());
      if (t.requires_grad(w))
        blas::gemm(false, true, cin, k, p, T(1),
                   t.value(x).data.data() + static_cast<std::size_t>(i) * cin * p, p, dcol.data(), p,
                   T(1), t.grad(w).data.data(), k);
      if (t.requires_grad(x))
        blas::gemm(false, false, cin, p, k, T(1), t.value(w).data.data(), k, dcol.data(), p, T(1),
                   t.grad(x).data.data() + static_cast<std::size_t>(i) * cin * p, p);
    }
  });
}

// Gated linear unit over channels: first half * sigmoid(second half).
template <class T>
Var glu(Tape<T>& tape, Var x) {
  const Shape xs = tape.shape(x);
  if (xs.size() < 2 || xs[1] % 2 != 0)
    throw ArgumentError("glu: channel count must be even, got shape " + to_string(xs));
  const int n = xs[0], c2 = xs[1], c = c2 / 2;
  const std::size_t inner = numel(xs) / (static_cast<std::size_t>(n) * c2);
  Shape ys = xs;
  ys[1] = c;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(ys);
  std::vector<T> gate(out.size());
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c * inner; ++j) {
      const std::size_t lin = static_cast<std::size_t>(i) * c2 * inner + j;
      const T s = T(1) / (T(1) + std::exp(-xv[lin + c * inner]));
      const std::size_t o = static_cast<std::size_t>(i) * c * inner + j;
      gate[o] = s;
      out[o] = xv[lin] * s;
    }
  return tape.record(std::move(out), tape.requires_grad(x), [=, gate = std::move(gate)](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    const Tensor<T>& xv2 = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c * inner; ++j) {
        const std::size_t lin = static_cast<std::size_t>(i) * c2 * inner + j;
        const std::size_t o = static_cast<std::size_t>(i) * c * inner + j;
        const T s = gate[o];
        gx[lin] += gy[o] * s;
        gx[lin + c * inner] += gy[o] * xv2[lin] * s * (T(1) - s);
      }
  });
}

// Per-sample, per-channel standardization over H x W, then affine.
template <class T>
Var instance_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const Shape xs = tape.shape(x);
  detail::require_rank4(xs, "instance_norm input");
  const int n = xs[0], c = xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  if (hw < 1) throw ArgumentError("instance_norm: empty spatial extent");
  if (tape.shape(gamma) != Shape{c} || tape.shape(beta) != Shape{c})
    throw ArgumentError("instance_norm: affine parameters must have one entry per channel");
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  Tensor<T> out(xs);
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      T mean = 0;
      for (std::size_t j = 0; j < hw; ++j) mean += xv[base + j];
      mean /= static_cast<T>(hw);
      T var = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        const T d = xv[base + j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(hw);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(i) * c + ch] = is;
      for (std::size_t j = 0; j < hw; ++j) {
        const T xh = (xv[base + j] - mean) * is;
        xhat[base + j] = xh;
        out[base + j] = gv[ch] * xh + bv[ch];
      }
    }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.record(std::move(out), rg,
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, Var y) {
                    const Tensor<T>& gy = t.grad(y);
                    const Tensor<T>& gv2 = t.value(gamma);
                    for (int i = 0; i < n; ++i)
                      for (int ch = 0; ch < c; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
                        T sum_g = 0, sum_gx = 0;
                        for (std::size_t j = 0; j < hw; ++j) {
                          sum_g += gy[base + j];
                          sum_gx += gy[base + j] * xhat[base + j];
                        }
                        if (t.requires_grad(gamma)) t.grad(gamma)[ch] += sum_gx;
                        if (t.requires_grad(beta)) t.grad(beta)[ch] += sum_g;
                        if (t.requires_grad(x)) {
                          Tensor<T>& gx = t.grad(x);
                          const T is = inv_std[static_cast<std::size_t>(i) * c + ch];
                          const T mg = sum_g / static_cast<T>(hw);
                          const T mgx = sum_gx / static_cast<T>(hw);
                          for (std::size_t j = 0; j < hw; ++j)
                            gx[base + j] += gv2[ch] * is * (gy[base + j] - mg - xhat[base + j] * mgx);
                        }
                      }
                  });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T slope = T(0.2)) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool pos = xv[i] > T(0);
    tape.mix_signature(pos);
    out[i] = pos ? xv[i] : slope * xv[i];
  }
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    const Tensor<T>& xv2 = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += xv2[i] > T(0) ? gy[i] : slope * gy[i];
  });
}

// Concatenates along the channel axis (dim 1).
template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Shape as = tape.shape(a), bs = tape.shape(b);
  detail::require_rank4(as, "concat_channels");
  detail::require_rank4(bs, "concat_channels");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ArgumentError("concat_channels: shapes " + to_string(as) + " and " + to_string(bs) + " differ");
  const int n = as[0], ca = as[1], cb = bs[1];
  const std::size_t hw = static_cast<std::size_t>(as[2]) * as[3];
  Tensor<T> out({n, ca + cb, as[2], as[3]});
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(i * ca * hw), ca * hw,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) * hw));
    std::copy_n(bv.data.begin() + static_cast<std::ptrdiff_t>(i * cb * hw), cb * hw,
                out.data.begin() + static_cast<std::ptrdiff_t>((i * (ca + cb) + ca) * hw));
  }
  return tape.record(std::move(out), tape.requires_grad(a) || tape.requires_grad(b), [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    for (int i = 0; i < n; ++i) {
      if (t.requires_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        for (std::size_t j = 0; j < ca * hw; ++j) ga[i * ca * hw + j] += gy[i * (ca + cb) * hw + j];
      }
      if (t.requires_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        for (std::size_t j = 0; j < cb * hw; ++j)
          gb[i * cb * hw + j] += gy[(i * (ca + cb) + ca) * hw + j];
      }
    }
  });
}

// Mean over H x W: (N, C, H, W) -> (N, C).
template <class T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Shape xs = tape.shape(x);
  detail::require_rank4(xs, "global_avg_pool");
  const int n = xs[0], c = xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += xv[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i)
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += gy[i] / static_cast<T>(hw);
  });
}

// x: (N, in), w: (out, in), b: (out) -> (N, out).
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Shape xs = tape.shape(x), ws = tape.shape(w);
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || tape.shape(b) != Shape{ws[0]})
    throw ArgumentError("linear: shape mismatch " + to_string(xs) + " x " + to_string(ws));
  const int n = xs[0], in = xs[1], o = ws[0];
  Tensor<T> out({n, o});
  const Tensor<T>& bv = tape.value(b);
  for (int i = 0; i < n; ++i) std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + i * o);
  blas::gemm(false, true, n, o, in, T(1), tape.value(x).data.data(), in, tape.value(w).data.data(), in,
             T(1), out.data.data(), o);
  const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    if (t.requires_grad(b))
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) t.grad(b)[j] += gy[i * o + j];
    if (t.requires_grad(w))
      blas::gemm(true, false, o, in, n, T(1), gy.data.data(), o, t.value(x).data.data(), in, T(1),
                 t.grad(w).data.data(), in);
    if (t.requires_grad(x))
      blas::gemm(false, false, n, in, o, T(1), gy.data.data(), o, t.value(w).data.data(), in, T(1),
                 t.grad(x).data.data(), in);
  });
}

// sum_i coeff_i * term_i over same-shaped tensors.
template <class T>
Var weighted_sum(Tape<T>& tape, std::vector<std::pair<Var, T>> terms) {
  if (terms.empty()) throw ArgumentError("weighted_sum: no terms");
  const Shape s = tape.shape(terms.front().first);
  Tensor<T> out(s);
  bool rg = false;
  for (const auto& [v, coeff] : terms) {
    if (tape.shape(v) != s) throw ArgumentError("weighted_sum: shape mismatch");
    const Tensor<T>& tv = tape.value(v);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeff * tv[i];
    rg = rg || tape.requires_grad(v);
  }
  return tape.record(std::move(out), rg, [=](Tape<T>& t, Var y) {
    const Tensor<T>& gy = t.grad(y);
    for (const auto& [v, coeff] : terms) {
      if (!t.requires_grad(v) || coeff == T(0)) continue;
      Tensor<T>& gv = t.grad(v);
      for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += coeff * gy[i];
    }
  });
}

}  // namespace stc::nn
