#ifndef DROPNAS_CORE_OPS_HPP
#define DROPNAS_CORE_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dropnas/core/tape.hpp"
#include "dropnas/core/tensor.hpp"

// Forward ops with reverse-mode closures. Tensors are NCHW, batch first.
// An op records on the tape only when at least one input is tracked; the
// output is tracked in that case. Every op checks its output for NaN/Inf.

namespace dropnas {

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}
}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require(same_shape(a, b), "add: shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
  bool tracked = a.tracked() || b.tracked();
  Tensor out = Tensor::zeros(a.shape(), tracked);
  const long n = a.numel();
  for (long i = 0; i < n; ++i) out.v()[i] = a.v()[i] + b.v()[i];
  check_finite(out, "add");
  if (tracked) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      if (ai->tracked)
        for (long i = 0; i < n; ++i) ai->g[i] += oi->g[i];
      if (bi->tracked)
        for (long i = 0; i < n; ++i) bi->g[i] += oi->g[i];
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require(same_shape(a, b), "mul: shape mismatch");
  bool tracked = a.tracked() || b.tracked();
  Tensor out = Tensor::zeros(a.shape(), tracked);
  const long n = a.numel();
  for (long i = 0; i < n; ++i) out.v()[i] = a.v()[i] * b.v()[i];
  check_finite(out, "mul");
  if (tracked) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      if (ai->tracked)
        for (long i = 0; i < n; ++i) ai->g[i] += oi->g[i] * bi->v[i];
      if (bi->tracked)
        for (long i = 0; i < n; ++i) bi->g[i] += oi->g[i] * ai->v[i];
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, Real c) {
  Tensor out = Tensor::zeros(x.shape(), x.tracked());
  const long n = x.numel();
  for (long i = 0; i < n; ++i) out.v()[i] = x.v()[i] * c;
  check_finite(out, "scale");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), c, n] {
      for (long i = 0; i < n; ++i) xi->g[i] += oi->g[i] * c;
    });
  }
  return out;
}

// out = coeff[index] * x, where coeff is a (typically tracked) vector.
// Used to weight one candidate operation's output by its mixture probability.
inline Tensor scale_by_element(Tape& tape, const Tensor& x, const Tensor& coeff, int index) {
  detail::require(index >= 0 && index < coeff.numel(), "scale_by_element: index out of range");
  bool tracked = x.tracked() || coeff.tracked();
  Tensor out = Tensor::zeros(x.shape(), tracked);
  const Real c = coeff.v()[static_cast<size_t>(index)];
  const long n = x.numel();
  for (long i = 0; i < n; ++i) out.v()[i] = x.v()[i] * c;
  check_finite(out, "scale_by_element");
  if (tracked) {
    tape.record([xi = x.impl(), ci = coeff.impl(), oi = out.impl(), index, n] {
      const Real c = ci->v[static_cast<size_t>(index)];
      if (xi->tracked)
        for (long i = 0; i < n; ++i) xi->g[i] += oi->g[i] * c;
      if (ci->tracked) {
        Real acc = 0;
        for (long i = 0; i < n; ++i) acc += oi->g[i] * xi->v[i];
        ci->g[static_cast<size_t>(index)] += acc;
      }
    });
  }
  return out;
}

// Identity forward; backward multiplies the incoming gradient by keep[i].
// Entries with keep[i]==0 receive exactly zero gradient.
inline Tensor grad_mask(Tape& tape, const Tensor& x, std::vector<std::uint8_t> keep) {
  detail::require(static_cast<long>(keep.size()) == x.numel(),
                  "grad_mask: mask length does not match tensor");
  Tensor out = Tensor::zeros(x.shape(), x.tracked());
  out.v() = x.v();
  if (x.tracked()) {
    const long n = x.numel();
    tape.record([xi = x.impl(), oi = out.impl(), keep = std::move(keep), n] {
      for (long i = 0; i < n; ++i)
        if (keep[static_cast<size_t>(i)]) xi->g[i] += oi->g[i];
    });
  }
  return out;
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.tracked());
  const long n = x.numel();
  for (long i = 0; i < n; ++i) out.v()[i] = x.v()[i] > Real(0) ? x.v()[i] : Real(0);
  check_finite(out, "relu");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), n] {
      for (long i = 0; i < n; ++i)
        if (xi->v[i] > Real(0)) xi->g[i] += oi->g[i];
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({1}, x.tracked());
  Real acc = 0;
  for (Real v : x.v()) acc += v;
  out.v()[0] = acc;
  check_finite(out, "sum");
  if (x.tracked()) {
    const long n = x.numel();
    tape.record([xi = x.impl(), oi = out.impl(), n] {
      const Real go = oi->g[0];
      for (long i = 0; i < n; ++i) xi->g[i] += go;
    });
  }
  return out;
}

// ---------------------------------------------------------------- dense

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const int N = a.dim(0), F = a.dim(1), K = b.dim(1);
  bool tracked = a.tracked() || b.tracked();
  Tensor out = Tensor::zeros({N, K}, tracked);
  {
    const Real* av = a.v().data();
    const Real* bv = b.v().data();
    Real* ov = out.v().data();
    for (int i = 0; i < N; ++i)
      for (int f = 0; f < F; ++f) {
        const Real aif = av[i * F + f];
        const Real* brow = bv + f * K;
        Real* orow = ov + i * K;
        for (int k = 0; k < K; ++k) orow[k] += aif * brow[k];
      }
  }
  check_finite(out, "matmul");
  if (tracked) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), N, F, K] {
      const Real* go = oi->g.data();
      if (ai->tracked) {
        Real* ga = ai->g.data();
        const Real* bv = bi->v.data();
        for (int i = 0; i < N; ++i)
          for (int f = 0; f < F; ++f) {
            Real acc = 0;
            const Real* brow = bv + f * K;
            const Real* grow = go + i * K;
            for (int k = 0; k < K; ++k) acc += grow[k] * brow[k];
            ga[i * F + f] += acc;
          }
      }
      if (bi->tracked) {
        Real* gb = bi->g.data();
        const Real* av = ai->v.data();
        for (int i = 0; i < N; ++i)
          for (int f = 0; f < F; ++f) {
            const Real aif = av[i * F + f];
            const Real* grow = go + i * K;
            Real* gbrow = gb + f * K;
            for (int k = 0; k < K; ++k) gbrow[k] += aif * grow[k];
          }
      }
    });
  }
  return out;
}

// x: [N,K], bias: [K]
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  detail::require(x.ndim() == 2 && bias.ndim() == 1 && x.dim(1) == bias.dim(0),
                  "add_bias: incompatible shapes");
  const int N = x.dim(0), K = x.dim(1);
  bool tracked = x.tracked() || bias.tracked();
  Tensor out = Tensor::zeros(x.shape(), tracked);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k) out.v()[i * K + k] = x.v()[i * K + k] + bias.v()[k];
  check_finite(out, "add_bias");
  if (tracked) {
    tape.record([xi = x.impl(), bi = bias.impl(), oi = out.impl(), N, K] {
      if (xi->tracked)
        for (long i = 0; i < static_cast<long>(N) * K; ++i) xi->g[i] += oi->g[i];
      if (bi->tracked)
        for (int i = 0; i < N; ++i)
          for (int k = 0; k < K; ++k) bi->g[k] += oi->g[i * K + k];
    });
  }
  return out;
}

// ---------------------------------------------------------------- conv2d

// "same" padding for odd kernels: out spatial = ceil(in / stride).
// x: [N,Cin,H,W], w: [Cout,Cin/groups,kh,kw]. No bias (BN follows convs here).
inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, int stride = 1,
                     int dilation = 1, int groups = 1) {
  detail::require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expects 4-d input and kernel");
  detail::require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), Cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  detail::require(groups >= 1 && Ci % groups == 0 && Co % groups == 0,
                  "conv2d: channel counts not divisible by groups");
  detail::require(Cig == Ci / groups, "conv2d: kernel channels " + std::to_string(Cig) +
                                          " != input channels/groups " +
                                          std::to_string(Ci / groups));
  detail::require(kh % 2 == 1 && kw % 2 == 1, "conv2d: even kernel size unsupported");
  const int ph = dilation * (kh - 1) / 2, pw = dilation * (kw - 1) / 2;
  const int Ho = (H + 2 * ph - dilation * (kh - 1) - 1) / stride + 1;
  const int Wo = (W + 2 * pw - dilation * (kw - 1) - 1) / stride + 1;
  const int cog = Co / groups;

  bool tracked = x.tracked() || w.tracked();
  Tensor out = Tensor::zeros({N, Co, Ho, Wo}, tracked);
  {
    const Real* xv = x.v().data();
    const Real* wv = w.v().data();
    Real* ov = out.v().data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        const int gidx = co / cog;
        Real* oplane = ov + (static_cast<long>(n) * Co + co) * Ho * Wo;
        for (int cg = 0; cg < Cig; ++cg) {
          const int ci = gidx * Cig + cg;
          const Real* xplane = xv + (static_cast<long>(n) * Ci + ci) * H * W;
          const Real* wk = wv + ((static_cast<long>(co) * Cig + cg) * kh) * kw;
          for (int r = 0; r < kh; ++r)
            for (int c = 0; c < kw; ++c) {
              const Real wval = wk[r * kw + c];
              if (wval == Real(0)) continue;
              const int ih0 = -ph + r * dilation, iw0 = -pw + c * dilation;
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh * stride + ih0;
                if (ih < 0 || ih >= H) continue;
                const Real* xrow = xplane + ih * W;
                Real* orow = oplane + oh * Wo;
                for (int ow = 0; ow < Wo; ++ow) {
                  const int iw = ow * stride + iw0;
                  if (iw < 0 || iw >= W) continue;
                  orow[ow] += wval * xrow[iw];
                }
              }
            }
        }
      }
  }
  check_finite(out, "conv2d");
  if (tracked) {
    tape.record([xi = x.impl(), wi = w.impl(), oi = out.impl(), N, Ci, H, W, Co, Cig, kh,
                 kw, Ho, Wo, stride, dilation, ph, pw, cog] {
      const Real* go = oi->g.data();
      const Real* xv = xi->v.data();
      const Real* wv = wi->v.data();
      Real* gx = xi->tracked ? xi->g.data() : nullptr;
      Real* gw = wi->tracked ? wi->g.data() : nullptr;
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
          const int gidx = co / cog;
          const Real* gplane = go + (static_cast<long>(n) * Co + co) * Ho * Wo;
          for (int cg = 0; cg < Cig; ++cg) {
            const int ci = gidx * Cig + cg;
            const Real* xplane = xv + (static_cast<long>(n) * Ci + ci) * H * W;
            Real* gxplane = gx ? gx + (static_cast<long>(n) * Ci + ci) * H * W : nullptr;
            const long wbase = (static_cast<long>(co) * Cig + cg) * kh * kw;
            for (int r = 0; r < kh; ++r)
              for (int c = 0; c < kw; ++c) {
                const Real wval = wv[wbase + r * kw + c];
                Real wgrad = 0;
                const int ih0 = -ph + r * dilation, iw0 = -pw + c * dilation;
                for (int oh = 0; oh < Ho; ++oh) {
                  const int ih = oh * stride + ih0;
                  if (ih < 0 || ih >= H) continue;
                  const Real* grow = gplane + oh * Wo;
                  const Real* xrow = xplane + ih * W;
                  Real* gxrow = gxplane ? gxplane + ih * W : nullptr;
                  for (int ow = 0; ow < Wo; ++ow) {
                    const int iw = ow * stride + iw0;
                    if (iw < 0 || iw >= W) continue;
                    const Real g = grow[ow];
                    if (gxrow) gxrow[iw] += g * wval;
                    wgrad += g * xrow[iw];
                  }
                }
                if (gw) gw[wbase + r * kw + c] += wgrad;
              }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------- pooling

namespace detail {
inline void pool_out_dims(int H, int W, int stride, int& Ho, int& Wo) {
  // 3x3 window, padding 1
  Ho = (H + 2 - 3) / stride + 1;
  Wo = (W + 2 - 3) / stride + 1;
}
}  // namespace detail

inline Tensor max_pool3x3(Tape& tape, const Tensor& x, int stride = 1) {
  detail::require(x.ndim() == 4, "max_pool3x3: expects 4-d input");
  detail::require(stride == 1 || stride == 2, "max_pool3x3: stride must be 1 or 2");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Ho, Wo;
  detail::pool_out_dims(H, W, stride, Ho, Wo);
  Tensor out = Tensor::zeros({N, C, Ho, Wo}, x.tracked());
  std::vector<std::int32_t> argmax(static_cast<size_t>(out.numel()));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real* xp = x.v().data() + (static_cast<long>(n) * C + c) * H * W;
      Real* op = out.v().data() + (static_cast<long>(n) * C + c) * Ho * Wo;
      std::int32_t* ap = argmax.data() + (static_cast<long>(n) * C + c) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          Real best = 0;
          int besti = -1;
          for (int r = 0; r < 3; ++r) {
            const int ih = oh * stride - 1 + r;
            if (ih < 0 || ih >= H) continue;
            for (int cc = 0; cc < 3; ++cc) {
              const int iw = ow * stride - 1 + cc;
              if (iw < 0 || iw >= W) continue;
              const Real v = xp[ih * W + iw];
              if (besti < 0 || v > best) {
                best = v;
                besti = ih * W + iw;
              }
            }
          }
          op[oh * Wo + ow] = best;
          ap[oh * Wo + ow] = besti;
        }
    }
  check_finite(out, "max_pool3x3");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), argmax = std::move(argmax), N, C, H, W,
                 Ho, Wo] {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          Real* gx = xi->g.data() + (static_cast<long>(n) * C + c) * H * W;
          const Real* go = oi->g.data() + (static_cast<long>(n) * C + c) * Ho * Wo;
          const std::int32_t* ap = argmax.data() + (static_cast<long>(n) * C + c) * Ho * Wo;
          for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i)
            if (ap[i] >= 0) gx[ap[i]] += go[i];
        }
    });
  }
  return out;
}

// average over valid (non-padding) window entries
inline Tensor avg_pool3x3(Tape& tape, const Tensor& x, int stride = 1) {
  detail::require(x.ndim() == 4, "avg_pool3x3: expects 4-d input");
  detail::require(stride == 1 || stride == 2, "avg_pool3x3: stride must be 1 or 2");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Ho, Wo;
  detail::pool_out_dims(H, W, stride, Ho, Wo);
  Tensor out = Tensor::zeros({N, C, Ho, Wo}, x.tracked());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real* xp = x.v().data() + (static_cast<long>(n) * C + c) * H * W;
      Real* op = out.v().data() + (static_cast<long>(n) * C + c) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          Real acc = 0;
          int cnt = 0;
          for (int r = 0; r < 3; ++r) {
            const int ih = oh * stride - 1 + r;
            if (ih < 0 || ih >= H) continue;
            for (int cc = 0; cc < 3; ++cc) {
              const int iw = ow * stride - 1 + cc;
              if (iw < 0 || iw >= W) continue;
              acc += xp[ih * W + iw];
              ++cnt;
            }
          }
          op[oh * Wo + ow] = acc / static_cast<Real>(cnt);
        }
    }
  check_finite(out, "avg_pool3x3");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), N, C, H, W, Ho, Wo, stride] {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          Real* gx = xi->g.data() + (static_cast<long>(n) * C + c) * H * W;
          const Real* go = oi->g.data() + (static_cast<long>(n) * C + c) * Ho * Wo;
          for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
              int cnt = 0;
              for (int r = 0; r < 3; ++r) {
                const int ih = oh * stride - 1 + r;
                if (ih < 0 || ih >= H) continue;
                for (int cc = 0; cc < 3; ++cc) {
                  const int iw = ow * stride - 1 + cc;
                  if (iw >= 0 && iw < W) ++cnt;
                }
              }
              const Real g = go[oh * Wo + ow] / static_cast<Real>(cnt);
              for (int r = 0; r < 3; ++r) {
                const int ih = oh * stride - 1 + r;
                if (ih < 0 || ih >= H) continue;
                for (int cc = 0; cc < 3; ++cc) {
                  const int iw = ow * stride - 1 + cc;
                  if (iw >= 0 && iw < W) gx[ih * W + iw] += g;
                }
              }
            }
        }
    });
  }
  return out;
}

// x[:, :, ::s, ::s] — parameter-free spatial reduction (identity at stride 2)
inline Tensor subsample(Tape& tape, const Tensor& x, int stride) {
  detail::require(x.ndim() == 4, "subsample: expects 4-d input");
  if (stride == 1) {
    // plain identity node so gradients still flow through a recorded op
    Tensor out = Tensor::zeros(x.shape(), x.tracked());
    out.v() = x.v();
    if (x.tracked()) {
      const long n = x.numel();
      tape.record([xi = x.impl(), oi = out.impl(), n] {
        for (long i = 0; i < n; ++i) xi->g[i] += oi->g[i];
      });
    }
    return out;
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  Tensor out = Tensor::zeros({N, C, Ho, Wo}, x.tracked());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          out.v()[((static_cast<long>(n) * C + c) * Ho + oh) * Wo + ow] =
              x.v()[((static_cast<long>(n) * C + c) * H + oh * stride) * W + ow * stride];
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), N, C, H, W, Ho, Wo, stride] {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow)
              xi->g[((static_cast<long>(n) * C + c) * H + oh * stride) * W + ow * stride] +=
                  oi->g[((static_cast<long>(n) * C + c) * Ho + oh) * Wo + ow];
    });
  }
  return out;
}

// ---------------------------------------------------------------- batch norm

// Per-batch statistics over (N,H,W) for each channel; no running averages.
// gamma/beta optional (pass undefined tensors to disable the affine part).
inline Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, Real eps = Real(1e-5)) {
  detail::require(x.ndim() == 4, "batch_norm: expects 4-d input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool affine = gamma.defined();
  if (affine)
    detail::require(gamma.numel() == C && beta.numel() == C,
                    "batch_norm: affine parameter size mismatch");
  const long m = static_cast<long>(N) * H * W;
  detail::require(m > 0, "batch_norm: empty batch");

  bool tracked = x.tracked() || (affine && (gamma.tracked() || beta.tracked()));
  Tensor out = Tensor::zeros(x.shape(), tracked);
  std::vector<Real> inv_std(static_cast<size_t>(C));
  std::vector<Real> xhat(static_cast<size_t>(x.numel()));
  for (int c = 0; c < C; ++c) {
    Real mean = 0;
    for (int n = 0; n < N; ++n) {
      const Real* xp = x.v().data() + (static_cast<long>(n) * C + c) * H * W;
      for (long i = 0; i < static_cast<long>(H) * W; ++i) mean += xp[i];
    }
    mean /= static_cast<Real>(m);
    Real var = 0;
    for (int n = 0; n < N; ++n) {
      const Real* xp = x.v().data() + (static_cast<long>(n) * C + c) * H * W;
      for (long i = 0; i < static_cast<long>(H) * W; ++i) {
        const Real d = xp[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<Real>(m);
    const Real istd = Real(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(c)] = istd;
    const Real g = affine ? gamma.v()[static_cast<size_t>(c)] : Real(1);
    const Real b = affine ? beta.v()[static_cast<size_t>(c)] : Real(0);
    for (int n = 0; n < N; ++n) {
      const long base = (static_cast<long>(n) * C + c) * H * W;
      const Real* xp = x.v().data() + base;
      Real* hp = xhat.data() + base;
      Real* op = out.v().data() + base;
      for (long i = 0; i < static_cast<long>(H) * W; ++i) {
        hp[i] = (xp[i] - mean) * istd;
        op[i] = g * hp[i] + b;
      }
    }
  }
  check_finite(out, "batch_norm");
  if (tracked) {
    tape.record([xi = x.impl(), gi = affine ? gamma.impl() : nullptr,
                 bi = affine ? beta.impl() : nullptr, oi = out.impl(),
                 inv_std = std::move(inv_std), xhat = std::move(xhat), N, C, H, W, m] {
      for (int c = 0; c < C; ++c) {
        const Real gam = gi ? gi->v[static_cast<size_t>(c)] : Real(1);
        // channel-wise reductions over dy and dy*xhat
        Real sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < N; ++n) {
          const long base = (static_cast<long>(n) * C + c) * H * W;
          const Real* go = oi->g.data() + base;
          const Real* hp = xhat.data() + base;
          for (long i = 0; i < static_cast<long>(H) * W; ++i) {
            sum_dy += go[i];
            sum_dy_xhat += go[i] * hp[i];
          }
        }
        if (gi && gi->tracked) gi->g[static_cast<size_t>(c)] += sum_dy_xhat;
        if (bi && bi->tracked) bi->g[static_cast<size_t>(c)] += sum_dy;
        if (xi->tracked) {
          const Real istd = inv_std[static_cast<size_t>(c)];
          const Real inv_m = Real(1) / static_cast<Real>(m);
          for (int n = 0; n < N; ++n) {
            const long base = (static_cast<long>(n) * C + c) * H * W;
            const Real* go = oi->g.data() + base;
            const Real* hp = xhat.data() + base;
            Real* gx = xi->g.data() + base;
            for (long i = 0; i < static_cast<long>(H) * W; ++i)
              gx[i] += gam * istd *
                       (go[i] - inv_m * sum_dy - hp[i] * inv_m * sum_dy_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- softmax & loss

// softmax along the last dimension (rows for 2-d, the whole vector for 1-d)
inline Tensor softmax(Tape& tape, const Tensor& x) {
  detail::require(x.ndim() == 1 || x.ndim() == 2, "softmax: expects 1-d or 2-d input");
  const int K = x.dim(x.ndim() - 1);
  const long rows = x.numel() / K;
  Tensor out = Tensor::zeros(x.shape(), x.tracked());
  for (long r = 0; r < rows; ++r) {
    const Real* xp = x.v().data() + r * K;
    Real* op = out.v().data() + r * K;
    Real mx = xp[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, xp[k]);
    Real z = 0;
    for (int k = 0; k < K; ++k) {
      op[k] = std::exp(xp[k] - mx);
      z += op[k];
    }
    for (int k = 0; k < K; ++k) op[k] /= z;
  }
  check_finite(out, "softmax");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), rows, K] {
      for (long r = 0; r < rows; ++r) {
        const Real* p = oi->v.data() + r * K;
        const Real* go = oi->g.data() + r * K;
        Real* gx = xi->g.data() + r * K;
        Real dot = 0;
        for (int k = 0; k < K; ++k) dot += go[k] * p[k];
        for (int k = 0; k < K; ++k) gx[k] += p[k] * (go[k] - dot);
      }
    });
  }
  return out;
}

// mean cross-entropy over the batch; logits [N,K], labels in [0,K)
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  detail::require(logits.ndim() == 2, "cross_entropy: expects 2-d logits");
  const int N = logits.dim(0), K = logits.dim(1);
  detail::require(static_cast<int>(labels.size()) == N,
                  "cross_entropy: label count does not match batch");
  Tensor out = Tensor::zeros({1}, logits.tracked());
  std::vector<Real> probs(static_cast<size_t>(logits.numel()));
  Real loss = 0;
  for (int i = 0; i < N; ++i) {
    detail::require(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < K,
                    "cross_entropy: label out of range");
    const Real* zp = logits.v().data() + static_cast<long>(i) * K;
    Real* pp = probs.data() + static_cast<long>(i) * K;
    Real mx = zp[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, zp[k]);
    Real z = 0;
    for (int k = 0; k < K; ++k) {
      pp[k] = std::exp(zp[k] - mx);
      z += pp[k];
    }
    for (int k = 0; k < K; ++k) pp[k] /= z;
    loss -= std::log(std::max(pp[labels[static_cast<size_t>(i)]], Real(1e-300)));
  }
  out.v()[0] = loss / static_cast<Real>(N);
  check_finite(out, "cross_entropy");
  if (logits.tracked()) {
    tape.record([zi = logits.impl(), oi = out.impl(), probs = std::move(probs), labels, N, K] {
      const Real go = oi->g[0] / static_cast<Real>(N);
      for (int i = 0; i < N; ++i) {
        const Real* pp = probs.data() + static_cast<long>(i) * K;
        Real* gz = zi->g.data() + static_cast<long>(i) * K;
        for (int k = 0; k < K; ++k)
          gz[k] += go * (pp[k] - (k == labels[static_cast<size_t>(i)] ? Real(1) : Real(0)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- shape ops

// [N,...] -> [N, prod(rest)]; same storage order, gradient passes through
inline Tensor flatten(Tape& tape, const Tensor& x) {
  detail::require(x.ndim() >= 2, "flatten: expects at least 2-d input");
  const int N = x.dim(0);
  const int rest = static_cast<int>(x.numel() / N);
  Tensor out = Tensor::zeros({N, rest}, x.tracked());
  out.v() = x.v();
  if (x.tracked()) {
    const long n = x.numel();
    tape.record([xi = x.impl(), oi = out.impl(), n] {
      for (long i = 0; i < n; ++i) xi->g[i] += oi->g[i];
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C]
inline Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  detail::require(x.ndim() == 4, "global_avg_pool: expects 4-d input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long hw = static_cast<long>(H) * W;
  Tensor out = Tensor::zeros({N, C}, x.tracked());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real* xp = x.v().data() + (static_cast<long>(n) * C + c) * hw;
      Real acc = 0;
      for (long i = 0; i < hw; ++i) acc += xp[i];
      out.v()[static_cast<long>(n) * C + c] = acc / static_cast<Real>(hw);
    }
  check_finite(out, "global_avg_pool");
  if (x.tracked()) {
    tape.record([xi = x.impl(), oi = out.impl(), N, C, hw] {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const Real g = oi->g[static_cast<long>(n) * C + c] / static_cast<Real>(hw);
          Real* gx = xi->g.data() + (static_cast<long>(n) * C + c) * hw;
          for (long i = 0; i < hw; ++i) gx[i] += g;
        }
    });
  }
  return out;
}

inline Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_channels: empty input list");
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int Ct = 0;
  bool tracked = false;
  for (const Tensor& p : parts) {
    detail::require(p.ndim() == 4 && p.dim(0) == N && p.dim(2) == H && p.dim(3) == W,
                    "concat_channels: incompatible part shape");
    Ct += p.dim(1);
    tracked = tracked || p.tracked();
  }
  Tensor out = Tensor::zeros({N, Ct, H, W}, tracked);
  const long hw = static_cast<long>(H) * W;
  long coff = 0;
  for (const Tensor& p : parts) {
    const int C = p.dim(1);
    for (int n = 0; n < N; ++n)
      std::copy(p.v().data() + static_cast<long>(n) * C * hw,
                p.v().data() + static_cast<long>(n + 1) * C * hw,
                out.v().data() + (static_cast<long>(n) * Ct + coff) * hw);
    coff += C;
  }
  if (tracked) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    tape.record([impls = std::move(impls), oi = out.impl(), N, Ct, hw] {
      long coff = 0;
      for (auto& pi : impls) {
        const int C = pi->shape[1];
        if (pi->tracked)
          for (int n = 0; n < N; ++n) {
            const Real* go = oi->g.data() + (static_cast<long>(n) * Ct + coff) * hw;
            Real* gp = pi->g.data() + static_cast<long>(n) * C * hw;
            for (long i = 0; i < C * hw; ++i) gp[i] += go[i];
          }
        coff += C;
      }
    });
  }
  return out;
}

}  // namespace dropnas

#endif
