#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "splatnorm/tape.hpp"
#include "splatnorm/threading.hpp"

namespace splatnorm {

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  if (b.tape() != &t) throw std::invalid_argument("matmul mixes tapes");
  Tensor va = a.value(), vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2)
    throw std::invalid_argument("matmul needs rank-2 operands, got " + shape_str(va.shape()) +
                                " and " + shape_str(vb.shape()));
  int64_t m = va.shape()[0], k = va.shape()[1];
  int64_t k2 = vb.shape()[0], n = vb.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul inner extents differ: " + shape_str(va.shape()) + " vs " +
                                shape_str(vb.shape()));
  Tensor out({m, n});
  {
    const double* pa = va.data();
    const double* pb = vb.data();
    double* po = out.unique_data();
    parallel_for_chunked(m, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) {
        double* orow = po + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
          double av = pa[i * k + kk];
          const double* brow = pb + kk * n;
          for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
      }
    });
  }
  return t.node(
      std::move(out), {a, b},
      [va, vb, m, n, k](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        const double* pg = g.data();
        if (tp.requires_grad(ps[0])) {
          double* ga = tp.grad_buffer(ps[0]).unique_data();
          const double* pb = vb.data();
          parallel_for_chunked(m, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i)
              for (int64_t kk = 0; kk < k; ++kk) {
                const double* grow = pg + i * n;
                const double* brow = pb + kk * n;
                double acc = 0.0;
                for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                ga[i * k + kk] += acc;
              }
          });
        }
        if (tp.requires_grad(ps[1])) {
          double* gb = tp.grad_buffer(ps[1]).unique_data();
          const double* pa = va.data();
          parallel_for_chunked(k, [&](int64_t k0, int64_t k1) {
            for (int64_t kk = k0; kk < k1; ++kk) {
              double* brow = gb + kk * n;
              for (int64_t i = 0; i < m; ++i) {
                double av = pa[i * k + kk];
                const double* grow = pg + i * n;
                for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
              }
            }
          });
        }
      },
      "matmul");
}

Var conv2d(Var input, Var kernel, Pad pad, int stride) {
  Tape& t = *input.tape();
  if (kernel.tape() != &t) throw std::invalid_argument("conv2d mixes tapes");
  Tensor vx = input.value(), vw = kernel.value();
  if (vx.rank() != 3 || vw.rank() != 4)
    throw std::invalid_argument("conv2d wants input [C,H,W] and kernel [Co,Ci,kh,kw], got " +
                                shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
  int64_t ci = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  int64_t co = vw.shape()[0], ci2 = vw.shape()[1], kh = vw.shape()[2], kw = vw.shape()[3];
  if (ci != ci2) throw std::invalid_argument("conv2d channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d kernel extents must be odd");
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  int64_t ph = (pad == Pad::kSame) ? (kh - 1) / 2 : 0;
  int64_t pw = (pad == Pad::kSame) ? (kw - 1) / 2 : 0;
  if (h + 2 * ph < kh || w + 2 * pw < kw)
    throw std::invalid_argument("conv2d kernel larger than padded input");
  int64_t ho = (h + 2 * ph - kh) / stride + 1;
  int64_t wo = (w + 2 * pw - kw) / stride + 1;
  int64_t s = stride;

  Tensor out({co, ho, wo});
  {
    const double* px = vx.data();
    const double* pkw = vw.data();
    double* po = out.unique_data();
    parallel_for_chunked(co, [&](int64_t c0, int64_t c1) {
      for (int64_t oc = c0; oc < c1; ++oc) {
        double* oplane = po + oc * ho * wo;
        for (int64_t ic = 0; ic < ci; ++ic) {
          const double* xplane = px + ic * h * w;
          const double* wbase = pkw + ((oc * ci + ic) * kh) * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              double wv = wbase[ky * kw + kx];
              if (wv == 0.0) continue;
              for (int64_t oy = 0; oy < ho; ++oy) {
                int64_t iy = oy * s + ky - ph;
                if (iy < 0 || iy >= h) continue;
                // valid ox range for this kx
                int64_t ox_lo = 0, ox_hi = wo;
                if (kx - pw < 0) ox_lo = (pw - kx + s - 1) / s;
                int64_t ix_max = w - 1 - kx + pw;
                if (ix_max < 0)
                  ox_hi = 0;
                else
                  ox_hi = std::min<int64_t>(wo, ix_max / s + 1);
                const double* xrow = xplane + iy * w + kx - pw;
                double* orow = oplane + oy * wo;
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xrow[ox * s];
              }
            }
          }
        }
      }
    });
  }

  return t.node(
      std::move(out), {input, kernel},
      [vx, vw, ci, h, w, co, kh, kw, ph, pw, ho, wo, s](Tape& tp, const std::vector<int>& ps,
                                                        const Tensor& g) {
        const double* pg = g.data();
        if (tp.requires_grad(ps[0])) {
          double* gx = tp.grad_buffer(ps[0]).unique_data();
          const double* pkw = vw.data();
          parallel_for_chunked(ci, [&](int64_t c0, int64_t c1) {
            for (int64_t ic = c0; ic < c1; ++ic) {
              double* gplane = gx + ic * h * w;
              for (int64_t oc = 0; oc < co; ++oc) {
                const double* goplane = pg + oc * ho * wo;
                const double* wbase = pkw + ((oc * ci + ic) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    double wv = wbase[ky * kw + kx];
                    if (wv == 0.0) continue;
                    for (int64_t oy = 0; oy < ho; ++oy) {
                      int64_t iy = oy * s + ky - ph;
                      if (iy < 0 || iy >= h) continue;
                      int64_t ox_lo = 0, ox_hi = wo;
                      if (kx - pw < 0) ox_lo = (pw - kx + s - 1) / s;
                      int64_t ix_max = w - 1 - kx + pw;
                      if (ix_max < 0)
                        ox_hi = 0;
                      else
                        ox_hi = std::min<int64_t>(wo, ix_max / s + 1);
                      double* grow = gplane + iy * w + kx - pw;
                      const double* gorow = goplane + oy * wo;
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox) grow[ox * s] += wv * gorow[ox];
                    }
                  }
                }
              }
            }
          });
        }
        if (tp.requires_grad(ps[1])) {
          double* gw = tp.grad_buffer(ps[1]).unique_data();
          const double* px = vx.data();
          parallel_for_chunked(co, [&](int64_t c0, int64_t c1) {
            for (int64_t oc = c0; oc < c1; ++oc) {
              const double* goplane = pg + oc * ho * wo;
              for (int64_t ic = 0; ic < ci; ++ic) {
                const double* xplane = px + ic * h * w;
                double* wbase = gw + ((oc * ci + ic) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < ho; ++oy) {
                      int64_t iy = oy * s + ky - ph;
                      if (iy < 0 || iy >= h) continue;
                      int64_t ox_lo = 0, ox_hi = wo;
                      if (kx - pw < 0) ox_lo = (pw - kx + s - 1) / s;
                      int64_t ix_max = w - 1 - kx + pw;
                      if (ix_max < 0)
                        ox_hi = 0;
                      else
                        ox_hi = std::min<int64_t>(wo, ix_max / s + 1);
                      const double* xrow = xplane + iy * w + kx - pw;
                      const double* gorow = goplane + oy * wo;
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox) acc += xrow[ox * s] * gorow[ox];
                    }
                    wbase[ky * kw + kx] += acc;
                  }
                }
              }
            }
          });
        }
      },
      "conv2d");
}

Var pool2d(Var input, PoolKind kind, int window) {
  Tape& t = *input.tape();
  Tensor vx = input.value();
  if (vx.rank() != 3) throw std::invalid_argument("pool2d wants input [C,H,W]");
  int64_t c = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  if (window < 0) throw std::invalid_argument("pool2d window must be >= 0");
  bool global = (window == 0);
  int64_t wh = global ? h : window;
  int64_t ww = global ? w : window;
  if (wh == 0 || ww == 0) throw std::invalid_argument("pool2d zero-sized window");
  if (h % wh != 0 || w % ww != 0)
    throw std::invalid_argument("pool2d window must divide spatial extents");
  int64_t ho = h / wh, wo = w / ww;
  Tensor out({c, ho, wo});
  auto args = (kind == PoolKind::kMax) ? std::make_shared<std::vector<int64_t>>(c * ho * wo)
                                       : nullptr;
  {
    const double* px = vx.data();
    double* po = out.unique_data();
    for (int64_t ic = 0; ic < c; ++ic) {
      const double* plane = px + ic * h * w;
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          int64_t oi = (ic * ho + oy) * wo + ox;
          if (kind == PoolKind::kAvg) {
            double acc = 0.0;
            for (int64_t dy = 0; dy < wh; ++dy)
              for (int64_t dx = 0; dx < ww; ++dx) acc += plane[(oy * wh + dy) * w + ox * ww + dx];
            po[oi] = acc / static_cast<double>(wh * ww);
          } else {
            int64_t best = (oy * wh) * w + ox * ww;
            double bv = plane[best];
            for (int64_t dy = 0; dy < wh; ++dy)
              for (int64_t dx = 0; dx < ww; ++dx) {
                int64_t idx = (oy * wh + dy) * w + ox * ww + dx;
                if (plane[idx] > bv) {
                  bv = plane[idx];
                  best = idx;
                }
              }
            po[oi] = bv;
            (*args)[oi] = best;
          }
        }
    }
  }
  return t.node(
      std::move(out), {input},
      [kind, args, c, h, w, ho, wo, wh, ww](Tape& tp, const std::vector<int>& ps,
                                            const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* gx = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t ic = 0; ic < c; ++ic) {
          double* plane = gx + ic * h * w;
          for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
              int64_t oi = (ic * ho + oy) * wo + ox;
              if (kind == PoolKind::kAvg) {
                double gv = pg[oi] / static_cast<double>(wh * ww);
                for (int64_t dy = 0; dy < wh; ++dy)
                  for (int64_t dx = 0; dx < ww; ++dx)
                    plane[(oy * wh + dy) * w + ox * ww + dx] += gv;
              } else {
                plane[(*args)[oi]] += pg[oi];
              }
            }
        }
      },
      "pool2d");
}

Var upsample_nearest2(Var input) {
  Tape& t = *input.tape();
  Tensor vx = input.value();
  if (vx.rank() != 3) throw std::invalid_argument("upsample_nearest2 wants input [C,H,W]");
  int64_t c = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  Tensor out({c, 2 * h, 2 * w});
  {
    const double* px = vx.data();
    double* po = out.unique_data();
    for (int64_t ic = 0; ic < c; ++ic)
      for (int64_t y = 0; y < 2 * h; ++y) {
        const double* srow = px + (ic * h + y / 2) * w;
        double* drow = po + (ic * 2 * h + y) * 2 * w;
        for (int64_t x = 0; x < 2 * w; ++x) drow[x] = srow[x / 2];
      }
  }
  return t.node(
      std::move(out), {input},
      [c, h, w](Tape& tp, const std::vector<int>& ps, const Tensor& g) {
        if (!tp.requires_grad(ps[0])) return;
        double* gx = tp.grad_buffer(ps[0]).unique_data();
        const double* pg = g.data();
        for (int64_t ic = 0; ic < c; ++ic)
          for (int64_t y = 0; y < 2 * h; ++y) {
            double* drow = gx + (ic * h + y / 2) * w;
            const double* srow = pg + (ic * 2 * h + y) * 2 * w;
            for (int64_t x = 0; x < 2 * w; ++x) drow[x / 2] += srow[x];
          }
      },
      "upsample_nearest2");
}

}  // namespace splatnorm
