#include "splatnorm/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "splatnorm/threading.hpp"

namespace splatnorm {
namespace {

void validate_inputs(const RasterInputs& in, const RenderOptions& opt) {
  if (in.width <= 0 || in.height <= 0)
    throw std::invalid_argument("rasterize: non-positive image size");
  if (opt.tile_size < 4) throw std::invalid_argument("rasterize: tile_size must be >= 4");
  const int64_t k = in.mean2d.dim(0);
  if (k == 0) throw std::invalid_argument("rasterize: empty scene");
  if (in.mean2d.rank() != 2 || in.mean2d.dim(1) != 2)
    throw std::invalid_argument("rasterize: mean2d must be K x 2");
  if (in.cov2d.rank() != 3 || in.cov2d.dim(0) != k || in.cov2d.dim(1) != 2 || in.cov2d.dim(2) != 2)
    throw std::invalid_argument("rasterize: cov2d must be K x 2 x 2");
  if (in.depth.numel() != k) throw std::invalid_argument("rasterize: depth must be K");
  if (in.sigma.numel() != k) throw std::invalid_argument("rasterize: sigma must be K");
  if (in.color.rank() != 2 || in.color.dim(0) != k || in.color.dim(1) != 3)
    throw std::invalid_argument("rasterize: color must be K x 3");
  if (in.normal.rank() != 2 || in.normal.dim(0) != k || in.normal.dim(1) != 3)
    throw std::invalid_argument("rasterize: normal must be K x 3");
  if (!in.skip.empty() && static_cast<int64_t>(in.skip.size()) != k)
    throw std::invalid_argument("rasterize: skip mask size mismatch");
  for (int64_t i = 0; i < k; ++i) {
    const double s = in.sigma.at(i);
    // sigma above 1 is legal; the alpha clamp saturates the blend instead.
    if (!(s >= 0.0) || !std::isfinite(s))
      throw std::invalid_argument("rasterize: sigma must be finite and >= 0");
  }
}

struct TileRecords {
  std::vector<int32_t> rec_splat;
  std::vector<double> rec_alpha;
  std::vector<double> contrib;  // K x 3
};

}  // namespace

RasterForward raster_forward(const RasterInputs& in, const RenderOptions& opt) {
  validate_inputs(in, opt);
  const int w = in.width, h = in.height;
  const int64_t k = in.mean2d.dim(0);
  const int64_t npix = static_cast<int64_t>(w) * h;

  RasterForward f;
  f.conic.assign(static_cast<size_t>(k) * 3, 0.0);
  f.q_max.assign(static_cast<size_t>(k), 0.0);
  f.active.assign(static_cast<size_t>(k), 0);
  std::vector<double> radius(static_cast<size_t>(k), 0.0);

  const double* mean = in.mean2d.data();
  const double* cov = in.cov2d.data();
  const double* dep = in.depth.data();
  const double* sig = in.sigma.data();
  const double* col = in.color.data();
  const double* nrm = in.normal.data();

  for (int64_t j = 0; j < k; ++j) {
    if (!in.skip.empty() && in.skip[static_cast<size_t>(j)]) continue;
    const double s = sig[j];
    if (255.0 * s <= 1.0) continue;  // peak alpha already below the cutoff
    // Symmetrized read: the blend depends on the two off-diagonal entries only
    // through their mean, which keeps the half/half cov2d gradient exact.
    const double c00 = cov[j * 4 + 0], c11 = cov[j * 4 + 3];
    const double c01 = 0.5 * (cov[j * 4 + 1] + cov[j * 4 + 2]);
    const double det = c00 * c11 - c01 * c01;
    if (det <= 0.0 || c00 <= 0.0) continue;
    f.conic[j * 3 + 0] = c11 / det;
    f.conic[j * 3 + 1] = -c01 / det;
    f.conic[j * 3 + 2] = c00 / det;
    f.q_max[static_cast<size_t>(j)] = 2.0 * std::log(255.0 * s);
    const double mid = 0.5 * (c00 + c11);
    const double lam_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));
    radius[static_cast<size_t>(j)] = std::sqrt(f.q_max[static_cast<size_t>(j)] * lam_max);
    f.active[static_cast<size_t>(j)] = 1;
  }

  // Global blend order: depth ascending, index breaks ties.
  std::vector<int32_t> order;
  order.reserve(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j)
    if (f.active[static_cast<size_t>(j)]) order.push_back(static_cast<int32_t>(j));
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (dep[a] != dep[b]) return dep[a] < dep[b];
    return a < b;
  });

  f.out.rgb = Tensor::zeros({h, w, 3});
  f.out.alpha = Tensor::zeros({h, w});
  f.out.normal = Tensor::zeros({h, w, 3});
  f.out.depth = Tensor::zeros({h, w});
  f.out.contribution = Tensor::zeros({k, 3});
  double* out_rgb = f.out.rgb.unique_data();
  double* out_alpha = f.out.alpha.unique_data();
  double* out_normal = f.out.normal.unique_data();
  double* out_depth = f.out.depth.unique_data();

  const int ts = opt.tile_size;
  const int ntx = (w + ts - 1) / ts;
  const int nty = (h + ts - 1) / ts;
  const int ntiles = ntx * nty;
  std::vector<TileRecords> tiles(static_cast<size_t>(ntiles));
  std::vector<int64_t> pix_count(static_cast<size_t>(npix), 0);
  int64_t* pix_count_p = pix_count.data();

  parallel_for(ntiles, [&](int64_t t) {
    const int tx = static_cast<int>(t) % ntx;
    const int ty = static_cast<int>(t) / ntx;
    const int x0 = tx * ts, x1 = std::min(x0 + ts, w);
    const int y0 = ty * ts, y1 = std::min(y0 + ts, h);

    TileRecords& tr = tiles[static_cast<size_t>(t)];
    std::vector<int32_t> cand;
    if (opt.brute_force) {
      cand = order;
    } else {
      // Pixel centers live at integer coordinates [x0, x1-1] x [y0, y1-1];
      // a splat whose support circle misses that rectangle cannot pass the
      // per-pixel q test (q >= dist^2 / lam_max > q_max).
      for (int32_t j : order) {
        const double mx = mean[j * 2 + 0], my = mean[j * 2 + 1];
        const double cxs = std::clamp(mx, static_cast<double>(x0), static_cast<double>(x1 - 1));
        const double cys = std::clamp(my, static_cast<double>(y0), static_cast<double>(y1 - 1));
        const double dx = mx - cxs, dy = my - cys;
        const double r = radius[static_cast<size_t>(j)];
        if (dx * dx + dy * dy <= r * r) cand.push_back(j);
      }
    }
    if (cand.empty()) {
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px)
          for (int c = 0; c < 3; ++c)
            out_rgb[(static_cast<int64_t>(py) * w + px) * 3 + c] = in.background[c];
      return;
    }
    tr.contrib.assign(static_cast<size_t>(k) * 3, 0.0);

    for (int py = y0; py < y1; ++py) {
      for (int px = x0; px < x1; ++px) {
        const int64_t pid = static_cast<int64_t>(py) * w + px;
        double tr_t = 1.0;
        double acc[3] = {0, 0, 0};
        double nacc[3] = {0, 0, 0};
        double aacc = 0.0, dacc = 0.0;
        int64_t nrec = 0;
        for (int32_t j : cand) {
          const double dx = px - mean[j * 2 + 0];
          const double dy = py - mean[j * 2 + 1];
          const double* cn = &f.conic[static_cast<size_t>(j) * 3];
          const double q = cn[0] * dx * dx + 2.0 * cn[1] * dx * dy + cn[2] * dy * dy;
          if (q > f.q_max[static_cast<size_t>(j)]) continue;  // alpha < 1/255
          double a = sig[j] * std::exp(-0.5 * q);
          if (a > kAlphaMax) a = kAlphaMax;
          const double wgt = tr_t * a;
          for (int c = 0; c < 3; ++c) {
            const double wc = wgt * col[j * 3 + c];
            acc[c] += wc;
            tr.contrib[static_cast<size_t>(j) * 3 + c] += wc;
            nacc[c] += wgt * nrm[j * 3 + c];
          }
          aacc += wgt;
          dacc += wgt * dep[j];
          tr.rec_splat.push_back(j);
          tr.rec_alpha.push_back(a);
          ++nrec;
          tr_t *= 1.0 - a;
          if (opt.early_stop && tr_t < kEarlyStopT) break;
        }
        pix_count_p[pid] = nrec;
        for (int c = 0; c < 3; ++c) out_rgb[pid * 3 + c] = acc[c] + tr_t * in.background[c];
        out_alpha[pid] = aacc;
        out_depth[pid] = dacc;
        const double nn = std::sqrt(nacc[0] * nacc[0] + nacc[1] * nacc[1] + nacc[2] * nacc[2]);
        if (nn >= kNormalEps)
          for (int c = 0; c < 3; ++c) out_normal[pid * 3 + c] = nacc[c] / nn;
      }
    }
  });

  // Merge per-tile records into a row-major CSR; merge contributions in tile
  // order so the result is independent of the thread count.
  f.offsets.assign(static_cast<size_t>(npix) + 1, 0);
  for (int64_t p = 0; p < npix; ++p) f.offsets[static_cast<size_t>(p) + 1] = f.offsets[static_cast<size_t>(p)] + pix_count[static_cast<size_t>(p)];
  const int64_t total = f.offsets[static_cast<size_t>(npix)];
  f.rec_splat.resize(static_cast<size_t>(total));
  f.rec_alpha.resize(static_cast<size_t>(total));
  double* out_contrib = f.out.contribution.unique_data();
  for (int t = 0; t < ntiles; ++t) {
    const TileRecords& tr = tiles[static_cast<size_t>(t)];
    const int tx = t % ntx, ty = t / ntx;
    const int x0 = tx * ts, x1 = std::min(x0 + ts, w);
    const int y0 = ty * ts, y1 = std::min(y0 + ts, h);
    size_t cursor = 0;
    for (int py = y0; py < y1; ++py) {
      for (int px = x0; px < x1; ++px) {
        const int64_t pid = static_cast<int64_t>(py) * w + px;
        const int64_t cnt = pix_count[static_cast<size_t>(pid)];
        if (cnt > 0) {
          std::memcpy(&f.rec_splat[static_cast<size_t>(f.offsets[static_cast<size_t>(pid)])],
                      &tr.rec_splat[cursor], static_cast<size_t>(cnt) * sizeof(int32_t));
          std::memcpy(&f.rec_alpha[static_cast<size_t>(f.offsets[static_cast<size_t>(pid)])],
                      &tr.rec_alpha[cursor], static_cast<size_t>(cnt) * sizeof(double));
          cursor += static_cast<size_t>(cnt);
        }
      }
    }
    if (!tr.contrib.empty())
      for (int64_t i = 0; i < k * 3; ++i) out_contrib[i] += tr.contrib[static_cast<size_t>(i)];
  }
  return f;
}

RasterGrads raster_backward(const RasterInputs& in, const RenderOptions& opt,
                            const RasterForward& fwd, const RasterUpstream& up) {
  validate_inputs(in, opt);
  const int w = in.width, h = in.height;
  const int64_t k = in.mean2d.dim(0);
  const int64_t npix = static_cast<int64_t>(w) * h;
  if (up.rgb == nullptr || up.alpha == nullptr || up.normal == nullptr || up.depth == nullptr ||
      up.contribution == nullptr)
    throw std::invalid_argument("raster_backward: missing upstream gradients");

  RasterGrads g;
  g.mean2d = Tensor::zeros({k, 2});
  g.cov2d = Tensor::zeros({k, 2, 2});
  g.depth = Tensor::zeros({k});
  g.sigma = Tensor::zeros({k});
  g.color = Tensor::zeros({k, 3});
  g.normal = Tensor::zeros({k, 3});
  double* gm = g.mean2d.unique_data();
  double* gs = g.sigma.unique_data();
  double* gd = g.depth.unique_data();
  double* gc = g.color.unique_data();
  double* gn = g.normal.unique_data();

  std::vector<double> dconic(static_cast<size_t>(k) * 3, 0.0);  // (d00, d01-per-entry, d11)

  const double* mean = in.mean2d.data();
  const double* dep = in.depth.data();
  const double* sig = in.sigma.data();
  const double* col = in.color.data();
  const double* nrm = in.normal.data();
  const double* up_rgb = up.rgb->data();
  const double* up_alpha = up.alpha->data();
  const double* up_normal = up.normal->data();
  const double* up_depth = up.depth->data();
  const double* up_contrib = up.contribution->data();

  std::vector<double> ts_buf;
  for (int64_t pid = 0; pid < npix; ++pid) {
    const int64_t lo = fwd.offsets[static_cast<size_t>(pid)];
    const int64_t hi = fwd.offsets[static_cast<size_t>(pid) + 1];
    if (lo == hi) continue;
    const int px = static_cast<int>(pid % w);
    const int py = static_cast<int>(pid / w);
    const int64_t m = hi - lo;

    ts_buf.assign(static_cast<size_t>(m) + 1, 0.0);
    ts_buf[0] = 1.0;
    double nraw[3] = {0, 0, 0};
    for (int64_t i = 0; i < m; ++i) {
      const int32_t j = fwd.rec_splat[static_cast<size_t>(lo + i)];
      const double a = fwd.rec_alpha[static_cast<size_t>(lo + i)];
      const double wgt = ts_buf[static_cast<size_t>(i)] * a;
      for (int c = 0; c < 3; ++c) nraw[c] += wgt * nrm[j * 3 + c];
      ts_buf[static_cast<size_t>(i) + 1] = ts_buf[static_cast<size_t>(i)] * (1.0 - a);
    }

    const double* grgb = &up_rgb[pid * 3];
    const double galpha = up_alpha[pid];
    const double gdepth = up_depth[pid];
    double gnraw[3] = {0, 0, 0};
    const double nn = std::sqrt(nraw[0] * nraw[0] + nraw[1] * nraw[1] + nraw[2] * nraw[2]);
    if (nn >= kNormalEps) {
      const double nhat[3] = {nraw[0] / nn, nraw[1] / nn, nraw[2] / nn};
      const double* gout = &up_normal[pid * 3];
      const double proj = nhat[0] * gout[0] + nhat[1] * gout[1] + nhat[2] * gout[2];
      for (int c = 0; c < 3; ++c) gnraw[c] = (gout[c] - nhat[c] * proj) / nn;
    }
    const double bg_dot =
        grgb[0] * in.background[0] + grgb[1] * in.background[1] + grgb[2] * in.background[2];

    double suffix = ts_buf[static_cast<size_t>(m)] * bg_dot;
    for (int64_t i = m - 1; i >= 0; --i) {
      const int32_t j = fwd.rec_splat[static_cast<size_t>(lo + i)];
      const double a = fwd.rec_alpha[static_cast<size_t>(lo + i)];
      const double t_i = ts_buf[static_cast<size_t>(i)];
      const double wgt = t_i * a;

      double d_i = galpha + gdepth * dep[j];
      for (int c = 0; c < 3; ++c) {
        d_i += grgb[c] * col[j * 3 + c];
        d_i += gnraw[c] * nrm[j * 3 + c];
        d_i += up_contrib[j * 3 + c] * col[j * 3 + c];
      }
      const double da = t_i * d_i - suffix / (1.0 - a);
      suffix += wgt * d_i;

      for (int c = 0; c < 3; ++c) {
        gc[j * 3 + c] += wgt * (grgb[c] + up_contrib[j * 3 + c]);
        gn[j * 3 + c] += wgt * gnraw[c];
      }
      gd[j] += wgt * gdepth;

      if (a < kAlphaMax) {  // clamped alphas block gradient into sigma and q
        const double gauss = a / sig[j];
        gs[j] += da * gauss;
        const double dq = -0.5 * da * a;
        const double dx = px - mean[j * 2 + 0];
        const double dy = py - mean[j * 2 + 1];
        const double* cn = &fwd.conic[static_cast<size_t>(j) * 3];
        gm[j * 2 + 0] += -dq * 2.0 * (cn[0] * dx + cn[1] * dy);
        gm[j * 2 + 1] += -dq * 2.0 * (cn[1] * dx + cn[2] * dy);
        dconic[static_cast<size_t>(j) * 3 + 0] += dq * dx * dx;
        dconic[static_cast<size_t>(j) * 3 + 1] += dq * dx * dy;
        dconic[static_cast<size_t>(j) * 3 + 2] += dq * dy * dy;
      }
    }
  }

  // dV = -C dC C for C = V^{-1}, all as full 2x2 matrices.
  double* gv = g.cov2d.unique_data();
  for (int64_t j = 0; j < k; ++j) {
    if (!fwd.active[static_cast<size_t>(j)]) continue;
    const double i00 = fwd.conic[static_cast<size_t>(j) * 3 + 0];
    const double i01 = fwd.conic[static_cast<size_t>(j) * 3 + 1];
    const double i11 = fwd.conic[static_cast<size_t>(j) * 3 + 2];
    const double d00 = dconic[static_cast<size_t>(j) * 3 + 0];
    const double d01 = dconic[static_cast<size_t>(j) * 3 + 1];
    const double d11 = dconic[static_cast<size_t>(j) * 3 + 2];
    const double m00 = i00 * d00 + i01 * d01, m01 = i00 * d01 + i01 * d11;
    const double m10 = i01 * d00 + i11 * d01, m11 = i01 * d01 + i11 * d11;
    gv[j * 4 + 0] = -(m00 * i00 + m01 * i01);
    gv[j * 4 + 1] = -(m00 * i01 + m01 * i11);
    gv[j * 4 + 2] = -(m10 * i00 + m11 * i01);
    gv[j * 4 + 3] = -(m10 * i01 + m11 * i11);
  }
  return g;
}

RenderOutput render(const Scene& scene, const Camera& cam, const LightField& light,
                    const RenderOptions& opt) {
  const int64_t k = static_cast<int64_t>(scene.splats.size());
  RenderOutput out;
  if (k == 0) {
    const int64_t h = cam.height, w = cam.width;
    out.rgb = Tensor::zeros({h, w, 3});
    double* p = out.rgb.unique_data();
    for (int64_t i = 0; i < h * w; ++i)
      for (int c = 0; c < 3; ++c) p[i * 3 + c] = scene.background[c];
    out.alpha = Tensor::zeros({h, w});
    out.normal = Tensor::zeros({h, w, 3});
    out.depth = Tensor::zeros({h, w});
    out.contribution = Tensor::zeros({0, 3});
    return out;
  }
  // The graph forward IS the value render; one code path keeps the two
  // bit-identical by construction.
  SceneParams params = to_params(scene);
  Tape tape;
  SceneVars sv = bind_scene(tape, params, /*trainable=*/false);
  RenderVars rv = render_vars(tape, sv, cam, light, scene.background, opt);
  out.rgb = rv.rgb.value();
  out.alpha = rv.alpha.value();
  out.normal = rv.normal.value();
  out.depth = rv.depth.value();
  out.contribution = rv.contribution.value();
  return out;
}

RenderVars rasterize_vars(Tape& tape, Var mean2d, Var cov2d, Var depth, Var sigma, Var color,
                          Var normal, std::vector<char> skip, int width, int height,
                          const double background[3], const RenderOptions& opt) {
  const int64_t k = mean2d.value().dim(0);
  const int64_t hw = static_cast<int64_t>(width) * height;

  RasterInputs in;
  in.width = width;
  in.height = height;
  in.mean2d = mean2d.value();
  in.cov2d = cov2d.value();
  in.depth = depth.value();
  in.sigma = sigma.value();
  in.color = color.value();
  in.normal = normal.value();
  in.skip = std::move(skip);
  for (int c = 0; c < 3; ++c) in.background[c] = background[c];

  auto fwd = std::make_shared<RasterForward>(raster_forward(in, opt));

  Tensor packed = Tensor::zeros({3 * hw + hw + 3 * hw + hw + 3 * k});
  double* pk = packed.unique_data();
  std::memcpy(pk, fwd->out.rgb.data(), static_cast<size_t>(3 * hw) * sizeof(double));
  std::memcpy(pk + 3 * hw, fwd->out.alpha.data(), static_cast<size_t>(hw) * sizeof(double));
  std::memcpy(pk + 4 * hw, fwd->out.normal.data(), static_cast<size_t>(3 * hw) * sizeof(double));
  std::memcpy(pk + 7 * hw, fwd->out.depth.data(), static_cast<size_t>(hw) * sizeof(double));
  std::memcpy(pk + 8 * hw, fwd->out.contribution.data(), static_cast<size_t>(3 * k) * sizeof(double));

  RenderOptions opt_copy = opt;
  auto backward = [in, opt_copy, fwd, width, height, k, hw](Tape& tp,
                                                            const std::vector<int>& ps,
                                                            const Tensor& og) {
    const double* go = og.data();
    Tensor g_rgb = Tensor::zeros({height, width, 3});
    Tensor g_alpha = Tensor::zeros({height, width});
    Tensor g_normal = Tensor::zeros({height, width, 3});
    Tensor g_depth = Tensor::zeros({height, width});
    Tensor g_contrib = Tensor::zeros({k, 3});
    std::memcpy(g_rgb.unique_data(), go, static_cast<size_t>(3 * hw) * sizeof(double));
    std::memcpy(g_alpha.unique_data(), go + 3 * hw, static_cast<size_t>(hw) * sizeof(double));
    std::memcpy(g_normal.unique_data(), go + 4 * hw, static_cast<size_t>(3 * hw) * sizeof(double));
    std::memcpy(g_depth.unique_data(), go + 7 * hw, static_cast<size_t>(hw) * sizeof(double));
    std::memcpy(g_contrib.unique_data(), go + 8 * hw, static_cast<size_t>(3 * k) * sizeof(double));

    RasterUpstream up;
    up.rgb = &g_rgb;
    up.alpha = &g_alpha;
    up.normal = &g_normal;
    up.depth = &g_depth;
    up.contribution = &g_contrib;
    const RasterGrads grads = raster_backward(in, opt_copy, *fwd, up);

    const Tensor* srcs[6] = {&grads.mean2d, &grads.cov2d, &grads.depth,
                             &grads.sigma,  &grads.color, &grads.normal};
    for (int p = 0; p < 6; ++p) {
      if (!tp.requires_grad(ps[static_cast<size_t>(p)])) continue;
      double* dst = tp.grad_buffer(ps[static_cast<size_t>(p)]).unique_data();
      const double* src = srcs[p]->data();
      const int64_t n = srcs[p]->numel();
      for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
  };

  Var packed_v = tape.node(std::move(packed), {mean2d, cov2d, depth, sigma, color, normal},
                           backward, "rasterize");

  RenderVars out;
  out.rgb = reshape(slice(packed_v, 0, 0, 3 * hw), {height, width, 3});
  out.alpha = reshape(slice(packed_v, 0, 3 * hw, hw), {height, width});
  out.normal = reshape(slice(packed_v, 0, 4 * hw, 3 * hw), {height, width, 3});
  out.depth = reshape(slice(packed_v, 0, 7 * hw, hw), {height, width});
  out.contribution = reshape(slice(packed_v, 0, 8 * hw, 3 * k), {k, 3});
  return out;
}

RenderVars render_vars(Tape& tape, const SceneVars& sv, const Camera& cam,
                       const LightField& light, const double background[3],
                       const RenderOptions& opt) {
  Var cov3d = covariance_vars(sv.quat, sv.log_scale);
  ProjVars proj = project_vars(tape, sv.mu, cov3d, cam);
  Var rotmat = quat_rotmat_vars(sv.quat);
  Var normals_world = splat_normals_vars(tape, rotmat, sv.log_scale, sv.mu, cam);
  ShadeVars shaded = shade_vars(tape, sv, normals_world, light);
  Var normals_map = normals_to_map_vars(tape, normals_world, cam);
  return rasterize_vars(tape, proj.mean2d, proj.cov2d, proj.depth, sv.sigma, shaded.color,
                        normals_map, proj.culled, cam.width, cam.height, background, opt);
}

}  // namespace splatnorm
