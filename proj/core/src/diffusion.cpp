#include "splatnorm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "splatnorm/geo_features.hpp"

namespace splatnorm {

namespace {

constexpr double kBetaClip = 0.999;
constexpr double kPi = 3.14159265358979323846;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!shapes_equal(a.shape(), b.shape()))
    throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
}

Tensor axpby(double ca, const Tensor& a, double cb, const Tensor& b) {
  Tensor out(a.shape());
  double* po = out.unique_data();
  const double* pa = a.data();
  const double* pb = b.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = ca * pa[i] + cb * pb[i];
  return out;
}

}  // namespace

NoiseSchedule NoiseSchedule::cosine(int steps, double offset) {
  if (steps < 2) throw std::invalid_argument("NoiseSchedule: steps must be >= 2");
  if (offset <= 0.0) throw std::invalid_argument("NoiseSchedule: offset must be positive");
  auto f = [steps, offset](int t) {
    const double u = (static_cast<double>(t) / steps + offset) / (1.0 + offset);
    const double c = std::cos(u * kPi / 2.0);
    return c * c;
  };
  NoiseSchedule ns;
  ns.steps = steps;
  ns.alpha_bar.resize(static_cast<size_t>(steps) + 1);
  ns.alpha_bar[0] = 1.0;
  const double f0 = f(0);
  double prev_raw = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double raw = f(t) / f0;
    const double beta = std::min(1.0 - raw / prev_raw, kBetaClip);
    ns.alpha_bar[static_cast<size_t>(t)] = ns.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - beta);
    prev_raw = raw;
  }
  return ns;
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > steps) throw std::out_of_range("NoiseSchedule::alpha: t out of [1, T]");
  return alpha_bar[static_cast<size_t>(t)] / alpha_bar[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::posterior_var(int t) const {
  const double a = alpha(t);
  const double ab_prev = alpha_bar[static_cast<size_t>(t - 1)];
  const double ab = alpha_bar[static_cast<size_t>(t)];
  return (1.0 - ab_prev) / (1.0 - ab) * (1.0 - a);
}

Tensor forward_noise(const NoiseSchedule& ns, const Tensor& n0, int t, const Tensor& eps) {
  if (t < 0 || t > ns.steps) throw std::out_of_range("forward_noise: t out of [0, T]");
  check_same_shape(n0, eps, "forward_noise");
  if (t == 0) return n0.clone();
  const double ab = ns.alpha_bar[static_cast<size_t>(t)];
  return axpby(std::sqrt(ab), n0, std::sqrt(1.0 - ab), eps);
}

Tensor reverse_step(const NoiseSchedule& ns, const Tensor& x_t, int t, const Tensor& eps_hat,
                    Rng& rng) {
  if (t < 1 || t > ns.steps) throw std::out_of_range("reverse_step: t out of [1, T]");
  check_same_shape(x_t, eps_hat, "reverse_step");
  const double a = ns.alpha(t);
  const double ab = ns.alpha_bar[static_cast<size_t>(t)];
  Tensor mean = axpby(1.0 / std::sqrt(a), x_t,
                      -(1.0 - a) / (std::sqrt(1.0 - ab) * std::sqrt(a)), eps_hat);
  if (t == 1) return mean;
  const double sd = std::sqrt(ns.posterior_var(t));
  double* p = mean.unique_data();
  const int64_t n = mean.numel();
  for (int64_t i = 0; i < n; ++i) p[i] += sd * rng.normal();
  return mean;
}

Tensor predict_x0(const NoiseSchedule& ns, const Tensor& x_t, int t, const Tensor& eps_hat) {
  if (t < 0 || t > ns.steps) throw std::out_of_range("predict_x0: t out of [0, T]");
  check_same_shape(x_t, eps_hat, "predict_x0");
  const double ab = ns.alpha_bar[static_cast<size_t>(t)];
  return axpby(1.0 / std::sqrt(ab), x_t, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps_hat);
}

Tensor deterministic_reverse_step(const NoiseSchedule& ns, const Tensor& x_t, int t,
                                  const Tensor& eps_hat) {
  if (t < 1 || t > ns.steps) throw std::out_of_range("deterministic_reverse_step: t out of [1, T]");
  Tensor x0 = predict_x0(ns, x_t, t, eps_hat);
  const double ab_prev = ns.alpha_bar[static_cast<size_t>(t - 1)];
  return axpby(std::sqrt(ab_prev), x0, std::sqrt(1.0 - ab_prev), eps_hat);
}

Var forward_noise_vars(const NoiseSchedule& ns, Var n0, int t, Var eps) {
  if (t < 0 || t > ns.steps) throw std::out_of_range("forward_noise_vars: t out of [0, T]");
  if (t == 0) return n0;
  const double ab = ns.alpha_bar[static_cast<size_t>(t)];
  return add(scale(n0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Var predict_x0_vars(const NoiseSchedule& ns, Var x_t, int t, Var eps_hat) {
  if (t < 0 || t > ns.steps) throw std::out_of_range("predict_x0_vars: t out of [0, T]");
  const double ab = ns.alpha_bar[static_cast<size_t>(t)];
  return add(scale(x_t, 1.0 / std::sqrt(ab)), scale(eps_hat, -std::sqrt(1.0 - ab) / std::sqrt(ab)));
}

bool drop_condition(Rng& rng, double p) { return rng.uniform() < p; }

// ---- networks ----

TexEncoder TexEncoder::init(Rng& rng) {
  TexEncoder net;
  net.conv1 = make_conv2d(rng, 3, 16, 3, /*stride=*/2);
  net.conv2 = make_conv2d(rng, 16, kFeatureChannels, 3, /*stride=*/2);
  net.proj = make_conv2d(rng, kFeatureChannels, kFeatureChannels, 1);
  return net;
}

Var forward(Binder& bind, TexEncoder& net, Var rgb_hwc) {
  Var x = chw_from_hwc(rgb_hwc);
  x = relu(forward(bind, net.conv1, x));
  x = relu(forward(bind, net.conv2, x));
  return relu(forward(bind, net.proj, x));
}

FusionNet FusionNet::init(Rng& rng) {
  constexpr int c = kFeatureChannels;
  FusionNet net;
  net.tex_fc1 = make_linear(rng, c, c / 2);
  net.tex_fc2 = make_linear(rng, c / 2, c);
  net.geo_fc1 = make_linear(rng, c, c / 2);
  net.geo_fc2 = make_linear(rng, c / 2, c);
  net.spatial = make_conv2d(rng, 2, 1, 7);
  return net;
}

Var forward(Binder& bind, FusionNet& net, Var f_tex, Var f_geo) {
  const Shape& st = f_tex.value().shape();
  const Shape& sg = f_geo.value().shape();
  if (st.size() != 3 || sg.size() != 3 || st[0] != kFeatureChannels || !shapes_equal(st, sg))
    throw std::invalid_argument("FusionNet: wants matching [C,h,w] features");
  const int64_t c = st[0];
  Var avg_tex = reshape(pool2d(f_tex, PoolKind::kAvg, 0), {1, c});
  Var max_geo = reshape(pool2d(f_geo, PoolKind::kMax, 0), {1, c});
  Var ch_tex = forward(bind, net.tex_fc2, relu(forward(bind, net.tex_fc1, avg_tex)));
  Var ch_geo = forward(bind, net.geo_fc2, relu(forward(bind, net.geo_fc1, max_geo)));
  Var m_c = reshape(sigmoid(add(ch_tex, ch_geo)), {c, 1, 1});
  Var ch_avg = mean_axis(f_tex, 0, /*keepdim=*/true);  // [1,h,w]
  Var ch_max = max_axis(f_geo, 0, /*keepdim=*/true);
  Var m_s = sigmoid(forward(bind, net.spatial, concat({ch_avg, ch_max}, 0)));
  return mul(mul(m_c, m_s), mul(f_tex, f_geo));
}

ScoreNet ScoreNet::init(Rng& rng) {
  ScoreNet net;
  net.enc1 = make_conv2d(rng, 3, 16, 3);
  net.enc2 = make_conv2d(rng, 16, 32, 3, /*stride=*/2);
  net.enc3 = make_conv2d(rng, 32, 64, 3, /*stride=*/2);
  net.cond_proj = make_conv2d(rng, 64 + kFeatureChannels, 64, 1);
  net.dec2 = make_conv2d(rng, 64 + 32, 32, 3);
  net.dec1 = make_conv2d(rng, 32 + 16, 16, 3);
  net.out = make_conv2d(rng, 16, 3, 3);
  net.temb1 = make_linear(rng, kTimeEmbedDim, 16);
  net.temb2 = make_linear(rng, kTimeEmbedDim, 32);
  net.temb3 = make_linear(rng, kTimeEmbedDim, 64);
  net.temb4 = make_linear(rng, kTimeEmbedDim, 32);
  net.temb5 = make_linear(rng, kTimeEmbedDim, 16);
  return net;
}

namespace {

Var stage_bias(Binder& bind, LinearLayer& proj, Var temb_row, int64_t channels) {
  return reshape(forward(bind, proj, temb_row), {channels, 1, 1});
}

}  // namespace

Var forward(Binder& bind, ScoreNet& net, Var x_hwc, int t, Var cond) {
  Tape& tape = *bind.tape;
  const Shape& s = x_hwc.value().shape();
  if (s.size() != 3 || s[2] != 3) throw std::invalid_argument("ScoreNet: wants [H,W,3] input");
  const int64_t h = s[0], w = s[1];
  if (h % 4 != 0 || w % 4 != 0)
    throw std::invalid_argument("ScoreNet: spatial extents must be multiples of 4");
  Var temb = reshape(tape.constant(sinusoidal_time_embedding(t, kTimeEmbedDim)),
                     {1, kTimeEmbedDim});
  Var x = chw_from_hwc(x_hwc);
  Var e1 = relu(add(forward(bind, net.enc1, x), stage_bias(bind, net.temb1, temb, 16)));
  Var e2 = relu(add(forward(bind, net.enc2, e1), stage_bias(bind, net.temb2, temb, 32)));
  Var e3 = relu(add(forward(bind, net.enc3, e2), stage_bias(bind, net.temb3, temb, 64)));
  if (!cond.defined())
    cond = tape.constant(Tensor::zeros({kFeatureChannels, h / 4, w / 4}));
  const Shape& cs = cond.value().shape();
  if (cs.size() != 3 || cs[0] != kFeatureChannels || cs[1] != h / 4 || cs[2] != w / 4)
    throw std::invalid_argument("ScoreNet: condition must be [C,H/4,W/4], got " + shape_str(cs));
  Var b = relu(add(e3, forward(bind, net.cond_proj, concat({e3, cond}, 0))));
  Var d2 = relu(add(forward(bind, net.dec2, concat({upsample_nearest2(b), e2}, 0)),
                    stage_bias(bind, net.temb4, temb, 32)));
  Var d1 = relu(add(forward(bind, net.dec1, concat({upsample_nearest2(d2), e1}, 0)),
                    stage_bias(bind, net.temb5, temb, 16)));
  return hwc_from_chw(forward(bind, net.out, d1));
}

Tensor sample_normal_map(const NoiseSchedule& ns, ScoreNet& net, const Tensor* cond, int h, int w,
                         Rng& rng) {
  Tensor x({static_cast<int64_t>(h), static_cast<int64_t>(w), 3});
  {
    double* p = x.unique_data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.normal();
  }
  for (int t = ns.steps; t >= 1; --t) {
    Tape tape;
    Binder bind(tape, /*train=*/false);
    Var cv = cond ? tape.constant(*cond) : Var();
    Var eps_hat = forward(bind, net, tape.constant(x), t, cv);
    x = reverse_step(ns, x, t, eps_hat.value(), rng);
  }
  return x;
}

GateNet GateNet::init(Rng& rng) {
  GateNet net;
  net.conv1 = make_conv2d(rng, 7, 16, 3);
  net.conv2 = make_conv2d(rng, 16, 16, 3);
  net.conv3 = make_conv2d(rng, 16, 1, 3);
  return net;
}

Var forward(Binder& bind, GateNet& net, Var n_a, Var n_b, Var alpha) {
  const Shape& sa = n_a.value().shape();
  if (sa.size() != 3 || sa[2] != 3) throw std::invalid_argument("GateNet: wants [H,W,3] normals");
  const int64_t h = sa[0], w = sa[1];
  Var x = concat({chw_from_hwc(n_a), chw_from_hwc(n_b), reshape(alpha, {1, h, w})}, 0);
  x = relu(forward(bind, net.conv1, x));
  x = relu(forward(bind, net.conv2, x));
  return reshape(sigmoid(forward(bind, net.conv3, x)), {h, w});
}

GatedFusion gated_fuse(const Tensor& n_a, const Tensor& n_b, const Tensor& gate) {
  if (n_a.rank() != 3 || n_a.dim(2) != 3 || !shapes_equal(n_a.shape(), n_b.shape()))
    throw std::invalid_argument("gated_fuse: wants matching [H,W,3] normals");
  const int64_t h = n_a.dim(0), w = n_a.dim(1);
  if (gate.rank() != 2 || gate.dim(0) != h || gate.dim(1) != w)
    throw std::invalid_argument("gated_fuse: gate must be [H,W]");
  GatedFusion out;
  out.normal = Tensor::zeros({h, w, 3});
  out.valid.assign(static_cast<size_t>(h * w), 0);
  double* po = out.normal.unique_data();
  const double* pa = n_a.data();
  const double* pb = n_b.data();
  const double* pg = gate.data();
  for (int64_t i = 0; i < h * w; ++i) {
    const double g = pg[i];
    double v[3];
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      v[c] = g * pa[i * 3 + c] + (1.0 - g) * pb[i * 3 + c];
      n2 += v[c] * v[c];
    }
    if (std::sqrt(n2) < 1e-8) continue;
    // same arithmetic as normalize_pixels_hwc so the graph twin is bit-identical
    const double inv = std::pow(n2 + 1e-24, -0.5);
    for (int c = 0; c < 3; ++c) po[i * 3 + c] = v[c] * inv;
    out.valid[static_cast<size_t>(i)] = 1;
  }
  return out;
}

Var gated_fuse_vars(Var n_a, Var n_b, Var gate, std::vector<char>* valid_out) {
  const Shape& sa = n_a.value().shape();
  if (sa.size() != 3 || sa[2] != 3 || !shapes_equal(sa, n_b.value().shape()))
    throw std::invalid_argument("gated_fuse_vars: wants matching [H,W,3] normals");
  const int64_t h = sa[0], w = sa[1];
  Var g = reshape(gate, {h, w, 1});
  Var blend = add(mul(g, n_a), mul(add_const(neg(g), 1.0), n_b));
  return normalize_pixels_hwc(blend, 1e-8, valid_out);
}

void visit_params(TexEncoder& net, const ParamVisitor& fn) {
  fn("tex.conv1.w", net.conv1.w);
  fn("tex.conv1.b", net.conv1.b);
  fn("tex.conv2.w", net.conv2.w);
  fn("tex.conv2.b", net.conv2.b);
  fn("tex.proj.w", net.proj.w);
  fn("tex.proj.b", net.proj.b);
}

void visit_params(FusionNet& net, const ParamVisitor& fn) {
  fn("fusion.tex_fc1.w", net.tex_fc1.w);
  fn("fusion.tex_fc1.b", net.tex_fc1.b);
  fn("fusion.tex_fc2.w", net.tex_fc2.w);
  fn("fusion.tex_fc2.b", net.tex_fc2.b);
  fn("fusion.geo_fc1.w", net.geo_fc1.w);
  fn("fusion.geo_fc1.b", net.geo_fc1.b);
  fn("fusion.geo_fc2.w", net.geo_fc2.w);
  fn("fusion.geo_fc2.b", net.geo_fc2.b);
  fn("fusion.spatial.w", net.spatial.w);
  fn("fusion.spatial.b", net.spatial.b);
}

void visit_params(ScoreNet& net, const ParamVisitor& fn) {
  auto conv = [&fn](const char* name, Conv2dLayer& c) {
    fn(std::string("score.") + name + ".w", c.w);
    fn(std::string("score.") + name + ".b", c.b);
  };
  auto lin = [&fn](const char* name, LinearLayer& l) {
    fn(std::string("score.") + name + ".w", l.w);
    fn(std::string("score.") + name + ".b", l.b);
  };
  conv("enc1", net.enc1);
  conv("enc2", net.enc2);
  conv("enc3", net.enc3);
  conv("cond_proj", net.cond_proj);
  conv("dec2", net.dec2);
  conv("dec1", net.dec1);
  conv("out", net.out);
  lin("temb1", net.temb1);
  lin("temb2", net.temb2);
  lin("temb3", net.temb3);
  lin("temb4", net.temb4);
  lin("temb5", net.temb5);
}

void visit_params(GateNet& net, const ParamVisitor& fn) {
  fn("gate.conv1.w", net.conv1.w);
  fn("gate.conv1.b", net.conv1.b);
  fn("gate.conv2.w", net.conv2.w);
  fn("gate.conv2.b", net.conv2.b);
  fn("gate.conv3.w", net.conv3.w);
  fn("gate.conv3.b", net.conv3.b);
}

}  // namespace splatnorm
