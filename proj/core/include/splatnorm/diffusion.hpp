#pragma once

#include <vector>

#include "splatnorm/nn.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

inline constexpr int kTimeEmbedDim = 16;

// Cosine noise schedule; each per-step beta is clipped at 0.999 and the clip
// is folded into the stored cumulative products.
struct NoiseSchedule {
  int steps = 0;                  // T
  std::vector<double> alpha_bar;  // T+1 values, alpha_bar[0] == 1

  static NoiseSchedule cosine(int steps, double offset = 0.008);

  double alpha(int t) const;  // alpha_bar[t] / alpha_bar[t-1], t in [1, T]
  double beta(int t) const { return 1.0 - alpha(t); }
  // Variance of the ancestral posterior q(x_{t-1} | x_t, x_0); zero at t = 1.
  double posterior_var(int t) const;
};

// x_t = sqrt(abar_t) n0 + sqrt(1 - abar_t) eps. t must lie in [0, T]; t = 0
// returns n0 exactly.
Tensor forward_noise(const NoiseSchedule& ns, const Tensor& n0, int t, const Tensor& eps);

// One ancestral step t -> t-1 given predicted noise,
//   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
//             + sqrt(posterior_var) * z.
// z is drawn from rng for t > 1 and omitted at t = 1; t = 0 is an error.
Tensor reverse_step(const NoiseSchedule& ns, const Tensor& x_t, int t, const Tensor& eps_hat,
                    Rng& rng);

// Deterministic step t -> t-1 through the implied clean sample,
//   x_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1}) eps_hat.
// Fed the true forward noise this inverts forward_noise exactly step by
// step; the ancestral step cannot (its injected z is independent of eps).
Tensor deterministic_reverse_step(const NoiseSchedule& ns, const Tensor& x_t, int t,
                                  const Tensor& eps_hat);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), t in [0, T].
Tensor predict_x0(const NoiseSchedule& ns, const Tensor& x_t, int t, const Tensor& eps_hat);

// Tape twins for the joint stage.
Var forward_noise_vars(const NoiseSchedule& ns, Var n0, int t, Var eps);
Var predict_x0_vars(const NoiseSchedule& ns, Var x_t, int t, Var eps_hat);

// With probability p the condition is dropped for the step (trained with a
// null condition so the net also works unconditionally).
bool drop_condition(Rng& rng, double p);

// ---- networks ----

// RGB -> kFeatureChannels x H/4 x W/4 texture features.
struct TexEncoder {
  Conv2dLayer conv1, conv2, proj;  // 3->16 s2, 16->32 s2, 1x1 32->32

  static TexEncoder init(Rng& rng);
};
Var forward(Binder& bind, TexEncoder& net, Var rgb_hwc);

// Channel gate from pooled descriptors plus a 7x7 spatial gate; the fused
// map is gate * gate * tex * geo. Zero weights give both gates 0.5.
struct FusionNet {
  LinearLayer tex_fc1, tex_fc2;  // C -> C/2 -> C
  LinearLayer geo_fc1, geo_fc2;
  Conv2dLayer spatial;  // 2 -> 1, 7x7

  static FusionNet init(Rng& rng);
};
Var forward(Binder& bind, FusionNet& net, Var f_tex, Var f_geo);

// Epsilon predictor: 16-32-64-32-16 encoder/decoder with skip connections,
// a sinusoidal time embedding projected into every stage, and the condition
// concatenated at the H/4 bottleneck behind a residual 1x1 projection. An
// undefined cond Var means the null condition (zero channels).
struct ScoreNet {
  Conv2dLayer enc1, enc2, enc3;
  Conv2dLayer cond_proj;
  Conv2dLayer dec2, dec1;
  Conv2dLayer out;
  LinearLayer temb1, temb2, temb3, temb4, temb5;

  static ScoreNet init(Rng& rng);
};
Var forward(Binder& bind, ScoreNet& net, Var x_hwc, int t, Var cond);

// Full ancestral sampler (T -> 0) under a frozen net; cond may be null.
Tensor sample_normal_map(const NoiseSchedule& ns, ScoreNet& net, const Tensor* cond, int h, int w,
                         Rng& rng);

// Per-pixel convex blending weight for two normal maps.
struct GateNet {
  Conv2dLayer conv1, conv2, conv3;  // 7->16->16->1, 3x3

  static GateNet init(Rng& rng);
};
Var forward(Binder& bind, GateNet& net, Var n_a, Var n_b, Var alpha);  // -> [H,W]

// renormalize(g * n_a + (1 - g) * n_b); pixels whose blend has norm under
// 1e-8 come out zero and are flagged invalid.
struct GatedFusion {
  Tensor normal;            // H x W x 3
  std::vector<char> valid;  // H*W flags
};
GatedFusion gated_fuse(const Tensor& n_a, const Tensor& n_b, const Tensor& gate);
Var gated_fuse_vars(Var n_a, Var n_b, Var gate, std::vector<char>* valid_out = nullptr);

void visit_params(TexEncoder& net, const ParamVisitor& fn);
void visit_params(FusionNet& net, const ParamVisitor& fn);
void visit_params(ScoreNet& net, const ParamVisitor& fn);
void visit_params(GateNet& net, const ParamVisitor& fn);

}  // namespace splatnorm
