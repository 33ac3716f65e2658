#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "splatnorm/rng.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Enumerates (name, storage) of every stateful tensor in a module, learnable
// or not; checkpointing and freeze checksums are built on it.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

// Puts network parameters onto a tape. Trainable binders create leaves and
// remember (storage, node) pairs for the optimizer; frozen binders create
// constants and record nothing.
struct Binder {
  Tape* tape = nullptr;
  bool trainable = true;
  std::vector<std::pair<Tensor*, Var>> bound;

  Binder(Tape& t, bool train) : tape(&t), trainable(train) {}
  Var bind(Tensor& param);
};

struct Conv2dLayer {
  Tensor w;  // [Co,Ci,kh,kw]
  Tensor b;  // [Co]
  int stride = 1;
  Pad pad = Pad::kSame;
};

struct LinearLayer {
  Tensor w;  // [in,out]
  Tensor b;  // [out]
};

// 1D batch norm over axis 0 of [B,D]. Normalization uses biased batch
// variance; running stats accumulate the same biased moments with momentum
// 0.1. Eval mode normalizes with the running stats.
struct BatchNorm1d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero bias.
Conv2dLayer make_conv2d(Rng& rng, int cin, int cout, int k, int stride = 1, Pad pad = Pad::kSame);
LinearLayer make_linear(Rng& rng, int in, int out);
BatchNorm1d make_batchnorm(int dim);

Var forward(Binder& bind, Conv2dLayer& layer, Var x);                       // [Ci,H,W] -> [Co,Ho,Wo]
Var forward(Binder& bind, LinearLayer& layer, Var x);                       // [B,in] -> [B,out]
Var forward(Binder& bind, BatchNorm1d& layer, Var x, bool training);        // [B,D] -> [B,D]

// emb[2j] = sin(t*w_j), emb[2j+1] = cos(t*w_j), w_j = 10000^(-j/(dim/2)).
Tensor sinusoidal_time_embedding(int t, int dim);

// ---- layout helpers ----
Var chw_from_hwc(Var x);  // [H,W,C] -> [C,H,W]
Var hwc_from_chw(Var x);  // [C,H,W] -> [H,W,C]

// Per-pixel renormalization of an [H,W,3] field. Rows with norm below
// min_norm come out exactly zero and pass no gradient; if valid_out is
// non-null it receives one flag per pixel.
Var normalize_pixels_hwc(Var x, double min_norm = 1e-8, std::vector<char>* valid_out = nullptr);

// SGD with momentum and global-norm gradient clipping. Velocity is keyed by
// parameter storage, so the set of parameters a step touches may vary.
struct SgdMomentum {
  double lr;
  double momentum;
  double grad_clip;

  SgdMomentum(double lr_, double momentum_, double grad_clip_)
      : lr(lr_), momentum(momentum_), grad_clip(grad_clip_) {}

  void step(Tape& tape, const std::vector<std::pair<Tensor*, Var>>& bound);

 private:
  std::vector<std::pair<Tensor*, Tensor>> velocity_;
  Tensor& velocity_for(Tensor* param);
};

}  // namespace splatnorm
