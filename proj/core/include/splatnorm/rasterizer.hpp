#pragma once

#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/scene.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Alpha clamp and the per-pixel contribution cutoff. A splat is blended at a
// pixel iff sigma * exp(-q/2) >= 1/255, tested as q <= 2 ln(255 sigma) so the
// skip is exact and identical in tiled and brute-force paths.
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kEarlyStopT = 1e-4;
// Composited raw normals shorter than this render as zero instead of unit.
inline constexpr double kNormalEps = 1e-8;

struct RenderOptions {
  int tile_size = 16;       // >= 4
  bool early_stop = true;   // stop a pixel once transmittance < kEarlyStopT
  bool brute_force = false; // skip tile culling; every active splat is a candidate
};

struct RenderOutput {
  Tensor rgb;           // H x W x 3, background composited under T_end
  Tensor alpha;         // H x W
  Tensor normal;        // H x W x 3, unit where coverage exists, else zero
  Tensor depth;         // H x W, alpha-weighted splat depths
  Tensor contribution;  // K x 3, per-splat summed color contribution
};

// Raw engine interface; all tensors are values (no tape).
struct RasterInputs {
  int width = 0, height = 0;
  Tensor mean2d;  // K x 2, pixel-center coordinates
  Tensor cov2d;   // K x 2 x 2, dilated, positive definite; off-diagonals enter
                  // through their mean only
  Tensor depth;   // K
  Tensor sigma;   // K, >= 0; alpha saturates at kAlphaMax
  Tensor color;   // K x 3
  Tensor normal;  // K x 3, unit, map frame
  std::vector<char> skip;  // optional; 1 = cull unconditionally
  double background[3] = {0, 0, 0};
};

// Forward result plus everything backward needs: per-pixel blend records
// (CSR over row-major pixels) and per-splat conic data.
struct RasterForward {
  RenderOutput out;
  std::vector<int64_t> offsets;    // H*W + 1
  std::vector<int32_t> rec_splat;
  std::vector<double> rec_alpha;
  std::vector<double> conic;       // K x 3: inverse cov2d (i00, i01, i11)
  std::vector<double> q_max;       // K
  std::vector<char> active;        // K
};

RasterForward raster_forward(const RasterInputs& in, const RenderOptions& opt);

struct RasterUpstream {
  const Tensor* rgb = nullptr;
  const Tensor* alpha = nullptr;
  const Tensor* normal = nullptr;
  const Tensor* depth = nullptr;
  const Tensor* contribution = nullptr;
};

struct RasterGrads {
  Tensor mean2d;  // K x 2
  Tensor cov2d;   // K x 2 x 2 (full-matrix entries)
  Tensor depth;   // K
  Tensor sigma;   // K
  Tensor color;   // K x 3
  Tensor normal;  // K x 3
};

RasterGrads raster_backward(const RasterInputs& in, const RenderOptions& opt,
                            const RasterForward& fwd, const RasterUpstream& up);

// Value-level full pipeline: project, shade, rasterize.
RenderOutput render(const Scene& scene, const Camera& cam, const LightField& light,
                    const RenderOptions& opt);

struct RenderVars {
  Var rgb, alpha, normal, depth, contribution;
};

// Differentiable rasterization as one tape node with packed outputs.
RenderVars rasterize_vars(Tape& tape, Var mean2d, Var cov2d, Var depth, Var sigma, Var color,
                          Var normal, std::vector<char> skip, int width, int height,
                          const double background[3], const RenderOptions& opt);

// Full scene graph: covariance, projection, shading, map-frame normals,
// rasterization.
RenderVars render_vars(Tape& tape, const SceneVars& sv, const Camera& cam,
                       const LightField& light, const double background[3],
                       const RenderOptions& opt);

}  // namespace splatnorm
