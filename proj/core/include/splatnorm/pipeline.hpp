#pragma once

#include <string>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/checkpoint.hpp"
#include "splatnorm/config.hpp"
#include "splatnorm/diffusion.hpp"
#include "splatnorm/geo_features.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/rasterizer.hpp"
#include "splatnorm/synthetic.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// The one-step refinement runs at T / kOneStepDivisor.
inline constexpr int kOneStepDivisor = 4;

struct DataSample {
  Tensor rgb;     // H x W x 3, already quantized like the on-disk PNG
  Tensor alpha;   // H x W
  Tensor normal;  // H x W x 3, map frame; evaluation only
  Tensor depth;   // H x W; evaluation only
};

LightField light_from_config(const TrainConfig& cfg);

// Ray-traced primitives under the one configured light; scene content is
// derived deterministically from cfg.seed.
std::vector<DataSample> make_dataset(const TrainConfig& cfg);

// On-disk layout: manifest.cfg plus per-sample rgb PNG and alpha / normal /
// depth PFM (and a preview PNG of the normals). Byte-deterministic.
void write_dataset(const std::string& dir, const TrainConfig& cfg);
// Throws when the manifest disagrees with cfg on data geometry.
std::vector<DataSample> load_dataset(const std::string& dir, const TrainConfig& cfg);

// Trainable state of the whole system. Stage 1 trains the splat regressor
// (encoder + pyramid), stage 2 the normal generator (score/tex/fusion)
// against renders of the frozen regressor, stage 3 everything jointly
// through the gated second render.
struct Pipeline {
  TrainConfig config;
  int completed_stage = 0;
  EncoderNet encoder;
  FpnNet fpn;
  TexEncoder tex;
  FusionNet fusion;
  ScoreNet score;
  GateNet gate;
  NoiseSchedule schedule;
  // Most recent predicted scene (dataset sample 0); gives `render` a scene
  // to show without re-running the encoder.
  SceneParams last_scene;

  static Pipeline init(const TrainConfig& cfg);
};

void visit_encoder_block(Pipeline& p, const ParamVisitor& fn);    // encoder + fpn
void visit_diffusion_block(Pipeline& p, const ParamVisitor& fn);  // tex + fusion + score + gate
void visit_all_params(Pipeline& p, const ParamVisitor& fn);

// Digest of one block's tensors, for freeze contracts. which: 1 encoder
// block, 2 diffusion block.
uint64_t block_fingerprint(Pipeline& p, int which);

Checkpoint to_checkpoint(Pipeline& p);
Pipeline from_checkpoint(const Checkpoint& ck);
void save_pipeline(const std::string& path, Pipeline& p);
Pipeline load_pipeline(const std::string& path);

struct StageReport {
  int stage = 0;
  std::vector<double> losses;  // one per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Runs one stage; throws when the prerequisite stage has not completed.
StageReport train_stage(Pipeline& p, int stage, const std::vector<DataSample>& data,
                        bool verbose = false);

struct EstimateResult {
  SceneParams scene;
  Tensor rgb;      // rendered color
  Tensor alpha;    // rendered coverage
  Tensor n_3dgs;   // rendered splat normals, map frame
  Tensor n_diff;   // one-step denoised normals
  Tensor n_fused;  // gated blend
  std::vector<char> valid;
};

// Deterministic inference for one image (no noise is injected).
EstimateResult estimate(Pipeline& p, const Tensor& rgb);

RenderOutput render_view(Pipeline& p, const SceneParams& scene, const Camera& cam);

}  // namespace splatnorm
