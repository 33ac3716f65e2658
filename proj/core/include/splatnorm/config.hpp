#pragma once

#include <cstdint>
#include <string>

namespace splatnorm {

// Flat key = value config; '#' starts a comment, unknown keys are rejected.
struct TrainConfig {
  // data
  int image_size = 64;   // multiple of 16 (two pyramid downsamples below H/4)
  int dataset_size = 8;
  uint64_t seed = 1;
  int max_objects = 2;

  // light under which the dataset is rendered and scenes are shaded
  std::string light = "directional";  // or "ambient"
  double light_x = 0.4, light_y = 0.5, light_z = -0.77;
  double light_r = 1.0, light_g = 1.0, light_b = 1.0;

  // capacity
  int splat_count = 256;
  int tile_size = 16;

  // stage schedules
  int stage1_steps = 1000;
  double stage1_lr = 1e-4;
  int stage1_batch = 16;
  int stage2_steps = 5000;
  double stage2_lr = 1e-5;
  int stage2_batch = 8;
  int stage3_steps = 1000;
  double stage3_lr = 1e-5;
  int stage3_batch = 4;
  double momentum = 0.9;
  double grad_clip = 10.0;

  // loss weights
  double w_scale = 0.01;
  double w_contour = 1.0;
  double w_ssim = 1.0;
  double w_energy = 1.0;

  // diffusion
  int diffusion_steps = 100;
  double cosine_offset = 0.008;
  double condition_dropout = 0.1;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& c);

}  // namespace splatnorm
