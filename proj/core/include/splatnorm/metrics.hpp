#pragma once

#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Degrees between unit-ish vectors; the dot product is clamped to [-1, 1].
double angular_error_deg(const double a[3], const double b[3]);

struct NormalMetrics {
  double mae = 0.0;    // mean angular error, degrees
  double medae = 0.0;  // median; even counts average the two middle values
  double acc_11 = 0.0; // fraction of valid pixels below 11.25 degrees
  double acc_22 = 0.0; // below 22.5
  double acc_30 = 0.0; // below 30
  int64_t valid = 0;   // pixels entering the statistics
};

// Pixels count when both coverage maps exceed 0.5 and both normals have
// length >= 1e-8 (normals are re-normalized before comparison).
NormalMetrics evaluate_normals(const Tensor& pred, const Tensor& gt,
                               const Tensor& pred_alpha, const Tensor& gt_alpha);

}  // namespace splatnorm
