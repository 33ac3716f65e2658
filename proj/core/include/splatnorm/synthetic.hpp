#pragma once

#include <cstdint>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Analytic primitives rendered by ray tracing; these provide exact ground
// truth images, coverage and normals for training and evaluation.
struct SyntheticObject {
  enum class Kind { kSphere, kBox, kTorus };
  Kind kind = Kind::kSphere;
  double center[3] = {0, 0, 3};
  double radius = 0.5;                     // sphere
  double half_extent[3] = {0.4, 0.4, 0.4}; // box, axis-aligned
  double major = 0.45, minor = 0.15;       // torus, ring in the local xy plane
  double albedo[3] = {0.7, 0.7, 0.7};
};

struct SyntheticScene {
  std::vector<SyntheticObject> objects;
  LightField light;
  double background[3] = {0, 0, 0};
};

// Deterministic random scene with 1..max_objects primitives placed near
// z = 3 inside the canonical frustum, lit by one lateral directional light.
SyntheticScene make_synthetic(uint64_t seed, int max_objects = 2);

// Single Lambertian sphere on the optical axis; the center pixel's map-frame
// normal is exactly (0, 0, 1).
SyntheticScene single_sphere(double radius, const double albedo[3]);

struct SyntheticRender {
  Tensor rgb;     // H x W x 3
  Tensor alpha;   // H x W, 1 where any object is hit
  Tensor normal;  // H x W x 3, map frame, zero where empty
  Tensor depth;   // H x W, camera-frame z of the hit
};

SyntheticRender raytrace(const SyntheticScene& scene, const Camera& cam);

}  // namespace splatnorm
