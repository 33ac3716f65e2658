#pragma once

namespace splatnorm {

// Splats closer than this to the image plane are culled before projection.
inline constexpr double kNearPlane = 0.01;

// Pinhole camera. rotation/translation map world points into the camera
// frame (p_cam = R * p_world + t); the camera looks down +z, image y grows
// downward, pixel (row, col) has center (x = col, y = row).
struct Camera {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  double rotation[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  double translation[3] = {0, 0, 0};
  int width = 0, height = 0;

  // Identity pose at the origin; fx = fy = 0.875 * max(W, H), principal
  // point at the pixel-grid center.
  static Camera canonical(int width, int height);
  static Camera look_at(const double eye[3], const double target[3], const double up[3],
                        int width, int height, double focal);

  void world_to_cam(const double p_world[3], double out[3]) const;
  void cam_to_world(const double p_cam[3], double out[3]) const;
  // False when the point is in front of the near plane (z_cam <= kNearPlane).
  bool project_point(const double p_world[3], double uv[2], double* depth) const;
  void back_project(double u, double v, double depth, double out_world[3]) const;
  void position(double out[3]) const;  // camera center in world coordinates

  // Map frame for normal images: x right, y up, z toward the viewer, so any
  // visible surface normal has positive z.
  void normal_world_to_map(const double n_world[3], double out[3]) const;
  void normal_map_to_world(const double n_map[3], double out[3]) const;
};

}  // namespace splatnorm
