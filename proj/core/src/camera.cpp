#include "splatnorm/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace splatnorm {
namespace {

void cross3(const double a[3], const double b[3], double out[3]) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}

void normalize3(double v[3]) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n < 1e-12) throw std::invalid_argument("camera: degenerate direction");
  v[0] /= n;
  v[1] /= n;
  v[2] /= n;
}

}  // namespace

Camera Camera::canonical(int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: non-positive size");
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = 0.875 * static_cast<double>(width > height ? width : height);
  c.cx = 0.5 * (width - 1);
  c.cy = 0.5 * (height - 1);
  return c;
}

Camera Camera::look_at(const double eye[3], const double target[3], const double up[3],
                       int width, int height, double focal) {
  if (focal <= 0.0) throw std::invalid_argument("camera: non-positive focal");
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal;
  c.cx = 0.5 * (width - 1);
  c.cy = 0.5 * (height - 1);

  double fwd[3] = {target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]};
  normalize3(fwd);
  double right[3];
  double upn[3] = {up[0], up[1], up[2]};
  // Image y grows downward: camera y is -up after orthogonalization.
  cross3(fwd, upn, right);
  normalize3(right);
  double down[3];
  cross3(fwd, right, down);

  for (int j = 0; j < 3; ++j) {
    c.rotation[0 + j] = right[j];
    c.rotation[3 + j] = down[j];
    c.rotation[6 + j] = fwd[j];
  }
  for (int i = 0; i < 3; ++i) {
    c.translation[i] = -(c.rotation[i * 3 + 0] * eye[0] + c.rotation[i * 3 + 1] * eye[1] +
                         c.rotation[i * 3 + 2] * eye[2]);
  }
  return c;
}

void Camera::world_to_cam(const double p_world[3], double out[3]) const {
  for (int i = 0; i < 3; ++i) {
    out[i] = rotation[i * 3 + 0] * p_world[0] + rotation[i * 3 + 1] * p_world[1] +
             rotation[i * 3 + 2] * p_world[2] + translation[i];
  }
}

void Camera::cam_to_world(const double p_cam[3], double out[3]) const {
  const double d[3] = {p_cam[0] - translation[0], p_cam[1] - translation[1],
                       p_cam[2] - translation[2]};
  for (int i = 0; i < 3; ++i) {
    out[i] = rotation[0 * 3 + i] * d[0] + rotation[1 * 3 + i] * d[1] + rotation[2 * 3 + i] * d[2];
  }
}

bool Camera::project_point(const double p_world[3], double uv[2], double* depth) const {
  double p[3];
  world_to_cam(p_world, p);
  if (depth != nullptr) *depth = p[2];
  if (p[2] <= kNearPlane) return false;
  uv[0] = fx * p[0] / p[2] + cx;
  uv[1] = fy * p[1] / p[2] + cy;
  return true;
}

void Camera::back_project(double u, double v, double depth, double out_world[3]) const {
  const double p_cam[3] = {(u - cx) / fx * depth, (v - cy) / fy * depth, depth};
  cam_to_world(p_cam, out_world);
}

void Camera::position(double out[3]) const {
  const double zero[3] = {0, 0, 0};
  cam_to_world(zero, out);
}

void Camera::normal_world_to_map(const double n_world[3], double out[3]) const {
  double n_cam[3];
  for (int i = 0; i < 3; ++i) {
    n_cam[i] = rotation[i * 3 + 0] * n_world[0] + rotation[i * 3 + 1] * n_world[1] +
               rotation[i * 3 + 2] * n_world[2];
  }
  out[0] = n_cam[0];
  out[1] = -n_cam[1];
  out[2] = -n_cam[2];
}

void Camera::normal_map_to_world(const double n_map[3], double out[3]) const {
  const double n_cam[3] = {n_map[0], -n_map[1], -n_map[2]};
  for (int i = 0; i < 3; ++i) {
    out[i] = rotation[0 * 3 + i] * n_cam[0] + rotation[1 * 3 + i] * n_cam[1] +
             rotation[2 * 3 + i] * n_cam[2];
  }
}

}  // namespace splatnorm
