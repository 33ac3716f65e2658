#include "splatnorm/synthetic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "splatnorm/rng.hpp"

namespace splatnorm {
namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  double normal[3] = {0, 0, 0};  // world frame, unit
  const SyntheticObject* obj = nullptr;
};

bool hit_sphere(const SyntheticObject& o, const double org[3], const double dir[3], Hit* h) {
  const double oc[3] = {org[0] - o.center[0], org[1] - o.center[1], org[2] - o.center[2]};
  const double b = oc[0] * dir[0] + oc[1] * dir[1] + oc[2] * dir[2];
  const double c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - o.radius * o.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < 1e-6) t = -b + sq;
  if (t < 1e-6 || t >= h->t) return false;
  h->t = t;
  for (int i = 0; i < 3; ++i)
    h->normal[i] = (org[i] + t * dir[i] - o.center[i]) / o.radius;
  h->obj = &o;
  return true;
}

bool hit_box(const SyntheticObject& o, const double org[3], const double dir[3], Hit* h) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis = 0;
  double axis_sign = 1.0;
  for (int i = 0; i < 3; ++i) {
    const double lo = o.center[i] - o.half_extent[i];
    const double hi = o.center[i] + o.half_extent[i];
    if (std::fabs(dir[i]) < 1e-12) {
      if (org[i] < lo || org[i] > hi) return false;
      continue;
    }
    double t0 = (lo - org[i]) / dir[i];
    double t1 = (hi - org[i]) / dir[i];
    double sgn = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sgn = 1.0;
    }
    if (t0 > tmin) {
      tmin = t0;
      axis = i;
      axis_sign = sgn;
    }
    if (t1 < tmax) tmax = t1;
    if (tmin > tmax) return false;
  }
  double t = tmin;
  if (t < 1e-6) return false;  // entry behind the camera: treat as miss
  if (t >= h->t) return false;
  h->t = t;
  h->normal[0] = h->normal[1] = h->normal[2] = 0.0;
  h->normal[axis] = axis_sign;
  h->obj = &o;
  return true;
}

double torus_sdf(const SyntheticObject& o, const double p[3]) {
  const double lx = p[0] - o.center[0];
  const double ly = p[1] - o.center[1];
  const double lz = p[2] - o.center[2];
  const double q0 = std::sqrt(lx * lx + ly * ly) - o.major;
  return std::sqrt(q0 * q0 + lz * lz) - o.minor;
}

bool hit_torus(const SyntheticObject& o, const double org[3], const double dir[3], Hit* h) {
  // Sphere tracing: the SDF is exact, so this converges fast.
  double t = 1e-3;
  for (int step = 0; step < 256 && t < 100.0; ++step) {
    const double p[3] = {org[0] + t * dir[0], org[1] + t * dir[1], org[2] + t * dir[2]};
    const double d = torus_sdf(o, p);
    if (d < 1e-7) {
      if (t >= h->t) return false;
      const double lx = p[0] - o.center[0];
      const double ly = p[1] - o.center[1];
      const double lz = p[2] - o.center[2];
      const double len_xy = std::sqrt(lx * lx + ly * ly);
      if (len_xy < 1e-9) return false;
      const double q0 = len_xy - o.major;
      double n[3] = {lx * q0 / len_xy, ly * q0 / len_xy, lz};
      const double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (nn < 1e-12) return false;
      h->t = t;
      for (int i = 0; i < 3; ++i) h->normal[i] = n[i] / nn;
      h->obj = &o;
      return true;
    }
    t += d;
  }
  return false;
}

}  // namespace

SyntheticScene make_synthetic(uint64_t seed, int max_objects) {
  if (max_objects < 1) throw std::invalid_argument("make_synthetic: max_objects must be >= 1");
  Rng rng(seed);
  SyntheticScene s;
  const int count = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_objects)));
  for (int i = 0; i < count; ++i) {
    SyntheticObject o;
    const uint64_t kind = rng.next_below(3);
    o.kind = kind == 0 ? SyntheticObject::Kind::kSphere
                       : (kind == 1 ? SyntheticObject::Kind::kBox : SyntheticObject::Kind::kTorus);
    o.center[0] = -0.6 + 1.2 * rng.uniform();
    o.center[1] = -0.6 + 1.2 * rng.uniform();
    o.center[2] = 2.6 + 0.8 * rng.uniform();
    o.radius = 0.3 + 0.4 * rng.uniform();
    for (int a = 0; a < 3; ++a) o.half_extent[a] = 0.25 + 0.25 * rng.uniform();
    o.major = 0.35 + 0.15 * rng.uniform();
    o.minor = 0.1 + 0.08 * rng.uniform();
    for (int c = 0; c < 3; ++c) o.albedo[c] = 0.3 + 0.6 * rng.uniform();
    s.objects.push_back(o);
  }
  double dir[3] = {0.25 + 0.3 * rng.uniform(), 0.35 + 0.3 * rng.uniform(), -0.8};
  double rad[3];
  for (int c = 0; c < 3; ++c) rad[c] = 0.8 + 0.4 * rng.uniform();
  s.light = LightField::directional(dir, rad);
  return s;
}

SyntheticScene single_sphere(double radius, const double albedo[3]) {
  SyntheticScene s;
  SyntheticObject o;
  o.kind = SyntheticObject::Kind::kSphere;
  o.center[0] = 0.0;
  o.center[1] = 0.0;
  o.center[2] = 3.0;
  o.radius = radius;
  for (int c = 0; c < 3; ++c) o.albedo[c] = albedo[c];
  s.objects.push_back(o);
  const double dir[3] = {0.4, 0.5, -0.77};
  const double rad[3] = {1.0, 1.0, 1.0};
  s.light = LightField::directional(dir, rad);
  return s;
}

SyntheticRender raytrace(const SyntheticScene& scene, const Camera& cam) {
  if (scene.objects.empty()) throw std::invalid_argument("raytrace: empty scene");
  const int w = cam.width, h = cam.height;
  SyntheticRender out;
  out.rgb = Tensor::zeros({h, w, 3});
  out.alpha = Tensor::zeros({h, w});
  out.normal = Tensor::zeros({h, w, 3});
  out.depth = Tensor::zeros({h, w});
  double* rgb = out.rgb.unique_data();
  double* alpha = out.alpha.unique_data();
  double* nrm = out.normal.unique_data();
  double* dep = out.depth.unique_data();

  double org[3];
  cam.position(org);
  double light_dir[3];
  scene.light.effective_direction(light_dir);

  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const double dc[3] = {(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
      const double dn = std::sqrt(dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]);
      double dir_cam[3] = {dc[0] / dn, dc[1] / dn, dc[2] / dn};
      double dir[3];
      for (int i = 0; i < 3; ++i) {
        dir[i] = cam.rotation[0 * 3 + i] * dir_cam[0] + cam.rotation[1 * 3 + i] * dir_cam[1] +
                 cam.rotation[2 * 3 + i] * dir_cam[2];
      }

      Hit hit;
      for (const SyntheticObject& o : scene.objects) {
        switch (o.kind) {
          case SyntheticObject::Kind::kSphere: hit_sphere(o, org, dir, &hit); break;
          case SyntheticObject::Kind::kBox: hit_box(o, org, dir, &hit); break;
          case SyntheticObject::Kind::kTorus: hit_torus(o, org, dir, &hit); break;
        }
      }

      const int64_t pid = static_cast<int64_t>(py) * w + px;
      if (hit.obj == nullptr) {
        for (int c = 0; c < 3; ++c) rgb[pid * 3 + c] = scene.background[c];
        continue;
      }
      double n[3] = {hit.normal[0], hit.normal[1], hit.normal[2]};
      // Face the viewer (matters for torus inner surfaces and box interiors).
      if (n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2] > 0.0)
        for (int i = 0; i < 3; ++i) n[i] = -n[i];

      double shade_f;
      if (scene.light.kind == LightField::Kind::kDirectional) {
        shade_f = std::max(n[0] * light_dir[0] + n[1] * light_dir[1] + n[2] * light_dir[2], 0.0);
      } else {
        shade_f = 1.0;
      }
      for (int c = 0; c < 3; ++c)
        rgb[pid * 3 + c] = hit.obj->albedo[c] * scene.light.radiance[c] * shade_f;

      alpha[pid] = 1.0;
      double hp_cam[3];
      const double hp[3] = {org[0] + hit.t * dir[0], org[1] + hit.t * dir[1],
                            org[2] + hit.t * dir[2]};
      cam.world_to_cam(hp, hp_cam);
      dep[pid] = hp_cam[2];
      double nmap[3];
      cam.normal_world_to_map(n, nmap);
      for (int c = 0; c < 3; ++c) nrm[pid * 3 + c] = nmap[c];
    }
  }
  return out;
}

}  // namespace splatnorm
