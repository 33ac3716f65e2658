#include "splatnorm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace splatnorm {

double angular_error_deg(const double a[3], const double b[3]) {
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  if (na < 1e-8 || nb < 1e-8)
    throw std::invalid_argument("angular_error: degenerate normal");
  const double d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
  return std::acos(std::clamp(d, -1.0, 1.0)) * 180.0 / M_PI;
}

NormalMetrics evaluate_normals(const Tensor& pred, const Tensor& gt,
                               const Tensor& pred_alpha, const Tensor& gt_alpha) {
  if (pred.rank() != 3 || pred.dim(2) != 3 || !shapes_equal(pred.shape(), gt.shape()))
    throw std::invalid_argument("evaluate_normals: normal maps must match as H x W x 3");
  const int64_t h = pred.dim(0), w = pred.dim(1);
  if (pred_alpha.rank() != 2 || pred_alpha.dim(0) != h || pred_alpha.dim(1) != w ||
      !shapes_equal(pred_alpha.shape(), gt_alpha.shape()))
    throw std::invalid_argument("evaluate_normals: coverage maps must match as H x W");

  std::vector<double> errs;
  errs.reserve(static_cast<size_t>(h * w));
  for (int64_t p = 0; p < h * w; ++p) {
    if (pred_alpha.at(p) <= 0.5 || gt_alpha.at(p) <= 0.5) continue;
    const double a[3] = {pred.at(p * 3), pred.at(p * 3 + 1), pred.at(p * 3 + 2)};
    const double b[3] = {gt.at(p * 3), gt.at(p * 3 + 1), gt.at(p * 3 + 2)};
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    if (na < 1e-8 || nb < 1e-8) continue;
    errs.push_back(angular_error_deg(a, b));
  }

  NormalMetrics m;
  m.valid = static_cast<int64_t>(errs.size());
  if (errs.empty()) return m;

  double sum = 0.0;
  int64_t n11 = 0, n22 = 0, n30 = 0;
  for (double e : errs) {
    sum += e;
    if (e < 11.25) ++n11;
    if (e < 22.5) ++n22;
    if (e < 30.0) ++n30;
  }
  m.mae = sum / static_cast<double>(errs.size());
  m.acc_11 = static_cast<double>(n11) / static_cast<double>(errs.size());
  m.acc_22 = static_cast<double>(n22) / static_cast<double>(errs.size());
  m.acc_30 = static_cast<double>(n30) / static_cast<double>(errs.size());

  std::sort(errs.begin(), errs.end());
  const size_t n = errs.size();
  m.medae = (n % 2 == 1) ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  return m;
}

}  // namespace splatnorm
