#include "splatnorm/eig3.hpp"

#include <algorithm>
#include <cmath>

namespace splatnorm {
namespace {

void cross3(const double a[3], const double b[3], double out[3]) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}

double dot3(const double a[3], const double b[3]) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double norm3(const double a[3]) { return std::sqrt(dot3(a, a)); }

void normalize3(double a[3]) {
  const double n = norm3(a);
  a[0] /= n;
  a[1] /= n;
  a[2] /= n;
}

void canonical_sign(double v[3]) {
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(v[i]) > 1e-12) {
      if (v[i] < 0.0) {
        v[0] = -v[0];
        v[1] = -v[1];
        v[2] = -v[2];
      }
      return;
    }
  }
}

bool lex_less(const double a[3], const double b[3]) {
  for (int i = 0; i < 3; ++i) {
    if (a[i] < b[i] - 1e-12) return true;
    if (a[i] > b[i] + 1e-12) return false;
  }
  return false;
}

// Eigenvector for an eigenvalue of multiplicity one: the two independent
// rows of (A - lambda I) both annihilate it, so their cross product spans it.
void isolated_eigenvector(const double a[3][3], double lambda, double out[3]) {
  double rows[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rows[i][j] = a[i][j] - (i == j ? lambda : 0.0);
  double cand[3][3];
  cross3(rows[0], rows[1], cand[0]);
  cross3(rows[0], rows[2], cand[1]);
  cross3(rows[1], rows[2], cand[2]);
  int best = 0;
  double best_norm = norm3(cand[0]);
  for (int i = 1; i < 3; ++i) {
    const double n = norm3(cand[i]);
    if (n > best_norm) {
      best_norm = n;
      best = i;
    }
  }
  out[0] = cand[best][0];
  out[1] = cand[best][1];
  out[2] = cand[best][2];
  normalize3(out);
}

// Deterministic orthonormal basis of the plane normal to v: start from the
// coordinate axis least aligned with v.
void complement_basis(const double v[3], double u[3], double w[3]) {
  int axis = 0;
  double best = std::fabs(v[0]);
  for (int i = 1; i < 3; ++i) {
    if (std::fabs(v[i]) < best) {
      best = std::fabs(v[i]);
      axis = i;
    }
  }
  double e[3] = {0.0, 0.0, 0.0};
  e[axis] = 1.0;
  const double p = dot3(e, v);
  for (int i = 0; i < 3; ++i) u[i] = e[i] - p * v[i];
  normalize3(u);
  cross3(v, u, w);
  normalize3(w);
}

}  // namespace

SymEig3 sym_eig3(const double m[9]) {
  double a[3][3] = {{m[0], m[1], m[2]}, {m[1], m[4], m[5]}, {m[2], m[5], m[8]}};

  double scale = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) scale = std::max(scale, std::fabs(a[i][j]));

  SymEig3 r{};
  if (scale == 0.0) {
    r.eigenvalues[0] = r.eigenvalues[1] = r.eigenvalues[2] = 0.0;
    r.eigenvectors[0][2] = 1.0;
    r.eigenvectors[1][1] = 1.0;
    r.eigenvectors[2][0] = 1.0;
    return r;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a[i][j] /= scale;

  const double q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
  double dev[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) dev[i][j] = a[i][j] - (i == j ? q : 0.0);
  double p2 = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p2 += dev[i][j] * dev[i][j];
  const double p = std::sqrt(p2 / 6.0);

  double lam[3];
  if (p < 1e-14) {
    lam[0] = lam[1] = lam[2] = q;
  } else {
    double det = 0.0;
    det += dev[0][0] * (dev[1][1] * dev[2][2] - dev[1][2] * dev[2][1]);
    det -= dev[0][1] * (dev[1][0] * dev[2][2] - dev[1][2] * dev[2][0]);
    det += dev[0][2] * (dev[1][0] * dev[2][1] - dev[1][1] * dev[2][0]);
    const double rr = std::clamp(det / (2.0 * p * p * p), -1.0, 1.0);
    const double phi = std::acos(rr) / 3.0;
    lam[2] = q + 2.0 * p * std::cos(phi);
    lam[0] = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    lam[1] = 3.0 * q - lam[0] - lam[2];
  }
  std::sort(lam, lam + 3);

  // Multiplicity from relative gaps; the tolerance is on the scaled matrix.
  const double gap_tol = 1e-9 * std::max({std::fabs(lam[0]), std::fabs(lam[2]), 1e-30});
  const bool low_pair = (lam[1] - lam[0]) <= gap_tol;
  const bool high_pair = (lam[2] - lam[1]) <= gap_tol;

  double vec[3][3];
  if (low_pair && high_pair) {
    vec[0][0] = 0.0; vec[0][1] = 0.0; vec[0][2] = 1.0;
    vec[1][0] = 0.0; vec[1][1] = 1.0; vec[1][2] = 0.0;
    vec[2][0] = 1.0; vec[2][1] = 0.0; vec[2][2] = 0.0;
  } else if (low_pair) {
    isolated_eigenvector(a, lam[2], vec[2]);
    complement_basis(vec[2], vec[0], vec[1]);
    canonical_sign(vec[0]);
    canonical_sign(vec[1]);
    if (lex_less(vec[1], vec[0])) {
      std::swap(vec[0][0], vec[1][0]);
      std::swap(vec[0][1], vec[1][1]);
      std::swap(vec[0][2], vec[1][2]);
    }
  } else if (high_pair) {
    isolated_eigenvector(a, lam[0], vec[0]);
    complement_basis(vec[0], vec[1], vec[2]);
    canonical_sign(vec[1]);
    canonical_sign(vec[2]);
    if (lex_less(vec[2], vec[1])) {
      std::swap(vec[1][0], vec[2][0]);
      std::swap(vec[1][1], vec[2][1]);
      std::swap(vec[1][2], vec[2][2]);
    }
  } else {
    isolated_eigenvector(a, lam[0], vec[0]);
    isolated_eigenvector(a, lam[2], vec[2]);
    // Middle vector from orthogonality: exact and immune to its own
    // cross-product conditioning.
    cross3(vec[2], vec[0], vec[1]);
    normalize3(vec[1]);
  }

  for (int i = 0; i < 3; ++i) {
    canonical_sign(vec[i]);
    r.eigenvalues[i] = lam[i] * scale;
    for (int j = 0; j < 3; ++j) r.eigenvectors[i][j] = vec[i][j];
  }
  return r;
}

}  // namespace splatnorm
