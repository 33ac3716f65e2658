#pragma once

namespace splatnorm {

// Closed-form (Cardano) eigendecomposition of a symmetric 3x3 matrix.
// Eigenvalues ascend; eigenvectors are unit, orthonormal, sign-canonical
// (first component over 1e-12 in magnitude is positive). When eigenvalues
// tie, the tied eigenvectors are built from coordinate axes and ordered
// lexicographically, so ties resolve to a documented deterministic choice
// (fully isotropic input yields (0,0,1), (0,1,0), (1,0,0)).
struct SymEig3 {
  double eigenvalues[3];
  double eigenvectors[3][3];  // eigenvectors[i] pairs with eigenvalues[i]
};

// m is row-major symmetric 3x3 (only the upper triangle is read).
SymEig3 sym_eig3(const double m[9]);

}  // namespace splatnorm
