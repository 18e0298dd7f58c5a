// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing permissions
// and limitations under the License.

#pragma once

#include <vector>

#include "cw/common.hpp"
#include "cw/tensor.hpp"

namespace cw::pde {

// Uniform tensor-product grid on the box [a1,b1] x [a2,b2].  Node (i, j)
// sits at (a1 + i*h1, a2 + j*h2); the linear index is i*n2 + j.
struct Grid2D {
  int n1 = 2;
  int n2 = 2;
  double a1 = 0.0, b1 = 1.0;
  double a2 = 0.0, b2 = 1.0;

  double h1() const { return (b1 - a1) / (n1 - 1); }
  double h2() const { return (b2 - a2) / (n2 - 1); }
  double s1(int i) const { return a1 + i * h1(); }
  double s2(int j) const { return a2 + j * h2(); }
  int index(int i, int j) const { return i * n2 + j; }
  int count() const { return n1 * n2; }

  void validate() const;
  bool operator==(const Grid2D&) const = default;

  static Grid2D square(int n, double a, double b) {
    return Grid2D{n, n, a, b, a, b};
  }
};

// Nodal scalar field over a Grid2D.
struct Field {
  Grid2D grid;
  std::vector<double> v;

  double& at(int i, int j) { return v[static_cast<size_t>(grid.index(i, j))]; }
  double at(int i, int j) const {
    return v[static_cast<size_t>(grid.index(i, j))];
  }

  // Size agreement and finiteness of every value.
  void validate() const;

  static Field zeros(const Grid2D& g) {
    g.validate();
    return Field{g, std::vector<double>(static_cast<size_t>(g.count()), 0.0)};
  }
};

// Row i of the tensor holds the axis-1 slice at node index i.
template <typename T>
cw::ad::Tensor<T> field_to_tensor(const Field& f);
template <typename T>
Field tensor_to_field(const cw::ad::Tensor<T>& t, const Grid2D& g);

struct HeatConfig {
  double kappa = 0.64;
  double final_time = 1.0;
  int time_steps = 100;
  double source = 0.0;

  void validate() const;
};

// Implicit-Euler time stepping of the 5-point Laplacian with zero Dirichlet
// data: every step solves (I + dt*kappa*(-L)) u' = u + dt*b by conjugate
// gradients to relative residual 1e-10.  Boundary values of u0 are ignored;
// boundary nodes of the result are exactly zero.
Field heat_forward_fd(const Field& u0, const HeatConfig& cfg);

// Steady conduction -div(kappa grad u) = b with zero Dirichlet data, by
// linear-triangle finite elements on a structured triangulation (cell
// diagonals alternate in a checkerboard so the mesh maps to itself under
// the s1 <-> s2 swap).  The element conductivity is the mean of the three
// vertex values; the load is the consistent integral of the nodal source.
Field steady_conduction_fem(const Field& kappa, const Field& source);
Field steady_conduction_fem(const Field& kappa, double source);

// Dense interior stiffness matrix in row-major order, for direct spectral
// inspection.  Guarded to small grids; production paths never touch it.
std::vector<double> fem_stiffness_dense(const Field& kappa);

// (1/(sqrt(2 pi) sigma)) * exp(-|s - s0|^2 / (2 sigma^2)) sampled on the
// grid.  The normalization follows the measurement model, not the 2-D
// probability density.
Field gaussian_bump(double c1, double c2, double sigma, const Grid2D& grid);

struct InverseHeatConfig {
  double kappa = 0.2;
  double final_time = 1.0;
  int modes_kept = 25;

  void validate() const;
};

// The box three times the extent of the target on each axis with the same
// spacing, so the target nodes are a contiguous sub-block.
Grid2D extended_grid(const Grid2D& target);

// Regularized backward heat map on the extended box: sine-transform the
// field (zero Dirichlet basis), drop every mode above modes_kept per axis,
// multiply the rest by exp(+kappa*lambda*T), and transform back.
Field regularized_inverse_extended(const Field& u_ext,
                                   const InverseHeatConfig& cfg);

// Production wrapper: zero-embed a target-grid field into the extended
// box, invert there, and restrict back to the target block.
Field fft_regularized_inverse(const Field& u_final,
                              const InverseHeatConfig& cfg);

struct Point2 {
  double s1 = 0.0;
  double s2 = 0.0;
};

// First-order response of the conductivity at s to a point measurement
// perturbation delta_u at s0, through the free-space Green's function
// g = ln|s-s0| / (2 pi):
//
//   -delta_u * (grad_kappa(s0) . grad g  +  kappa(s0) * g_rr)
//
// where g_rr is the second derivative of g along the ray from s0.  Both
// terms decay with distance (1/r and 1/r^2), which is the locality
// statement this kernel exists to probe.
double delta_kappa_kernel(Point2 s, Point2 s0, double kappa0,
                          Point2 grad_kappa0, double delta_u);

}  // namespace cw::pde
