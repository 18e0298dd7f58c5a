// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Locality probes: how far does one output pixel of a trained generator
// look into the measurement?  Two instruments answer that.  gradient_map
// averages |d g_k / d y| over measurement and latent draws by reverse-mode
// differentiation; bump_sweep pushes a Gaussian bump through the
// regularized inverse heat map from every grid node and records what a
// fixed probe pixel sees.  concentration_ratio condenses either picture
// into one number against the uniform baseline.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cw/nn.hpp"
#include "cw/pde.hpp"
#include "cw/random.hpp"

namespace cw::loc {

using pde::Field;
using pde::Grid2D;

// Averaged absolute sensitivity of output pixel (ki, kj) to the
// measurement: (1/(n_y*n_z)) sum_i sum_j |d g(z_j, y_i)_k / d y|.
// Values are non-negative and live on the measurement grid.
struct GradientMap {
  int ki = 0;
  int kj = 0;
  int n_y = 0;  // measurement fields averaged over
  int n_z = 0;  // latent draws averaged over
  Field map;
};

// Reverse-mode sweep per (measurement, latent) pair with y as the tracked
// leaf; the pixel is extracted through a one-hot mask so the scalar output
// is g_k itself.  Pairs run in parallel and the per-pixel average is a
// fixed-order pairwise sum over the stored per-pair maps.  A non-finite
// sensitivity fails naming the (measurement, latent) pair.
template <typename T>
GradientMap gradient_map(const nn::Model<T>& gen,
                         const nn::ParamStore<T>& params, int ki, int kj,
                         const std::vector<Field>& ys,
                         const std::vector<ad::Tensor<T>>& zs);

// n standard-normal latent vectors, one per stream rng.sub("latent", j).
template <typename T>
std::vector<ad::Tensor<T>> latent_draws(int n, int latent_dim,
                                        const RandomStream& rng);

// Share of the map's mass within Euclidean index distance r of the probed
// pixel.  Requires a non-negative map; an identically zero map is a
// failure, since the ratio would be meaningless.
double concentration_ratio(const GradientMap& map, double r);

// The ratio a uniform map would score: disk pixel count over grid pixel
// count.  Always in (0, 1].
double uniform_baseline(const Grid2D& grid, int ki, int kj, double r);

// Six interior probe pixels on a 2x3 lattice: rows n1/3 and 2*n1/3,
// columns n2/4, n2/2 and 3*n2/4.
std::vector<std::pair<int, int>> probe_lattice(const Grid2D& grid);

// One record per probed pixel, all ratios in [0, 1].
struct LocalityRecord {
  int ki = 0;
  int kj = 0;
  double ratio = 0.0;
  double baseline = 0.0;
};

struct LocalityReport {
  double radius = 0.0;
  std::vector<LocalityRecord> records;
};

LocalityReport locality_report(const std::vector<GradientMap>& maps,
                               double radius);

struct BumpSweepConfig {
  pde::InverseHeatConfig inverse{};
  double width = 0.7;  // bump standard deviation, physical units
};

// responses[p].at(i, j) is the reconstruction at probe p of a bump
// centered on node (i, j); self_peak[p] records whether the probe pixel
// attains the image maximum (violations are flagged, not errors).
struct BumpSweepResult {
  std::vector<std::pair<int, int>> probes;
  std::vector<Field> responses;
  std::vector<bool> self_peak;
};

BumpSweepResult bump_sweep(const Grid2D& grid,
                           const std::vector<std::pair<int, int>>& probes,
                           const BumpSweepConfig& cfg);

// Mean of |f| over the annuli d <= dist(pixel, (ki, kj)) < d+1 for
// d = 0, 1, ...; the vector ends at the last non-empty ring.  A raw
// diagnostic: mode truncation in the regularized inverse leaves side lobes
// that make individual annuli oscillate.
std::vector<double> ring_averages(const Field& f, int ki, int kj);

// Mean of |f| over the disk dist < d+1 (the union of rings 0..d), same
// indexing as ring_averages.  Averaging over the whole disk instead of one
// annulus suppresses the side-lobe oscillation, so this is the sequence
// the decay checks run on.
std::vector<double> disk_averages(const Field& f, int ki, int kj);

// report.json under dir: the radius and one record per probe.
void export_report(const std::string& dir, const LocalityReport& rep);

// Every map as grad_<i>_<j>.cwt plus a full-range PGM next to it.
void export_gradient_maps(const std::string& dir,
                          const std::vector<GradientMap>& maps);

// Every response image as bump_<i>_<j>.cwt/.pgm plus sweep.json with the
// probes, self-peak flags, and per-probe ring averages.
void export_bump_sweep(const std::string& dir, const BumpSweepResult& res);

}  // namespace cw::loc
