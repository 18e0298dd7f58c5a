// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Posterior statistics from a trained conditional generator, an
// importance-sampling reference oracle over low-dimensional priors, and the
// comparison metric between the two.
//
// Generator draws are independent and run in parallel; every reduction to
// mean or SD is a fixed-order pairwise sum over stored per-draw values, so
// results do not depend on the worker schedule.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cw/data.hpp"
#include "cw/nn.hpp"
#include "cw/pde.hpp"
#include "cw/random.hpp"

namespace cw::post {

using pde::Field;
using pde::Grid2D;

// Pixel-wise Monte-Carlo statistics of g(z, y) over K latent draws, plus
// the most informative draws ranked by pivoted QR on the snapshot matrix.
struct PosteriorSummary {
  Field mean;
  Field sd;  // population convention (divide by K), so K = 1 gives zeros
  int64_t samples_used = 0;
  std::vector<int> pivots;      // ranked column indices into the draw set
  std::vector<Field> important;  // the fields at those indices, same order
};

// Draws z(i) ~ N(0, I) from rng.sub("draw", i) and pushes each through the
// generator conditioned on y.  r_important of the K draws are kept, ranked
// by rrqr_select (clamped to K; 0 skips the ranking).  A non-finite
// generator output fails with the offending draw index.
template <typename T>
PosteriorSummary posterior_stats(const nn::Model<T>& gen,
                                 const nn::ParamStore<T>& params,
                                 int latent_dim, const Field& y, int64_t K,
                                 const RandomStream& rng, int r_important = 4);

// First r pivot indices of a column-pivoted QR of the matrix whose columns
// are `cols` (all the same length): greedily, the column with the largest
// residual norm after projecting out the span of the picks so far.
// r = cols.size() returns a permutation of all columns.
std::vector<int> rrqr_select(const std::vector<std::vector<double>>& cols,
                             int r);

// A bounded scalar statistic of the inferred field, the quantity whose
// posterior expectation the Monte-Carlo estimate approximates.
struct StatisticFunctional {
  std::string tag;
  std::function<double(const Field&)> fn;

  static StatisticFunctional pixel_mean();
  static StatisticFunctional pixel_second_moment();
};

// (1/K) sum of ell(g(z(i), y)) over the same draw streams posterior_stats
// uses, so the two agree on what "draw i" means.
template <typename T>
double mc_statistic(const nn::Model<T>& gen, const nn::ParamStore<T>& params,
                    int latent_dim, const Field& y, int64_t K,
                    const RandomStream& rng, const StatisticFunctional& ell);

// Self-normalized importance sampling directly in the prior's parameter
// space: draw x(i) from the prior, weight by the Gaussian likelihood
// exp(-|y - f(x(i))|^2 / (2 sigma^2)), and return weighted pixel-wise mean
// and population SD.  Weights are computed with the max log-weight
// subtracted, so widely spread likelihoods do not underflow to all-zero.
struct OracleResult {
  Field mean;
  Field sd;
  double ess = 0.0;  // (sum w)^2 / sum w^2
  int64_t draws = 0;
};

struct OracleConfig {
  int64_t draws = 20000;
  double ess_floor = 50.0;  // fail below this, advising a larger budget
};

// The sampling core, generic over how a prior draw is produced.  `draw`
// must be a pure function of the stream it is handed: it runs twice per
// draw index (weights first, then moments) and the two runs must agree.
using DrawFn = std::function<Field(RandomStream&)>;
using ForwardFn = std::function<Field(const Field&)>;
OracleResult snis_posterior(const DrawFn& draw, const ForwardFn& forward,
                            const Field& y, double sigma,
                            const OracleConfig& cfg, const RandomStream& rng);

// Binds snis_posterior to one of the analytic priors and a forward model.
OracleResult reference_posterior_oracle(const data::PriorSpec& prior,
                                        const data::ForwardModel& fwd,
                                        const Field& y, double sigma,
                                        const OracleConfig& cfg,
                                        const RandomStream& rng);

// Mean absolute difference over pixels; the grids must agree exactly.
double l1_error(const Field& a, const Field& b);

// Pixels whose 3x3 neighborhood contains both inclusion and background
// nodes of `x`, i.e. the one-pixel band along the support boundary.
// `threshold` separates inclusion from background values.
std::vector<std::pair<int, int>> support_edge_band(const Field& x,
                                                   double threshold);

// mean/sd/important samples as CWT1 tensors plus full-range PGMs, and a
// summary.json sidecar recording K, pivot ranks, the grid, and (when the
// summary came from the oracle) the effective sample size.
void export_summary(const std::string& dir, const PosteriorSummary& s,
                    std::optional<double> ess = std::nullopt);

// Reads back what export_summary wrote (mean, sd, K, pivots, ess; the
// important samples are reloaded when present).
struct LoadedSummary {
  PosteriorSummary summary;
  std::optional<double> ess;
};
LoadedSummary load_summary(const std::string& dir);

}  // namespace cw::post
