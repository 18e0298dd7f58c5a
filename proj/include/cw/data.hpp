// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Prior samplers, measurement-noise injection, image ingestion, and the
// on-disk dataset format that feeds the trainer.
//
// Every record is a triple (x, y, clean_y) on one grid: the field to infer,
// the noisy measurement, and the measurement before noise.  Records are
// stored as consecutive CWT1 tensor blobs (magic "CWT1", u32 rank, u32
// dims, little-endian f32 data) next to a JSON manifest.  Floats are the
// storage type; generation runs in double and quantizes once at write time.

#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "cw/pde.hpp"
#include "cw/random.hpp"
#include "cw/train.hpp"

namespace cw::data {

using pde::Field;
using pde::Grid2D;

// ---------------------------------------------------------------------------
// Priors.  Parameter ranges live in the spec structs so out-of-distribution
// variants are just different numbers.  Rectangle coordinates are fractions
// of the box side; inclusion geometry is in domain units.

struct RectangularPrior {
  double near_lo = 0.2, near_hi = 0.4;  // xi1 (left edge), xi4 (bottom edge)
  double far_lo = 0.6, far_hi = 0.8;    // xi2 (top edge), xi3 (right edge)
};

struct CircularInclusionPrior {
  double center_lo = 0.0, center_hi = 1.0;
  double radius_lo = 0.05, radius_hi = 0.3;
  double contrast_lo = 2.0, contrast_hi = 10.0;
  double background = 1.0;
};

struct EllipsePrior {
  double center_lo = 0.0, center_hi = 1.0;
  double axis_lo = 0.05, axis_hi = 0.3;  // both semi-axes
  double contrast_lo = 2.0, contrast_hi = 10.0;
  double background = 1.0;
};

struct TwoCirclesPrior {
  CircularInclusionPrior each;  // both circles share these ranges
};

struct ImageDirectoryPrior {
  std::string path;  // IDX file or a directory of 8-bit PGM images
  double low = 0.0;
  double high = 4.0;
};

struct PriorSpec {
  std::variant<RectangularPrior, CircularInclusionPrior, EllipsePrior,
               TwoCirclesPrior, ImageDirectoryPrior>
      variant;
  Grid2D grid;

  void validate() const;
  std::string tag() const;  // "rectangular", "circular", ...
};

// Deterministic rasterizers behind the samplers, exposed so fixed-parameter
// fields can be checked against per-pixel formulas.
struct RectParams {
  double xi1 = 0.0;  // left s1 edge, fraction of side
  double xi2 = 0.0;  // top s2 edge
  double xi3 = 0.0;  // right s1 edge
  double xi4 = 0.0;  // bottom s2 edge
};
Field rasterize_rectangle(const RectParams& p, const Grid2D& g);

struct CircleParams {
  double c1 = 0.0, c2 = 0.0;  // center, domain units
  double radius = 0.0;
  double contrast = 1.0;
};
// Nodes inside any circle take that circle's contrast; where circles
// overlap, the larger contrast wins.
Field rasterize_circles(const std::vector<CircleParams>& circles,
                        double background, const Grid2D& g);

struct EllipseParams {
  double c1 = 0.0, c2 = 0.0;
  double semi1 = 0.0, semi2 = 0.0;
  double angle = 0.0;  // radians, rotation of the semi1 axis from s1
  double contrast = 1.0;
};
Field rasterize_ellipse(const EllipseParams& p, double background,
                        const Grid2D& g);

// Draws one field.  Image-backed priors load their pool at construction;
// the synthetic variants carry no state.
class PriorSampler {
 public:
  explicit PriorSampler(PriorSpec spec);
  Field sample(RandomStream& rng) const;
  const PriorSpec& spec() const { return spec_; }

 private:
  PriorSpec spec_;
  std::vector<Field> pool_;  // only for ImageDirectoryPrior
};

// Convenience for the synthetic variants; fails for image-backed priors
// (construct a PriorSampler to amortize the load).
Field sample_prior(const PriorSpec& spec, RandomStream& rng);

// ---------------------------------------------------------------------------
// Noise.

// y = clean + eta, eta i.i.d. N(0, sigma^2) per node; sigma = 0 copies.
Field add_noise(const Field& clean, double sigma, RandomStream& rng);

// Either an absolute sigma or a fraction of the dataset-wide maximum clean
// measurement value, resolved during build_dataset.
struct NoiseSpec {
  double value = 1.0;
  bool relative_to_max = false;

  static NoiseSpec absolute(double sigma) { return {sigma, false}; }
  static NoiseSpec relative(double frac) { return {frac, true}; }
};

// ---------------------------------------------------------------------------
// Image ingestion.

struct IdxImages {
  uint32_t count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> pixels;  // count * rows * cols, row-major per image
};

// Big-endian IDX, magic 0x00000803.  Malformed input fails with the byte
// offset of the violation.
IdxImages read_idx_images(const std::string& path);
void write_idx_images(const std::string& path, const IdxImages& images);

// 8-bit binary PGM (P5).
void write_pgm(const std::string& path, const Field& f, double lo, double hi);
IdxImages read_pgm(const std::string& path);  // count = 1

// Full-range variant: scales by the field's own min and max, so low
// -contrast fields stay visible.  Constant fields map to black.
void write_pgm_autoscale(const std::string& path, const Field& f);

// IDX file or directory of PGMs (sorted by filename); pixel 0 -> low,
// pixel 255 -> high, linear in between.
std::vector<Field> load_image_dataset(const std::string& path, double low,
                                      double high);

// ---------------------------------------------------------------------------
// Dataset on disk: <dir>/manifest.json + <dir>/records.cwt.

struct Record {
  Field x;
  Field y;
  Field clean_y;
};

struct DatasetManifest {
  int64_t count = 0;
  Grid2D grid;
  std::string prior;
  double sigma = 0.0;  // resolved absolute value
  std::string forward;
  uint64_t seed = 0;
  int format_version = 1;
};

struct ForwardModel {
  std::string tag;
  std::function<Field(const Field&)> apply;
};

ForwardModel heat_forward_model(pde::HeatConfig cfg);
ForwardModel conduction_forward_model(double source);
ForwardModel identity_forward_model();

// sample -> solve -> noise, M times, streamed to disk.  Per-sample draws
// come from rng(seed).sub("dataset", i) (prior) and its sub("noise")
// (measurement noise), so records are independent of generation order and
// of the noise resolution pass.  A forward-solver failure skips the sample
// and the manifest records the final count.
DatasetManifest build_dataset(const PriorSpec& spec, const ForwardModel& fwd,
                              int64_t samples, NoiseSpec noise, uint64_t seed,
                              const std::string& dir);

void write_dataset(const std::string& dir, const DatasetManifest& manifest,
                   const std::vector<Record>& records);
std::vector<Record> read_dataset(const std::string& dir);
DatasetManifest read_manifest(const std::string& dir);

// One record in memory at a time; truncation fails with the record index.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir);
  const DatasetManifest& manifest() const { return manifest_; }
  bool next(Record& out);

 private:
  DatasetManifest manifest_;
  std::ifstream file_;
  int64_t cursor_ = 0;
};

// Streams records into the trainer's (x, y) tensor pairs, dropping clean_y.
template <typename T>
std::vector<train::FieldPair<T>> load_training_pairs(const std::string& dir);

// ---------------------------------------------------------------------------
// Single-tensor CWT1 blobs, shared with the statistics exporters.

void write_cwt1(std::ostream& out, const std::vector<uint32_t>& dims,
                const std::vector<float>& values);
void read_cwt1(std::istream& in, std::vector<uint32_t>& dims,
               std::vector<float>& values, const char* what);
void save_field_cwt1(const std::string& path, const Field& f);
Field load_field_cwt1(const std::string& path, const Grid2D& grid);

}  // namespace cw::data
