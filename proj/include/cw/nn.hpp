// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Generator and critic networks assembled from the autodiff primitives:
// conditional instance normalization, residual blocks, a U-Net generator
// with latent injection, and a convolutional critic with a dense scalar
// head.  Parameters live in a ParamStore keyed by block path; checkpoints
// are a little-endian f32 container.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "cw/graph.hpp"
#include "cw/random.hpp"

namespace cw::nn {

using ad::Graph;
using ad::Shape;
using ad::Tensor;

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

// Named parameter container.  Entries are immutable tensors; set_value
// replaces a tensor wholesale (shape-checked).  Iteration order is the
// lexicographic path order, which keeps every consumer deterministic.
template <typename T>
class ParamStore {
 public:
  void define(const std::string& path, Tensor<T> init);
  bool contains(const std::string& path) const {
    return entries_.count(path) != 0;
  }
  const Tensor<T>& value(const std::string& path) const;
  void set_value(const std::string& path, Tensor<T> v);
  const std::map<std::string, Tensor<T>>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t total_elements() const;

 private:
  std::map<std::string, Tensor<T>> entries_;
};

// Tracked leaves for every parameter, ready for a backward pass.
template <typename T>
TensorMap<T> bind_params(Graph<T>& g, const ParamStore<T>& ps);

// Untracked constants; forwards through these record nothing.
template <typename T>
TensorMap<T> constant_params(const ParamStore<T>& ps);

template <typename T>
const Tensor<T>& lookup(const TensorMap<T>& p, const std::string& path);

// Glorot uniform over fan-in/fan-out inferred from the shape: rank-4
// kernels use n*n*channels, rank-2 matrices their two extents.
template <typename T>
Tensor<T> glorot_uniform(Shape s, RandomStream rng);

enum class Norm { none, layer, cin };

// Per-channel normalization with externally supplied scale and shift
// vectors: alpha_j * (w_j - mean_j) / std_j + beta_j.
template <typename T>
Tensor<T> cin_affine(const Tensor<T>& w, const Tensor<T>& alpha,
                     const Tensor<T>& beta);

// Full conditional instance normalization: alpha and beta are produced
// from the latent z by 1x1 convolutions (aw, ab) and (bw, bb).
template <typename T>
Tensor<T> cin(const Tensor<T>& w, const Tensor<T>& z, const Tensor<T>& aw,
              const Tensor<T>& ab, const Tensor<T>& bw, const Tensor<T>& bb);

// Residual block: norm -> leaky -> conv(3,1) -> norm -> leaky -> conv(3,1),
// added back onto the input.  Parameters are read from `params` under
// `prefix`: /c1/w, /c1/b, /c2/w, /c2/b, and for cin /n1/aw .. /n2/bb.
template <typename T>
Tensor<T> res_block(const Tensor<T>& w, const std::optional<Tensor<T>>& z,
                    Norm norm, const TensorMap<T>& params,
                    const std::string& prefix, double slope);

// Defines the parameters a res_block under `prefix` will read.
template <typename T>
void define_res_block(ParamStore<T>& ps, const RandomStream& rng,
                      const std::string& prefix, int channels, int latent_dim,
                      Norm norm);

// A conditional sampler or critic: forward(params, a, b) where the pair is
// (z, y) for generators and (x, y) for critics.  Keeping the two behind one
// interface lets the trainer run on toy stand-ins.
template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  virtual void init_params(ParamStore<T>& ps, const RandomStream& rng) const = 0;
  virtual Tensor<T> forward(const TensorMap<T>& p, const Tensor<T>& a,
                            const Tensor<T>& b) const = 0;
};

struct GeneratorConfig {
  int H = 28;
  int W = 28;
  int C = 16;        // base channel count, doubled per Down stage
  int N_z = 3;       // latent dimension
  int D = 2;         // number of Down stages
  bool cin_skip_first_up = false;
  double leaky_slope = 0.1;
  int in_channels = 1;
  int out_channels = 1;
};

struct CriticConfig {
  int H = 28;
  int W = 28;
  int C = 16;
  int D = 2;
  double leaky_slope = 0.1;
  int dense_width = 128;
  int in_channels = 2;  // x and y concatenated at entry
};

// U-Net generator.  Contracting path: stem conv, a plain res block, then D
// stages of pool -> cin -> leaky -> conv (doubling channels) each followed
// by a cin res block.  Expanding path mirrors it with nearest upsampling
// and skip concatenation; a 1x1 head maps back to the output channels.
// The latent enters only through the cin sites.
template <typename T>
class UNetGenerator final : public Model<T> {
 public:
  explicit UNetGenerator(GeneratorConfig cfg);
  const GeneratorConfig& config() const { return cfg_; }
  void init_params(ParamStore<T>& ps, const RandomStream& rng) const override;
  Tensor<T> forward(const TensorMap<T>& p, const Tensor<T>& z,
                    const Tensor<T>& y) const override;

 private:
  GeneratorConfig cfg_;
};

// Convolutional critic on concat(x, y): stem conv, plain res block, D
// stages of pool -> layer-norm -> leaky -> conv with layer-norm res
// blocks, then dense -> leaky -> dense down to one scalar.
template <typename T>
class ConvCritic final : public Model<T> {
 public:
  explicit ConvCritic(CriticConfig cfg);
  const CriticConfig& config() const { return cfg_; }
  void init_params(ParamStore<T>& ps, const RandomStream& rng) const override;
  Tensor<T> forward(const TensorMap<T>& p, const Tensor<T>& x,
                    const Tensor<T>& y) const override;

 private:
  CriticConfig cfg_;
};

// Checkpoint container: magic "CWPM", u32 format version, u32 entry count,
// then per entry path length, path bytes, rank, dims, little-endian f32
// payload.  Values are stored as f32 regardless of T.
template <typename T>
void save_checkpoint(const ParamStore<T>& ps, const std::string& path);

template <typename T>
ParamStore<T> load_checkpoint(const std::string& path);

}  // namespace cw::nn
