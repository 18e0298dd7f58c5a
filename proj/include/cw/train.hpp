// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Adversarial training of a conditional sampler against a critic under the
// Wasserstein objective with gradient penalty.  The critic update needs
// second derivatives (the penalty differentiates the critic's input
// gradient with respect to its own parameters), so critic-side graphs run
// in higher-order mode; generator updates are plain first-order sweeps.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cw/nn.hpp"

namespace cw::train {

using ad::Shape;
using ad::Tensor;

struct TrainConfig {
  double gp_lambda = 10.0;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int batch_size = 50;
  int n_critic = 4;  // critic updates per generator update
  int epochs = 200;
  int latent_dim = 3;
  uint64_t rng_seed = 0;
  int checkpoint_interval = 100;  // generator updates between checkpoints
  bool resume = false;            // continue from out_dir state if present

  void validate() const;
};

template <typename T>
struct FieldPair {
  Tensor<T> x;  // inferred field (ground truth sample)
  Tensor<T> y;  // measurement the sampler conditions on
};

// Per-parameter Adam moments.  t counts update calls, not parameters.
template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  int64_t t = 0;
};

// One bias-corrected Adam step applied in place; eps-hat sits outside the
// square root.  Missing moment entries are created as zeros.
template <typename T>
void adam_update(nn::ParamStore<T>& params, AdamState<T>& state,
                 const nn::TensorMap<T>& grads, double lr, double beta1,
                 double beta2, double eps_hat = 1e-8);

// eps * x + (1 - eps) * g(z, y), the point where the gradient penalty is
// evaluated.
template <typename T>
Tensor<T> interpolate(const nn::Model<T>& gen, const nn::TensorMap<T>& gen_p,
                      const Tensor<T>& x, const Tensor<T>& y,
                      const Tensor<T>& z, double eps);

template <typename T>
struct CriticEval {
  double loss = 0.0;  // mean of d(g(z,y),y) - d(x,y) + penalty
  double gp = 0.0;    // mean penalty term alone
  nn::TensorMap<T> grads;
};

// Batch critic objective.  Minimizing this maximizes the critic payoff;
// the penalty is lambda * (|grad_h d(h,y)| - 1)^2 at the interpolate h.
// Gradients (when requested) are averaged over the batch in sample order.
template <typename T>
CriticEval<T> critic_loss(const nn::Model<T>& gen,
                          const nn::ParamStore<T>& gen_ps,
                          const nn::Model<T>& critic,
                          const nn::ParamStore<T>& critic_ps,
                          const std::vector<FieldPair<T>>& batch,
                          const std::vector<Tensor<T>>& z_batch,
                          const std::vector<double>& eps_batch,
                          double gp_lambda, bool want_grads);

template <typename T>
struct GenEval {
  double loss = 0.0;  // mean of -d(g(z,y), y)
  nn::TensorMap<T> grads;
};

template <typename T>
GenEval<T> generator_loss(const nn::Model<T>& gen,
                          const nn::ParamStore<T>& gen_ps,
                          const nn::Model<T>& critic,
                          const nn::ParamStore<T>& critic_ps,
                          const std::vector<FieldPair<T>>& batch,
                          const std::vector<Tensor<T>>& z_batch,
                          bool want_grads);

struct LogRow {
  int64_t step = 0;  // generator update index, 1-based
  double loss_d = 0.0;
  double loss_g = 0.0;
  double gp = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<LogRow> rows;
  void add(LogRow r);  // enforces monotone steps and finite values
  static void write_csv_header(const std::string& path);
  static void append_csv(const std::string& path, const LogRow& r);
};

template <typename T>
struct TrainResult {
  nn::ParamStore<T> gen_params;
  nn::ParamStore<T> critic_params;
  TrainLog log;
  int64_t gen_updates = 0;
  int64_t critic_updates = 0;
};

// Full alternating loop.  Every epoch visits each dataset batch once; a
// cycle of n_critic critic batches plus one generator batch forms a step.
// Latents and interpolation weights are drawn per sample from a stream
// derived from (seed, cycle), so a run is reproducible and resumable.
// When out_dir is nonempty, checkpoints, optimizer state, a state.json
// cursor and a train_log.csv are maintained there; a non-finite loss
// aborts with the last checkpoint retained.
template <typename T>
TrainResult<T> train(const nn::Model<T>& gen, const nn::Model<T>& critic,
                     const std::vector<FieldPair<T>>& dataset,
                     const TrainConfig& cfg, const std::string& out_dir = "");

}  // namespace cw::train
