/* Copyright 2026 The xspec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xspec/clustering.hpp"
#include "xspec/csan.hpp"
#include "xspec/feature_store.hpp"
#include "xspec/losses.hpp"
#include "xspec/voting.hpp"

namespace xspec {

// Which distances drive cross-spectral voting each epoch.
//   kPair: the pairwise CSAN distance used at evaluation time.
//   kSelf: Euclidean distance between single-image CSAN descriptors.
enum class VoteSpace { kPair, kSelf };
std::string_view vote_space_name(VoteSpace v);
VoteSpace parse_vote_space(std::string_view s);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double rmsprop_decay = 0.99;
  double rmsprop_eps = 1e-8;
  std::uint64_t seed = 0;
  bool early_stop = false;
  double val_fraction = 0.0;
  int per_assoc = 16;
  int recluster_every = 0;  // 0 clusters once, before the first epoch
  int c_out = 128;
  AttentionOutput attention_output = AttentionOutput::kLogSoftmax;
  VoteSpace vote_space = VoteSpace::kPair;

  void validate() const;  // throws kInvalidConfig
};

// RMSProp squared-gradient accumulators, shaped like the parameters.
struct OptState {
  CsanParams accum;
  std::int64_t step = 0;

  static OptState zeros_like(const CsanParams& params);
};

// acc <- rho acc + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(acc) + eps)
void rmsprop_step(CsanParams& params, const CsanParams& grads, OptState& opt, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean L_total over the epoch's triplets
  double ptl = 0.0;
  double pcs = 0.0;
  int n_associations = 0;
  int n_triplets = 0;
  int n_batches = 0;
  std::optional<double> association_accuracy;  // evaluation side channel only
  std::optional<double> val_rank1;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::vector<Association>> associations;  // per epoch
  std::vector<std::vector<bool>> association_correct;  // per epoch, empty without labels
  bool no_associations = false;
  bool stopped_early = false;
  int best_epoch = 0;
};

// One JSON object per epoch, newline terminated.
std::string train_log_jsonl(const TrainLog& log);

// Ground truth is handed to the trainer only through this struct and only
// feeds logging and early stopping.
struct EvalSideChannel {
  std::vector<std::int64_t> rgb_labels;  // per training sample
  std::vector<std::int64_t> ir_labels;
  const Dataset* validation = nullptr;  // labeled held-out split
};

struct TrainResult {
  CsanParams params;
  CsanParams initial_params;
  TrainLog log;
  ClusterState rgb_state;
  ClusterState ir_state;
};

// Intra-domain clustering and filtering on patch-averaged features, then per
// epoch: refresh descriptors, vote, mine triplets, and take one RMSProp step
// per batch on the mean total loss. If no epoch yields a triplet the initial
// parameters come back unchanged with log.no_associations set.
TrainResult train(const TrainingView& data, const ClusterParams& cluster_params, const LossConfig& loss_cfg,
                  const TrainConfig& cfg, const EvalSideChannel* side = nullptr);

// IR->RGB rank-1 of `params` on a labeled dataset.
double rank1_ir_to_rgb(const Dataset& ds, const CsanParams& params);

// --- gradient audit ----------------------------------------------------------

using GradientFn = std::function<TripletGradient(const Matrix& anchor, const Matrix& positive,
                                                 const Matrix& negative, const CsanParams& params,
                                                 const LossConfig& cfg)>;

struct AuditReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;  // e.g. "w_common[3,1]"
  int trials = 0;
  std::size_t coordinates_checked = 0;
};

// Central differences of L_total on every parameter coordinate for `trials`
// random triplets drawn from `data`. Instances within 1e-3 of the hinge or
// an |.| kink are redrawn. Relative error is |a - n| / max(|a|, |n|, 1e-6).
AuditReport finite_diff_audit(const CsanParams& params, const TrainingView& data, const LossConfig& loss_cfg,
                              double eps, int trials, std::uint64_t seed,
                              const GradientFn& gradient = triplet_loss_and_grad);

// Audits `instances` independent random problems (P <= 4, c_in <= 8,
// c_out <= 4), each with fresh parameters, features and loss settings.
AuditReport audit_random_instances(int instances, std::uint64_t seed, double eps = 1e-5,
                                   const GradientFn& gradient = triplet_loss_and_grad);

}  // namespace xspec
