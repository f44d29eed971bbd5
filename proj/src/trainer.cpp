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

#include "xspec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

#include "json.hpp"
#include "xspec/error.hpp"
#include "xspec/evaluation.hpp"
#include "xspec/parallel.hpp"

namespace xspec {

std::string_view vote_space_name(VoteSpace v) { return v == VoteSpace::kPair ? "pair" : "self"; }

VoteSpace parse_vote_space(std::string_view s) {
  if (s == "pair") return VoteSpace::kPair;
  if (s == "self") return VoteSpace::kSelf;
  throw Error(Errc::kInvalidConfig, "unknown vote space '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::kInvalidConfig, what); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) fail("rmsprop_decay must be in (0, 1)");
  if (!(rmsprop_eps > 0.0)) fail("rmsprop_eps must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 0.5)) fail("val_fraction must be in [0, 0.5)");
  if (per_assoc < 1) fail("per_assoc must be >= 1");
  if (recluster_every < 0) fail("recluster_every must be >= 0");
  if (c_out < 1) fail("c_out must be >= 1");
}

OptState OptState::zeros_like(const CsanParams& params) {
  OptState s;
  s.accum = CsanParams::zeros(params.c_in, params.c_out);
  s.accum.attention_output = params.attention_output;
  return s;
}

void rmsprop_step(CsanParams& params, const CsanParams& grads, OptState& opt, const TrainConfig& cfg) {
  if (params.c_in != grads.c_in || params.c_out != grads.c_out || params.c_in != opt.accum.c_in ||
      params.c_out != opt.accum.c_out)
    throw Error(Errc::kShapeMismatch, "rmsprop_step: parameter, gradient and state shapes differ");
  std::vector<const double*> g_blocks;
  grads.visit_blocks([&](std::string_view, const double* data, std::size_t) { g_blocks.push_back(data); });
  std::vector<double*> acc_blocks;
  opt.accum.visit_blocks([&](std::string_view, double* data, std::size_t) { acc_blocks.push_back(data); });
  std::size_t block = 0;
  const double rho = cfg.rmsprop_decay;
  params.visit_blocks([&](std::string_view, double* theta, std::size_t n) {
    const double* g = g_blocks[block];
    double* acc = acc_blocks[block];
    for (std::size_t i = 0; i < n; ++i) {
      acc[i] = rho * acc[i] + (1.0 - rho) * g[i] * g[i];
      theta[i] -= cfg.learning_rate * g[i] / (std::sqrt(acc[i]) + cfg.rmsprop_eps);
    }
    ++block;
  });
  ++opt.step;
}

std::string train_log_jsonl(const TrainLog& log) {
  std::string out;
  for (const auto& e : log.epochs) {
    nlohmann::ordered_json rec;
    rec["epoch"] = e.epoch;
    rec["loss"] = e.loss;
    rec["ptl"] = e.ptl;
    rec["pcs"] = e.pcs;
    rec["n_associations"] = e.n_associations;
    rec["n_triplets"] = e.n_triplets;
    rec["n_batches"] = e.n_batches;
    if (e.association_accuracy) rec["association_accuracy"] = *e.association_accuracy;
    if (e.val_rank1) rec["val_rank1"] = *e.val_rank1;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 finalizer over a combined key.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1) + 0xBF58476D1CE4E5B9ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kInit, kVote, kMine, kShuffle };

ClusterState cluster_domain(const TrainingView& data, Domain d, const ClusterParams& cp, const CsanParams* params) {
  const Matrix desc = descriptor_matrix(data.domain(d), params);
  ClusterState state = filter_clusters(agglomerate(desc, cp, d), desc, cp);
  if (cp.mb_steps > 0) state.centroids = warm_memory_bank(desc, state, cp);
  return state;
}

std::vector<Matrix> feature_list(const std::vector<Sample>& samples) {
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.features);
  return out;
}

}  // namespace

double rank1_ir_to_rgb(const Dataset& ds, const CsanParams& params) {
  const auto [probes, gallery] = probe_gallery(ds, EvalMode::kIrToVisible);
  return cmc(score_all(probes, gallery, params), {1}).at(1);
}

TrainResult train(const TrainingView& data, const ClusterParams& cluster_params, const LossConfig& loss_cfg,
                  const TrainConfig& cfg, const EvalSideChannel* side) {
  cfg.validate();
  loss_cfg.validate();
  cluster_params.validate();
  if (data.rgb().empty() || data.ir().empty())
    throw Error(Errc::kEmptyInput, "training needs samples in both domains");

  TrainResult result;
  result.params = CsanParams::init_uniform(static_cast<int>(data.channels()), cfg.c_out,
                                           mix_seed(cfg.seed, kInit, 0));
  result.params.attention_output = cfg.attention_output;
  result.initial_params = result.params;
  CsanParams& params = result.params;

  result.rgb_state = cluster_domain(data, Domain::kRgb, cluster_params, nullptr);
  result.ir_state = cluster_domain(data, Domain::kIr, cluster_params, nullptr);

  const std::vector<Matrix> rgb_features = feature_list(data.rgb());
  const std::vector<Matrix> ir_features = feature_list(data.ir());
  const bool labels_known = side != nullptr && side->rgb_labels.size() == data.rgb().size() &&
                            side->ir_labels.size() == data.ir().size();
  const Dataset* validation = side != nullptr ? side->validation : nullptr;

  double best_val = -std::numeric_limits<double>::infinity();
  CsanParams best_params = params;
  if (validation != nullptr && cfg.early_stop) best_val = rank1_ir_to_rgb(*validation, params);

  OptState opt = OptState::zeros_like(params);
  int total_triplets = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.recluster_every > 0 && epoch > 1 && (epoch - 1) % cfg.recluster_every == 0) {
      result.rgb_state = cluster_domain(data, Domain::kRgb, cluster_params, &params);
      result.ir_state = cluster_domain(data, Domain::kIr, cluster_params, &params);
    }
    const ClusterState& rgb_state = result.rgb_state;
    const ClusterState& ir_state = result.ir_state;

    const Matrix rgb_desc = descriptor_matrix(data.rgb(), &params);
    std::vector<Association> assoc;
    const std::uint64_t vote_seed = mix_seed(cfg.seed, kVote, epoch);
    if (cfg.vote_space == VoteSpace::kPair)
      assoc = associate_epoch(rgb_state, ir_state, cross_domain_distances(rgb_features, ir_features, params),
                              epoch, vote_seed);
    else
      assoc = associate_epoch(rgb_state, ir_state, rgb_desc, descriptor_matrix(data.ir(), &params), epoch,
                              vote_seed);

    std::vector<Triplet> triplets;
    if (!assoc.empty() && rgb_state.members.size() >= 2)
      triplets = mine_triplets(assoc, rgb_state, ir_state, rgb_desc, cfg.per_assoc, mix_seed(cfg.seed, kMine, epoch));
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, kShuffle, epoch));
    std::shuffle(triplets.begin(), triplets.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.n_associations = static_cast<int>(assoc.size());
    rec.n_triplets = static_cast<int>(triplets.size());
    std::vector<TripletGradient> slots;
    for (std::size_t start = 0; start < triplets.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(triplets.size(), start + cfg.batch_size);
      slots.assign(stop - start, {});
      parallel_for(stop - start, [&](std::size_t i) {
        const Triplet& t = triplets[start + i];
        slots[i] = triplet_loss_and_grad(rgb_features[t.anchor], ir_features[t.positive],
                                         rgb_features[t.negative], params, loss_cfg);
      });
      // Fixed summation order keeps the update independent of thread count.
      CsanParams grad = CsanParams::zeros(params.c_in, params.c_out);
      for (const auto& s : slots) {
        grad += s.grads;
        rec.loss += s.loss.loss;
        rec.ptl += s.loss.ptl;
        rec.pcs += s.loss.pcs_mean;
      }
      grad *= 1.0 / static_cast<double>(slots.size());
      rmsprop_step(params, grad, opt, cfg);
      ++rec.n_batches;
    }
    if (!triplets.empty()) {
      rec.loss /= static_cast<double>(triplets.size());
      rec.ptl /= static_cast<double>(triplets.size());
      rec.pcs /= static_cast<double>(triplets.size());
    }
    total_triplets += rec.n_triplets;

    std::vector<bool> correct;
    if (labels_known) {
      int hits = 0;
      for (const auto& a : assoc) {
        correct.push_back(association_correct(a, rgb_state, ir_state, side->rgb_labels, side->ir_labels));
        hits += correct.back();
      }
      if (!assoc.empty()) rec.association_accuracy = static_cast<double>(hits) / static_cast<double>(assoc.size());
    }
    if (validation != nullptr) rec.val_rank1 = rank1_ir_to_rgb(*validation, params);

    result.log.epochs.push_back(rec);
    result.log.associations.push_back(std::move(assoc));
    result.log.association_correct.push_back(std::move(correct));

    if (validation != nullptr && cfg.early_stop) {
      if (*rec.val_rank1 < best_val) {
        params = best_params;
        result.log.stopped_early = true;
        break;
      }
      best_val = *rec.val_rank1;
      best_params = params;
      result.log.best_epoch = epoch;
    } else {
      result.log.best_epoch = epoch;
    }
  }

  if (total_triplets == 0) {
    result.log.no_associations = true;
    params = result.initial_params;
    std::cerr << "warning: no epoch produced a triplet; returning initial parameters\n";
  }
  return result;
}

// --- gradient audit ----------------------------------------------------------

AuditReport finite_diff_audit(const CsanParams& params, const TrainingView& data, const LossConfig& loss_cfg,
                              double eps, int trials, std::uint64_t seed, const GradientFn& gradient) {
  if (data.rgb().empty() || data.ir().empty()) throw Error(Errc::kEmptyInput, "audit needs both domains");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_rgb(0, data.rgb().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_ir(0, data.ir().size() - 1);
  constexpr double kKink = 1e-3;
  constexpr double kFloor = 1e-6;

  auto loss_at = [&](const CsanParams& p, const Matrix& a, const Matrix& b, const Matrix& n) {
    return total_loss(forward_triplet(a, b, n, p), loss_cfg).loss;
  };

  AuditReport report;
  for (int trial = 0; trial < trials; ++trial) {
    const Matrix* a = nullptr;
    const Matrix* b = nullptr;
    const Matrix* n = nullptr;
    for (int attempt = 0; attempt < 100; ++attempt) {
      a = &data.rgb()[pick_rgb(rng)].features;
      b = &data.ir()[pick_ir(rng)].features;
      n = &data.rgb()[pick_rgb(rng)].features;
      const TripletActivation t = forward_triplet(*a, *b, *n, params);
      const PtlResult hinge = ptl(flatten(t.pair.f_out_a), flatten(t.pair.f_out_b), flatten(t.negative.f_out_n),
                                  loss_cfg.margin);
      const double gap = std::abs(hinge.d_pos - hinge.d_neg + loss_cfg.margin);
      double nearest_zero = std::numeric_limits<double>::infinity();
      if (loss_cfg.lambda > 0.0)
        for (const Matrix* m : {&t.pair.f_out_a, &t.pair.f_out_b, &t.negative.f_out_n})
          nearest_zero = std::min(nearest_zero, m->cwiseAbs().minCoeff());
      if (gap >= kKink && nearest_zero >= kKink) break;
    }

    const TripletGradient analytic = gradient(*a, *b, *n, params, loss_cfg);
    std::vector<const double*> analytic_blocks;
    analytic.grads.visit_blocks(
        [&](std::string_view, const double* data_ptr, std::size_t) { analytic_blocks.push_back(data_ptr); });

    CsanParams probe = params;
    std::size_t block = 0;
    probe.visit_blocks([&](std::string_view name, double* theta, std::size_t size) {
      for (std::size_t i = 0; i < size; ++i) {
        const double saved = theta[i];
        theta[i] = saved + eps;
        const double up = loss_at(probe, *a, *b, *n);
        theta[i] = saved - eps;
        const double down = loss_at(probe, *a, *b, *n);
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double exact = analytic_blocks[block][i];
        const double denom = std::max({std::abs(numeric), std::abs(exact), kFloor});
        const double rel = exact == numeric ? 0.0 : std::abs(exact - numeric) / denom;
        ++report.coordinates_checked;
        if (rel > report.max_rel_error || report.worst_coordinate.empty()) {
          report.max_rel_error = rel;
          const std::string index = name.front() == 'w'
                                        ? std::to_string(i / params.c_out) + "," + std::to_string(i % params.c_out)
                                        : std::to_string(i);
          report.worst_coordinate = std::string(name) + "[" + index + "]";
        }
      }
      ++block;
    });
    ++report.trials;
  }
  return report;
}

AuditReport audit_random_instances(int instances, std::uint64_t seed, double eps, const GradientFn& gradient) {
  AuditReport total;
  const double lambdas[] = {0.0, 1e-3, 0.1, 1.0};
  for (int k = 0; k < instances; ++k) {
    std::mt19937_64 rng(mix_seed(seed, 0xA0D17, k));
    const int patches = std::uniform_int_distribution<int>(2, 4)(rng);
    const int c_in = std::uniform_int_distribution<int>(2, 8)(rng);
    const int c_out = std::uniform_int_distribution<int>(2, 4)(rng);
    std::normal_distribution<double> normal(0.0, 1.0);

    Dataset ds;
    ds.patches = static_cast<std::uint32_t>(patches);
    ds.channels = static_cast<std::uint32_t>(c_in);
    std::uint64_t id = 0;
    for (Domain d : {Domain::kRgb, Domain::kIr})
      for (int s = 0; s < 3; ++s) {
        FeatureMap f{id++, d, ds.patches, ds.channels, {}, kUnknownLabel};
        for (int i = 0; i < patches * c_in; ++i) f.data.push_back(static_cast<float>(normal(rng)));
        (d == Domain::kRgb ? ds.rgb : ds.ir).push_back(std::move(f));
      }

    CsanParams params = CsanParams::init_uniform(c_in, c_out, rng());
    // Larger weights give a non-uniform attention map.
    params *= std::uniform_real_distribution<double>(1.0, 3.0)(rng);
    LossConfig loss;
    loss.margin = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
    loss.lambda = lambdas[k % 4];

    const AuditReport r = finite_diff_audit(params, TrainingView(ds), loss, eps, 1, rng(), gradient);
    total.trials += r.trials;
    total.coordinates_checked += r.coordinates_checked;
    if (r.max_rel_error >= total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst_coordinate = "instance " + std::to_string(k) + " " + r.worst_coordinate;
    }
  }
  return total;
}

}  // namespace xspec
