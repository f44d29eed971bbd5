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
#include <map>
#include <ostream>
#include <vector>

#include "xspec/csan.hpp"
#include "xspec/feature_store.hpp"
#include "xspec/linalg.hpp"

namespace xspec {

inline constexpr int kNoCluster = -1;

struct ClusterParams {
  double merge_fraction = 0.05;
  int target_clusters = 1;
  double silhouette_threshold = 0.6;
  int min_cluster_size = 2;
  double max_cluster_size_factor = 3.0;
  double mb_temperature = 0.1;
  int mb_steps = 0;
  double mb_learning_rate = 0.1;

  void validate() const;  // throws kInvalidParams
};

// Pseudo-labels for one domain.
//
// `partition` is the agglomerative result and is never altered by
// filtering; silhouettes are always measured against it, which makes
// filter_clusters idempotent. `assignment` is the filtered view used for
// training (kNoCluster marks removed samples).
struct ClusterState {
  Domain domain = Domain::kRgb;
  std::vector<int> partition;
  std::vector<int> assignment;
  std::map<int, std::vector<int>> members;  // from assignment; non-empty clusters only
  Matrix centroids;                         // memory bank, K x D
  std::vector<double> silhouettes;          // per sample; empty until filtered
  std::vector<bool> eligible;               // per cluster id

  int cluster_count() const { return static_cast<int>(centroids.rows()); }
  bool is_eligible(int cluster) const {
    return cluster >= 0 && cluster < cluster_count() && eligible[cluster] && members.contains(cluster);
  }
  // Recomputes members and centroids from `assignment`.
  void rebuild(const Matrix& desc);
};

// Patch-averaged backbone channels when params is null, otherwise the CSAN
// single-image descriptor.
Vector descriptor_for_clustering(const Matrix& features, Domain domain, const CsanParams* params);
Vector descriptor_for_clustering(const FeatureMap& f, const CsanParams* params);
// One row per sample.
Matrix descriptor_matrix(const std::vector<Sample>& samples, const CsanParams* params);

// Pairwise Euclidean distances between rows of `desc`.
Matrix pairwise_distances(const Matrix& desc);

// Single linkage: closest pair between the two index sets.
double linkage_distance(const std::vector<int>& a, const std::vector<int>& b, const Matrix& desc);

// Bottom-up merging from singletons until target_clusters remain. Each round
// merges the ceil(merge_fraction * count) closest cluster pairs, skipping a
// pair if either side already merged that round. Cluster ids are compacted
// in order of each cluster's smallest sample index.
ClusterState agglomerate(const Matrix& desc, const ClusterParams& params, Domain domain = Domain::kRgb);

// Silhouette of one sample against state.partition; 1 for singletons.
double silhouette(int sample, const ClusterState& state, const Matrix& desc);
double silhouette(int sample, const ClusterState& state, const Matrix& desc, const Matrix& distances);

// Drops samples whose silhouette is <= the threshold and flags clusters that
// end up too small or too large as ineligible anchors.
ClusterState filter_clusters(const ClusterState& state, const Matrix& desc, const ClusterParams& params);

struct MemoryBankLoss {
  double loss = 0.0;
  Vector grad_feature;
  Matrix grad_bank;
};

// Non-parametric softmax cross-entropy of f against the memory bank rows.
MemoryBankLoss memory_bank_loss(const Vector& f, int label, const Matrix& bank, double temperature);

// Refines the memory bank with `mb_steps` gradient steps of the mean
// memory-bank loss over assigned samples. Returns the refined bank.
Matrix warm_memory_bank(const Matrix& desc, const ClusterState& state, const ClusterParams& params);

// Adjusted Rand index between two labelings of the same samples.
double adjusted_rand_index(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b);

// CSV: sample_id,domain,cluster_id,silhouette,eligible
void write_cluster_csv(std::ostream& out, const ClusterState& state,
                       const std::vector<std::uint64_t>& sample_ids);

}  // namespace xspec
