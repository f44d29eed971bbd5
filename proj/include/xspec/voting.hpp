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
#include <optional>
#include <ostream>
#include <vector>

#include "xspec/clustering.hpp"
#include "xspec/linalg.hpp"

namespace xspec {

// An RGB cluster matched to the IR cluster most of its members voted for.
struct Association {
  int rgb_cluster = kNoCluster;
  int ir_cluster = kNoCluster;
  int votes_for_winner = 0;
  int votes_total = 0;
  int epoch = 0;

  friend bool operator==(const Association&, const Association&) = default;
};

// Domain-local sample indices.
struct Triplet {
  int anchor = 0;    // RGB
  int positive = 0;  // IR
  int negative = 0;  // RGB

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// m x n Euclidean distances between RGB rows and IR rows.
Matrix partial_distances(const Matrix& rgb_desc, const Matrix& ir_desc);

struct VoteResult {
  int winner = kNoCluster;  // kNoCluster unless a unique label holds a majority
  int count = 0;            // votes for the modal label
  int total = 0;            // number of voting rows
};

// Every row votes for the label of its nearest column (ties go to the lower
// column). Columns labelled kNoCluster never receive votes.
VoteResult vote(const Matrix& d_partial, const std::vector<int>& ir_labels);

// Visits eligible RGB clusters in seeded random order. A cluster whose
// members mostly vote for one unclaimed, eligible IR cluster is associated
// with it; otherwise it sits out this epoch.
std::vector<Association> associate_epoch(const ClusterState& rgb_state, const ClusterState& ir_state,
                                         const Matrix& rgb_desc, const Matrix& ir_desc, int epoch,
                                         std::uint64_t seed);
// Same, with RGB x IR distances supplied directly.
std::vector<Association> associate_epoch(const ClusterState& rgb_state, const ClusterState& ir_state,
                                         const Matrix& cross_distances, int epoch, std::uint64_t seed);

// For each association, up to per_assoc (anchor, positive) pairs drawn
// without replacement from the cluster cross product. The negative is the
// member of the nearest other RGB cluster (by centroid) closest to the
// anchor. Throws kNoNegativeAvailable with fewer than two RGB clusters.
std::vector<Triplet> mine_triplets(const std::vector<Association>& assoc, const ClusterState& rgb_state,
                                   const ClusterState& ir_state, const Matrix& rgb_desc, int per_assoc,
                                   std::uint64_t seed);

// Most frequent label among members (ties to the smaller label).
std::int64_t majority_label(const std::vector<int>& members, const std::vector<std::int64_t>& labels);

// 1 if both clusters share their majority true label, 0 otherwise.
bool association_correct(const Association& a, const ClusterState& rgb_state, const ClusterState& ir_state,
                         const std::vector<std::int64_t>& rgb_labels,
                         const std::vector<std::int64_t>& ir_labels);

// CSV: rgb_cluster,ir_cluster,votes,total,correct (correct left blank when
// `correct` is empty).
void write_association_csv(std::ostream& out, const std::vector<Association>& assoc,
                           const std::vector<bool>& correct = {});

}  // namespace xspec
