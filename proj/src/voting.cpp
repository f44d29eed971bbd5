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

#include "xspec/voting.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "xspec/error.hpp"

namespace xspec {

Matrix partial_distances(const Matrix& rgb_desc, const Matrix& ir_desc) {
  if (rgb_desc.cols() != ir_desc.cols())
    throw Error(Errc::kDimMismatch, "descriptor widths differ: " + std::to_string(rgb_desc.cols()) + " vs " +
                                        std::to_string(ir_desc.cols()));
  Matrix d(rgb_desc.rows(), ir_desc.rows());
  for (Eigen::Index i = 0; i < rgb_desc.rows(); ++i)
    for (Eigen::Index j = 0; j < ir_desc.rows(); ++j) d(i, j) = (rgb_desc.row(i) - ir_desc.row(j)).norm();
  return d;
}

VoteResult vote(const Matrix& d_partial, const std::vector<int>& ir_labels) {
  if (static_cast<std::size_t>(d_partial.cols()) != ir_labels.size())
    throw Error(Errc::kDimMismatch, "vote: label count does not match distance columns");
  VoteResult r;
  r.total = static_cast<int>(d_partial.rows());
  std::map<int, int> histogram;
  for (Eigen::Index i = 0; i < d_partial.rows(); ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < d_partial.cols(); ++j) {
      if (ir_labels[j] == kNoCluster) continue;
      if (best < 0 || d_partial(i, j) < d_partial(i, best)) best = j;
    }
    if (best >= 0) ++histogram[ir_labels[best]];
  }
  int modal = kNoCluster;
  bool tied = false;
  for (const auto& [label, count] : histogram) {
    if (count > r.count) {
      r.count = count;
      modal = label;
      tied = false;
    } else if (count == r.count) {
      tied = true;
    }
  }
  if (!tied && r.total > 0 && 2 * r.count >= r.total) r.winner = modal;
  return r;
}

namespace {

template <typename PartialFn>
std::vector<Association> associate_impl(const ClusterState& rgb_state, const ClusterState& ir_state,
                                        int epoch, std::uint64_t seed, PartialFn&& partial) {
  std::vector<int> columns;
  std::vector<int> column_labels;
  for (std::size_t j = 0; j < ir_state.assignment.size(); ++j) {
    const int c = ir_state.assignment[j];
    if (c != kNoCluster && ir_state.is_eligible(c)) {
      columns.push_back(static_cast<int>(j));
      column_labels.push_back(c);
    }
  }

  std::vector<int> order;
  for (const auto& [cluster, idx] : rgb_state.members)
    if (rgb_state.is_eligible(cluster)) order.push_back(cluster);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Association> out;
  if (columns.empty()) return out;
  std::set<int> claimed;
  for (int cluster : order) {
    const VoteResult v = vote(partial(rgb_state.members.at(cluster), columns), column_labels);
    if (v.winner == kNoCluster || claimed.contains(v.winner)) continue;
    claimed.insert(v.winner);
    out.push_back({cluster, v.winner, v.count, v.total, epoch});
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::vector<Association> associate_epoch(const ClusterState& rgb_state, const ClusterState& ir_state,
                                         const Matrix& rgb_desc, const Matrix& ir_desc, int epoch,
                                         std::uint64_t seed) {
  return associate_impl(rgb_state, ir_state, epoch, seed,
                        [&](const std::vector<int>& rows, const std::vector<int>& cols) {
                          return partial_distances(gather_rows(rgb_desc, rows), gather_rows(ir_desc, cols));
                        });
}

std::vector<Association> associate_epoch(const ClusterState& rgb_state, const ClusterState& ir_state,
                                         const Matrix& cross_distances, int epoch, std::uint64_t seed) {
  return associate_impl(rgb_state, ir_state, epoch, seed,
                        [&](const std::vector<int>& rows, const std::vector<int>& cols) {
                          Matrix d(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            for (std::size_t j = 0; j < cols.size(); ++j)
                              d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                                  cross_distances(rows[i], cols[j]);
                          return d;
                        });
}

std::vector<Triplet> mine_triplets(const std::vector<Association>& assoc, const ClusterState& rgb_state,
                                   const ClusterState& ir_state, const Matrix& rgb_desc, int per_assoc,
                                   std::uint64_t seed) {
  if (rgb_state.members.size() < 2)
    throw Error(Errc::kNoNegativeAvailable, "need at least two RGB clusters to mine negatives");
  std::map<int, Vector> centroids;
  for (const auto& [cluster, idx] : rgb_state.members) {
    Vector c = Vector::Zero(rgb_desc.cols());
    for (int i : idx) c += rgb_desc.row(i).transpose();
    centroids[cluster] = c / static_cast<double>(idx.size());
  }

  std::mt19937_64 rng(seed);
  std::vector<Triplet> out;
  for (const Association& a : assoc) {
    const auto& anchors = rgb_state.members.at(a.rgb_cluster);
    const auto& positives = ir_state.members.at(a.ir_cluster);

    int nearest = kNoCluster;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [cluster, c] : centroids) {
      if (cluster == a.rgb_cluster) continue;
      const double d = (c - centroids.at(a.rgb_cluster)).norm();
      if (d < best) {
        best = d;
        nearest = cluster;
      }
    }
    const auto& negatives = rgb_state.members.at(nearest);

    const std::size_t total = anchors.size() * positives.size();
    std::vector<std::size_t> picks(total);
    std::iota(picks.begin(), picks.end(), 0);
    const std::size_t take = std::min<std::size_t>(total, static_cast<std::size_t>(std::max(per_assoc, 0)));
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(picks[i], picks[pick(rng)]);
    }
    for (std::size_t i = 0; i < take; ++i) {
      const int anchor = anchors[picks[i] / positives.size()];
      const int positive = positives[picks[i] % positives.size()];
      int hardest = negatives.front();
      double hardest_d = std::numeric_limits<double>::infinity();
      for (int n : negatives) {
        const double d = (rgb_desc.row(anchor) - rgb_desc.row(n)).norm();
        if (d < hardest_d) {
          hardest_d = d;
          hardest = n;
        }
      }
      out.push_back({anchor, positive, hardest});
    }
  }
  return out;
}

std::int64_t majority_label(const std::vector<int>& members, const std::vector<std::int64_t>& labels) {
  std::map<std::int64_t, int> histogram;
  for (int i : members) ++histogram[labels.at(i)];
  std::int64_t best = kUnknownLabel;
  int best_count = 0;
  for (const auto& [label, count] : histogram)
    if (count > best_count) {
      best_count = count;
      best = label;
    }
  return best;
}

bool association_correct(const Association& a, const ClusterState& rgb_state, const ClusterState& ir_state,
                         const std::vector<std::int64_t>& rgb_labels,
                         const std::vector<std::int64_t>& ir_labels) {
  const auto rgb = rgb_state.members.find(a.rgb_cluster);
  const auto ir = ir_state.members.find(a.ir_cluster);
  if (rgb == rgb_state.members.end() || ir == ir_state.members.end()) return false;
  const std::int64_t label = majority_label(rgb->second, rgb_labels);
  return label != kUnknownLabel && label == majority_label(ir->second, ir_labels);
}

void write_association_csv(std::ostream& out, const std::vector<Association>& assoc,
                           const std::vector<bool>& correct) {
  out << "rgb_cluster,ir_cluster,votes,total,correct\n";
  for (std::size_t i = 0; i < assoc.size(); ++i) {
    const Association& a = assoc[i];
    out << a.rgb_cluster << ',' << a.ir_cluster << ',' << a.votes_for_winner << ',' << a.votes_total << ',';
    if (i < correct.size()) out << (correct[i] ? 1 : 0);
    out << '\n';
  }
}

}  // namespace xspec
