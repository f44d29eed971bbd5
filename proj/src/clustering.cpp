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

#include "xspec/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <tuple>

#include "xspec/error.hpp"
#include "xspec/parallel.hpp"

namespace xspec {

void ClusterParams::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::kInvalidParams, what); };
  if (!(merge_fraction > 0.0 && merge_fraction <= 1.0)) fail("merge_fraction must be in (0, 1]");
  if (target_clusters < 1) fail("target_clusters must be >= 1");
  if (!std::isfinite(silhouette_threshold)) fail("silhouette_threshold must be finite");
  if (min_cluster_size < 1) fail("min_cluster_size must be >= 1");
  if (!(max_cluster_size_factor > 0.0)) fail("max_cluster_size_factor must be positive");
  if (!(mb_temperature > 0.0)) fail("mb_temperature must be positive");
  if (mb_steps < 0) fail("mb_steps must be >= 0");
}

void ClusterState::rebuild(const Matrix& desc) {
  members.clear();
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != kNoCluster) members[assignment[i]].push_back(static_cast<int>(i));
  const int k = static_cast<int>(eligible.size());
  centroids = Matrix::Zero(k, desc.cols());
  for (const auto& [cluster, idx] : members) {
    for (int i : idx) centroids.row(cluster) += desc.row(i);
    centroids.row(cluster) /= static_cast<double>(idx.size());
  }
}

Vector descriptor_for_clustering(const Matrix& features, Domain domain, const CsanParams* params) {
  if (params == nullptr) return features.colwise().mean().transpose();
  return self_descriptor(features, domain, *params);
}

Vector descriptor_for_clustering(const FeatureMap& f, const CsanParams* params) {
  f.validate();
  return descriptor_for_clustering(f.grid(), f.domain, params);
}

Matrix descriptor_matrix(const std::vector<Sample>& samples, const CsanParams* params) {
  if (samples.empty()) return Matrix(0, 0);
  std::vector<Vector> rows(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    rows[i] = descriptor_for_clustering(samples[i].features, samples[i].domain, params);
  });
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return out;
}

Matrix pairwise_distances(const Matrix& desc) {
  const auto n = desc.rows();
  Matrix d = Matrix::Zero(n, n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < n; ++j) d(r, j) = (desc.row(r) - desc.row(j)).norm();
  });
  return d;
}

double linkage_distance(const std::vector<int>& a, const std::vector<int>& b, const Matrix& desc) {
  if (a.empty() || b.empty()) throw Error(Errc::kEmptyCluster, "linkage_distance on an empty cluster");
  double best = std::numeric_limits<double>::infinity();
  for (int i : a)
    for (int j : b) best = std::min(best, (desc.row(i) - desc.row(j)).norm());
  return best;
}

ClusterState agglomerate(const Matrix& desc, const ClusterParams& params, Domain domain) {
  params.validate();
  const int n = static_cast<int>(desc.rows());
  if (n < params.target_clusters)
    throw Error(Errc::kInvalidParams, std::to_string(n) + " samples < target_clusters " +
                                          std::to_string(params.target_clusters));

  // Clusters are keyed by their smallest sample index. Single-linkage
  // distances between clusters update as min over the merged pair.
  Matrix link = pairwise_distances(desc);
  std::vector<int> owner(n);
  std::iota(owner.begin(), owner.end(), 0);
  std::vector<int> active(n);
  std::iota(active.begin(), active.end(), 0);

  struct Candidate {
    double distance;
    int lo;
    int hi;
  };
  std::vector<Candidate> candidates;
  std::vector<char> merged(n, 0);
  while (static_cast<int>(active.size()) > params.target_clusters) {
    const int count = static_cast<int>(active.size());
    const int quota = std::min(static_cast<int>(std::ceil(params.merge_fraction * count)),
                               count - params.target_clusters);
    candidates.clear();
    for (std::size_t x = 0; x < active.size(); ++x)
      for (std::size_t y = x + 1; y < active.size(); ++y)
        candidates.push_back({link(active[x], active[y]), active[x], active[y]});
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& l, const Candidate& r) {
      return std::tie(l.distance, l.lo, l.hi) < std::tie(r.distance, r.lo, r.hi);
    });

    std::fill(merged.begin(), merged.end(), 0);
    int done = 0;
    for (const auto& c : candidates) {
      if (done == quota) break;
      if (merged[c.lo] || merged[c.hi]) continue;
      merged[c.lo] = merged[c.hi] = 1;
      ++done;
      // c.lo < c.hi, so c.lo stays the key of the merged cluster.
      for (int k : active) {
        const double v = std::min(link(c.lo, k), link(c.hi, k));
        link(c.lo, k) = link(k, c.lo) = v;
      }
      for (int& o : owner)
        if (o == c.hi) o = c.lo;
    }
    std::erase_if(active, [&](int key) { return owner[key] != key; });
  }

  ClusterState state;
  state.domain = domain;
  state.partition.assign(n, kNoCluster);
  std::map<int, int> compact;
  for (int i = 0; i < n; ++i) {
    auto [it, inserted] = compact.try_emplace(owner[i], static_cast<int>(compact.size()));
    state.partition[i] = it->second;
  }
  state.assignment = state.partition;
  state.eligible.assign(compact.size(), true);
  state.rebuild(desc);
  return state;
}

double silhouette(int sample, const ClusterState& state, const Matrix& desc, const Matrix& distances) {
  const int n = static_cast<int>(state.partition.size());
  if (sample < 0 || sample >= n) throw Error(Errc::kInvalidParams, "sample index out of range");
  const int own = state.partition[sample];
  if (own == kNoCluster) throw Error(Errc::kInvalidParams, "sample has no cluster");
  const int k = static_cast<int>(state.eligible.size());
  std::vector<double> sum(k, 0.0);
  std::vector<int> count(k, 0);
  for (int j = 0; j < n; ++j) {
    if (j == sample || state.partition[j] == kNoCluster) continue;
    const double d = distances.size() > 0 ? distances(sample, j) : (desc.row(sample) - desc.row(j)).norm();
    sum[state.partition[j]] += d;
    ++count[state.partition[j]];
  }
  const double intra = count[own] > 0 ? sum[own] / count[own] : 0.0;
  double inter = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c)
    if (c != own && count[c] > 0) inter = std::min(inter, sum[c] / count[c]);
  if (!std::isfinite(inter)) throw Error(Errc::kSingleCluster, "silhouette needs at least two clusters");
  const double denom = std::max(inter, intra);
  return denom > 0.0 ? (inter - intra) / denom : 0.0;
}

double silhouette(int sample, const ClusterState& state, const Matrix& desc) {
  return silhouette(sample, state, desc, Matrix());
}

ClusterState filter_clusters(const ClusterState& state, const Matrix& desc, const ClusterParams& params) {
  ClusterState out = state;
  const int n = static_cast<int>(state.partition.size());
  const int k = static_cast<int>(state.eligible.size());
  out.silhouettes.assign(n, 0.0);
  if (k >= 2) {
    const Matrix distances = pairwise_distances(desc);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
      out.silhouettes[i] = silhouette(static_cast<int>(i), state, desc, distances);
    });
  }
  std::vector<int> sizes(k, 0);
  for (int i = 0; i < n; ++i) {
    const bool keep = k >= 2 && out.silhouettes[i] > params.silhouette_threshold;
    out.assignment[i] = keep ? state.partition[i] : kNoCluster;
    if (keep) ++sizes[state.partition[i]];
  }
  const double max_size = k > 0 ? params.max_cluster_size_factor * n / k : 0.0;
  for (int c = 0; c < k; ++c)
    out.eligible[c] = sizes[c] >= params.min_cluster_size && sizes[c] <= max_size;
  out.rebuild(desc);
  return out;
}

MemoryBankLoss memory_bank_loss(const Vector& f, int label, const Matrix& bank, double temperature) {
  if (label < 0 || label >= bank.rows())
    throw Error(Errc::kBadLabel, "label " + std::to_string(label) + " outside memory bank of " +
                                     std::to_string(bank.rows()));
  if (f.size() != bank.cols()) throw Error(Errc::kDimMismatch, "feature and memory bank widths differ");
  const Vector logits = bank * f / temperature;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  Vector probs = (logits.array() - lse).exp().matrix();
  MemoryBankLoss r;
  r.loss = lse - logits[label];
  probs[label] -= 1.0;
  r.grad_feature = bank.transpose() * probs / temperature;
  r.grad_bank = probs * f.transpose() / temperature;
  return r;
}

Matrix warm_memory_bank(const Matrix& desc, const ClusterState& state, const ClusterParams& params) {
  Matrix bank = state.centroids;
  std::size_t assigned = 0;
  for (int a : state.assignment) assigned += a != kNoCluster;
  if (assigned == 0 || bank.rows() == 0) return bank;
  for (int step = 0; step < params.mb_steps; ++step) {
    Matrix grad = Matrix::Zero(bank.rows(), bank.cols());
    for (std::size_t i = 0; i < state.assignment.size(); ++i) {
      if (state.assignment[i] == kNoCluster) continue;
      grad += memory_bank_loss(desc.row(static_cast<Eigen::Index>(i)).transpose(), state.assignment[i], bank,
                               params.mb_temperature)
                  .grad_bank;
    }
    bank -= params.mb_learning_rate * grad / static_cast<double>(assigned);
  }
  return bank;
}

double adjusted_rand_index(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  if (a.size() != b.size()) throw Error(Errc::kDimMismatch, "labelings differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<std::int64_t, std::int64_t>, double> table;
  std::map<std::int64_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto pairs = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [key, v] : table) index += pairs(v);
  for (const auto& [key, v] : rows) sum_rows += pairs(v);
  for (const auto& [key, v] : cols) sum_cols += pairs(v);
  const double expected = n > 1 ? sum_rows * sum_cols / pairs(n) : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both labelings trivial
  return (index - expected) / (max_index - expected);
}

void write_cluster_csv(std::ostream& out, const ClusterState& state,
                       const std::vector<std::uint64_t>& sample_ids) {
  if (sample_ids.size() != state.partition.size())
    throw Error(Errc::kDimMismatch, "sample id list does not match cluster state");
  out << "sample_id,domain,cluster_id,silhouette,eligible\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    const bool eligible = state.assignment[i] != kNoCluster && state.is_eligible(state.assignment[i]);
    out << sample_ids[i] << ',' << domain_name(state.domain) << ',' << state.partition[i] << ',';
    if (!state.silhouettes.empty()) out << state.silhouettes[i];
    out << ',' << (eligible ? 1 : 0) << '\n';
  }
}

}  // namespace xspec
