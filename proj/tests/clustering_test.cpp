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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "test_util.hpp"

namespace xspec {
namespace {

using testing::random_matrix;

Matrix points(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

ClusterState state_from_labels(const std::vector<int>& labels, const Matrix& desc) {
  ClusterState s;
  s.partition = labels;
  s.assignment = labels;
  s.eligible.assign(*std::max_element(labels.begin(), labels.end()) + 1, true);
  s.rebuild(desc);
  return s;
}

// Blobs centred on the vertices of a large triangle.
struct Blobs {
  Matrix desc;
  std::vector<std::int64_t> labels;
};

Blobs three_blobs(std::uint64_t seed, double sigma_fraction = 0.05) {
  const double separation = 10.0;
  const Matrix centres = points({{0, 0}, {separation, 0}, {separation / 2, separation * 0.866}});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma_fraction * separation);
  Blobs b;
  b.desc.resize(60, 2);
  for (int i = 0; i < 60; ++i) {
    const int k = i % 3;
    b.labels.push_back(k);
    for (int c = 0; c < 2; ++c) b.desc(i, c) = centres(k, c) + noise(rng);
  }
  return b;
}

// Reference agglomeration that recomputes single linkage from scratch every
// round. Clusters are sets keyed by their smallest member.
std::vector<int> reference_agglomerate(const Matrix& desc, double fraction, int target) {
  const int n = static_cast<int>(desc.rows());
  std::map<int, std::vector<int>> clusters;
  for (int i = 0; i < n; ++i) clusters[i] = {i};
  while (static_cast<int>(clusters.size()) > target) {
    const int count = static_cast<int>(clusters.size());
    const int quota = std::min<int>(static_cast<int>(std::ceil(fraction * count)), count - target);
    std::vector<std::tuple<double, int, int>> pairs;
    for (auto a = clusters.begin(); a != clusters.end(); ++a)
      for (auto b = std::next(a); b != clusters.end(); ++b) {
        double best = 1e300;
        for (int i : a->second)
          for (int j : b->second) best = std::min(best, (desc.row(i) - desc.row(j)).norm());
        pairs.emplace_back(best, a->first, b->first);
      }
    std::sort(pairs.begin(), pairs.end());
    std::set<int> used;
    int done = 0;
    std::vector<std::pair<int, int>> merges;
    for (const auto& [d, lo, hi] : pairs) {
      if (done == quota) break;
      if (used.contains(lo) || used.contains(hi)) continue;
      used.insert(lo);
      used.insert(hi);
      merges.emplace_back(lo, hi);
      ++done;
    }
    for (auto [lo, hi] : merges) {
      auto& dst = clusters[lo];
      dst.insert(dst.end(), clusters[hi].begin(), clusters[hi].end());
      clusters.erase(hi);
    }
  }
  std::vector<int> out(n);
  int id = 0;
  for (const auto& [key, members] : clusters) {
    for (int i : members) out[i] = id;
    ++id;
  }
  return out;
}

// Same partition up to relabelling.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

double brute_silhouette(int i, const std::vector<int>& labels, const Matrix& desc) {
  std::map<int, std::pair<double, int>> acc;
  for (int j = 0; j < static_cast<int>(labels.size()); ++j) {
    if (j == i) continue;
    auto& [s, c] = acc[labels[j]];
    s += (desc.row(i) - desc.row(j)).norm();
    ++c;
  }
  double intra = 0.0, inter = 1e300;
  for (const auto& [label, sc] : acc) {
    const double mean = sc.first / sc.second;
    if (label == labels[i])
      intra = mean;
    else
      inter = std::min(inter, mean);
  }
  const double denom = std::max(intra, inter);
  return denom == 0.0 ? 0.0 : (inter - intra) / denom;
}

TEST(ClusterDescriptorTest, PatchAverage) {
  const Vector d = descriptor_for_clustering(points({{1, 2, 3}, {3, 4, 5}}), Domain::kRgb, nullptr);
  EXPECT_EQ(d, flatten(points({{2, 3, 4}})));
  EXPECT_EQ(descriptor_for_clustering(Matrix::Zero(4, 3), Domain::kIr, nullptr), Vector::Zero(3));
}

TEST(ClusterDescriptorTest, WithParamsUsesSingleImageDescriptor) {
  std::mt19937_64 rng(1);
  const CsanParams p = CsanParams::init_uniform(3, 2, 4);
  const Matrix x = random_matrix(4, 3, rng);
  EXPECT_EQ(descriptor_for_clustering(x, Domain::kIr, &p), self_descriptor(x, Domain::kIr, p));
  FeatureMap f{9, Domain::kRgb, 4, 3, {}};
  for (Eigen::Index i = 0; i < x.size(); ++i) f.data.push_back(static_cast<float>(x.data()[i]));
  EXPECT_EQ(descriptor_for_clustering(f, &p), self_descriptor(f.grid(), Domain::kRgb, p));
}

TEST(LinkageTest, Examples) {
  const Matrix d = points({{0, 0}, {3, 4}, {0, 0}});
  EXPECT_DOUBLE_EQ(linkage_distance({0}, {1}, d), 5.0);
  EXPECT_EQ(linkage_distance({0}, {1, 2}, d), 0.0);
  EXPECT_ERRC(linkage_distance({}, {1}, d), Errc::kEmptyCluster);
}

TEST(LinkageTest, MatchesExhaustiveMinimum) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix d = random_matrix(10, 3, rng);
    double best = 1e300;
    for (int i = 0; i < 5; ++i)
      for (int j = 5; j < 10; ++j) best = std::min(best, (d.row(i) - d.row(j)).norm());
    EXPECT_EQ(linkage_distance({0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}, d), best);
  }
}

TEST(AgglomerateTest, TwoSeparatedPairs) {
  ClusterParams p;
  p.target_clusters = 2;
  p.merge_fraction = 1.0;
  const ClusterState s = agglomerate(points({{0, 0}, {10, 10}, {0, 1}, {10, 11}}), p);
  EXPECT_EQ(s.partition, (std::vector<int>{0, 1, 0, 1}));
  EXPECT_EQ(s.cluster_count(), 2);
  EXPECT_EQ(s.centroids.row(0), points({{0, 0.5}}));
}

TEST(AgglomerateTest, TargetEqualsCountKeepsSingletons) {
  std::mt19937_64 rng(3);
  ClusterParams p;
  p.target_clusters = 6;
  const ClusterState s = agglomerate(random_matrix(6, 2, rng), p);
  EXPECT_EQ(s.partition, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(AgglomerateTest, RecoversBlobs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Blobs b = three_blobs(seed);
    ClusterParams p;
    p.target_clusters = 3;
    const ClusterState s = agglomerate(b.desc, p);
    const std::vector<std::int64_t> got(s.partition.begin(), s.partition.end());
    EXPECT_DOUBLE_EQ(adjusted_rand_index(got, b.labels), 1.0);
  }
}

TEST(AgglomerateTest, MatchesReferenceImplementation) {
  std::mt19937_64 rng(4);
  for (double fraction : {0.05, 0.3, 1.0})
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix d = random_matrix(25, 3, rng);
      ClusterParams p;
      p.merge_fraction = fraction;
      p.target_clusters = 1 + trial % 5;
      EXPECT_EQ(agglomerate(d, p).partition, reference_agglomerate(d, fraction, p.target_clusters));
    }
}

TEST(AgglomerateTest, TiesBreakOnIndices) {
  // Equidistant points on a line: every adjacent gap is 1.
  const Matrix d = points({{0}, {1}, {2}, {3}});
  ClusterParams p;
  p.merge_fraction = 0.25;
  p.target_clusters = 3;
  EXPECT_EQ(agglomerate(d, p).partition, (std::vector<int>{0, 0, 1, 2}));
}

TEST(AgglomerateTest, PermutationInvariant) {
  const Blobs b = three_blobs(5, 0.15);
  ClusterParams p;
  p.target_clusters = 4;
  const std::vector<int> base = agglomerate(b.desc, p).partition;
  std::vector<int> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(6);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix shuffled(60, 2);
  for (int i = 0; i < 60; ++i) shuffled.row(i) = b.desc.row(perm[i]);
  const std::vector<int> got = agglomerate(shuffled, p).partition;
  std::vector<int> back(60);
  for (int i = 0; i < 60; ++i) back[perm[i]] = got[i];
  EXPECT_TRUE(same_partition(base, back));
}

TEST(AgglomerateTest, InvalidParams) {
  ClusterParams p;
  p.target_clusters = 5;
  EXPECT_ERRC(agglomerate(Matrix::Zero(3, 2), p), Errc::kInvalidParams);
  p = {};
  p.merge_fraction = 0.0;
  EXPECT_ERRC(agglomerate(Matrix::Zero(3, 2), p), Errc::kInvalidParams);
}

TEST(SilhouetteTest, Examples) {
  // Singleton: intra is 0.
  const Matrix a = points({{0}, {4}, {5}});
  EXPECT_EQ(silhouette(0, state_from_labels({0, 1, 1}, a), a), 1.0);
  // intra == inter.
  const Matrix b = points({{0}, {1}, {-1}});
  EXPECT_EQ(silhouette(0, state_from_labels({0, 0, 1}, b), b), 0.0);
  // intra = 2, inter = 1.
  const Matrix c = points({{0}, {2}, {1}});
  EXPECT_DOUBLE_EQ(silhouette(0, state_from_labels({0, 0, 1}, c), c), -0.5);
  EXPECT_ERRC(silhouette(0, state_from_labels({0, 0, 0}, c), c), Errc::kSingleCluster);
}

TEST(SilhouetteTest, BoundedAndMatchesBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix d = random_matrix(15, 2, rng);
    std::vector<int> labels(15);
    for (int i = 0; i < 15; ++i) labels[i] = i < 4 ? i : label(rng);
    const ClusterState s = state_from_labels(labels, d);
    for (int i = 0; i < 15; ++i) {
      const double v = silhouette(i, s, d);
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
      EXPECT_NEAR(v, brute_silhouette(i, labels, d), 1e-12);
    }
  }
}

TEST(FilterTest, PerfectSeparationKeepsEverything) {
  const Blobs b = three_blobs(8);
  const ClusterState s = filter_clusters(state_from_labels({b.labels.begin(), b.labels.end()}, b.desc), b.desc, {});
  for (int a : s.assignment) EXPECT_NE(a, kNoCluster);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE(s.is_eligible(c));
}

TEST(FilterTest, ZeroSilhouettesRemoveEverything) {
  const Matrix d = Matrix::Zero(4, 2);
  const ClusterState s = filter_clusters(state_from_labels({0, 0, 1, 1}, d), d, {});
  for (double v : s.silhouettes) EXPECT_EQ(v, 0.0);
  for (int a : s.assignment) EXPECT_EQ(a, kNoCluster);
  EXPECT_TRUE(s.members.empty());
  EXPECT_FALSE(s.is_eligible(0));
}

TEST(FilterTest, MatchesBruteForceAndIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Blobs b = three_blobs(seed, 0.3);
    ClusterParams p;
    p.target_clusters = 5;
    const ClusterState raw = agglomerate(b.desc, p);
    const ClusterState once = filter_clusters(raw, b.desc, p);
    std::vector<int> sizes(raw.cluster_count(), 0);
    for (int i = 0; i < 60; ++i) {
      const double s = brute_silhouette(i, raw.partition, b.desc);
      EXPECT_NEAR(once.silhouettes[i], s, 1e-12);
      const bool keep = s > p.silhouette_threshold;
      EXPECT_EQ(once.assignment[i], keep ? raw.partition[i] : kNoCluster) << "sample " << i;
      if (keep) ++sizes[raw.partition[i]];
    }
    for (int c = 0; c < raw.cluster_count(); ++c) {
      const bool ok = sizes[c] >= p.min_cluster_size && sizes[c] <= p.max_cluster_size_factor * 60 / raw.cluster_count();
      EXPECT_EQ(once.eligible[c], ok);
    }
    const ClusterState twice = filter_clusters(once, b.desc, p);
    EXPECT_EQ(twice.assignment, once.assignment);
    EXPECT_EQ(twice.eligible, once.eligible);
    EXPECT_EQ(twice.silhouettes, once.silhouettes);
  }
}

TEST(FilterTest, OversizedClustersAreIneligible) {
  // Cluster 0 holds 8 of 10 samples; the cap is 1.5 * 10 / 2 = 7.5.
  Matrix d(10, 1);
  d << 0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 9, 9.01;
  ClusterParams p;
  p.max_cluster_size_factor = 1.5;
  const ClusterState s = filter_clusters(state_from_labels({0, 0, 0, 0, 0, 0, 0, 0, 1, 1}, d), d, p);
  EXPECT_FALSE(s.is_eligible(0));
  EXPECT_TRUE(s.is_eligible(1));
  EXPECT_EQ(s.members.at(0).size(), 8u);
}

TEST(FilterTest, UndersizedClustersAreIneligible) {
  const Matrix d = points({{0}, {0.1}, {9}});
  const ClusterState s = filter_clusters(state_from_labels({0, 0, 1}, d), d, {});
  EXPECT_TRUE(s.is_eligible(0));
  EXPECT_FALSE(s.is_eligible(1));
  EXPECT_EQ(s.assignment[2], 1);
}

TEST(MemoryBankTest, IdenticalRowsGiveLogTwo) {
  std::mt19937_64 rng(9);
  const Matrix bank = points({{1, -2, 0.5}, {1, -2, 0.5}});
  for (int trial = 0; trial < 5; ++trial)
    EXPECT_NEAR(memory_bank_loss(flatten(random_matrix(1, 3, rng)), trial % 2, bank, 0.1).loss, std::log(2.0),
                1e-12);
}

TEST(MemoryBankTest, ConfidentMatchHasVanishingLoss) {
  const Matrix bank = points({{1, 0}, {0, 1}, {-1, 0}});
  EXPECT_LT(memory_bank_loss(flatten(points({{10, 0}})), 0, bank, 0.1).loss, 1e-40);
}

TEST(MemoryBankTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  const double h = 1e-5;
  const double tau = 0.5;
  for (int trial = 0; trial < 20; ++trial) {
    const Vector f = flatten(random_matrix(1, 4, rng, 0.5));
    const Matrix bank = random_matrix(3, 4, rng, 0.5);
    const int label = trial % 3;
    const MemoryBankLoss r = memory_bank_loss(f, label, bank, tau);
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); };
    for (int i = 0; i < 4; ++i) {
      Vector up = f, down = f;
      up[i] += h;
      down[i] -= h;
      const double n = (memory_bank_loss(up, label, bank, tau).loss - memory_bank_loss(down, label, bank, tau).loss) / (2 * h);
      EXPECT_LT(rel(r.grad_feature[i], n), 1e-4);
    }
    for (Eigen::Index i = 0; i < bank.size(); ++i) {
      Matrix up = bank, down = bank;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double n = (memory_bank_loss(f, label, up, tau).loss - memory_bank_loss(f, label, down, tau).loss) / (2 * h);
      EXPECT_LT(rel(r.grad_bank.data()[i], n), 1e-4);
    }
  }
}

TEST(MemoryBankTest, BadLabel) {
  EXPECT_ERRC(memory_bank_loss(Vector::Zero(2), 2, Matrix::Zero(2, 2), 0.1), Errc::kBadLabel);
  EXPECT_ERRC(memory_bank_loss(Vector::Zero(2), -1, Matrix::Zero(2, 2), 0.1), Errc::kBadLabel);
}

TEST(MemoryBankTest, WarmUpLowersMeanLoss) {
  const Blobs b = three_blobs(11, 0.3);
  const Matrix desc = b.desc / 10.0;
  const ClusterState s = state_from_labels({b.labels.begin(), b.labels.end()}, desc);
  auto mean_loss = [&](const Matrix& bank) {
    double total = 0.0;
    for (int i = 0; i < 60; ++i) total += memory_bank_loss(desc.row(i).transpose(), s.assignment[i], bank, 0.1).loss;
    return total / 60;
  };
  ClusterParams p;
  EXPECT_EQ(warm_memory_bank(desc, s, p), s.centroids);
  p.mb_steps = 20;
  p.mb_learning_rate = 0.01;
  EXPECT_LT(mean_loss(warm_memory_bank(desc, s, p)), mean_loss(s.centroids));
}

TEST(AdjustedRandTest, KnownValues) {
  EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {5, 5, 2, 2}), 1.0);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 2}), 4.0 / 7.0, 1e-12);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 0, 1, 1, 1}, {0, 1, 2, 0, 1, 2}), -4.0 / 11.0, 1e-12);
}

TEST(ClusterCsvTest, Format) {
  const Matrix d = points({{0}, {0.1}, {9}});
  ClusterState s = filter_clusters(state_from_labels({0, 0, 1}, d), d, {});
  s.domain = Domain::kIr;
  std::ostringstream out;
  write_cluster_csv(out, s, {10, 11, 12});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample_id,domain,cluster_id,silhouette,eligible");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("10,ir,0,", 0), 0u);
  EXPECT_EQ(line.back(), '1');
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line, "12,ir,1,1,0");
  EXPECT_ERRC(write_cluster_csv(out, s, {1}), Errc::kDimMismatch);
}

}  // namespace
}  // namespace xspec
