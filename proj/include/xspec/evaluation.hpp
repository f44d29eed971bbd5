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
#include <string>
#include <string_view>
#include <vector>

#include "xspec/csan.hpp"
#include "xspec/feature_store.hpp"
#include "xspec/linalg.hpp"

namespace xspec {

// Distances, lower is more similar.
struct ScoreMatrix {
  Matrix distances;  // n_probe x n_gallery
  std::vector<std::int64_t> probe_labels;
  std::vector<std::int64_t> gallery_labels;

  void validate() const;
};

enum class EvalMode { kIrToVisible, kVisibleToIr };
std::string_view eval_mode_name(EvalMode m);  // "ir2vis" / "vis2ir"
EvalMode parse_eval_mode(std::string_view s);

// Pairwise CSAN distance for every (RGB row, IR column):
// || A (C_rgb - C_ir) || where A is the pair's attention. Projections are
// computed once per sample.
Matrix cross_domain_distances(const std::vector<Matrix>& rgb, const std::vector<Matrix>& ir,
                              const CsanParams& params);

// Entry (i, j) is the distance between the two sides of
// forward_pair(rgb one of {probe i, gallery j}, IR one). Probes must all
// share one domain and the gallery the other.
ScoreMatrix score_all(const std::vector<FeatureMap>& probes, const std::vector<FeatureMap>& gallery,
                      const CsanParams& params);

// Fraction of probes with a same-label gallery entry among their k nearest
// (ties by gallery index). Throws kLabelMissing if a probe has no match.
std::map<int, double> cmc(const ScoreMatrix& s, const std::vector<int>& ks);

// Mean over probes of average precision over all matching gallery entries.
double map_score(const ScoreMatrix& s);

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
};

struct RocResult {
  std::vector<RocPoint> roc;  // from (0, 0) to (1, 1)
  double auc = 0.0;
  double eer = 0.0;
  std::map<double, double> tar_at_far;
};

inline const std::vector<double> kDefaultFars = {0.01, 0.05};

// Scores are similarities: a pair is accepted when score >= threshold.
// Thresholds sweep every distinct score. Throws kEmptyInput.
RocResult roc_metrics(const std::vector<double>& genuine, const std::vector<double>& impostor,
                      const std::vector<double>& fars = kDefaultFars);

struct EvalReport {
  std::string mode;
  std::size_t n_probe = 0;
  std::size_t n_gallery = 0;
  std::map<int, double> cmc;
  double map_score = 0.0;
  std::vector<RocPoint> roc;
  double auc = 0.0;
  double eer = 0.0;
  std::map<double, double> tar_at_far;
};

inline const std::vector<int> kDefaultRanks = {1, 5, 10, 20};

// Ranking metrics from `s`, verification metrics from negated distances of
// same-label (genuine) and different-label (impostor) pairs.
EvalReport evaluate(const ScoreMatrix& s, const std::vector<int>& ks = kDefaultRanks);

// Splits a labeled dataset into (probes, gallery) for the given mode.
std::pair<std::vector<FeatureMap>, std::vector<FeatureMap>> probe_gallery(const Dataset& ds, EvalMode mode);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(std::string_view text);
void write_roc_csv(std::ostream& out, const EvalReport& r);
void write_cmc_csv(std::ostream& out, const ScoreMatrix& s);

}  // namespace xspec
