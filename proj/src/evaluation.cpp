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

#include "xspec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xspec/error.hpp"
#include "xspec/parallel.hpp"

namespace xspec {

void ScoreMatrix::validate() const {
  if (static_cast<std::size_t>(distances.rows()) != probe_labels.size() ||
      static_cast<std::size_t>(distances.cols()) != gallery_labels.size())
    throw Error(Errc::kDimMismatch, "score matrix and label lists disagree");
  if (!distances.allFinite()) throw Error(Errc::kInvalidParams, "non-finite score");
}

std::string_view eval_mode_name(EvalMode m) { return m == EvalMode::kIrToVisible ? "ir2vis" : "vis2ir"; }

EvalMode parse_eval_mode(std::string_view s) {
  if (s == "ir2vis") return EvalMode::kIrToVisible;
  if (s == "vis2ir") return EvalMode::kVisibleToIr;
  throw Error(Errc::kInvalidConfig, "unknown eval mode '" + std::string(s) + "'");
}

Matrix cross_domain_distances(const std::vector<Matrix>& rgb, const std::vector<Matrix>& ir,
                              const CsanParams& params) {
  struct Projected {
    Matrix spectral;
    Matrix common;
  };
  auto prepare = [&](const std::vector<Matrix>& xs, Branch spectral) {
    std::vector<Projected> out(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) {
      out[i] = {project(xs[i], spectral, params), project(xs[i], Branch::kCommon, params)};
    });
    return out;
  };
  for (const auto* side : {&rgb, &ir})
    for (const auto& x : *side)
      if (x.cols() != params.c_in) throw Error(Errc::kShapeMismatch, "channel count does not match params");
  const auto rgb_p = prepare(rgb, Branch::kRgb);
  const auto ir_p = prepare(ir, Branch::kIr);
  const Eigen::Index patches = !rgb.empty() ? rgb.front().rows() : ir.empty() ? 0 : ir.front().rows();
  for (const auto* side : {&rgb, &ir})
    for (const auto& x : *side)
      if (x.rows() != patches) throw Error(Errc::kShapeMismatch, "samples differ in patch count");

  Matrix d(static_cast<Eigen::Index>(rgb.size()), static_cast<Eigen::Index>(ir.size()));
  parallel_for(rgb.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < ir.size(); ++j) {
      const Matrix attention = cross_attention(rgb_p[i].spectral, ir_p[j].spectral, params.alpha(),
                                               params.attention_output);
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (attention * (rgb_p[i].common - ir_p[j].common)).norm();
    }
  });
  return d;
}

ScoreMatrix score_all(const std::vector<FeatureMap>& probes, const std::vector<FeatureMap>& gallery,
                      const CsanParams& params) {
  if (probes.empty() || gallery.empty()) throw Error(Errc::kEmptyInput, "score_all needs probes and gallery");
  const Domain probe_domain = probes.front().domain;
  auto grids = [&](const std::vector<FeatureMap>& maps, Domain expected) {
    std::vector<Matrix> out;
    for (const auto& f : maps) {
      if (f.domain != expected)
        throw Error(Errc::kDomainMismatch, "sample " + std::to_string(f.sample_id) + " is in the wrong domain");
      if (f.patches != probes.front().patches || f.channels != probes.front().channels)
        throw Error(Errc::kShapeMismatch, "sample " + std::to_string(f.sample_id) + " has a different shape");
      f.validate();
      out.push_back(f.grid());
    }
    return out;
  };
  const Domain gallery_domain = probe_domain == Domain::kIr ? Domain::kRgb : Domain::kIr;
  const auto probe_grids = grids(probes, probe_domain);
  const auto gallery_grids = grids(gallery, gallery_domain);

  ScoreMatrix s;
  if (probe_domain == Domain::kIr)
    s.distances = cross_domain_distances(gallery_grids, probe_grids, params).transpose();
  else
    s.distances = cross_domain_distances(probe_grids, gallery_grids, params);
  for (const auto& f : probes) s.probe_labels.push_back(f.true_label);
  for (const auto& f : gallery) s.gallery_labels.push_back(f.true_label);
  return s;
}

namespace {

// Gallery indices of one probe row, nearest first, ties by index.
std::vector<int> ranking(const Matrix& distances, Eigen::Index row) {
  std::vector<int> order(static_cast<std::size_t>(distances.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return distances(row, a) < distances(row, b); });
  return order;
}

void require_matches(const ScoreMatrix& s) {
  s.validate();
  if (s.probe_labels.empty()) throw Error(Errc::kEmptyInput, "no probes");
  const std::set<std::int64_t> gallery(s.gallery_labels.begin(), s.gallery_labels.end());
  for (std::int64_t label : s.probe_labels)
    if (!gallery.contains(label))
      throw Error(Errc::kLabelMissing, "probe label " + std::to_string(label) + " not in gallery");
}

}  // namespace

std::map<int, double> cmc(const ScoreMatrix& s, const std::vector<int>& ks) {
  require_matches(s);
  std::vector<int> first_hit(s.probe_labels.size());
  for (std::size_t i = 0; i < s.probe_labels.size(); ++i) {
    const auto order = ranking(s.distances, static_cast<Eigen::Index>(i));
    for (std::size_t r = 0; r < order.size(); ++r)
      if (s.gallery_labels[order[r]] == s.probe_labels[i]) {
        first_hit[i] = static_cast<int>(r) + 1;
        break;
      }
  }
  std::map<int, double> out;
  for (int k : ks) {
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [&](int r) { return r <= k; });
    out[k] = static_cast<double>(hits) / static_cast<double>(first_hit.size());
  }
  return out;
}

double map_score(const ScoreMatrix& s) {
  require_matches(s);
  double total = 0.0;
  for (std::size_t i = 0; i < s.probe_labels.size(); ++i) {
    const auto order = ranking(s.distances, static_cast<Eigen::Index>(i));
    int found = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (s.gallery_labels[order[r]] == s.probe_labels[i]) {
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(r + 1);
      }
    total += precision_sum / found;
  }
  return total / static_cast<double>(s.probe_labels.size());
}

RocResult roc_metrics(const std::vector<double>& genuine, const std::vector<double>& impostor,
                      const std::vector<double>& fars) {
  if (genuine.empty() || impostor.empty()) throw Error(Errc::kEmptyInput, "roc_metrics needs both score sets");
  struct Scored {
    double score;
    bool genuine;
  };
  std::vector<Scored> all;
  all.reserve(genuine.size() + impostor.size());
  for (double g : genuine) all.push_back({g, true});
  for (double i : impostor) all.push_back({i, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  const double ng = static_cast<double>(genuine.size());
  const double ni = static_cast<double>(impostor.size());
  RocResult r;
  r.roc.push_back({0.0, 0.0});
  std::size_t accepted_g = 0, accepted_i = 0;
  for (std::size_t k = 0; k < all.size();) {
    const double threshold = all[k].score;
    for (; k < all.size() && all[k].score == threshold; ++k) (all[k].genuine ? accepted_g : accepted_i)++;
    r.roc.push_back({accepted_i / ni, accepted_g / ng});
  }

  for (std::size_t k = 1; k < r.roc.size(); ++k)
    r.auc += (r.roc[k].far - r.roc[k - 1].far) * 0.5 * (r.roc[k].tar + r.roc[k - 1].tar);

  // FAR - FRR runs from -1 to +1 along the curve; interpolate its zero.
  auto gap = [](const RocPoint& p) { return p.far - (1.0 - p.tar); };
  for (std::size_t k = 1; k < r.roc.size(); ++k) {
    const double lo = gap(r.roc[k - 1]);
    const double hi = gap(r.roc[k]);
    if (lo <= 0.0 && hi >= 0.0) {
      const double t = hi > lo ? -lo / (hi - lo) : 0.0;
      r.eer = r.roc[k - 1].far + t * (r.roc[k].far - r.roc[k - 1].far);
      break;
    }
  }

  for (double far : fars) {
    // Last point at or below the target FAR has the highest TAR there.
    std::size_t k = 0;
    while (k + 1 < r.roc.size() && r.roc[k + 1].far <= far) ++k;
    double tar = r.roc[k].tar;
    if (k + 1 < r.roc.size()) {
      const RocPoint& a = r.roc[k];
      const RocPoint& b = r.roc[k + 1];
      tar = a.tar + (far - a.far) / (b.far - a.far) * (b.tar - a.tar);
    }
    r.tar_at_far[far] = tar;
  }
  return r;
}

EvalReport evaluate(const ScoreMatrix& s, const std::vector<int>& ks) {
  EvalReport report;
  report.n_probe = s.probe_labels.size();
  report.n_gallery = s.gallery_labels.size();
  report.cmc = cmc(s, ks);
  report.map_score = map_score(s);
  std::vector<double> genuine, impostor;
  for (std::size_t i = 0; i < s.probe_labels.size(); ++i)
    for (std::size_t j = 0; j < s.gallery_labels.size(); ++j) {
      const double score = -s.distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      (s.probe_labels[i] == s.gallery_labels[j] ? genuine : impostor).push_back(score);
    }
  if (!impostor.empty()) {
    const RocResult roc = roc_metrics(genuine, impostor);
    report.roc = roc.roc;
    report.auc = roc.auc;
    report.eer = roc.eer;
    report.tar_at_far = roc.tar_at_far;
  }
  return report;
}

std::pair<std::vector<FeatureMap>, std::vector<FeatureMap>> probe_gallery(const Dataset& ds, EvalMode mode) {
  if (mode == EvalMode::kIrToVisible) return {ds.ir, ds.rgb};
  return {ds.rgb, ds.ir};
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json doc;
  doc["mode"] = r.mode;
  doc["n_probe"] = r.n_probe;
  doc["n_gallery"] = r.n_gallery;
  nlohmann::ordered_json cmc_doc = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.cmc) cmc_doc[std::to_string(k)] = v;
  doc["cmc"] = cmc_doc;
  doc["map"] = r.map_score;
  doc["auc"] = r.auc;
  doc["eer"] = r.eer;
  nlohmann::ordered_json tar = nlohmann::ordered_json::object();
  for (const auto& [far, v] : r.tar_at_far) {
    std::ostringstream key;
    key << far;
    tar[key.str()] = v;
  }
  doc["tar_at_far"] = tar;
  nlohmann::ordered_json roc = nlohmann::ordered_json::array();
  for (const auto& p : r.roc) roc.push_back({p.far, p.tar});
  doc["roc"] = roc;
  return doc.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  EvalReport r;
  try {
    const auto doc = nlohmann::json::parse(text);
    r.mode = doc.value("mode", std::string());
    r.n_probe = doc.value("n_probe", std::size_t{0});
    r.n_gallery = doc.value("n_gallery", std::size_t{0});
    for (const auto& [k, v] : doc.at("cmc").items()) r.cmc[std::stoi(k)] = v.get<double>();
    r.map_score = doc.at("map").get<double>();
    r.auc = doc.at("auc").get<double>();
    r.eer = doc.at("eer").get<double>();
    for (const auto& [k, v] : doc.at("tar_at_far").items()) r.tar_at_far[std::stod(k)] = v.get<double>();
    for (const auto& p : doc.at("roc")) r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kMalformedFile, std::string("eval report: ") + e.what());
  }
  return r;
}

void write_roc_csv(std::ostream& out, const EvalReport& r) {
  out << "far,tar\n" << std::setprecision(17);
  for (const auto& p : r.roc) out << p.far << ',' << p.tar << '\n';
}

void write_cmc_csv(std::ostream& out, const ScoreMatrix& s) {
  std::vector<int> ks(static_cast<std::size_t>(s.distances.cols()));
  std::iota(ks.begin(), ks.end(), 1);
  out << "rank,accuracy\n" << std::setprecision(17);
  for (const auto& [k, v] : cmc(s, ks)) out << k << ',' << v << '\n';
}

}  // namespace xspec
