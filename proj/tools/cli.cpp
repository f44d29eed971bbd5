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

#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xspec/clustering.hpp"
#include "xspec/error.hpp"
#include "xspec/evaluation.hpp"
#include "xspec/feature_store.hpp"
#include "xspec/parallel.hpp"
#include "xspec/trainer.hpp"

namespace xspec::cli {
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot create " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

// The fully-resolved option set (defaults included) of one subcommand.
void write_resolved_config(const CLI::App& sub, const fs::path& dir) {
  write_text(dir / "config.ini", sub.config_to_str(true, false));
}

void add_cluster_options(CLI::App* sub, ClusterParams& p) {
  sub->add_option("--target-clusters", p.target_clusters, "Clusters per domain after merging")->capture_default_str();
  sub->add_option("--merge-fraction", p.merge_fraction, "Fraction of clusters merged per round")->capture_default_str();
  sub->add_option("--silhouette-threshold", p.silhouette_threshold, "Samples at or below are dropped")
      ->capture_default_str();
  sub->add_option("--min-cluster-size", p.min_cluster_size)->capture_default_str();
  sub->add_option("--max-cluster-factor", p.max_cluster_size_factor, "Upper size bound as a multiple of n/K")
      ->capture_default_str();
  sub->add_option("--mb-temperature", p.mb_temperature)->capture_default_str();
  sub->add_option("--mb-steps", p.mb_steps, "Memory-bank warm-up steps")->capture_default_str();
}

struct TrainOptions {
  std::string data;
  std::string out;
  ClusterParams cluster;
  LossConfig loss;
  TrainConfig train;
  std::string attention = "log_softmax";
  std::string vote_space = "pair";
};

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string mode = "ir2vis";
  std::string out;
};

struct AuditOptions {
  int instances = 100;
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tolerance = 1e-4;
  bool corrupt = false;
  std::string out;
};

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_synth(const CLI::App& sub, const SynthConfig& cfg, const std::string& out) {
  const Dataset ds = synth_dataset(cfg);
  write_dataset(ds, out);
  write_resolved_config(sub, out);
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  return kOk;
}

nlohmann::ordered_json cluster_summary(const ClusterState& state, const std::vector<std::int64_t>& labels) {
  nlohmann::ordered_json s;
  int filtered = 0;
  for (int a : state.assignment) filtered += a == kNoCluster;
  int eligible = 0;
  for (int c = 0; c < state.cluster_count(); ++c) eligible += state.is_eligible(c);
  s["samples"] = state.partition.size();
  s["clusters"] = state.cluster_count();
  s["filtered"] = filtered;
  s["eligible_clusters"] = eligible;
  const bool has_labels =
      !labels.empty() && std::none_of(labels.begin(), labels.end(), [](std::int64_t l) { return l == kUnknownLabel; });
  if (has_labels) {
    std::vector<std::int64_t> partition(state.partition.begin(), state.partition.end());
    s["ari"] = adjusted_rand_index(partition, labels);
  }
  return s;
}

int cmd_cluster(const CLI::App& sub, const std::string& data, const std::string& out, const ClusterParams& params) {
  Dataset ds;
  try {
    ds = load_dataset(data);
    if (ds.rgb.empty() && ds.ir.empty()) throw Error(Errc::kEmptyInput, "dataset is empty");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDatasetError;
  }
  params.validate();
  ensure_dir(out);
  const TrainingView view(ds);
  nlohmann::ordered_json summary;
  for (Domain d : {Domain::kRgb, Domain::kIr}) {
    if (view.domain(d).empty()) continue;
    const Matrix desc = descriptor_matrix(view.domain(d), nullptr);
    const ClusterState state = filter_clusters(agglomerate(desc, params, d), desc, params);
    std::vector<std::uint64_t> ids;
    for (const auto& f : ds.domain(d)) ids.push_back(f.sample_id);
    std::ofstream csv(fs::path(out) / (std::string(domain_name(d)) + "_clusters.csv"));
    write_cluster_csv(csv, state, ids);
    summary[std::string(domain_name(d))] = cluster_summary(state, ground_truth_labels(ds, d));
  }
  write_text(fs::path(out) / "summary.json", summary.dump(2) + "\n");
  write_resolved_config(sub, out);
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_train(const CLI::App& sub, TrainOptions opt) {
  opt.train.attention_output = parse_attention_output(opt.attention);
  opt.train.vote_space = parse_vote_space(opt.vote_space);
  opt.train.validate();
  opt.loss.validate();
  opt.cluster.validate();

  Dataset ds;
  try {
    ds = load_dataset(opt.data);
    if (ds.rgb.empty() || ds.ir.empty()) throw Error(Errc::kEmptyInput, "training needs both domains");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDatasetError;
  }

  const bool labeled = std::none_of(ds.rgb.begin(), ds.rgb.end(), [](const FeatureMap& f) { return f.true_label == kUnknownLabel; }) &&
                       std::none_of(ds.ir.begin(), ds.ir.end(), [](const FeatureMap& f) { return f.true_label == kUnknownLabel; });
  Dataset train_part = ds;
  Dataset validation;
  if (labeled && opt.train.val_fraction > 0.0)
    std::tie(train_part, validation) = split_by_identity(ds, opt.train.val_fraction, opt.train.seed);

  EvalSideChannel side;
  if (labeled) {
    side.rgb_labels = ground_truth_labels(train_part, Domain::kRgb);
    side.ir_labels = ground_truth_labels(train_part, Domain::kIr);
    if (!validation.rgb.empty() && !validation.ir.empty()) side.validation = &validation;
  }

  const TrainingView view(train_part);
  const TrainResult result = train(view, opt.cluster, opt.loss, opt.train, labeled ? &side : nullptr);

  const fs::path out(opt.out);
  ensure_dir(out / "associations");
  save_checkpoint(result.params, opt.train.seed, out / "csan.ckpt");
  write_text(out / "train_log.jsonl", train_log_jsonl(result.log));
  for (std::size_t e = 0; e < result.log.associations.size(); ++e) {
    std::ostringstream name;
    name << "epoch_" << std::setw(2) << std::setfill('0') << (e + 1) << ".csv";
    std::ofstream csv(out / "associations" / name.str());
    write_association_csv(csv, result.log.associations[e], result.log.association_correct[e]);
  }
  write_resolved_config(sub, out);
  for (const auto& rec : result.log.epochs)
    std::cout << "epoch " << rec.epoch << " loss " << rec.loss << " associations " << rec.n_associations
              << " triplets " << rec.n_triplets << "\n";
  return result.log.no_associations ? kNoAssociations : kOk;
}

int cmd_eval(const CLI::App& sub, const EvalOptions& opt) {
  const EvalMode mode = parse_eval_mode(opt.mode);
  EvalReport report;
  ScoreMatrix scores;
  try {
    const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
    const Dataset ds = load_dataset(opt.data);
    const auto [probes, gallery] = probe_gallery(ds, mode);
    scores = score_all(probes, gallery, ckpt.params);
    report = evaluate(scores);
    report.mode = std::string(eval_mode_name(mode));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEvalError;
  }
  const fs::path out(opt.out);
  ensure_dir(out);
  write_text(out / "report.json", report_to_json(report));
  {
    std::ofstream roc(out / "roc.csv");
    write_roc_csv(roc, report);
    std::ofstream cmc_csv(out / "cmc.csv");
    write_cmc_csv(cmc_csv, scores);
  }
  write_resolved_config(sub, out);
  std::cout << "rank-1 " << report.cmc.at(1) << " mAP " << report.map_score << " AUC " << report.auc << " EER "
            << report.eer << "\n";
  return kOk;
}

int cmd_audit(const AuditOptions& opt) {
  GradientFn gradient = triplet_loss_and_grad;
  if (opt.corrupt) {
    // Test fixture: inflate one gradient block by 10%.
    gradient = [](const Matrix& a, const Matrix& p, const Matrix& n, const CsanParams& params,
                  const LossConfig& cfg) {
      TripletGradient g = triplet_loss_and_grad(a, p, n, params, cfg);
      g.grads.common.weight *= 1.1;
      return g;
    };
  }
  const AuditReport r = audit_random_instances(opt.instances, opt.seed, opt.eps, gradient);
  nlohmann::ordered_json doc;
  doc["instances"] = opt.instances;
  doc["trials"] = r.trials;
  doc["coordinates_checked"] = r.coordinates_checked;
  doc["max_rel_error"] = r.max_rel_error;
  doc["worst_coordinate"] = r.worst_coordinate;
  doc["tolerance"] = opt.tolerance;
  doc["passed"] = r.max_rel_error < opt.tolerance;
  if (!opt.out.empty()) write_text(opt.out, doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return r.max_rel_error < opt.tolerance ? kOk : kFailure;
}

int cmd_report(const ReportOptions& opt) {
  std::ostringstream csv;
  csv << "file,mode,n_probe,n_gallery,rank1,rank5,rank10,rank20,map,auc,eer,tar_far_0.01,tar_far_0.05\n";
  csv << std::setprecision(9);
  for (const auto& input : opt.inputs) {
    const EvalReport r = report_from_json(read_text(input));
    auto rank = [&](int k) { return r.cmc.contains(k) ? r.cmc.at(k) : 0.0; };
    auto tar = [&](double far) {
      for (const auto& [f, v] : r.tar_at_far)
        if (std::abs(f - far) < 1e-12) return v;
      return 0.0;
    };
    csv << input << ',' << r.mode << ',' << r.n_probe << ',' << r.n_gallery << ',' << rank(1) << ',' << rank(5)
        << ',' << rank(10) << ',' << rank(20) << ',' << r.map_score << ',' << r.auc << ',' << r.eer << ','
        << tar(0.01) << ',' << tar(0.05) << '\n';
  }
  if (opt.out.empty())
    std::cout << csv.str();
  else
    write_text(opt.out, csv.str());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Unsupervised cross-spectral representation learning over backbone feature maps"};
  app.name("xspec");
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (falls back to XSPEC_THREADS)");

  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-domain dataset");
  synth->set_config("--config");
  synth->add_option("--ids", synth_cfg.n_identities, "Number of identities")->capture_default_str();
  synth->add_option("--per-id", synth_cfg.samples_per_id_per_domain, "Samples per identity per domain")
      ->capture_default_str();
  synth->add_option("--latent-dim", synth_cfg.latent_dim)->capture_default_str();
  synth->add_option("--patches", synth_cfg.patches)->capture_default_str();
  synth->add_option("--channels", synth_cfg.channels)->capture_default_str();
  synth->add_option("--gap", synth_cfg.domain_gap, "Magnitude of the IR distortion")->capture_default_str();
  synth->add_option("--noise", synth_cfg.noise_sigma, "Per-element noise sigma")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();

  std::string cluster_data, cluster_out;
  ClusterParams cluster_params;
  cluster_params.target_clusters = 10;
  auto* cluster = app.add_subcommand("cluster", "Intra-domain clustering and silhouette filtering");
  cluster->set_config("--config");
  cluster->add_option("--data", cluster_data, "Manifest file or dataset directory")->required();
  cluster->add_option("-o,--out", cluster_out, "Output directory")->required();
  add_cluster_options(cluster, cluster_params);

  TrainOptions topt;
  topt.cluster.target_clusters = 10;
  auto* trn = app.add_subcommand("train", "Train the attention network");
  trn->set_config("--config");
  trn->add_option("--data", topt.data, "Manifest file or dataset directory")->required();
  trn->add_option("-o,--out", topt.out, "Output directory")->required();
  add_cluster_options(trn, topt.cluster);
  trn->add_option("--margin", topt.loss.margin, "Triplet margin")->capture_default_str();
  trn->add_option("--lambda", topt.loss.lambda, "Sparsity weight")->capture_default_str();
  trn->add_option("--epochs", topt.train.epochs)->capture_default_str();
  trn->add_option("--batch-size", topt.train.batch_size)->capture_default_str();
  trn->add_option("--lr", topt.train.learning_rate)->capture_default_str();
  trn->add_option("--rmsprop-decay", topt.train.rmsprop_decay)->capture_default_str();
  trn->add_option("--rmsprop-eps", topt.train.rmsprop_eps)->capture_default_str();
  trn->add_option("--seed", topt.train.seed)->capture_default_str();
  trn->add_flag("--early-stop", topt.train.early_stop, "Stop when validation rank-1 drops (needs labels)");
  trn->add_option("--val-fraction", topt.train.val_fraction, "Identities held out for validation")
      ->capture_default_str();
  trn->add_option("--per-assoc", topt.train.per_assoc, "Triplets per association")->capture_default_str();
  trn->add_option("--recluster-every", topt.train.recluster_every, "Re-cluster every N epochs (0 = never)")
      ->capture_default_str();
  trn->add_option("--c-out", topt.train.c_out, "Projection output channels")->capture_default_str();
  trn->add_option("--attention", topt.attention, "log_softmax or softmax")->capture_default_str();
  trn->add_option("--vote-space", topt.vote_space, "pair or self")->capture_default_str();

  EvalOptions eopt;
  auto* evl = app.add_subcommand("eval", "Score a dataset and compute retrieval/verification metrics");
  evl->set_config("--config");
  evl->add_option("--checkpoint", eopt.checkpoint)->required();
  evl->add_option("--data", eopt.data, "Manifest file or dataset directory")->required();
  evl->add_option("--mode", eopt.mode, "ir2vis or vis2ir")->capture_default_str();
  evl->add_option("-o,--out", eopt.out, "Output directory")->required();

  AuditOptions aopt;
  auto* aud = app.add_subcommand("audit", "Finite-difference check of the analytic gradients");
  aud->add_option("--instances", aopt.instances)->capture_default_str();
  aud->add_option("--seed", aopt.seed)->capture_default_str();
  aud->add_option("--eps", aopt.eps)->capture_default_str();
  aud->add_option("--tolerance", aopt.tolerance)->capture_default_str();
  aud->add_flag("--corrupt-gradient", aopt.corrupt, "Deliberately wrong gradient (detector self-test)");
  aud->add_option("-o,--out", aopt.out, "Optional JSON report path");

  ReportOptions ropt;
  auto* rep = app.add_subcommand("report", "Merge eval report JSONs into one CSV table");
  rep->add_option("inputs", ropt.inputs, "report.json files")->required();
  rep->add_option("-o,--out", ropt.out, "CSV path (stdout if omitted)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (threads == 0)
    if (const char* env = std::getenv("XSPEC_THREADS")) threads = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  set_max_threads(threads == 0 ? 1 : threads);

  try {
    if (*synth) return cmd_synth(*synth, synth_cfg, synth_out);
    if (*cluster) return cmd_cluster(*cluster, cluster_data, cluster_out, cluster_params);
    if (*trn) return cmd_train(*trn, topt);
    if (*evl) return cmd_eval(*evl, eopt);
    if (*aud) return cmd_audit(aopt);
    if (*rep) return cmd_report(ropt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case Errc::kInvalidConfig:
      case Errc::kInvalidParams: return kConfigError;
      case Errc::kMalformedFile:
      case Errc::kShapeMismatch:
      case Errc::kDuplicateId:
      case Errc::kEmptyInput: return kDatasetError;
      default: return kFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace xspec::cli
