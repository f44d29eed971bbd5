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

#include "xspec/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <system_error>

#include "json.hpp"
#include "xspec/error.hpp"
#include "xspec/parallel.hpp"

namespace xspec {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view domain_name(Domain d) { return d == Domain::kRgb ? "rgb" : "ir"; }

Domain parse_domain(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "rgb" || lower == "vis") return Domain::kRgb;
  if (lower == "ir") return Domain::kIr;
  throw Error(Errc::kInvalidConfig, "unknown domain '" + std::string(s) + "'");
}

void FeatureMap::validate() const {
  if (patches == 0 || channels == 0)
    throw Error(Errc::kShapeMismatch, "sample " + std::to_string(sample_id) + " has an empty grid");
  if (data.size() != std::size_t{patches} * channels)
    throw Error(Errc::kShapeMismatch, "sample " + std::to_string(sample_id) + ": payload length " +
                                          std::to_string(data.size()) + " != P*C");
  if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); }))
    throw Error(Errc::kMalformedFile, "sample " + std::to_string(sample_id) + " has non-finite values");
}

Matrix FeatureMap::grid() const {
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             data.data(), patches, channels)
      .cast<double>();
}

void Dataset::validate() const {
  std::set<std::uint64_t> ids;
  auto check = [&](const std::vector<FeatureMap>& maps, Domain d) {
    for (const auto& f : maps) {
      if (f.domain != d)
        throw Error(Errc::kDomainMismatch, "sample " + std::to_string(f.sample_id) + " listed under " +
                                               std::string(domain_name(d)));
      if (f.patches != patches || f.channels != channels)
        throw Error(Errc::kShapeMismatch,
                    "sample " + std::to_string(f.sample_id) + " is " + std::to_string(f.patches) + "x" +
                        std::to_string(f.channels) + ", dataset is " + std::to_string(patches) + "x" +
                        std::to_string(channels));
      f.validate();
      if (!ids.insert(f.sample_id).second)
        throw Error(Errc::kDuplicateId, "sample_id " + std::to_string(f.sample_id));
    }
  };
  check(rgb, Domain::kRgb);
  check(ir, Domain::kIr);
}

// --- XSFT --------------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(u);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIoError, "short write to " + path.string());
}

}  // namespace

std::string encode_xsft(const FeatureMap& f) {
  f.validate();
  std::string out;
  out.reserve(kXsftHeaderBytes + f.data.size() * 4);
  out.append("XSFT", 4);
  put_le<std::uint32_t>(out, kXsftVersion);
  put_le<std::uint64_t>(out, f.sample_id);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(f.domain));
  put_le<std::int64_t>(out, f.true_label);
  put_le<std::uint32_t>(out, f.patches);
  put_le<std::uint32_t>(out, f.channels);
  for (float v : f.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureMap decode_xsft(std::string_view bytes) {
  if (bytes.size() < kXsftHeaderBytes) throw Error(Errc::kMalformedFile, "truncated XSFT header");
  if (bytes.substr(0, 4) != "XSFT") throw Error(Errc::kMalformedFile, "bad XSFT magic");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kXsftVersion)
    throw Error(Errc::kMalformedFile, "unsupported XSFT version " + std::to_string(version));
  FeatureMap f;
  f.sample_id = get_le<std::uint64_t>(bytes, pos);
  const auto domain = get_le<std::uint8_t>(bytes, pos);
  if (domain > 1) throw Error(Errc::kMalformedFile, "bad domain byte " + std::to_string(domain));
  f.domain = static_cast<Domain>(domain);
  f.true_label = get_le<std::int64_t>(bytes, pos);
  f.patches = get_le<std::uint32_t>(bytes, pos);
  f.channels = get_le<std::uint32_t>(bytes, pos);
  const std::uint64_t count = std::uint64_t{f.patches} * f.channels;
  if (bytes.size() - pos != count * 4)
    throw Error(Errc::kMalformedFile, "payload is " + std::to_string(bytes.size() - pos) +
                                          " bytes, expected " + std::to_string(count * 4));
  f.data.resize(count);
  for (auto& v : f.data) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
  try {
    f.validate();
  } catch (const Error& e) {
    throw Error(Errc::kMalformedFile, e.what());
  }
  return f;
}

void write_xsft(const FeatureMap& f, const fs::path& path) { write_file(path, encode_xsft(f)); }

FeatureMap read_xsft(const fs::path& path) {
  try {
    return decode_xsft(read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::kIoError) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// --- manifest + dataset ------------------------------------------------------

Dataset load_dataset(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / kManifestName : path;
  json doc;
  try {
    doc = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(Errc::kMalformedFile, manifest_path.string() + ": " + e.what());
  }

  struct Entry {
    fs::path path;
    Domain domain;
  };
  std::vector<Entry> entries;
  Dataset ds;
  try {
    ds.manifest.source = doc.value("source", std::string("unknown"));
    ds.manifest.seed = doc.value("seed", std::uint64_t{0});
    ds.manifest.extractor_version = doc.value("extractor_version", std::string("none"));
    ds.patches = doc.value("patches", 0u);
    ds.channels = doc.value("channels", 0u);
    for (const auto& item : doc.at("files"))
      entries.push_back({manifest_path.parent_path() / item.at("path").get<std::string>(),
                         parse_domain(item.at("domain").get<std::string>())});
  } catch (const json::exception& e) {
    throw Error(Errc::kMalformedFile, manifest_path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(Errc::kMalformedFile, manifest_path.string() + ": " + e.what());
  }

  std::vector<FeatureMap> maps(entries.size());
  std::vector<std::exception_ptr> failures(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    try {
      maps[i] = read_xsft(entries[i].path);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  });
  for (const auto& failure : failures)
    if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].domain != entries[i].domain)
      throw Error(Errc::kMalformedFile, entries[i].path.string() + ": domain byte disagrees with manifest");
    if (ds.patches == 0 && ds.channels == 0) {
      ds.patches = maps[i].patches;
      ds.channels = maps[i].channels;
    }
    (maps[i].domain == Domain::kRgb ? ds.rgb : ds.ir).push_back(std::move(maps[i]));
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir / "rgb", ec);
  fs::create_directories(dir / "ir", ec);
  if (ec) throw Error(Errc::kIoError, "cannot create " + dir.string() + ": " + ec.message());

  json files = json::array();
  for (Domain d : {Domain::kRgb, Domain::kIr}) {
    for (const auto& f : ds.domain(d)) {
      std::ostringstream name;
      name << domain_name(d) << '/' << f.sample_id << ".xsft";
      write_xsft(f, dir / name.str());
      files.push_back({{"path", name.str()}, {"domain", domain_name(d)}});
    }
  }
  json doc = {{"format", "xsft-manifest"},
              {"version", kXsftVersion},
              {"source", ds.manifest.source},
              {"seed", ds.manifest.seed},
              {"extractor_version", ds.manifest.extractor_version},
              {"patches", ds.patches},
              {"channels", ds.channels},
              {"files", files}};
  write_file(dir / kManifestName, doc.dump(2) + "\n");
}

// --- views -------------------------------------------------------------------

TrainingView::TrainingView(const Dataset& ds) : patches_(ds.patches), channels_(ds.channels) {
  ds.validate();
  for (const auto& f : ds.rgb) rgb_.push_back({f.sample_id, f.domain, f.grid()});
  for (const auto& f : ds.ir) ir_.push_back({f.sample_id, f.domain, f.grid()});
}

std::vector<std::int64_t> ground_truth_labels(const Dataset& ds, Domain d) {
  std::vector<std::int64_t> labels;
  for (const auto& f : ds.domain(d)) labels.push_back(f.true_label);
  return labels;
}

std::pair<Dataset, Dataset> split_by_identity(const Dataset& ds, double held_out_fraction,
                                              std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0))
    throw Error(Errc::kInvalidConfig, "held_out_fraction must be in [0, 1)");
  std::set<std::int64_t> labels;
  for (Domain d : {Domain::kRgb, Domain::kIr})
    for (const auto& f : ds.domain(d)) {
      if (f.true_label == kUnknownLabel)
        throw Error(Errc::kLabelMissing, "identity split needs labels (sample " +
                                             std::to_string(f.sample_id) + ")");
      labels.insert(f.true_label);
    }
  std::vector<std::int64_t> order(labels.begin(), labels.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::llround(held_out_fraction * order.size()));
  const std::set<std::int64_t> held(order.begin(), order.begin() + n_held);

  std::pair<Dataset, Dataset> out;
  for (Dataset* part : {&out.first, &out.second}) {
    part->patches = ds.patches;
    part->channels = ds.channels;
    part->manifest = ds.manifest;
  }
  for (const auto& f : ds.rgb) (held.contains(f.true_label) ? out.second : out.first).rgb.push_back(f);
  for (const auto& f : ds.ir) (held.contains(f.true_label) ? out.second : out.first).ir.push_back(f);
  return out;
}

// --- synthetic generator -----------------------------------------------------

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::kInvalidConfig, what); };
  if (n_identities < 1) fail("n_identities must be >= 1");
  if (samples_per_id_per_domain < 1) fail("samples_per_id_per_domain must be >= 1");
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (patches < 1) fail("patches must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (latent_dim > channels) fail("latent_dim must not exceed channels");
  if (!(domain_gap >= 0.0) || !std::isfinite(domain_gap)) fail("domain_gap must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
}

Dataset synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const int rows = cfg.patches * cfg.channels;
  const int latent = cfg.latent_dim;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] { return normal(rng); };

  // Draw order is fixed: maps, distortion, latents, then per-sample noise.
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(latent));
  Matrix b_rgb(rows, latent);
  for (Eigen::Index i = 0; i < b_rgb.size(); ++i) b_rgb.data()[i] = map_scale * draw();

  Vector direction(cfg.channels);
  for (auto& v : direction) v = draw();
  direction.normalize();
  Matrix patch_gain(cfg.patches, latent);
  for (Eigen::Index i = 0; i < patch_gain.size(); ++i) patch_gain.data()[i] = map_scale * draw();
  Matrix distortion(rows, latent);
  for (int p = 0; p < cfg.patches; ++p)
    distortion.middleRows(p * cfg.channels, cfg.channels) = direction * patch_gain.row(p);
  const Matrix b_ir = b_rgb + cfg.domain_gap * distortion;

  Matrix latents(cfg.n_identities, latent);
  for (Eigen::Index i = 0; i < latents.size(); ++i) latents.data()[i] = draw();

  Dataset ds;
  ds.patches = static_cast<std::uint32_t>(cfg.patches);
  ds.channels = static_cast<std::uint32_t>(cfg.channels);
  ds.manifest = {"synth", cfg.seed, "none"};
  const std::uint64_t per_domain = std::uint64_t(cfg.n_identities) * cfg.samples_per_id_per_domain;
  for (Domain d : {Domain::kRgb, Domain::kIr}) {
    const Matrix& basis = d == Domain::kRgb ? b_rgb : b_ir;
    auto& out = d == Domain::kRgb ? ds.rgb : ds.ir;
    for (int k = 0; k < cfg.n_identities; ++k) {
      const Vector clean = basis * latents.row(k).transpose();
      for (int s = 0; s < cfg.samples_per_id_per_domain; ++s) {
        FeatureMap f;
        f.sample_id = (d == Domain::kRgb ? 0 : per_domain) + std::uint64_t(k) * cfg.samples_per_id_per_domain + s;
        f.domain = d;
        f.patches = ds.patches;
        f.channels = ds.channels;
        f.true_label = k;
        f.data.resize(rows);
        for (int i = 0; i < rows; ++i) {
          const double eps = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * draw() : 0.0;
          f.data[i] = static_cast<float>(clean[i] + eps);
        }
        out.push_back(std::move(f));
      }
    }
  }
  return ds;
}

}  // namespace xspec
