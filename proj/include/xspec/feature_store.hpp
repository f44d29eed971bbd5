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
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xspec/linalg.hpp"

namespace xspec {

enum class Domain : std::uint8_t { kRgb = 0, kIr = 1 };

std::string_view domain_name(Domain d);
// Accepts "rgb"/"ir" (case-insensitive); throws kInvalidConfig otherwise.
Domain parse_domain(std::string_view s);

inline constexpr std::int64_t kUnknownLabel = -1;

// One sample's backbone feature grid: `patches` rows of `channels` floats.
struct FeatureMap {
  std::uint64_t sample_id = 0;
  Domain domain = Domain::kRgb;
  std::uint32_t patches = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;  // row-major P x C
  std::int64_t true_label = kUnknownLabel;

  // Throws kShapeMismatch on a bad payload length, kMalformedFile on
  // non-finite values.
  void validate() const;
  Matrix grid() const;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct Manifest {
  std::string source = "unknown";
  std::uint64_t seed = 0;
  std::string extractor_version = "none";

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct Dataset {
  std::vector<FeatureMap> rgb;
  std::vector<FeatureMap> ir;
  std::uint32_t patches = 0;
  std::uint32_t channels = 0;
  Manifest manifest;

  const std::vector<FeatureMap>& domain(Domain d) const { return d == Domain::kRgb ? rgb : ir; }
  std::size_t size() const { return rgb.size() + ir.size(); }

  // Every map must share (patches, channels), carry the right domain tag,
  // and have a unique sample_id.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// --- XSFT single-sample file -------------------------------------------------
//
// Little-endian layout:
//   magic "XSFT" (4) | version u32 = 1 | sample_id u64 | domain u8 |
//   true_label i64 | patches u32 | channels u32 | payload P*C f32 row-major
inline constexpr std::uint32_t kXsftVersion = 1;
inline constexpr std::size_t kXsftHeaderBytes = 4 + 4 + 8 + 1 + 8 + 4 + 4;

std::string encode_xsft(const FeatureMap& f);
FeatureMap decode_xsft(std::string_view bytes);
void write_xsft(const FeatureMap& f, const std::filesystem::path& path);
FeatureMap read_xsft(const std::filesystem::path& path);

// `path` is either a manifest file or a directory holding manifest.json.
Dataset load_dataset(const std::filesystem::path& path);
// Writes <dir>/manifest.json plus <dir>/{rgb,ir}/<sample_id>.xsft.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.json";

// --- label-free training view ------------------------------------------------

struct Sample {
  std::uint64_t sample_id = 0;
  Domain domain = Domain::kRgb;
  Matrix features;  // P x C
};

// The only dataset type the trainer accepts. It carries no label
// information, so training code cannot read ground truth.
class TrainingView {
 public:
  explicit TrainingView(const Dataset& ds);

  const std::vector<Sample>& rgb() const { return rgb_; }
  const std::vector<Sample>& ir() const { return ir_; }
  const std::vector<Sample>& domain(Domain d) const { return d == Domain::kRgb ? rgb_ : ir_; }
  std::uint32_t patches() const { return patches_; }
  std::uint32_t channels() const { return channels_; }

 private:
  std::vector<Sample> rgb_;
  std::vector<Sample> ir_;
  std::uint32_t patches_ = 0;
  std::uint32_t channels_ = 0;
};

// Evaluation-only access to ground truth.
std::vector<std::int64_t> ground_truth_labels(const Dataset& ds, Domain d);

// Splits identities (not samples) into (kept, held_out); `held_out_fraction`
// of the distinct labels go to the second set. Needs labels on every sample.
std::pair<Dataset, Dataset> split_by_identity(const Dataset& ds, double held_out_fraction,
                                              std::uint64_t seed);

// --- synthetic two-domain generator -------------------------------------------

struct SynthConfig {
  int n_identities = 10;
  int samples_per_id_per_domain = 8;
  int latent_dim = 8;
  int patches = 4;
  int channels = 16;
  double domain_gap = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // throws kInvalidConfig
};

// Shared-latent model. Identity k has z_k ~ N(0, I); an RGB sample is
// B_rgb z_k + noise and an IR sample is B_ir z_k + noise, reshaped to P x C.
// B_ir = B_rgb + gap * D, where D pushes each patch along one fixed
// channel direction by a patch-specific linear function of z.
Dataset synth_dataset(const SynthConfig& cfg);

}  // namespace xspec
