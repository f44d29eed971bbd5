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

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <limits>
#include <fstream>
#include <set>

#include "test_util.hpp"

namespace xspec {
namespace {

using testing::TempDir;

FeatureMap make_map(std::uint64_t id, Domain d, std::uint32_t p, std::uint32_t c, std::int64_t label = 3) {
  FeatureMap f;
  f.sample_id = id;
  f.domain = d;
  f.patches = p;
  f.channels = c;
  f.true_label = label;
  for (std::uint32_t i = 0; i < p * c; ++i) f.data.push_back(0.25f * static_cast<float>(i) - 1.0f);
  return f;
}

// Byte-level reference encoder written independently of the library.
std::string reference_bytes(const FeatureMap& f) {
  std::string out = "XSFT";
  auto put = [&](auto v) {
    unsigned char buf[sizeof(v)];
    std::memcpy(buf, &v, sizeof(v));
    // Test hosts are little-endian; guard so a big-endian host fails loudly.
    static_assert(std::endian::native == std::endian::little);
    out.append(reinterpret_cast<const char*>(buf), sizeof(v));
  };
  put(std::uint32_t{1});
  put(f.sample_id);
  put(static_cast<std::uint8_t>(f.domain));
  put(f.true_label);
  put(f.patches);
  put(f.channels);
  for (float v : f.data) put(v);
  return out;
}

TEST(XsftTest, EncodeMatchesReferenceLayout) {
  const FeatureMap f = make_map(42, Domain::kIr, 2, 3);
  const std::string bytes = encode_xsft(f);
  EXPECT_EQ(bytes.size(), kXsftHeaderBytes + 6 * 4);
  EXPECT_EQ(bytes, reference_bytes(f));
}

TEST(XsftTest, RoundTrip) {
  for (std::int64_t label : {std::int64_t{-1}, std::int64_t{0}, std::int64_t{123456789}}) {
    const FeatureMap f = make_map(7, Domain::kRgb, 4, 5, label);
    EXPECT_EQ(decode_xsft(encode_xsft(f)), f);
  }
}

TEST(XsftTest, FileRoundTrip) {
  TempDir dir;
  const FeatureMap f = make_map(9, Domain::kIr, 3, 2);
  write_xsft(f, dir / "a.xsft");
  EXPECT_EQ(read_xsft(dir / "a.xsft"), f);
}

TEST(XsftTest, TruncatedPayloadIsMalformed) {
  const std::string bytes = encode_xsft(make_map(1, Domain::kRgb, 2, 2));
  EXPECT_ERRC(decode_xsft(std::string_view(bytes).substr(0, bytes.size() - 1)), Errc::kMalformedFile);
  EXPECT_ERRC(decode_xsft(std::string_view(bytes).substr(0, 10)), Errc::kMalformedFile);
  EXPECT_ERRC(decode_xsft(bytes + "x"), Errc::kMalformedFile);
}

TEST(XsftTest, BadHeaderFieldsAreMalformed) {
  std::string bytes = encode_xsft(make_map(1, Domain::kRgb, 2, 2));
  std::string bad_magic = bytes;
  bad_magic[0] = 'Y';
  EXPECT_ERRC(decode_xsft(bad_magic), Errc::kMalformedFile);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_ERRC(decode_xsft(bad_version), Errc::kMalformedFile);
  std::string bad_domain = bytes;
  bad_domain[16] = 5;
  EXPECT_ERRC(decode_xsft(bad_domain), Errc::kMalformedFile);
}

TEST(XsftTest, NonFinitePayloadIsMalformed) {
  FeatureMap f = make_map(1, Domain::kRgb, 1, 2);
  f.data[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_ERRC(decode_xsft(encode_xsft(f)), Errc::kMalformedFile);
}

TEST(XsftTest, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_ERRC(read_xsft(dir / "nope.xsft"), Errc::kIoError);
}

Dataset small_dataset() {
  Dataset ds;
  ds.patches = 2;
  ds.channels = 3;
  ds.manifest = {"unit", 5, "v0"};
  ds.rgb = {make_map(0, Domain::kRgb, 2, 3, 0), make_map(1, Domain::kRgb, 2, 3, 1)};
  ds.ir = {make_map(2, Domain::kIr, 2, 3, 0), make_map(3, Domain::kIr, 2, 3, kUnknownLabel)};
  return ds;
}

TEST(DatasetTest, WriteLoadRoundTrip) {
  TempDir dir;
  const Dataset ds = small_dataset();
  write_dataset(ds, dir.path());
  EXPECT_EQ(load_dataset(dir.path()), ds);
  EXPECT_EQ(load_dataset(dir / kManifestName), ds);
}

TEST(DatasetTest, EmptyDomainsRoundTrip) {
  TempDir dir;
  Dataset ds;
  ds.patches = 1;
  ds.channels = 1;
  write_dataset(ds, dir.path());
  const Dataset back = load_dataset(dir.path());
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back, ds);
}

TEST(DatasetTest, MixedPatchCountIsShapeMismatch) {
  TempDir dir;
  write_dataset(small_dataset(), dir.path());
  write_xsft(make_map(1, Domain::kRgb, 3, 3, 1), dir / "rgb/1.xsft");
  EXPECT_ERRC(load_dataset(dir.path()), Errc::kShapeMismatch);
}

TEST(DatasetTest, DomainByteMustMatchManifest) {
  TempDir dir;
  write_dataset(small_dataset(), dir.path());
  write_xsft(make_map(1, Domain::kIr, 2, 3, 1), dir / "rgb/1.xsft");
  EXPECT_ERRC(load_dataset(dir.path()), Errc::kMalformedFile);
}

TEST(DatasetTest, DuplicateIdRejected) {
  Dataset ds = small_dataset();
  ds.ir[0].sample_id = 0;
  EXPECT_ERRC(ds.validate(), Errc::kDuplicateId);
}

TEST(DatasetTest, MissingManifestIsError) {
  TempDir dir;
  try {
    load_dataset(dir.path());
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == Errc::kIoError || e.code() == Errc::kMalformedFile);
  }
}

TEST(DatasetTest, CorruptManifestIsMalformed) {
  TempDir dir;
  write_dataset(small_dataset(), dir.path());
  std::ofstream(dir / kManifestName) << "{ not json";
  EXPECT_ERRC(load_dataset(dir.path()), Errc::kMalformedFile);
}

TEST(TrainingViewTest, CopiesFeaturesWithoutLabels) {
  const Dataset ds = small_dataset();
  const TrainingView view(ds);
  ASSERT_EQ(view.rgb().size(), 2u);
  ASSERT_EQ(view.ir().size(), 2u);
  EXPECT_EQ(view.patches(), 2u);
  EXPECT_EQ(view.ir()[1].sample_id, 3u);
  EXPECT_EQ(view.ir()[1].domain, Domain::kIr);
  EXPECT_EQ(view.rgb()[0].features, ds.rgb[0].grid());
}

TEST(SplitTest, IdentitiesAreDisjointAndComplete) {
  SynthConfig cfg;
  cfg.n_identities = 10;
  cfg.samples_per_id_per_domain = 2;
  const Dataset ds = synth_dataset(cfg);
  const auto [kept, held] = split_by_identity(ds, 0.3, 4);
  std::set<std::int64_t> a, b;
  for (const auto& f : kept.rgb) a.insert(f.true_label);
  for (const auto& f : held.rgb) b.insert(f.true_label);
  for (const auto& f : held.ir) EXPECT_TRUE(b.contains(f.true_label));
  EXPECT_EQ(a.size(), 7u);
  EXPECT_EQ(b.size(), 3u);
  for (auto l : b) EXPECT_FALSE(a.contains(l));
  EXPECT_EQ(kept.size() + held.size(), ds.size());
}

TEST(SplitTest, NeedsLabels) {
  EXPECT_ERRC(split_by_identity(small_dataset(), 0.5, 0), Errc::kLabelMissing);
}

TEST(SynthTest, ZeroGapZeroNoiseDomainsCoincide) {
  SynthConfig cfg;
  cfg.n_identities = 2;
  cfg.domain_gap = 0.0;
  cfg.noise_sigma = 0.0;
  const Dataset ds = synth_dataset(cfg);
  ASSERT_EQ(ds.rgb.size(), ds.ir.size());
  for (std::size_t i = 0; i < ds.rgb.size(); ++i) {
    EXPECT_EQ(ds.rgb[i].true_label, ds.ir[i].true_label);
    EXPECT_EQ(ds.rgb[i].data, ds.ir[i].data);
  }
}

TEST(SynthTest, NoiselessSamplesOfOneIdentityCoincide) {
  SynthConfig cfg;
  cfg.n_identities = 3;
  cfg.samples_per_id_per_domain = 4;
  cfg.domain_gap = 2.0;
  cfg.noise_sigma = 0.0;
  const Dataset ds = synth_dataset(cfg);
  for (Domain d : {Domain::kRgb, Domain::kIr})
    for (const auto& f : ds.domain(d))
      for (const auto& g : ds.domain(d))
        if (f.true_label == g.true_label) EXPECT_EQ(f.data, g.data);
}

TEST(SynthTest, ZeroDistancesExactlyOnSameIdentity) {
  SynthConfig cfg;
  cfg.n_identities = 5;
  cfg.samples_per_id_per_domain = 3;
  cfg.domain_gap = 0.0;
  cfg.noise_sigma = 0.0;
  const Dataset ds = synth_dataset(cfg);
  std::vector<const FeatureMap*> all;
  for (const auto& f : ds.rgb) all.push_back(&f);
  for (const auto& f : ds.ir) all.push_back(&f);
  for (const auto* a : all)
    for (const auto* b : all) {
      const double dist = (a->grid() - b->grid()).norm();
      if (a->true_label == b->true_label)
        EXPECT_EQ(dist, 0.0);
      else
        EXPECT_GT(dist, 0.0);
    }
}

TEST(SynthTest, Deterministic) {
  SynthConfig cfg;
  cfg.seed = 7;
  const Dataset a = synth_dataset(cfg);
  const Dataset b = synth_dataset(cfg);
  ASSERT_EQ(a, b);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) EXPECT_EQ(encode_xsft(a.rgb[i]), encode_xsft(b.rgb[i]));
  cfg.seed = 8;
  EXPECT_NE(synth_dataset(cfg).rgb[0].data, a.rgb[0].data);
}

TEST(SynthTest, ShapesAndIds) {
  SynthConfig cfg;
  cfg.n_identities = 10;
  cfg.samples_per_id_per_domain = 8;
  const Dataset ds = synth_dataset(cfg);
  EXPECT_EQ(ds.rgb.size(), 80u);
  EXPECT_EQ(ds.ir.size(), 80u);
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.rgb[0].data.size(), std::size_t(cfg.patches * cfg.channels));
}

TEST(SynthTest, InvalidConfig) {
  SynthConfig cfg;
  cfg.n_identities = 0;
  EXPECT_ERRC(synth_dataset(cfg), Errc::kInvalidConfig);
  cfg = {};
  cfg.noise_sigma = -1.0;
  EXPECT_ERRC(synth_dataset(cfg), Errc::kInvalidConfig);
  cfg = {};
  cfg.latent_dim = cfg.channels + 1;
  EXPECT_ERRC(synth_dataset(cfg), Errc::kInvalidConfig);
}

TEST(DomainTest, Parse) {
  EXPECT_EQ(parse_domain("RGB"), Domain::kRgb);
  EXPECT_EQ(parse_domain("ir"), Domain::kIr);
  EXPECT_ERRC(parse_domain("uv"), Errc::kInvalidConfig);
}

}  // namespace
}  // namespace xspec
