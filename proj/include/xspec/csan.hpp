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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "xspec/feature_store.hpp"
#include "xspec/linalg.hpp"

namespace xspec {

enum class Branch { kRgb, kIr, kCommon };

// What the attended product multiplies with the common projection. The
// default keeps the log-probabilities, so every attention entry is <= 0.
enum class AttentionOutput { kLogSoftmax, kSoftmax };

std::string_view attention_output_name(AttentionOutput a);
AttentionOutput parse_attention_output(std::string_view s);

// A 1x1 convolution: the same affine map applied to every patch.
struct Projection {
  Matrix weight;  // c_in x c_out
  Vector bias;    // c_out

  friend bool operator==(const Projection&, const Projection&) = default;
};

// The three projections of the cross-spectral attention network. The same
// type carries parameter gradients.
struct CsanParams {
  int c_in = 0;
  int c_out = 0;
  Projection rgb;
  Projection ir;
  Projection common;
  AttentionOutput attention_output = AttentionOutput::kLogSoftmax;

  static CsanParams zeros(int c_in, int c_out);
  // Every weight and bias uniform in [-1/sqrt(c_in), +1/sqrt(c_in)].
  static CsanParams init_uniform(int c_in, int c_out, std::uint64_t seed);

  double alpha() const;
  std::size_t trainable_count() const;

  Projection& branch(Branch b);
  const Projection& branch(Branch b) const;

  // Visits the six parameter blocks in checkpoint order:
  // w_rgb, b_rgb, w_ir, b_ir, w_common, b_common.
  template <typename Fn>
  void visit_blocks(Fn&& fn) {
    for (Projection* p : {&rgb, &ir, &common}) {
      fn(block_name(p, true), p->weight.data(), static_cast<std::size_t>(p->weight.size()));
      fn(block_name(p, false), p->bias.data(), static_cast<std::size_t>(p->bias.size()));
    }
  }
  template <typename Fn>
  void visit_blocks(Fn&& fn) const {
    for (const Projection* p : {&rgb, &ir, &common}) {
      fn(block_name(p, true), p->weight.data(), static_cast<std::size_t>(p->weight.size()));
      fn(block_name(p, false), p->bias.data(), static_cast<std::size_t>(p->bias.size()));
    }
  }

  CsanParams& operator+=(const CsanParams& other);
  CsanParams& operator*=(double s);

  friend bool operator==(const CsanParams&, const CsanParams&) = default;

 private:
  std::string_view block_name(const Projection* p, bool weight) const;
};

// 3 * (c_in * c_out + c_out).
std::size_t param_count(std::size_t c_in, std::size_t c_out);
// Length of a flattened attended feature map.
inline std::size_t descriptor_dim(std::size_t patches, std::size_t c_out) { return patches * c_out; }

// tanh(F W + b) per patch. Throws kShapeMismatch if F has the wrong width.
Matrix project(const Matrix& features, Branch which, const CsanParams& params);

// Row-wise log-softmax (or softmax) of alpha * f_rgb * f_ir^T; rows index
// RGB patches and each row is a distribution over IR patches.
Matrix cross_attention(const Matrix& f_rgb, const Matrix& f_ir, double alpha,
                       AttentionOutput output = AttentionOutput::kLogSoftmax);

struct PairActivation {
  Matrix x_a;  // RGB input, P x c_in
  Matrix x_b;  // IR input
  Matrix f_rgb;
  Matrix f_ir;
  Matrix f_common_a;
  Matrix f_common_b;
  Matrix probs;      // row softmax, kept for the backward pass
  Matrix attention;  // what multiplies the common maps
  Matrix f_out_a;
  Matrix f_out_b;
};

// A third sample pushed through an existing pair's attention.
struct NegativeActivation {
  Matrix x_n;
  Matrix f_common_n;
  Matrix f_out_n;
};

PairActivation forward_pair(const Matrix& x_rgb, const Matrix& x_ir, const CsanParams& params);
// Domain-checked overloads; throw kDomainMismatch unless (RGB, IR).
PairActivation forward_pair(const FeatureMap& x_rgb, const FeatureMap& x_ir, const CsanParams& params);
PairActivation forward_pair(const Sample& x_rgb, const Sample& x_ir, const CsanParams& params);

NegativeActivation forward_negative(const PairActivation& pa, const Matrix& x_n,
                                    const CsanParams& params);

enum class Side { kA, kB };
Vector descriptor(const PairActivation& pa, Side side);

// Single-image descriptor: the sample's own spectral projection serves as
// both query and key, then attends its common projection.
Vector self_descriptor(const Matrix& x, Domain domain, const CsanParams& params);

// Gradients of a scalar loss given its gradients w.r.t. f_out_a / f_out_b.
// An RGB input only reaches w_rgb and w_common, an IR input only w_ir and
// w_common.
CsanParams backward_pair(const PairActivation& pa, const Matrix& grad_out_a, const Matrix& grad_out_b,
                         const CsanParams& params);
CsanParams backward_triplet(const PairActivation& pa, const NegativeActivation& neg,
                            const Matrix& grad_out_a, const Matrix& grad_out_b,
                            const Matrix& grad_out_n, const CsanParams& params);

// --- checkpoint --------------------------------------------------------------
//
// One line of compact JSON ({format, version, c_in, c_out, rng_seed,
// attention}) terminated by '\n', then the six blocks as little-endian f32.
struct Checkpoint {
  CsanParams params;
  std::uint64_t rng_seed = 0;
};

inline constexpr int kCheckpointVersion = 1;

std::string encode_checkpoint(const CsanParams& params, std::uint64_t rng_seed);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const CsanParams& params, std::uint64_t rng_seed, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xspec
