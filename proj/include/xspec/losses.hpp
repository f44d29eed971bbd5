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

#include "xspec/csan.hpp"
#include "xspec/linalg.hpp"

namespace xspec {

struct LossConfig {
  double margin = 0.3;   // triplet margin beta
  double lambda = 1e-3;  // sparsity weight

  void validate() const;  // throws kInvalidConfig
};

struct PtlResult {
  double loss = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
  Vector grad_anchor;
  Vector grad_positive;
  Vector grad_negative;
};

// max(d(a, p) - d(a, n) + margin, 0) with Euclidean d. Gradients vanish when
// the hinge is inactive; a zero-length difference contributes no gradient.
PtlResult ptl(const Vector& anchor, const Vector& positive, const Vector& negative, double margin);

struct PcsResult {
  double loss = 0.0;
  Matrix grad;  // sign(F), with sign(0) = 0
};

// Sum of |F| over every patch and channel.
PcsResult pcs(const Matrix& f_out);

struct TripletActivation {
  PairActivation pair;         // anchor (side A) with positive (side B)
  NegativeActivation negative;  // negative through the pair's attention
};

TripletActivation forward_triplet(const Matrix& anchor, const Matrix& positive, const Matrix& negative,
                                  const CsanParams& params);

struct TotalLoss {
  double loss = 0.0;
  double ptl = 0.0;
  double pcs_mean = 0.0;
  Matrix grad_out_a;
  Matrix grad_out_b;
  Matrix grad_out_n;
};

// ptl on the three flattened maps + lambda * mean(pcs) over the three maps.
TotalLoss total_loss(const TripletActivation& t, const LossConfig& cfg);

struct TripletGradient {
  TotalLoss loss;
  CsanParams grads;
};

// forward_triplet + total_loss + backward_triplet.
TripletGradient triplet_loss_and_grad(const Matrix& anchor, const Matrix& positive, const Matrix& negative,
                                      const CsanParams& params, const LossConfig& cfg);

}  // namespace xspec
