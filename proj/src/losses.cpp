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

#include "xspec/losses.hpp"

#include <cmath>

#include "xspec/error.hpp"

namespace xspec {

void LossConfig::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw Error(Errc::kInvalidConfig, "margin must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(Errc::kInvalidConfig, "lambda must be >= 0");
}

PtlResult ptl(const Vector& anchor, const Vector& positive, const Vector& negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw Error(Errc::kDimMismatch, "ptl operands have dims " + std::to_string(anchor.size()) + ", " +
                                        std::to_string(positive.size()) + ", " + std::to_string(negative.size()));
  PtlResult r;
  const Vector diff_pos = anchor - positive;
  const Vector diff_neg = anchor - negative;
  r.d_pos = diff_pos.norm();
  r.d_neg = diff_neg.norm();
  r.grad_anchor = Vector::Zero(anchor.size());
  r.grad_positive = Vector::Zero(anchor.size());
  r.grad_negative = Vector::Zero(anchor.size());
  const double hinge = r.d_pos - r.d_neg + margin;
  if (hinge <= 0.0) return r;
  r.loss = hinge;
  if (r.d_pos > 0.0) {
    const Vector u = diff_pos / r.d_pos;
    r.grad_anchor += u;
    r.grad_positive -= u;
  }
  if (r.d_neg > 0.0) {
    const Vector u = diff_neg / r.d_neg;
    r.grad_anchor -= u;
    r.grad_negative += u;
  }
  return r;
}

PcsResult pcs(const Matrix& f_out) {
  PcsResult r;
  r.loss = f_out.cwiseAbs().sum();
  r.grad = f_out.unaryExpr([](double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; });
  return r;
}

TripletActivation forward_triplet(const Matrix& anchor, const Matrix& positive, const Matrix& negative,
                                  const CsanParams& params) {
  TripletActivation t;
  t.pair = forward_pair(anchor, positive, params);
  t.negative = forward_negative(t.pair, negative, params);
  return t;
}

TotalLoss total_loss(const TripletActivation& t, const LossConfig& cfg) {
  const Matrix& out_a = t.pair.f_out_a;
  const Matrix& out_b = t.pair.f_out_b;
  const Matrix& out_n = t.negative.f_out_n;
  const PtlResult triplet = ptl(flatten(out_a), flatten(out_b), flatten(out_n), cfg.margin);

  auto reshape = [&](const Vector& v) {
    return Matrix(Eigen::Map<const Matrix>(v.data(), out_a.rows(), out_a.cols()));
  };
  TotalLoss r;
  r.ptl = triplet.loss;
  r.grad_out_a = reshape(triplet.grad_anchor);
  r.grad_out_b = reshape(triplet.grad_positive);
  r.grad_out_n = reshape(triplet.grad_negative);

  const PcsResult sparse_a = pcs(out_a);
  const PcsResult sparse_b = pcs(out_b);
  const PcsResult sparse_n = pcs(out_n);
  r.pcs_mean = (sparse_a.loss + sparse_b.loss + sparse_n.loss) / 3.0;
  r.loss = r.ptl + cfg.lambda * r.pcs_mean;
  if (cfg.lambda != 0.0) {
    const double w = cfg.lambda / 3.0;
    r.grad_out_a += w * sparse_a.grad;
    r.grad_out_b += w * sparse_b.grad;
    r.grad_out_n += w * sparse_n.grad;
  }
  return r;
}

TripletGradient triplet_loss_and_grad(const Matrix& anchor, const Matrix& positive, const Matrix& negative,
                                      const CsanParams& params, const LossConfig& cfg) {
  const TripletActivation t = forward_triplet(anchor, positive, negative, params);
  TripletGradient out;
  out.loss = total_loss(t, cfg);
  out.grads = backward_triplet(t.pair, t.negative, out.loss.grad_out_a, out.loss.grad_out_b,
                               out.loss.grad_out_n, params);
  return out;
}

}  // namespace xspec
