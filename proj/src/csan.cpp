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

#include "xspec/csan.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "json.hpp"
#include "xspec/error.hpp"

namespace xspec {

std::string_view attention_output_name(AttentionOutput a) {
  return a == AttentionOutput::kLogSoftmax ? "log_softmax" : "softmax";
}

AttentionOutput parse_attention_output(std::string_view s) {
  if (s == "log_softmax") return AttentionOutput::kLogSoftmax;
  if (s == "softmax") return AttentionOutput::kSoftmax;
  throw Error(Errc::kInvalidConfig, "unknown attention output '" + std::string(s) + "'");
}

CsanParams CsanParams::zeros(int c_in, int c_out) {
  if (c_in < 1 || c_out < 1) throw Error(Errc::kInvalidParams, "c_in and c_out must be positive");
  CsanParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  for (Projection* proj : {&p.rgb, &p.ir, &p.common}) {
    proj->weight = Matrix::Zero(c_in, c_out);
    proj->bias = Vector::Zero(c_out);
  }
  return p;
}

CsanParams CsanParams::init_uniform(int c_in, int c_out, std::uint64_t seed) {
  CsanParams p = zeros(c_in, c_out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.visit_blocks([&](std::string_view, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = dist(rng);
  });
  return p;
}

double CsanParams::alpha() const { return 1.0 / std::sqrt(static_cast<double>(c_out)); }

std::size_t CsanParams::trainable_count() const {
  std::size_t n = 0;
  visit_blocks([&](std::string_view, const double*, std::size_t size) { n += size; });
  return n;
}

Projection& CsanParams::branch(Branch b) {
  return b == Branch::kRgb ? rgb : b == Branch::kIr ? ir : common;
}

const Projection& CsanParams::branch(Branch b) const {
  return b == Branch::kRgb ? rgb : b == Branch::kIr ? ir : common;
}

std::string_view CsanParams::block_name(const Projection* p, bool weight) const {
  if (p == &rgb) return weight ? "w_rgb" : "b_rgb";
  if (p == &ir) return weight ? "w_ir" : "b_ir";
  return weight ? "w_common" : "b_common";
}

CsanParams& CsanParams::operator+=(const CsanParams& other) {
  if (c_in != other.c_in || c_out != other.c_out)
    throw Error(Errc::kShapeMismatch, "parameter sets differ in shape");
  for (Branch b : {Branch::kRgb, Branch::kIr, Branch::kCommon}) {
    branch(b).weight += other.branch(b).weight;
    branch(b).bias += other.branch(b).bias;
  }
  return *this;
}

CsanParams& CsanParams::operator*=(double s) {
  visit_blocks([&](std::string_view, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) data[i] *= s;
  });
  return *this;
}

std::size_t param_count(std::size_t c_in, std::size_t c_out) { return 3 * (c_in * c_out + c_out); }

Matrix project(const Matrix& features, Branch which, const CsanParams& params) {
  if (features.cols() != params.c_in)
    throw Error(Errc::kShapeMismatch, "features have " + std::to_string(features.cols()) +
                                          " channels, projection expects " + std::to_string(params.c_in));
  const Projection& proj = params.branch(which);
  Matrix z = features * proj.weight;
  z.rowwise() += proj.bias.transpose();
  return z.array().tanh().matrix();
}

namespace {

// Row softmax with max subtraction; returns (probs, log_probs).
std::pair<Matrix, Matrix> row_softmax(const Matrix& logits) {
  Matrix log_probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    log_probs.row(r) = logits.row(r).array() - lse;
  }
  Matrix probs = log_probs.array().exp().matrix();
  return {std::move(probs), std::move(log_probs)};
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(Errc::kShapeMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                          "x" + std::to_string(b.cols()));
}

// Gradient w.r.t. the logits given the gradient w.r.t. the attention output.
Matrix attention_backward(const Matrix& probs, const Matrix& grad_attention, AttentionOutput output) {
  if (output == AttentionOutput::kLogSoftmax) {
    const Vector row_sums = grad_attention.rowwise().sum();
    return grad_attention - (probs.array().colwise() * row_sums.array()).matrix();
  }
  const Vector weighted = (grad_attention.array() * probs.array()).rowwise().sum();
  return (probs.array() * (grad_attention.array().colwise() - weighted.array())).matrix();
}

// Accumulates d(loss)/d(W, b) of tanh(X W + b) given d(loss)/d(output).
void accumulate_projection(const Matrix& x, const Matrix& out, const Matrix& grad_out, Projection& g) {
  const Matrix grad_pre = (grad_out.array() * (1.0 - out.array().square())).matrix();
  g.weight.noalias() += x.transpose() * grad_pre;
  g.bias += grad_pre.colwise().sum().transpose();
}

}  // namespace

Matrix cross_attention(const Matrix& f_rgb, const Matrix& f_ir, double alpha, AttentionOutput output) {
  check_same_shape(f_rgb, f_ir, "cross_attention");
  auto [probs, log_probs] = row_softmax(alpha * f_rgb * f_ir.transpose());
  return output == AttentionOutput::kLogSoftmax ? log_probs : probs;
}

PairActivation forward_pair(const Matrix& x_rgb, const Matrix& x_ir, const CsanParams& params) {
  check_same_shape(x_rgb, x_ir, "forward_pair");
  PairActivation pa;
  pa.x_a = x_rgb;
  pa.x_b = x_ir;
  pa.f_rgb = project(x_rgb, Branch::kRgb, params);
  pa.f_ir = project(x_ir, Branch::kIr, params);
  pa.f_common_a = project(x_rgb, Branch::kCommon, params);
  pa.f_common_b = project(x_ir, Branch::kCommon, params);
  auto [probs, log_probs] = row_softmax(params.alpha() * pa.f_rgb * pa.f_ir.transpose());
  pa.probs = std::move(probs);
  pa.attention = params.attention_output == AttentionOutput::kLogSoftmax ? std::move(log_probs) : pa.probs;
  pa.f_out_a = pa.attention * pa.f_common_a;
  pa.f_out_b = pa.attention * pa.f_common_b;
  return pa;
}

PairActivation forward_pair(const FeatureMap& x_rgb, const FeatureMap& x_ir, const CsanParams& params) {
  if (x_rgb.domain != Domain::kRgb || x_ir.domain != Domain::kIr)
    throw Error(Errc::kDomainMismatch, "forward_pair expects (RGB, IR) samples");
  return forward_pair(x_rgb.grid(), x_ir.grid(), params);
}

PairActivation forward_pair(const Sample& x_rgb, const Sample& x_ir, const CsanParams& params) {
  if (x_rgb.domain != Domain::kRgb || x_ir.domain != Domain::kIr)
    throw Error(Errc::kDomainMismatch, "forward_pair expects (RGB, IR) samples");
  return forward_pair(x_rgb.features, x_ir.features, params);
}

NegativeActivation forward_negative(const PairActivation& pa, const Matrix& x_n, const CsanParams& params) {
  check_same_shape(pa.x_a, x_n, "forward_negative");
  NegativeActivation neg;
  neg.x_n = x_n;
  neg.f_common_n = project(x_n, Branch::kCommon, params);
  neg.f_out_n = pa.attention * neg.f_common_n;
  return neg;
}

Vector descriptor(const PairActivation& pa, Side side) {
  return flatten(side == Side::kA ? pa.f_out_a : pa.f_out_b);
}

Vector self_descriptor(const Matrix& x, Domain domain, const CsanParams& params) {
  const Matrix spectral = project(x, domain == Domain::kRgb ? Branch::kRgb : Branch::kIr, params);
  const Matrix attention = cross_attention(spectral, spectral, params.alpha(), params.attention_output);
  return flatten(attention * project(x, Branch::kCommon, params));
}

CsanParams backward_pair(const PairActivation& pa, const Matrix& grad_out_a, const Matrix& grad_out_b,
                         const CsanParams& params) {
  NegativeActivation none;
  none.x_n = Matrix::Zero(pa.x_a.rows(), pa.x_a.cols());
  none.f_common_n = Matrix::Zero(pa.f_common_a.rows(), pa.f_common_a.cols());
  none.f_out_n = none.f_common_n;
  return backward_triplet(pa, none, grad_out_a, grad_out_b, none.f_common_n, params);
}

CsanParams backward_triplet(const PairActivation& pa, const NegativeActivation& neg,
                            const Matrix& grad_out_a, const Matrix& grad_out_b,
                            const Matrix& grad_out_n, const CsanParams& params) {
  check_same_shape(grad_out_a, pa.f_out_a, "backward grad_out_a");
  check_same_shape(grad_out_b, pa.f_out_b, "backward grad_out_b");
  check_same_shape(grad_out_n, pa.f_out_a, "backward grad_out_n");
  CsanParams grads = CsanParams::zeros(params.c_in, params.c_out);
  grads.attention_output = params.attention_output;

  // F_out_x = A C_x for x in {a, b, n}.
  Matrix grad_attention = grad_out_a * pa.f_common_a.transpose();
  grad_attention.noalias() += grad_out_b * pa.f_common_b.transpose();
  grad_attention.noalias() += grad_out_n * neg.f_common_n.transpose();

  accumulate_projection(pa.x_a, pa.f_common_a, pa.attention.transpose() * grad_out_a, grads.common);
  accumulate_projection(pa.x_b, pa.f_common_b, pa.attention.transpose() * grad_out_b, grads.common);
  accumulate_projection(neg.x_n, neg.f_common_n, pa.attention.transpose() * grad_out_n, grads.common);

  // logits = alpha F_rgb F_ir^T; the RGB branch sees only x_a, the IR
  // branch only x_b.
  const Matrix grad_logits = attention_backward(pa.probs, grad_attention, params.attention_output);
  const double alpha = params.alpha();
  accumulate_projection(pa.x_a, pa.f_rgb, alpha * grad_logits * pa.f_ir, grads.rgb);
  accumulate_projection(pa.x_b, pa.f_ir, alpha * grad_logits.transpose() * pa.f_rgb, grads.ir);
  return grads;
}

// --- checkpoint --------------------------------------------------------------

std::string encode_checkpoint(const CsanParams& params, std::uint64_t rng_seed) {
  const nlohmann::json header = {{"format", "xspec-csan"},
                                 {"version", kCheckpointVersion},
                                 {"c_in", params.c_in},
                                 {"c_out", params.c_out},
                                 {"rng_seed", rng_seed},
                                 {"attention", attention_output_name(params.attention_output)}};
  std::string out = header.dump();
  out.push_back('\n');
  params.visit_blocks([&](std::string_view, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data[i]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  });
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw Error(Errc::kMalformedFile, "checkpoint header missing");
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(0, newline));
    if (header.value("format", std::string()) != "xspec-csan")
      throw Error(Errc::kMalformedFile, "not a CSAN checkpoint");
    if (header.at("version").get<int>() != kCheckpointVersion)
      throw Error(Errc::kMalformedFile, "unsupported checkpoint version");
    ckpt.params = CsanParams::zeros(header.at("c_in").get<int>(), header.at("c_out").get<int>());
    ckpt.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    ckpt.params.attention_output =
        parse_attention_output(header.value("attention", std::string("log_softmax")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kMalformedFile, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::kMalformedFile) throw;
    throw Error(Errc::kMalformedFile, e.what());
  }
  const std::string_view payload = bytes.substr(newline + 1);
  if (payload.size() != ckpt.params.trainable_count() * 4)
    throw Error(Errc::kMalformedFile, "checkpoint payload has " + std::to_string(payload.size()) + " bytes");
  std::size_t pos = 0;
  ckpt.params.visit_blocks([&](std::string_view, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i, pos += 4) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= std::uint32_t(static_cast<unsigned char>(payload[pos + b])) << (8 * b);
      data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  });
  return ckpt;
}

void save_checkpoint(const CsanParams& params, std::uint64_t rng_seed, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(params, rng_seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIoError, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

}  // namespace xspec
