// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Instruments for the three weight-decay mechanisms, plus the per-epoch
// metric record and its CSV log.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "wdlab/curvature.hpp"
#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/nn.hpp"

namespace wdlab {

/// eta / ||theta_l||^2: the step size seen by the direction of a scale-invariant layer.
inline double effective_lr(double eta, double layer_norm) {
  if (!(layer_norm > 0.0)) throw DegenerateError("effective_lr: layer norm must be > 0");
  return eta / (layer_norm * layer_norm);
}

inline double generalization_gap(double train_loss, double test_loss) { return test_loss - train_loss; }

/// Mean over rows of ||J_x||_F^2, BN layers in eval mode.
inline double jacobian_frob_norm(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x_eval,
                                 const BatchNormState* bn = nullptr) {
  if (x_eval.rows() == 0) throw DomainError("jacobian_frob_norm: empty evaluation set");
  BatchNormState copy = bn != nullptr ? *bn : BatchNormState{};
  const ForwardTrace trace =
      forward(spec, params, x_eval, Mode::eval, spec.any_bn() ? &copy : nullptr);
  const Eigen::Index n = x_eval.rows();
  const Eigen::Index k = trace.logits.cols();
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    Matrix seed = Matrix::Zero(n, k);
    seed.col(j).setOnes();
    const auto ds = backprop_to_pre(spec, params, trace, seed, false);
    total += (ds[0] * params.weights[0]).squaredNorm();
  }
  return total / static_cast<double>(n);
}

enum class TransferPolicy { strict, warn };

/// Rescales every masked layer to the reference norm. Masked layers must be
/// BN-covered (the rescaling is then function-preserving); with the warn
/// policy other layers are rescaled anyway after a warning on stderr.
/// Running BN statistics, when given, are rescaled alongside the weights.
inline NetworkParams norm_transfer(const NetworkSpec& spec, const NetworkParams& params,
                                   const std::vector<double>& reference_norms, const std::vector<bool>& mask,
                                   BatchNormState* bn = nullptr, TransferPolicy policy = TransferPolicy::strict) {
  if (reference_norms.size() != params.weights.size() || mask.size() != params.weights.size()) {
    throw StructuralError("norm_transfer: need one reference norm and mask flag per layer");
  }
  NetworkParams out = params;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    if (!mask[l]) continue;
    if (!spec.bn_covers(l)) {
      if (policy == TransferPolicy::strict) {
        throw ContractError("norm_transfer: layer " + std::to_string(l) + " is not covered by BN");
      }
      std::cerr << "warning: norm_transfer rescales layer " << l << ", which is not covered by BN\n";
    }
    if (!(reference_norms[l] > 0.0)) throw DomainError("norm_transfer: reference norms must be > 0");
    const double current = params.weights[l].norm();
    if (!(current > 0.0)) throw DegenerateError("norm_transfer: layer " + std::to_string(l) + " has zero norm");
    const double alpha = reference_norms[l] / current;
    out.weights[l] *= alpha;
    if (bn != nullptr) bn->rescale(l, alpha);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric record and CSV log

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MetricRecord {
  std::size_t epoch = 0;
  double lr = kNaN;
  double train_loss = kNaN;
  double train_acc = kNaN;
  double test_loss = kNaN;
  double test_acc = kNaN;
  double generalization_gap = kNaN;
  double jacobian_frob = kNaN;
  double gn_norm = kNaN;
  double kfac_gn_norm = kNaN;
  std::vector<double> layer_norm;
  std::vector<double> effective_lr;
  std::vector<double> trace_fisher;  // normalized traces, tr C(theta_hat_l)
  std::vector<double> trace_gn;
  std::vector<double> damping_ratio;  // lambda ||theta_l||^2 / (tr C(theta_hat_l) / P_l)

  void resize_layers(std::size_t n) {
    for (auto* v : {&layer_norm, &effective_lr, &trace_fisher, &trace_gn, &damping_ratio}) v->assign(n, kNaN);
  }

  bool operator==(const MetricRecord&) const = default;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DomainError("cannot parse number '" + s + "'");
  return v;
}

/// Append-only per-run log. One CSV row per epoch, every field named in the header.
class MetricLog {
 public:
  explicit MetricLog(std::size_t num_layers = 0) : layers_(num_layers) {}

  std::size_t num_layers() const { return layers_; }
  const std::vector<MetricRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const MetricRecord& back() const { return records_.back(); }

  void append(MetricRecord r) {
    if (r.layer_norm.size() != layers_) r.resize_layers(layers_);
    records_.push_back(std::move(r));
  }

  std::vector<std::string> header() const {
    std::vector<std::string> h = {"epoch",          "lr",           "train_loss",    "train_acc",
                                  "test_loss",      "test_acc",     "generalization_gap",
                                  "jacobian_frob",  "gn_norm",      "kfac_gn_norm"};
    for (const char* prefix : {"layer_norm_", "effective_lr_", "trace_fisher_", "trace_gn_", "damping_ratio_"}) {
      for (std::size_t l = 0; l < layers_; ++l) h.push_back(prefix + std::to_string(l));
    }
    return h;
  }

  static std::vector<double> values(const MetricRecord& r) {
    std::vector<double> v = {static_cast<double>(r.epoch), r.lr, r.train_loss, r.train_acc, r.test_loss,
                             r.test_acc, r.generalization_gap, r.jacobian_frob, r.gn_norm, r.kfac_gn_norm};
    for (const auto* series : {&r.layer_norm, &r.effective_lr, &r.trace_fisher, &r.trace_gn, &r.damping_ratio}) {
      v.insert(v.end(), series->begin(), series->end());
    }
    return v;
  }

  std::string to_csv() const {
    std::ostringstream os;
    const auto h = header();
    for (std::size_t i = 0; i < h.size(); ++i) os << (i ? "," : "") << h[i];
    os << '\n';
    for (const MetricRecord& r : records_) {
      const auto v = values(r);
      os << r.epoch;
      for (std::size_t i = 1; i < v.size(); ++i) os << ',' << format_double(v[i]);
      os << '\n';
    }
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_csv();
    if (!out) throw std::runtime_error("write failed for " + path);
  }

  static MetricLog parse(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DomainError("metric log: missing header");
    const auto cols = split(line);
    const std::size_t fixed = 10;
    if (cols.size() < fixed || (cols.size() - fixed) % 5 != 0 || cols[0] != "epoch") {
      throw DomainError("metric log: unexpected header");
    }
    MetricLog log((cols.size() - fixed) / 5);
    if (log.header() != cols) throw DomainError("metric log: unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split(line);
      if (cells.size() != cols.size()) throw DomainError("metric log: ragged row");
      MetricRecord r;
      r.epoch = static_cast<std::size_t>(std::stoull(cells[0]));
      double* scalars[] = {&r.lr, &r.train_loss, &r.train_acc, &r.test_loss, &r.test_acc,
                           &r.generalization_gap, &r.jacobian_frob, &r.gn_norm, &r.kfac_gn_norm};
      for (std::size_t i = 0; i < 9; ++i) *scalars[i] = parse_double(cells[i + 1]);
      std::size_t c = fixed;
      for (auto* series : {&r.layer_norm, &r.effective_lr, &r.trace_fisher, &r.trace_gn, &r.damping_ratio}) {
        series->clear();
        for (std::size_t l = 0; l < log.layers_; ++l) series->push_back(parse_double(cells[c++]));
      }
      log.records_.push_back(std::move(r));
    }
    return log;
  }

  static MetricLog read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return parse(in);
  }

 private:
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  }

  std::size_t layers_;
  std::vector<MetricRecord> records_;
};

}  // namespace wdlab
