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

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/nn.hpp"

namespace wdlab {

/// cross_entropy: softmax likelihood over integer labels.
/// squared_error: 0.5 * ||z - y||^2 per example, i.e. unit-variance Gaussian.
enum class LossKind { cross_entropy, squared_error };

inline const char* to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "squared_error";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  if (s == "squared_error" || s == "mse") return LossKind::squared_error;
  throw DomainError("unknown loss '" + s + "'");
}

/// Class labels for cross-entropy or real target rows for squared error.
struct Targets {
  std::vector<std::size_t> labels;
  Matrix values;

  static Targets classes(std::vector<std::size_t> y) { return {std::move(y), Matrix()}; }
  static Targets regression(Matrix y) { return {{}, std::move(y)}; }

  bool is_classes() const { return values.size() == 0; }
  std::size_t size() const { return is_classes() ? labels.size() : static_cast<std::size_t>(values.rows()); }

  Targets subset(const std::vector<std::size_t>& idx) const {
    Targets t;
    if (is_classes()) {
      t.labels.reserve(idx.size());
      for (std::size_t i : idx) t.labels.push_back(labels[i]);
    } else {
      t.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) t.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(idx[r]));
    }
    return t;
  }
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d(mean loss)/d logits, n x k
};

inline Vector softmax(const Vector& z) {
  if (z.size() == 0) return z;
  const Vector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

inline Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) p.row(i) = softmax(z.row(i).transpose()).transpose();
  return p;
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

inline void check_targets(LossKind kind, const Matrix& logits, const Targets& t) {
  if (t.size() != static_cast<std::size_t>(logits.rows())) {
    throw StructuralError("loss: " + std::to_string(t.size()) + " targets for " +
                          std::to_string(logits.rows()) + " examples");
  }
  if (kind == LossKind::cross_entropy) {
    if (!t.is_classes()) throw StructuralError("cross-entropy needs class labels");
    for (std::size_t y : t.labels) {
      if (y >= static_cast<std::size_t>(logits.cols())) {
        throw DomainError("label " + std::to_string(y) + " out of range [0," + std::to_string(logits.cols()) + ")");
      }
    }
  } else if (t.is_classes() || t.values.cols() != logits.cols()) {
    throw StructuralError("squared error needs real target rows of dimension " + std::to_string(logits.cols()));
  }
}

inline LossResult loss_and_grad(LossKind kind, const Matrix& logits, const Targets& targets) {
  check_targets(kind, logits, targets);
  const Eigen::Index n = logits.rows();
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  if (n == 0) return r;
  double total = 0.0;
  if (kind == LossKind::cross_entropy) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector z = logits.row(i).transpose();
      const auto y = static_cast<Eigen::Index>(targets.labels[static_cast<std::size_t>(i)]);
      total += log_sum_exp(z) - z[y];
      Vector g = softmax(z);
      g[y] -= 1.0;
      r.grad.row(i) = g.transpose();
    }
  } else {
    const Matrix diff = logits - targets.values;
    total = 0.5 * diff.squaredNorm();
    r.grad = diff;
  }
  r.loss = total / static_cast<double>(n);
  r.grad /= static_cast<double>(n);
  return r;
}

/// Hessian of the per-example loss with respect to the logits.
inline Matrix output_hessian(LossKind kind, const Vector& logits) {
  const Eigen::Index k = logits.size();
  if (kind == LossKind::squared_error) return Matrix::Identity(k, k);
  const Vector p = softmax(logits);
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

/// Draws one label per row of a probability matrix.
inline std::vector<std::size_t> sample_targets(const Matrix& p, Rng& rng) {
  std::vector<std::size_t> labels(static_cast<std::size_t>(p.rows()));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    if (!row.allFinite() || row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > 1e-8) {
      throw DomainError("sample_targets: row " + std::to_string(i) + " is not a probability vector");
    }
    const double u = unif(rng);
    double acc = 0.0;
    Eigen::Index pick = p.cols() - 1;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      acc += row[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    // Guard against landing on a zero-probability tail class via rounding.
    while (pick > 0 && row[pick] == 0.0) --pick;
    labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(pick);
  }
  return labels;
}

/// Draws targets from the model's predictive distribution: categorical for
/// cross-entropy, N(logits, I) for squared error.
inline Targets sample_model_targets(LossKind kind, const Matrix& logits, Rng& rng) {
  if (kind == LossKind::cross_entropy) return Targets::classes(sample_targets(softmax_rows(logits), rng));
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix y = logits;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) += noise(rng);
  }
  return Targets::regression(std::move(y));
}

inline std::vector<std::size_t> argmax_rows(const Matrix& logits) {
  std::vector<std::size_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index j = 0;
    logits.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(j);
  }
  return out;
}

inline double accuracy(const Matrix& logits, const std::vector<std::size_t>& labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace wdlab
