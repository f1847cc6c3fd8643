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

// Curvature matrices over the canonical theta flattening: dense Fisher /
// Gauss-Newton constructions for small networks, Kronecker factors for
// K-FAC, and norms/traces measured in these metrics.
//
// Expectations are empirical means over the rows of X. BN layers use the
// batch statistics of X held fixed, so every example has its own Jacobian.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"

namespace wdlab {

enum class CurvatureKind { fisher_sampled, fisher_exact, gauss_newton, generalized_gn };

/// Statistics used for the K-FAC output-side factor.
enum class CurvatureMetric { fisher, gn };

inline const char* to_string(CurvatureMetric m) { return m == CurvatureMetric::fisher ? "fisher" : "gn"; }

struct CurvatureOptions {
  std::size_t param_cap = kDefaultParamCap;
  std::size_t class_cap = 10;       // fisher_exact enumerates every class
  std::size_t fisher_samples = 1;   // model-sampled targets per example
};

inline ForwardTrace curvature_forward(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x) {
  return forward(spec, params, x, Mode::train, nullptr);
}

namespace detail {

// Gradient of -log p(y | x) with respect to the logits of one example.
inline Vector neg_loglik_grad(LossKind kind, const Vector& logits, const Targets& one) {
  const LossResult r = loss_and_grad(kind, logits.transpose(), one);
  return r.grad.row(0).transpose();
}

struct WeightedTarget {
  Targets target;
  double weight;
};

// Finite support reproducing the predictive distribution's contribution to
// the Fisher exactly: every class with weight p(y|x) for cross-entropy, and
// 2k sigma points f +- sqrt(k) e_j with weight 1/(2k) for the unit Gaussian
// (the score is linear in y, so matching the covariance is enough).
inline std::vector<WeightedTarget> predictive_support(LossKind kind, const Vector& logits,
                                                      std::size_t class_cap) {
  std::vector<WeightedTarget> out;
  const auto k = static_cast<std::size_t>(logits.size());
  if (kind == LossKind::cross_entropy) {
    if (k > class_cap) {
      throw CapacityError("fisher_exact: " + std::to_string(k) + " classes exceed the cap of " +
                          std::to_string(class_cap));
    }
    const Vector p = softmax(logits);
    for (std::size_t y = 0; y < k; ++y) out.push_back({Targets::classes({y}), p[static_cast<Eigen::Index>(y)]});
  } else {
    const double spread = std::sqrt(static_cast<double>(k));
    for (std::size_t j = 0; j < k; ++j) {
      for (double sign : {1.0, -1.0}) {
        Matrix y = logits.transpose();
        y(0, static_cast<Eigen::Index>(j)) += sign * spread;
        out.push_back({Targets::regression(std::move(y)), 1.0 / (2.0 * static_cast<double>(k))});
      }
    }
  }
  return out;
}

inline Matrix unit_seed(Eigen::Index n, Eigen::Index k, Eigen::Index j) {
  Matrix seed = Matrix::Zero(n, k);
  seed.col(j).setOnes();
  return seed;
}

inline Matrix homogeneous(const Matrix& a) {
  Matrix out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setOnes();
  return out;
}

}  // namespace detail

/// Dense P x P curvature. fisher_sampled needs `rng`.
inline Matrix dense_curvature(CurvatureKind kind, const NetworkSpec& spec, const NetworkParams& params,
                              const Matrix& x, LossKind loss, Rng* rng = nullptr,
                              const CurvatureOptions& opt = {}) {
  const std::size_t p = param_count(spec);
  if (p > opt.param_cap) {
    throw CapacityError("dense_curvature: " + std::to_string(p) + " parameters exceed the cap of " +
                        std::to_string(opt.param_cap));
  }
  if (kind == CurvatureKind::fisher_sampled && rng == nullptr) {
    throw DomainError("dense_curvature: fisher_sampled needs a random generator");
  }
  const ForwardTrace trace = curvature_forward(spec, params, x);
  const auto n = static_cast<std::size_t>(x.rows());
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix jac = param_jacobian_at(spec, params, trace, i);
    const Vector z = trace.logits.row(static_cast<Eigen::Index>(i)).transpose();
    switch (kind) {
      case CurvatureKind::gauss_newton:
        c.noalias() += jac.transpose() * jac;
        break;
      case CurvatureKind::generalized_gn:
        c.noalias() += jac.transpose() * output_hessian(loss, z) * jac;
        break;
      case CurvatureKind::fisher_exact:
        for (const auto& wt : detail::predictive_support(loss, z, opt.class_cap)) {
          const Vector g = jac.transpose() * detail::neg_loglik_grad(loss, z, wt.target);
          c.noalias() += wt.weight * g * g.transpose();
        }
        break;
      case CurvatureKind::fisher_sampled: {
        const double w = 1.0 / static_cast<double>(opt.fisher_samples);
        for (std::size_t s = 0; s < opt.fisher_samples; ++s) {
          const Targets y = sample_model_targets(loss, z.transpose(), *rng);
          const Vector g = jac.transpose() * detail::neg_loglik_grad(loss, z, y);
          c.noalias() += w * g * g.transpose();
        }
        break;
      }
    }
  }
  if (n > 0) c /= static_cast<double>(n);
  return 0.5 * (c + c.transpose());
}

/// Diagonal block of a dense curvature belonging to layer l.
inline Matrix layer_block(const Matrix& c, const NetworkSpec& spec, std::size_t l) {
  const auto off = static_cast<Eigen::Index>(layer_offset(spec, l));
  const auto sz = static_cast<Eigen::Index>(layer_param_count(spec, l));
  return c.block(off, off, sz, sz);
}

// ---------------------------------------------------------------------------
// K-FAC factors

/// Per-layer A_l (activation second moment, bias-augmented when biases are on)
/// and S_l (pre-activation gradient second moment), with damped inverses.
struct KfacFactors {
  std::vector<Matrix> A;
  std::vector<Matrix> S;
  std::vector<Matrix> A_inv;
  std::vector<Matrix> S_inv;
  std::size_t stats_age = 0;    // steps since the factors were refreshed
  std::size_t inverse_age = 0;  // steps since the inverses were recomputed

  std::size_t num_layers() const { return A.size(); }
  bool has_inverses() const { return !A_inv.empty(); }
};

inline KfacFactors estimate_kfac_factors(CurvatureMetric metric, const NetworkSpec& spec,
                                         const NetworkParams& params, const ForwardTrace& trace,
                                         LossKind loss, Rng* rng = nullptr) {
  const Eigen::Index n = trace.logits.rows();
  const Eigen::Index k = trace.logits.cols();
  if (n < 1) throw DegenerateError("estimate_kfac_factors: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  KfacFactors f;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Matrix& a = trace.layers[l].input;
    if (spec.use_bias) {
      const Matrix ah = detail::homogeneous(a);
      f.A.push_back(inv_n * ah.transpose() * ah);
    } else {
      f.A.push_back(inv_n * a.transpose() * a);
    }
    f.S.push_back(Matrix::Zero(static_cast<Eigen::Index>(spec.out_dim(l)),
                               static_cast<Eigen::Index>(spec.out_dim(l))));
  }
  if (metric == CurvatureMetric::gn) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto ds = backprop_to_pre(spec, params, trace, detail::unit_seed(n, k, j), false);
      for (std::size_t l = 0; l < spec.num_layers(); ++l) f.S[l].noalias() += inv_n * ds[l].transpose() * ds[l];
    }
  } else {
    if (rng == nullptr) throw DomainError("estimate_kfac_factors: the fisher metric needs a random generator");
    const Targets sampled = sample_model_targets(loss, trace.logits, *rng);
    // Per-example score: the mean-loss gradient times n.
    const Matrix seed = loss_and_grad(loss, trace.logits, sampled).grad * static_cast<double>(n);
    const auto ds = backprop_to_pre(spec, params, trace, seed, false);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) f.S[l].noalias() += inv_n * ds[l].transpose() * ds[l];
  }
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    f.A[l] = 0.5 * (f.A[l] + f.A[l].transpose());
    f.S[l] = 0.5 * (f.S[l] + f.S[l].transpose());
  }
  return f;
}

inline KfacFactors estimate_kfac_factors(CurvatureMetric metric, const NetworkSpec& spec,
                                         const NetworkParams& params, const Matrix& x, LossKind loss,
                                         Rng* rng = nullptr) {
  return estimate_kfac_factors(metric, spec, params, curvature_forward(spec, params, x), loss, rng);
}

/// factor <- decay * old + (1 - decay) * fresh. Inverses are carried over unchanged.
inline KfacFactors update_factors_ema(const KfacFactors& state, const KfacFactors& fresh, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw DomainError("update_factors_ema: decay must be in [0,1)");
  if (state.A.size() != fresh.A.size() || state.S.size() != fresh.S.size()) {
    throw StructuralError("update_factors_ema: layer count mismatch");
  }
  KfacFactors out = state;
  for (std::size_t l = 0; l < state.A.size(); ++l) {
    if (state.A[l].rows() != fresh.A[l].rows() || state.A[l].cols() != fresh.A[l].cols() ||
        state.S[l].rows() != fresh.S[l].rows() || state.S[l].cols() != fresh.S[l].cols()) {
      throw StructuralError("update_factors_ema: factor shape mismatch in layer " + std::to_string(l));
    }
    out.A[l] = decay * state.A[l] + (1.0 - decay) * fresh.A[l];
    out.S[l] = decay * state.S[l] + (1.0 - decay) * fresh.S[l];
  }
  out.stats_age = 0;
  return out;
}

/// Zero-initialised factors with the right shapes.
inline KfacFactors zero_factors(const NetworkSpec& spec) {
  KfacFactors f;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.in_dim(l) + (spec.use_bias ? 1 : 0));
    const auto out = static_cast<Eigen::Index>(spec.out_dim(l));
    f.A.push_back(Matrix::Zero(in, in));
    f.S.push_back(Matrix::Zero(out, out));
  }
  return f;
}

/// Dense Kronecker block S_l (x) A_l in the canonical in-layer ordering.
inline Matrix kfac_block(const KfacFactors& f, std::size_t l) { return kron(f.S[l], f.A[l]); }

// ---------------------------------------------------------------------------
// Norms in the Gauss-Newton metric

inline void require_homogeneous(const NetworkSpec& spec, const char* what) {
  if (spec.use_bias) throw ContractError(std::string(what) + ": identity requires a bias-free network");
  if (spec.any_bn()) throw ContractError(std::string(what) + ": identity requires a network without BN");
}

/// (L+1)^2 E||f(x)||^2, which equals theta^T G theta for bias-free rectified nets.
inline double gn_norm(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x) {
  require_homogeneous(spec, "gn_norm");
  if (x.rows() == 0) return 0.0;
  const ForwardTrace trace = forward(spec, params, x, Mode::eval, nullptr);
  const double l1 = static_cast<double>(spec.depth() + 1);
  return l1 * l1 * trace.logits.squaredNorm() / static_cast<double>(x.rows());
}

/// sum_l theta_l^T G_ll theta_l with G_ll the exact layer block of the GN
/// matrix, computed as E sum_l ||J_{theta_l} theta_l||^2 = E sum_l ||G_l s_l||^2.
inline double kfac_gn_norm(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  const ForwardTrace trace = curvature_forward(spec, params, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index k = trace.logits.cols();
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto ds = backprop_to_pre(spec, params, trace, detail::unit_seed(n, k, j), false);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const Vector proj = (ds[l].array() * trace.layers[l].pre.array()).rowwise().sum();
      total += proj.squaredNorm();
    }
  }
  return total / static_cast<double>(n);
}

/// sum_l theta_l^T (S_l (x) A_l) theta_l = sum_l tr(S_l W_l A_l W_l^T) using the
/// Kronecker-factored GN blocks. Coincides with kfac_gn_norm on linear nets.
inline double kfac_factored_gn_norm(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  const KfacFactors f = estimate_kfac_factors(CurvatureMetric::gn, spec, params, x, LossKind::squared_error);
  double total = 0.0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Matrix w = params.weights[l];
    if (spec.use_bias) {
      Matrix wb(w.rows(), w.cols() + 1);
      wb.leftCols(w.cols()) = w;
      wb.col(w.cols()) = params.biases[l];
      w = std::move(wb);
    }
    total += (f.S[l] * w * f.A[l] * w.transpose()).trace();
  }
  return total;
}

/// d/dtheta of gn_norm, computed as 2(L+1) G theta with the dense GN matrix
/// applied through per-example Jacobians.
inline Vector gn_norm_gradient(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                               std::size_t cap = kDefaultParamCap) {
  require_homogeneous(spec, "gn_norm_gradient");
  const std::size_t p = param_count(spec);
  if (p > cap) throw CapacityError("gn_norm_gradient: " + std::to_string(p) + " parameters exceed the cap");
  const Vector theta = flatten(spec, params);
  Vector g_theta = Vector::Zero(static_cast<Eigen::Index>(p));
  if (x.rows() == 0) return g_theta;
  const ForwardTrace trace = curvature_forward(spec, params, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix jac = param_jacobian_at(spec, params, trace, static_cast<std::size_t>(i));
    g_theta.noalias() += jac.transpose() * (jac * theta);
  }
  g_theta /= static_cast<double>(x.rows());
  return 2.0 * static_cast<double>(spec.depth() + 1) * g_theta;
}

// ---------------------------------------------------------------------------
// Traces

/// Trace of the weight part of layer l's curvature block at the current
/// parameters. The fisher metric is evaluated exactly through the output
/// Hessian, so the value carries no sampling noise.
inline double layer_curvature_trace(CurvatureMetric metric, const NetworkSpec& spec, const NetworkParams& params,
                                    const Matrix& x, std::size_t l, LossKind loss) {
  if (l >= spec.num_layers()) throw StructuralError("layer_curvature_trace: no layer " + std::to_string(l));
  if (x.rows() == 0) return 0.0;
  const ForwardTrace trace = curvature_forward(spec, params, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index k = trace.logits.cols();
  const bool use_hessian = metric == CurvatureMetric::fisher && loss == LossKind::cross_entropy;
  const Matrix p = use_hessian ? softmax_rows(trace.logits) : Matrix();
  Vector plain = Vector::Zero(n);                         // sum_j w_j ||G_j||^2
  Matrix mixed = Matrix::Zero(n, static_cast<Eigen::Index>(spec.out_dim(l)));  // sum_j p_j G_j
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto ds = backprop_to_pre(spec, params, trace, detail::unit_seed(n, k, j), false);
    const Vector sq = ds[l].rowwise().squaredNorm();
    if (use_hessian) {
      plain.array() += p.col(j).array() * sq.array();
      mixed.array() += ds[l].array().colwise() * p.col(j).array();
    } else {
      plain += sq;
    }
  }
  // tr(G^T H G) with H = diag(p) - p p^T.
  const Vector per_unit = use_hessian ? Vector(plain - mixed.rowwise().squaredNorm()) : plain;
  const Vector a_sq = trace.layers[l].input.rowwise().squaredNorm();
  return per_unit.dot(a_sq) / static_cast<double>(n);
}

struct LayerTraces {
  std::vector<double> fisher;
  std::vector<double> gn;
};

/// Weight-part traces of every layer block for both metrics from one set of
/// k backward passes. Same values as layer_curvature_trace.
inline LayerTraces curvature_traces(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                                    LossKind loss) {
  const std::size_t layers = spec.num_layers();
  LayerTraces out{std::vector<double>(layers, 0.0), std::vector<double>(layers, 0.0)};
  if (x.rows() == 0) return out;
  const ForwardTrace trace = curvature_forward(spec, params, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index k = trace.logits.cols();
  const bool use_hessian = loss == LossKind::cross_entropy;
  const Matrix p = use_hessian ? softmax_rows(trace.logits) : Matrix();
  std::vector<Vector> plain(layers, Vector::Zero(n)), weighted(layers, Vector::Zero(n));
  std::vector<Matrix> mixed(layers);
  for (std::size_t l = 0; l < layers; ++l) mixed[l] = Matrix::Zero(n, static_cast<Eigen::Index>(spec.out_dim(l)));
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto ds = backprop_to_pre(spec, params, trace, detail::unit_seed(n, k, j), false);
    for (std::size_t l = 0; l < layers; ++l) {
      const Vector sq = ds[l].rowwise().squaredNorm();
      plain[l] += sq;
      if (use_hessian) {
        weighted[l].array() += p.col(j).array() * sq.array();
        mixed[l].array() += ds[l].array().colwise() * p.col(j).array();
      }
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const Vector a_sq = trace.layers[l].input.rowwise().squaredNorm();
    const Vector f = use_hessian ? Vector(weighted[l] - mixed[l].rowwise().squaredNorm()) : plain[l];
    out.fisher[l] = f.dot(a_sq) / static_cast<double>(n);
    out.gn[l] = plain[l].dot(a_sq) / static_cast<double>(n);
  }
  return out;
}

/// tr C(theta_hat_l) = ||theta_l||^2 tr C(theta_l), the trace of the
/// curvature of the unit-norm weight direction.
inline double normalized_trace(CurvatureMetric metric, const NetworkSpec& spec, const NetworkParams& params,
                               const Matrix& x, std::size_t l, LossKind loss = LossKind::cross_entropy) {
  if (l >= spec.num_layers()) throw StructuralError("normalized_trace: no layer " + std::to_string(l));
  const double norm_sq = params.weights[l].squaredNorm();
  if (norm_sq == 0.0) throw DegenerateError("normalized_trace: layer " + std::to_string(l) + " has zero norm");
  return norm_sq * layer_curvature_trace(metric, spec, params, x, l, loss);
}

}  // namespace wdlab
