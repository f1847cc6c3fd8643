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

// SGD, Adam and K-FAC with three regularization couplings:
//   none          plain update
//   l2            beta * theta is added to the gradient, so any
//                 preconditioner also acts on it
//   weight_decay  theta is shrunk by (1 - eta * beta) outside the preconditioner
// Couplings act per layer through a mask.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wdlab/curvature.hpp"
#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"

namespace wdlab {

enum class CouplingMode { none, l2, weight_decay };
enum class MaskPreset { all, hidden_only, output_only, none };
enum class OptimizerKind { sgd, adam, kfac_f, kfac_g };

inline const char* to_string(CouplingMode m) {
  switch (m) {
    case CouplingMode::none: return "none";
    case CouplingMode::l2: return "l2";
    case CouplingMode::weight_decay: return "weight_decay";
  }
  return "?";
}

inline CouplingMode parse_coupling(const std::string& s) {
  if (s == "none") return CouplingMode::none;
  if (s == "l2") return CouplingMode::l2;
  if (s == "weight_decay" || s == "wd") return CouplingMode::weight_decay;
  throw DomainError("unknown coupling '" + s + "'");
}

inline const char* to_string(MaskPreset m) {
  switch (m) {
    case MaskPreset::all: return "all";
    case MaskPreset::hidden_only: return "hidden-only";
    case MaskPreset::output_only: return "output-only";
    case MaskPreset::none: return "none";
  }
  return "?";
}

inline MaskPreset parse_mask(const std::string& s) {
  if (s == "all") return MaskPreset::all;
  if (s == "hidden-only" || s == "hidden_only" || s == "hidden") return MaskPreset::hidden_only;
  if (s == "output-only" || s == "output_only" || s == "output") return MaskPreset::output_only;
  if (s == "none") return MaskPreset::none;
  throw DomainError("unknown mask preset '" + s + "'");
}

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::kfac_f: return "kfac_f";
    case OptimizerKind::kfac_g: return "kfac_g";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "kfac_f" || s == "kfac-f") return OptimizerKind::kfac_f;
  if (s == "kfac_g" || s == "kfac-g") return OptimizerKind::kfac_g;
  throw DomainError("unknown optimizer '" + s + "'");
}

inline std::vector<bool> make_mask(MaskPreset preset, const NetworkSpec& spec) {
  const std::size_t n = spec.num_layers();
  std::vector<bool> mask(n, false);
  for (std::size_t l = 0; l < n; ++l) {
    switch (preset) {
      case MaskPreset::all: mask[l] = true; break;
      case MaskPreset::hidden_only: mask[l] = !spec.is_output(l); break;
      case MaskPreset::output_only: mask[l] = spec.is_output(l); break;
      case MaskPreset::none: break;
    }
  }
  return mask;
}

struct Coupling {
  CouplingMode mode = CouplingMode::none;
  double beta = 0.0;
  std::vector<bool> mask;  // empty: every layer

  bool applies(std::size_t l) const {
    return mode != CouplingMode::none && beta != 0.0 && (mask.empty() || (l < mask.size() && mask[l]));
  }
  bool is_l2(std::size_t l) const { return mode == CouplingMode::l2 && applies(l); }
  bool is_decay(std::size_t l) const { return mode == CouplingMode::weight_decay && applies(l); }
};

/// Step learning rate: eta0 divided by `factor` at every listed epoch boundary.
struct LrSchedule {
  double eta0 = 0.1;
  std::vector<std::size_t> decay_epochs;  // ascending
  double factor = 10.0;

  double at(std::size_t epoch) const {
    double eta = eta0;
    for (std::size_t e : decay_epochs) {
      if (epoch >= e) eta /= factor;
    }
    return eta;
  }

  void validate() const {
    if (!(eta0 > 0.0)) throw DomainError("LrSchedule: eta0 must be > 0");
    for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] <= decay_epochs[i - 1]) throw DomainError("LrSchedule: epochs must ascend");
    }
  }
};

namespace detail {

inline void check_grads(const NetworkParams& params, const Gradients& g) {
  if (g.weights.size() != params.weights.size() || g.biases.size() != params.biases.size()) {
    throw StructuralError("optimizer: gradient layout does not match the parameters");
  }
}

inline void check_decay_rate(double lr, const Coupling& c, std::size_t l) {
  if (c.applies(l) && lr * c.beta >= 1.0) {
    throw InstabilityError("decay factor 1 - eta*beta = " + std::to_string(1.0 - lr * c.beta) +
                           " is not positive");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SGD

struct SgdConfig {
  double momentum = 0.0;
};

class Sgd {
 public:
  explicit Sgd(LrSchedule schedule, SgdConfig cfg = {}) : schedule_(std::move(schedule)), cfg_(cfg) {
    schedule_.validate();
    lr_ = schedule_.eta0;
  }

  double lr() const { return lr_; }
  const LrSchedule& schedule() const { return schedule_; }
  void apply_lr_schedule(std::size_t epoch) { lr_ = schedule_.at(epoch); }

  void step(NetworkParams& params, const Gradients& grads, const Coupling& coupling) {
    detail::check_grads(params, grads);
    if (cfg_.momentum != 0.0 && velocity_w_.empty()) {
      for (const Matrix& w : params.weights) velocity_w_.push_back(Matrix::Zero(w.rows(), w.cols()));
      for (const Vector& b : params.biases) velocity_b_.push_back(Vector::Zero(b.size()));
    }
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      detail::check_decay_rate(lr_, coupling, l);
      update(params.weights[l], grads.weights[l], coupling, l, cfg_.momentum != 0.0 ? &velocity_w_[l] : nullptr);
      if (!params.biases.empty()) {
        update(params.biases[l], grads.biases[l], coupling, l, cfg_.momentum != 0.0 ? &velocity_b_[l] : nullptr);
      }
    }
  }

 private:
  template <typename T>
  void update(T& theta, const T& g, const Coupling& c, std::size_t l, T* velocity) {
    const double shrink = c.applies(l) ? 1.0 - lr_ * c.beta : 1.0;
    if (velocity == nullptr) {
      // Without momentum theta - eta (g + beta theta) and (1 - eta beta) theta - eta g
      // are the same update; both couplings evaluate the latter expression.
      theta = shrink * theta - lr_ * g;
      return;
    }
    if (c.is_l2(l)) {
      *velocity = cfg_.momentum * *velocity + (g + c.beta * theta);
      theta -= lr_ * *velocity;
    } else {
      *velocity = cfg_.momentum * *velocity + g;
      theta = (c.is_decay(l) ? shrink : 1.0) * theta - lr_ * *velocity;
    }
  }

  LrSchedule schedule_;
  SgdConfig cfg_;
  double lr_ = 0.0;
  std::vector<Matrix> velocity_w_;
  std::vector<Vector> velocity_b_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(LrSchedule schedule, AdamConfig cfg = {}) : schedule_(std::move(schedule)), cfg_(cfg) {
    schedule_.validate();
    lr_ = schedule_.eta0;
  }

  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }
  void apply_lr_schedule(std::size_t epoch) { lr_ = schedule_.at(epoch); }

  void step(NetworkParams& params, const Gradients& grads, const Coupling& coupling) {
    detail::check_grads(params, grads);
    if (m_w_.empty()) {
      for (const Matrix& w : params.weights) {
        m_w_.push_back(Matrix::Zero(w.rows(), w.cols()));
        v_w_.push_back(Matrix::Zero(w.rows(), w.cols()));
      }
      for (const Vector& b : params.biases) {
        m_b_.push_back(Vector::Zero(b.size()));
        v_b_.push_back(Vector::Zero(b.size()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      detail::check_decay_rate(lr_, coupling, l);
      update(params.weights[l], grads.weights[l], m_w_[l], v_w_[l], coupling, l, c1, c2);
      if (!params.biases.empty()) update(params.biases[l], grads.biases[l], m_b_[l], v_b_[l], coupling, l, c1, c2);
    }
  }

 private:
  template <typename T>
  void update(T& theta, const T& grad, T& m, T& v, const Coupling& c, std::size_t l, double c1, double c2) {
    const T g = c.is_l2(l) ? T(grad + c.beta * theta) : grad;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    theta.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    if (c.is_decay(l)) theta *= 1.0 - lr_ * c.beta;
  }

  LrSchedule schedule_;
  AdamConfig cfg_;
  double lr_ = 0.0;
  std::size_t t_ = 0;
  std::vector<Matrix> m_w_, v_w_;
  std::vector<Vector> m_b_, v_b_;
};

// ---------------------------------------------------------------------------
// K-FAC

struct KfacConfig {
  CurvatureMetric metric = CurvatureMetric::gn;
  double damping = 1e-3;
  std::size_t t_stats = 10;
  std::size_t t_inv = 100;
  double ema_decay = 0.95;
  DampingMode damping_mode = DampingMode::factored;
  // Shrink by beta * W instead of eta * beta * W, as in the pseudo-code form.
  bool alg1_literal = false;
};

class Kfac {
 public:
  Kfac(LrSchedule schedule, KfacConfig cfg) : schedule_(std::move(schedule)), cfg_(cfg) {
    schedule_.validate();
    if (!(cfg_.damping > 0.0)) throw DomainError("Kfac: damping must be > 0");
    if (cfg_.t_stats == 0 || cfg_.t_inv == 0) throw DomainError("Kfac: update intervals must be >= 1");
    lr_ = schedule_.eta0;
  }

  double lr() const { return lr_; }
  const KfacConfig& config() const { return cfg_; }
  const KfacFactors& factors() const { return factors_; }
  std::size_t steps() const { return k_; }
  void apply_lr_schedule(std::size_t epoch) { lr_ = schedule_.at(epoch); }

  /// True when the upcoming step refreshes the factor statistics.
  bool stats_due() const { return k_ == 0 || (k_ + 1) % cfg_.t_stats == 0; }
  bool inverse_due() const { return k_ == 0 || (k_ + 1) % cfg_.t_inv == 0; }

  /// Folds freshly estimated factors into the running averages. The first
  /// estimate initialises the averages directly.
  void observe(const KfacFactors& fresh) {
    if (!initialized_) {
      factors_.A = fresh.A;
      factors_.S = fresh.S;
      initialized_ = true;
    } else {
      factors_ = update_factors_ema(factors_, fresh, cfg_.ema_decay);
    }
    factors_.stats_age = 0;
  }

  /// Installs factors verbatim (tests, warm starts).
  void set_factors(const KfacFactors& f) {
    factors_.A = f.A;
    factors_.S = f.S;
    initialized_ = true;
  }

  void step(NetworkParams& params, const Gradients& grads, const Coupling& coupling) {
    detail::check_grads(params, grads);
    if (!initialized_) throw ContractError("Kfac::step: factors must be observed before the first step");
    const bool refresh = inverse_due();
    ++k_;
    if (refresh) recompute_inverses();
    ++factors_.stats_age;
    ++factors_.inverse_age;
    const bool bias = !params.biases.empty();
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      if (!cfg_.alg1_literal) detail::check_decay_rate(lr_, coupling, l);
      Matrix& w = params.weights[l];
      Matrix theta = w;  // out x (in [+1])
      Matrix v = grads.weights[l];
      if (bias) {
        theta.conservativeResize(Eigen::NoChange, w.cols() + 1);
        theta.col(w.cols()) = params.biases[l];
        v.conservativeResize(Eigen::NoChange, w.cols() + 1);
        v.col(w.cols()) = grads.biases[l];
      }
      if (coupling.is_l2(l)) v += coupling.beta * theta;
      const Matrix delta = precondition(l, v);
      if (!delta.allFinite()) throw NumericalError("Kfac::step: non-finite preconditioned gradient in layer " + std::to_string(l));
      Matrix next = theta - lr_ * delta;
      if (coupling.is_decay(l)) next -= (cfg_.alg1_literal ? coupling.beta : lr_ * coupling.beta) * theta;
      w = next.leftCols(w.cols());
      if (bias) params.biases[l] = next.col(w.cols());
    }
  }

  /// S_d^-1 V A_d^-1 for V in the out x in(+1) weight layout.
  Matrix precondition(std::size_t l, const Matrix& v) const {
    if (cfg_.damping_mode == DampingMode::factored) return factors_.S_inv[l] * v * factors_.A_inv[l];
    // Dense: theta_l's canonical (row-major) order is vec of V^T.
    const Matrix vt = v.transpose();
    const Vector solved = dense_inv_[l] * vec(vt);
    return unvec(solved, vt.rows(), vt.cols()).transpose();
  }

  void recompute_inverses() {
    factors_.A_inv.clear();
    factors_.S_inv.clear();
    dense_inv_.clear();
    for (std::size_t l = 0; l < factors_.A.size(); ++l) {
      if (cfg_.damping_mode == DampingMode::factored) {
        const double root = std::sqrt(cfg_.damping);
        factors_.A_inv.push_back(damped_inverse(factors_.A[l], root));
        factors_.S_inv.push_back(damped_inverse(factors_.S[l], root));
      } else {
        dense_inv_.push_back(damped_inverse(kfac_block(factors_, l), cfg_.damping));
      }
    }
    factors_.inverse_age = 0;
  }

 private:
  LrSchedule schedule_;
  KfacConfig cfg_;
  double lr_ = 0.0;
  std::size_t k_ = 0;
  bool initialized_ = false;
  KfacFactors factors_;
  std::vector<Matrix> dense_inv_;
};

/// One complete K-FAC iteration on a mini-batch: forward, gradient, factor
/// refresh when due, preconditioned update. Returns the mini-batch loss.
inline double kfac_step(Kfac& opt, const NetworkSpec& spec, NetworkParams& params, BatchNormState* bn,
                        const Matrix& x, const Targets& y, LossKind loss, const Coupling& coupling, Rng& rng) {
  const ForwardTrace trace = forward(spec, params, x, Mode::train, bn);
  const LossResult lr = loss_and_grad(loss, trace.logits, y);
  const Gradients grads = backward(spec, params, trace, lr.grad);
  if (opt.stats_due()) opt.observe(estimate_kfac_factors(opt.config().metric, spec, params, trace, loss, &rng));
  opt.step(params, grads, coupling);
  return lr.loss;
}

// ---------------------------------------------------------------------------
// First-order predictions for the weight direction of a scale-invariant layer

namespace detail {

inline void check_unit(const Vector& theta_hat, double norm) {
  if (!(norm > 0.0)) throw DegenerateError("normalized step: weight norm must be > 0");
  if (std::abs(theta_hat.norm() - 1.0) > 1e-10) throw DomainError("normalized step: theta_hat must have unit norm");
}

inline Vector project_out(const Vector& theta_hat, const Vector& v) {
  return v - theta_hat * theta_hat.dot(v);
}

inline Vector finish(Vector v, bool renormalize) {
  if (renormalize) v.normalize();
  return v;
}

}  // namespace detail

/// theta_hat - eta ||theta||^-2 (I - theta_hat theta_hat^T) grad, where grad is
/// the loss gradient evaluated at theta_hat.
inline Vector reference_normalized_sgd_step(const Vector& theta_hat, double norm, const Vector& grad_at_hat,
                                            double eta, bool renormalize = true) {
  detail::check_unit(theta_hat, norm);
  return detail::finish(theta_hat - (eta / (norm * norm)) * detail::project_out(theta_hat, grad_at_hat), renormalize);
}

/// theta_hat - eta (I - theta_hat theta_hat^T) (C(theta_hat) + ||theta||^2 lambda I)^-1 grad.
inline Vector reference_normalized_kfac_step(const Vector& theta_hat, double norm, const Matrix& curvature_at_hat,
                                             double lambda, const Vector& grad_at_hat, double eta,
                                             bool renormalize = true) {
  detail::check_unit(theta_hat, norm);
  require_square(curvature_at_hat, "reference_normalized_kfac_step");
  if (lambda < 0.0) throw DomainError("reference_normalized_kfac_step: lambda must be >= 0");
  Matrix damped = curvature_at_hat;
  damped.diagonal().array() += norm * norm * lambda;
  Eigen::LDLT<Matrix> ldlt(damped);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError("reference_normalized_kfac_step: damped curvature is singular");
  }
  const Vector u = ldlt.solve(grad_at_hat);
  if (!u.allFinite()) throw NumericalError("reference_normalized_kfac_step: non-finite solve");
  return detail::finish(theta_hat - eta * detail::project_out(theta_hat, u), renormalize);
}

}  // namespace wdlab
