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

// Fully-connected feed-forward networks: optional batch normalization before
// the activation on hidden layers, optional biases, forward/backward passes
// with trace capture and exact Jacobians.
//
// Conventions used throughout the library:
//  - batches are row-major in the example index: X is n x d, logits n x k;
//  - layer l maps a_l (in_l) to s_l = W_l a_l + b_l with W_l stored out_l x in_l;
//  - there are L+1 weight layers for a network of depth L, the last one is
//    the output layer and never carries BN or an activation;
//  - the canonical flattening of theta walks layers in order, each layer's
//    W_l in row-major order followed by b_l when biases are enabled.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "wdlab/error.hpp"
#include "wdlab/linalg.hpp"

namespace wdlab {

using Rng = std::mt19937_64;

enum class Activation { relu, identity };
enum class Mode { train, eval };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw DomainError("unknown activation '" + s + "'");
}

/// BN without the affine part: gamma = 1 and beta = 0 are frozen.
struct BatchNormConfig {
  static constexpr double gamma = 1.0;
  static constexpr double beta = 0.0;
  double epsilon = 1e-8;
  double running_decay = 0.9;
};

struct NetworkSpec {
  std::vector<std::size_t> layer_dims;  // d, hidden..., k
  Activation activation = Activation::relu;
  std::vector<bool> use_bn;  // one flag per hidden layer
  bool use_bias = false;
  BatchNormConfig bn;

  std::size_t num_layers() const { return layer_dims.size() < 2 ? 0 : layer_dims.size() - 1; }
  std::size_t depth() const { return num_layers() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t in_dim(std::size_t l) const { return layer_dims[l]; }
  std::size_t out_dim(std::size_t l) const { return layer_dims[l + 1]; }
  bool is_output(std::size_t l) const { return l + 1 == num_layers(); }

  bool bn_covers(std::size_t l) const {
    return !is_output(l) && l < use_bn.size() && use_bn[l];
  }

  bool any_bn() const {
    for (std::size_t l = 0; l + 1 < num_layers(); ++l) {
      if (bn_covers(l)) return true;
    }
    return false;
  }

  void validate() const {
    if (num_layers() < 1) throw StructuralError("NetworkSpec: need at least one weight layer");
    for (std::size_t d : layer_dims) {
      if (d == 0) throw StructuralError("NetworkSpec: zero-width layer");
    }
    if (!use_bn.empty() && use_bn.size() != num_layers() - 1) {
      throw StructuralError("NetworkSpec: use_bn needs one flag per hidden layer (" +
                            std::to_string(num_layers() - 1) + "), got " +
                            std::to_string(use_bn.size()));
    }
    if (!(bn.epsilon > 0.0)) throw DomainError("NetworkSpec: BN epsilon must be > 0");
  }
};

/// MLP with the same BN flag on every hidden layer.
inline NetworkSpec make_mlp(std::vector<std::size_t> dims, Activation act, bool bn_hidden = false,
                            bool bias = false) {
  NetworkSpec spec;
  spec.layer_dims = std::move(dims);
  spec.activation = act;
  spec.use_bn.assign(spec.num_layers() - 1, bn_hidden);
  spec.use_bias = bias;
  spec.validate();
  return spec;
}

struct NetworkParams {
  std::vector<Matrix> weights;  // W_l, out_l x in_l
  std::vector<Vector> biases;   // empty when the network is bias-free

  std::size_t num_layers() const { return weights.size(); }
};

/// Running statistics for eval-mode BN. Entries for non-BN layers are empty.
struct BatchNormState {
  std::vector<Vector> mean;
  std::vector<Vector> var;

  static BatchNormState initial(const NetworkSpec& spec) {
    BatchNormState s;
    s.mean.resize(spec.num_layers());
    s.var.resize(spec.num_layers());
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      if (spec.bn_covers(l)) {
        s.mean[l] = Vector::Zero(spec.out_dim(l));
        s.var[l] = Vector::Ones(spec.out_dim(l));
      }
    }
    return s;
  }

  /// Keeps eval-mode outputs consistent after W_l has been multiplied by alpha.
  void rescale(std::size_t l, double alpha) {
    if (l < mean.size() && mean[l].size() > 0) {
      mean[l] *= alpha;
      var[l] *= alpha * alpha;
    }
  }
};

struct LayerTrace {
  Matrix input;       // a_l, n x in
  Matrix pre;         // s_l (pre-BN), n x out
  Vector mean;        // BN statistics actually used (batch or running); empty without BN
  Vector stddev;
  Matrix normalized;  // z_l: BN(s_l), or s_l when the layer has no BN
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Matrix logits;
  Mode mode = Mode::train;

  std::size_t batch_size() const { return static_cast<std::size_t>(logits.rows()); }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Matrix> s_grads;  // dL/ds_l for the mean loss, n x out_l
};

// ---------------------------------------------------------------------------
// Parameter layout

inline std::size_t layer_param_count(const NetworkSpec& spec, std::size_t l) {
  return spec.out_dim(l) * spec.in_dim(l) + (spec.use_bias ? spec.out_dim(l) : 0);
}

inline std::size_t layer_offset(const NetworkSpec& spec, std::size_t l) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += layer_param_count(spec, i);
  return off;
}

inline std::size_t param_count(const NetworkSpec& spec) {
  return layer_offset(spec, spec.num_layers());
}

inline void check_params(const NetworkSpec& spec, const NetworkParams& params) {
  if (params.weights.size() != spec.num_layers()) {
    throw StructuralError("NetworkParams: expected " + std::to_string(spec.num_layers()) +
                          " weight matrices, got " + std::to_string(params.weights.size()));
  }
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Matrix& w = params.weights[l];
    if (static_cast<std::size_t>(w.rows()) != spec.out_dim(l) ||
        static_cast<std::size_t>(w.cols()) != spec.in_dim(l)) {
      throw StructuralError("NetworkParams: layer " + std::to_string(l) + " is " + shape_of(w));
    }
  }
  if (spec.use_bias) {
    if (params.biases.size() != spec.num_layers()) {
      throw StructuralError("NetworkParams: missing biases");
    }
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      if (static_cast<std::size_t>(params.biases[l].size()) != spec.out_dim(l)) {
        throw StructuralError("NetworkParams: bias " + std::to_string(l) + " has wrong size");
      }
    }
  } else if (!params.biases.empty()) {
    throw StructuralError("NetworkParams: biases given for a bias-free network");
  }
}

inline Vector flatten(const NetworkSpec& spec, const NetworkParams& params) {
  Vector theta(param_count(spec));
  std::size_t k = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Matrix& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) theta[k++] = w(r, c);
    }
    if (spec.use_bias) {
      for (Eigen::Index r = 0; r < params.biases[l].size(); ++r) theta[k++] = params.biases[l][r];
    }
  }
  return theta;
}

inline NetworkParams unflatten(const NetworkSpec& spec, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != param_count(spec)) {
    throw StructuralError("unflatten: expected " + std::to_string(param_count(spec)) +
                          " parameters, got " + std::to_string(theta.size()));
  }
  NetworkParams p;
  std::size_t k = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Matrix w(spec.out_dim(l), spec.in_dim(l));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = theta[k++];
    }
    p.weights.push_back(std::move(w));
    if (spec.use_bias) {
      Vector b(spec.out_dim(l));
      for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = theta[k++];
      p.biases.push_back(std::move(b));
    }
  }
  return p;
}

/// Zero-mean Gaussian weights, std sqrt(2/in) for ReLU and sqrt(1/in) for linear nets.
inline NetworkParams init_params(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  NetworkParams p;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double gain = spec.activation == Activation::relu ? 2.0 : 1.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(spec.in_dim(l))));
    Matrix w(spec.out_dim(l), spec.in_dim(l));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    p.weights.push_back(std::move(w));
    if (spec.use_bias) p.biases.push_back(Vector::Zero(spec.out_dim(l)));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline Matrix activate(Activation act, const Matrix& z) {
  return act == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
}

// ReLU'(0) is taken to be 0.
inline Matrix activation_grad(Activation act, const Matrix& z) {
  if (act == Activation::identity) return Matrix::Ones(z.rows(), z.cols());
  return (z.array() > 0.0).cast<double>().matrix();
}

}  // namespace detail

/// Runs the network on X. In train mode BN uses batch statistics (biased
/// variance) and, when `state` is given, folds them into the running
/// averages. In eval mode BN uses `state`, which is then required.
inline ForwardTrace forward(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                            Mode mode, BatchNormState* state = nullptr) {
  check_params(spec, params);
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) {
    throw StructuralError("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(spec.input_dim()));
  }
  const Eigen::Index n = x.rows();
  if (mode == Mode::train && spec.any_bn() && n < 2) {
    throw DegenerateError("forward: batch normalization in train mode needs at least 2 examples");
  }
  if (mode == Mode::eval && spec.any_bn() && state == nullptr) {
    throw StructuralError("forward: eval mode with BN needs running statistics");
  }

  ForwardTrace trace;
  trace.mode = mode;
  trace.layers.resize(spec.num_layers());
  Matrix a = x;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    LayerTrace& lt = trace.layers[l];
    lt.input = std::move(a);
    lt.pre = lt.input * params.weights[l].transpose();
    if (spec.use_bias) lt.pre.rowwise() += params.biases[l].transpose();
    if (spec.bn_covers(l)) {
      if (mode == Mode::train) {
        lt.mean = lt.pre.colwise().mean().transpose();
        const Vector var =
            (lt.pre.rowwise() - lt.mean.transpose()).array().square().colwise().mean().transpose();
        lt.stddev = (var.array() + spec.bn.epsilon).sqrt();
        if (state != nullptr) {
          const double d = spec.bn.running_decay;
          state->mean[l] = d * state->mean[l] + (1.0 - d) * lt.mean;
          state->var[l] = d * state->var[l] + (1.0 - d) * var;
        }
      } else {
        lt.mean = state->mean[l];
        lt.stddev = (state->var[l].array() + spec.bn.epsilon).sqrt();
      }
      lt.normalized = ((lt.pre.rowwise() - lt.mean.transpose()).array().rowwise() /
                       lt.stddev.transpose().array())
                          .matrix();
      if (BatchNormConfig::gamma != 1.0 || BatchNormConfig::beta != 0.0) {
        lt.normalized = (lt.normalized.array() * BatchNormConfig::gamma + BatchNormConfig::beta).matrix();
      }
    } else {
      lt.normalized = lt.pre;
    }
    if (spec.is_output(l)) {
      trace.logits = lt.normalized;
    } else {
      a = detail::activate(spec.activation, lt.normalized);
    }
  }
  return trace;
}

/// Reverse pass from a seed on the logits to every layer's pre-activation s_l.
/// With `through_batch_stats` the BN mean and deviation are differentiated as
/// functions of the batch; otherwise they are held fixed (per-example affine BN).
inline std::vector<Matrix> backprop_to_pre(const NetworkSpec& spec, const NetworkParams& params,
                                           const ForwardTrace& trace, const Matrix& seed,
                                           bool through_batch_stats) {
  const std::size_t layers = spec.num_layers();
  if (trace.layers.size() != layers || seed.rows() != trace.logits.rows() ||
      seed.cols() != trace.logits.cols()) {
    throw StructuralError("backprop: seed is " + shape_of(seed) + ", logits are " +
                          shape_of(trace.logits));
  }
  std::vector<Matrix> ds(layers);
  ds[layers - 1] = seed;
  for (std::size_t l = layers - 1; l-- > 0;) {
    const LayerTrace& lt = trace.layers[l];
    Matrix g = ds[l + 1] * params.weights[l + 1];
    g.array() *= detail::activation_grad(spec.activation, lt.normalized).array();
    if (spec.bn_covers(l)) {
      if (through_batch_stats) {
        const Matrix& xhat = lt.normalized;
        const Eigen::RowVectorXd mean_g = g.colwise().mean();
        const Eigen::RowVectorXd mean_gx = (g.array() * xhat.array()).colwise().mean();
        g = g.rowwise() - mean_g;
        g.array() -= xhat.array().rowwise() * mean_gx.array();
      }
      g.array().rowwise() /= lt.stddev.transpose().array();
    }
    ds[l] = std::move(g);
  }
  return ds;
}

/// Gradients of the loss whose logit-gradient is dL_dlogits. Train-mode traces
/// differentiate through BN batch statistics.
inline Gradients backward(const NetworkSpec& spec, const NetworkParams& params, const ForwardTrace& trace,
                          const Matrix& dL_dlogits) {
  Gradients g;
  g.s_grads = backprop_to_pre(spec, params, trace, dL_dlogits, trace.mode == Mode::train);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    g.weights.push_back(g.s_grads[l].transpose() * trace.layers[l].input);
    if (spec.use_bias) g.biases.push_back(g.s_grads[l].colwise().sum().transpose());
  }
  return g;
}

/// d f / d s_l for example `i` of a trace, as k x out_l matrices, BN statistics
/// held fixed at the values recorded in the trace.
inline std::vector<Matrix> output_sensitivities(const NetworkSpec& spec, const NetworkParams& params,
                                                const ForwardTrace& trace, std::size_t i) {
  const std::size_t layers = spec.num_layers();
  const Eigen::Index k = static_cast<Eigen::Index>(spec.output_dim());
  std::vector<Matrix> sens(layers);
  sens[layers - 1] = Matrix::Identity(k, k);
  for (std::size_t l = layers - 1; l-- > 0;) {
    const LayerTrace& lt = trace.layers[l];
    Matrix r = sens[l + 1] * params.weights[l + 1];
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      double scale = spec.activation == Activation::relu ? (lt.normalized(i, j) > 0.0 ? 1.0 : 0.0) : 1.0;
      if (spec.bn_covers(l)) scale /= lt.stddev[j];
      r.col(j) *= scale;
    }
    sens[l] = std::move(r);
  }
  return sens;
}

/// J_theta (k x P) of the logits of example `i`, canonical column order.
inline Matrix param_jacobian_at(const NetworkSpec& spec, const NetworkParams& params,
                                const ForwardTrace& trace, std::size_t i) {
  const std::vector<Matrix> sens = output_sensitivities(spec, params, trace, i);
  const Eigen::Index k = static_cast<Eigen::Index>(spec.output_dim());
  Matrix jac(k, static_cast<Eigen::Index>(param_count(spec)));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto off = static_cast<Eigen::Index>(layer_offset(spec, l));
    const auto in = static_cast<Eigen::Index>(spec.in_dim(l));
    const auto out = static_cast<Eigen::Index>(spec.out_dim(l));
    const auto a = trace.layers[l].input.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index r = 0; r < out; ++r) {
      jac.middleCols(off + r * in, in) = sens[l].col(r) * a;
    }
    if (spec.use_bias) jac.middleCols(off + out * in, out) = sens[l];
  }
  return jac;
}

inline ForwardTrace forward_single(const NetworkSpec& spec, const NetworkParams& params, const Vector& x,
                                   const BatchNormState* state) {
  Matrix row = x.transpose();
  if (spec.any_bn()) {
    if (state == nullptr) throw StructuralError("single-example evaluation with BN needs running statistics");
    BatchNormState copy = *state;
    return forward(spec, params, row, Mode::eval, &copy);
  }
  return forward(spec, params, row, Mode::eval, nullptr);
}

/// Exact J_x = df/dx (k x d) at x. BN layers use the running statistics.
inline Matrix input_jacobian(const NetworkSpec& spec, const NetworkParams& params, const Vector& x,
                             const BatchNormState* state = nullptr) {
  const ForwardTrace trace = forward_single(spec, params, x, state);
  const std::vector<Matrix> sens = output_sensitivities(spec, params, trace, 0);
  return sens[0] * params.weights[0];
}

constexpr std::size_t kDefaultParamCap = 20000;

inline Matrix param_jacobian(const NetworkSpec& spec, const NetworkParams& params, const Vector& x,
                             const BatchNormState* state = nullptr, std::size_t cap = kDefaultParamCap) {
  if (param_count(spec) > cap) {
    throw CapacityError("param_jacobian: " + std::to_string(param_count(spec)) +
                        " parameters exceed the cap of " + std::to_string(cap));
  }
  const ForwardTrace trace = forward_single(spec, params, x, state);
  return param_jacobian_at(spec, params, trace, 0);
}

/// Smallest |s| over hidden pre-activations; small values sit near a ReLU kink.
inline double min_abs_hidden_activation(const NetworkSpec& spec, const ForwardTrace& trace) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < spec.num_layers(); ++l) {
    if (trace.layers[l].normalized.size() > 0) {
      m = std::min(m, trace.layers[l].normalized.cwiseAbs().minCoeff());
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Weight-scale utilities

inline NetworkParams scale_layer(const NetworkParams& params, std::size_t l, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("scale_layer: alpha must be > 0");
  if (l >= params.weights.size()) throw StructuralError("scale_layer: no layer " + std::to_string(l));
  NetworkParams out = params;
  out.weights[l] *= alpha;
  return out;
}

inline std::vector<double> layer_norms(const NetworkParams& params) {
  std::vector<double> norms;
  norms.reserve(params.weights.size());
  for (const Matrix& w : params.weights) norms.push_back(w.norm());
  return norms;
}

}  // namespace wdlab
