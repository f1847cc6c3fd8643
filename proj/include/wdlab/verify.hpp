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

// Randomized property checks of the exact identities relating network
// outputs, Jacobians, Gauss-Newton/Fisher curvature and normalized updates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wdlab/curvature.hpp"
#include "wdlab/diagnostics.hpp"
#include "wdlab/harness/data.hpp"
#include "wdlab/nn.hpp"
#include "wdlab/optim.hpp"

namespace wdlab::verify {

struct CheckReport {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::uint64_t seed = 0;
  // Negative control: the identity must visibly fail once its hypothesis is dropped.
  std::optional<double> control_error;
  bool controls_ok = true;
  double seconds = 0.0;

  void finish() { pass = max_rel_error <= tolerance && controls_ok; }
};

inline nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j = {{"name", r.name},           {"trials", r.trials}, {"max_rel_error", r.max_rel_error},
                      {"tolerance", r.tolerance}, {"pass", r.pass},     {"seed", r.seed},
                      {"seconds", r.seconds}};
  if (r.control_error) {
    j["control_error"] = *r.control_error;
    j["controls_ok"] = r.controls_ok;
  }
  return j;
}

/// Jacobian routines the checks go through; tests swap in corrupted versions.
struct Backend {
  std::function<Matrix(const NetworkSpec&, const NetworkParams&, const Vector&)> input_jacobian =
      [](const NetworkSpec& s, const NetworkParams& p, const Vector& x) { return wdlab::input_jacobian(s, p, x); };
  std::function<Matrix(const NetworkSpec&, const NetworkParams&, const Vector&)> param_jacobian =
      [](const NetworkSpec& s, const NetworkParams& p, const Vector& x) { return wdlab::param_jacobian(s, p, x); };
};

inline constexpr std::size_t kDefaultTrials = 100;
inline constexpr double kBnEpsilon = 1e-14;

namespace detail {

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Random MLP dims: input, `hidden` hidden widths, output.
inline std::vector<std::size_t> random_dims(Rng& rng, std::size_t hidden, std::size_t lo, std::size_t hi,
                                            std::size_t k_lo, std::size_t k_hi) {
  std::vector<std::size_t> dims{uniform(rng, lo, hi)};
  for (std::size_t i = 0; i < hidden; ++i) dims.push_back(uniform(rng, lo, hi));
  dims.push_back(uniform(rng, k_lo, k_hi));
  return dims;
}

inline double min_abs_pre(const ForwardTrace& t) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < t.layers.size(); ++l) m = std::min(m, t.layers[l].pre.cwiseAbs().minCoeff());
  return m;
}

// Parameters and inputs kept away from ReLU kinks: every hidden
// pre-activation has magnitude at least `margin` and no output row is zero.
// Parameters are redrawn when a net turns out to be dead.
inline std::pair<NetworkParams, Matrix> generic_point(const NetworkSpec& spec, Rng& rng, Eigen::Index n,
                                                      double margin) {
  for (int net = 0; net < 100; ++net) {
    NetworkParams p = init_params(spec, rng);
    for (int attempt = 0; attempt < 50; ++attempt) {
      Matrix x = gaussian(rng, n, static_cast<Eigen::Index>(spec.input_dim()));
      const ForwardTrace t = forward(spec, p, x, Mode::eval);
      if (spec.activation == Activation::relu && min_abs_pre(t) < margin) continue;
      if (t.logits.rowwise().norm().minCoeff() < 1e-8) continue;
      return {std::move(p), std::move(x)};
    }
  }
  throw DegenerateError("verify: could not sample inputs away from activation kinks");
}

inline NetworkSpec with_bn_epsilon(NetworkSpec s) {
  s.bn.epsilon = kBnEpsilon;
  return s;
}

template <typename F>
CheckReport run_check(const std::string& name, std::size_t trials, std::uint64_t seed, double tol, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckReport r;
  r.name = name;
  r.trials = trials;
  r.seed = seed;
  r.tolerance = tol;
  Rng rng(seed);
  body(r, rng);
  r.finish();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline void track(CheckReport& r, double err) {
  if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
  r.max_rel_error = std::max(r.max_rel_error, err);
}

// Loss gradient wrt layer l's weights (flattened row-major) on a fixed batch,
// train-mode BN, other layers held at `p`.
inline Vector layer_gradient(const NetworkSpec& spec, const NetworkParams& p, const Matrix& x, const Targets& y,
                             std::size_t l) {
  const ForwardTrace t = forward(spec, p, x, Mode::train);
  const Gradients g = backward(spec, p, t, loss_and_grad(LossKind::cross_entropy, t.logits, y).grad);
  const Matrix gt = g.weights[l].transpose();
  return Eigen::Map<const Vector>(gt.data(), gt.size());
}

inline Matrix unflatten_layer(const Vector& v, const Matrix& shape) {
  Matrix out(shape.rows(), shape.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = v.segment(r * out.cols(), out.cols()).transpose();
  return out;
}

inline Vector flatten_layer(const Matrix& w) {
  const Matrix wt = w.transpose();
  return Eigen::Map<const Vector>(wt.data(), wt.size());
}

// Least-squares slope of log(err) against log(eta).
inline double loglog_slope(const std::vector<double>& eta, const std::vector<double>& err) {
  const std::size_t n = eta.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(eta[i]);
    my += std::log(err[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(eta[i]) - mx) * (std::log(err[i]) - my);
    sxx += (std::log(eta[i]) - mx) * (std::log(eta[i]) - mx);
  }
  return sxy / sxx;
}

}  // namespace detail

/// f = J_x x and f = J_theta theta / (L+1) on bias-free rectified nets.
inline CheckReport check_jacobian_homogeneity(std::size_t trials = kDefaultTrials, std::uint64_t seed = 1,
                                              const Backend& backend = {}) {
  return detail::run_check("jacobian_homogeneity", trials, seed, 1e-9, [&](CheckReport& r, Rng& rng) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 1, 4);
      const Activation act = t % 4 == 3 ? Activation::identity : Activation::relu;
      const NetworkSpec spec = make_mlp(detail::random_dims(rng, depth, 2, 16, 1, 8), act);
      const auto [p, xs] = detail::generic_point(spec, rng, 1, 1e-6);
      const Vector x = xs.row(0).transpose();
      const Vector f = forward(spec, p, x.transpose(), Mode::eval).logits.row(0).transpose();
      const Vector via_input = backend.input_jacobian(spec, p, x) * x;
      const Vector via_params =
          backend.param_jacobian(spec, p, x) * flatten(spec, p) / static_cast<double>(depth + 1);
      detail::track(r, relative_error(via_input, f));
      detail::track(r, relative_error(via_params, f));
    }
  });
}

/// ||theta||_G^2 = (L+1)^2 E||f||^2 against the dense GN quadratic form, and
/// the block-diagonal norm = (L+1) E||f||^2 on linear nets.
inline CheckReport check_gn_norm_identities(std::size_t trials = kDefaultTrials, std::uint64_t seed = 2) {
  return detail::run_check("gn_norm_identities", trials, seed, 1e-8, [&](CheckReport& r, Rng& rng) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 0, 3);
      const Activation act = t % 2 == 0 ? Activation::relu : Activation::identity;
      const NetworkSpec spec = make_mlp(detail::random_dims(rng, depth, 2, 7, 1, 4), act);
      const NetworkParams p = init_params(spec, rng);
      const Matrix x = detail::gaussian(rng, static_cast<Eigen::Index>(detail::uniform(rng, 3, 10)),
                                        static_cast<Eigen::Index>(spec.input_dim()));
      const Vector theta = flatten(spec, p);
      const Matrix g = dense_curvature(CurvatureKind::gauss_newton, spec, p, x, LossKind::squared_error);
      detail::track(r, relative_error(gn_norm(spec, p, x), theta.dot(g * theta)));
      if (act == Activation::identity) {
        const double mean_f = forward(spec, p, x, Mode::eval).logits.squaredNorm() / static_cast<double>(x.rows());
        const double want = static_cast<double>(depth + 1) * mean_f;
        double blocks = 0.0;
        for (std::size_t l = 0; l < spec.num_layers(); ++l) {
          const Vector tl = theta.segment(static_cast<Eigen::Index>(layer_offset(spec, l)),
                                          static_cast<Eigen::Index>(layer_param_count(spec, l)));
          blocks += tl.dot(layer_block(g, spec, l) * tl);
        }
        detail::track(r, relative_error(blocks, want));
        detail::track(r, relative_error(kfac_gn_norm(spec, p, x), want));
        detail::track(r, relative_error(kfac_factored_gn_norm(spec, p, x), want));
      }
    }
  });
}

/// Block GN norm = (L+1) E||J_x||_F^2 for linear nets on whitened inputs. The
/// control repeats the comparison on the raw (correlated, shifted) inputs.
inline CheckReport check_kfac_gn_jacobian(std::size_t trials = kDefaultTrials, std::uint64_t seed = 3) {
  return detail::run_check("kfac_gn_jacobian", trials, seed, 1e-8, [&](CheckReport& r, Rng& rng) {
    std::size_t violated = 0;
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 0, 3);
      const NetworkSpec spec = make_mlp(detail::random_dims(rng, depth, 2, 8, 1, 5), Activation::identity);
      const NetworkParams p = init_params(spec, rng);
      const auto d = static_cast<Eigen::Index>(spec.input_dim());
      const Eigen::Index n = 3 * d + static_cast<Eigen::Index>(detail::uniform(rng, 2, 20));
      Matrix mix = detail::gaussian(rng, d, d);
      mix.diagonal().array() += 2.0;
      const Matrix raw = (detail::gaussian(rng, n, d) * mix).rowwise() + detail::gaussian(rng, 1, d).row(0);
      const Matrix white = whiten(raw);
      const double scale = static_cast<double>(depth + 1);
      detail::track(r, relative_error(kfac_gn_norm(spec, p, white), scale * jacobian_frob_norm(spec, p, white)));
      const double control = relative_error(kfac_gn_norm(spec, p, raw), scale * jacobian_frob_norm(spec, p, raw));
      smallest = std::min(smallest, control);
      if (control > r.tolerance) ++violated;
    }
    r.control_error = smallest;
    r.controls_ok = violated * 10 >= trials * 9;
  });
}

/// Fisher = generalized GN for softmax cross-entropy, Fisher = GN for squared
/// error with a unit Gaussian model.
inline CheckReport check_equivalences(std::size_t trials = kDefaultTrials, std::uint64_t seed = 4) {
  return detail::run_check("equivalences", trials, seed, 1e-9, [&](CheckReport& r, Rng& rng) {
    for (std::size_t t = 0; t < trials; ++t) {
      const bool ce = t % 2 == 0;
      const std::size_t depth = detail::uniform(rng, 0, 2);
      std::vector<std::size_t> dims = detail::random_dims(rng, depth, 2, 6, ce ? 1 : 1, 5);
      if (ce && t % 10 == 0) dims.back() = 1;
      const NetworkSpec spec = make_mlp(dims, Activation::relu, false, t % 3 == 0);
      const NetworkParams p = init_params(spec, rng);
      const Matrix x = detail::gaussian(rng, 6, static_cast<Eigen::Index>(spec.input_dim()));
      const LossKind loss = ce ? LossKind::cross_entropy : LossKind::squared_error;
      const Matrix f = dense_curvature(CurvatureKind::fisher_exact, spec, p, x, loss);
      const Matrix other =
          dense_curvature(ce ? CurvatureKind::generalized_gn : CurvatureKind::gauss_newton, spec, p, x, loss);
      detail::track(r, relative_error(f, other, 1e-300));
    }
  });
}

/// Train-mode logits are unchanged when a BN-covered layer is scaled by alpha;
/// scaling the (uncovered) output layer is the control.
inline CheckReport check_bn_scale_invariance(std::size_t trials = kDefaultTrials, std::uint64_t seed = 5) {
  return detail::run_check("bn_scale_invariance", trials, seed, 1e-9, [&](CheckReport& r, Rng& rng) {
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 1, 4);
      const NetworkSpec spec =
          detail::with_bn_epsilon(make_mlp(detail::random_dims(rng, depth, 2, 12, 2, 6), Activation::relu, true));
      const NetworkParams p = init_params(spec, rng);
      const Matrix x = detail::gaussian(rng, static_cast<Eigen::Index>(detail::uniform(rng, 4, 16)),
                                        static_cast<Eigen::Index>(spec.input_dim()));
      const Matrix base = forward(spec, p, x, Mode::train).logits;
      for (std::size_t l = 0; l < depth; ++l) {
        for (double alpha : {0.5, 2.0, 10.0}) {
          detail::track(r, relative_error(forward(spec, scale_layer(p, l, alpha), x, Mode::train).logits, base));
        }
      }
      const Matrix moved = forward(spec, scale_layer(p, depth, 2.0), x, Mode::train).logits;
      smallest = std::min(smallest, relative_error(moved, base));
    }
    r.control_error = smallest;
    r.controls_ok = smallest > 1e-3;
  });
}

/// One-step normalized-direction updates of a BN-covered layer against the
/// first-order predictions, for SGD and the damped natural-gradient step. The
/// discrepancy must shrink quadratically in eta: the reported error is
/// max |slope - 2| / 2 over fits of log(err) against log(eta).
inline CheckReport check_update_rules(std::size_t trials = kDefaultTrials, std::uint64_t seed = 6) {
  return detail::run_check("update_rules", trials, seed, 0.1, [&](CheckReport& r, Rng& rng) {
    const std::vector<double> etas{1e-2, 5e-3, 2.5e-3};
    std::size_t done = 0;
    for (std::size_t attempt = 0; done < trials && attempt < 20 * trials; ++attempt) {
      const bool natural = done % 2 == 1;
      const std::size_t depth = detail::uniform(rng, 1, 2);
      const NetworkSpec spec =
          detail::with_bn_epsilon(make_mlp(detail::random_dims(rng, depth, 2, 5, 2, 4), Activation::relu, true));
      NetworkParams p = init_params(spec, rng);
      const std::size_t l = detail::uniform(rng, 0, depth - 1);
      std::uniform_real_distribution<double> norm_dist(0.5, 3.0);
      const double rho = norm_dist(rng);
      p.weights[l] *= rho / p.weights[l].norm();
      const Eigen::Index n = 8;
      const Matrix x = detail::gaussian(rng, n, static_cast<Eigen::Index>(spec.input_dim()));
      std::vector<std::size_t> labels;
      for (Eigen::Index i = 0; i < n; ++i) labels.push_back(detail::uniform(rng, 0, spec.output_dim() - 1));
      const Targets y = Targets::classes(labels);

      const Vector theta = detail::flatten_layer(p.weights[l]);
      const Vector hat = theta / rho;
      NetworkParams at_hat = p;
      at_hat.weights[l] /= rho;
      const Vector grad = detail::layer_gradient(spec, p, x, y, l);
      const Vector grad_hat = detail::layer_gradient(spec, at_hat, x, y, l);

      Matrix c, c_hat;
      double lambda = 0.0;
      if (natural) {
        const CurvatureKind kind = done % 4 == 1 ? CurvatureKind::gauss_newton : CurvatureKind::fisher_exact;
        c = layer_block(dense_curvature(kind, spec, p, x, LossKind::cross_entropy), spec, l);
        c_hat = layer_block(dense_curvature(kind, spec, at_hat, x, LossKind::cross_entropy), spec, l);
        lambda = std::pow(10.0, std::uniform_real_distribution<double>(-1.0, 0.5)(rng));
      }
      // The step size that matters is eta times the projected update size.
      const Vector u = natural ? Vector((c_hat + rho * rho * lambda * Matrix::Identity(c.rows(), c.cols()))
                                            .ldlt()
                                            .solve(grad_hat))
                               : Vector(grad_hat / (rho * rho));
      const double reach = etas.front() * (u - hat * hat.dot(u)).norm();
      if (reach > 0.05 || reach < 1e-4) continue;

      std::vector<double> err;
      for (double eta : etas) {
        Vector stepped;
        Vector predicted;
        if (natural) {
          Matrix damped = c;
          damped.diagonal().array() += lambda;
          stepped = theta - eta * damped.ldlt().solve(grad);
          predicted = reference_normalized_kfac_step(hat, rho, c_hat, lambda, grad_hat, eta, false);
        } else {
          stepped = theta - eta * grad;
          predicted = reference_normalized_sgd_step(hat, rho, grad_hat, eta, false);
        }
        err.push_back((stepped.normalized() - predicted).norm());
      }
      if (*std::min_element(err.begin(), err.end()) < 1e-13) continue;
      detail::track(r, std::abs(detail::loglog_slope(etas, err) - 2.0) / 2.0);
      ++done;
    }
    if (done < trials) r.max_rel_error = std::numeric_limits<double>::infinity();
  });
}

/// The layer block of the curvature at alpha * theta_l is alpha^-2 times the
/// block at theta_l for BN-covered layers.
inline CheckReport check_curvature_scaling(std::size_t trials = kDefaultTrials, std::uint64_t seed = 7) {
  return detail::run_check("curvature_scaling", trials, seed, 1e-8, [&](CheckReport& r, Rng& rng) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 1, 3);
      const NetworkSpec spec =
          detail::with_bn_epsilon(make_mlp(detail::random_dims(rng, depth, 2, 6, 2, 4), Activation::relu, true));
      const NetworkParams p = init_params(spec, rng);
      const Matrix x = detail::gaussian(rng, 8, static_cast<Eigen::Index>(spec.input_dim()));
      const CurvatureKind kind = t % 2 == 0 ? CurvatureKind::fisher_exact : CurvatureKind::gauss_newton;
      const Matrix c = dense_curvature(kind, spec, p, x, LossKind::cross_entropy);
      const std::size_t l = detail::uniform(rng, 0, depth - 1);
      for (double alpha : {0.5, 2.0}) {
        const Matrix scaled = dense_curvature(kind, spec, scale_layer(p, l, alpha), x, LossKind::cross_entropy);
        detail::track(r, relative_error(Matrix(alpha * alpha * layer_block(scaled, spec, l)), layer_block(c, spec, l)));
      }
    }
  });
}

/// Gradient of the GN norm, 2(L+1) G theta, against central differences.
inline CheckReport check_gn_gradient(std::size_t trials = kDefaultTrials, std::uint64_t seed = 8) {
  return detail::run_check("gn_gradient", trials, seed, 1e-5, [&](CheckReport& r, Rng& rng) {
    const double h = 1e-5;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 0, 3);
      const Activation act = t % 2 == 0 ? Activation::identity : Activation::relu;
      const NetworkSpec spec = make_mlp(detail::random_dims(rng, depth, 2, 5, 1, 3), act);
      auto [p, x] = detail::generic_point(spec, rng, 4, 1e-2);
      if (t == 0) {
        for (Matrix& w : p.weights) w.setZero();
      }
      const Vector analytic = gn_norm_gradient(spec, p, x);
      Vector theta = flatten(spec, p);
      Vector numeric(theta.size());
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = gn_norm(spec, unflatten(spec, theta), x);
        theta[i] = keep - h;
        const double down = gn_norm(spec, unflatten(spec, theta), x);
        theta[i] = keep;
        numeric[i] = (up - down) / (2.0 * h);
      }
      detail::track(r, t == 0 ? analytic.norm() : relative_error(analytic, numeric));
    }
  });
}

/// S_l (x) A_l equals the exact GN layer block on deep linear nets; ReLU nets
/// serve as the control (only the direction of the mismatch is asserted).
inline CheckReport check_kfac_linear_exactness(std::size_t trials = kDefaultTrials, std::uint64_t seed = 9) {
  return detail::run_check("kfac_linear_exactness", trials, seed, 1e-8, [&](CheckReport& r, Rng& rng) {
    double largest = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t depth = detail::uniform(rng, 0, 3);
      const NetworkSpec spec = make_mlp(detail::random_dims(rng, depth, 2, 6, 1, 4), Activation::identity);
      const NetworkParams p = init_params(spec, rng);
      const Matrix x = detail::gaussian(rng, 10, static_cast<Eigen::Index>(spec.input_dim()));
      const KfacFactors f = estimate_kfac_factors(CurvatureMetric::gn, spec, p, x, LossKind::squared_error);
      const Matrix g = dense_curvature(CurvatureKind::gauss_newton, spec, p, x, LossKind::squared_error);
      for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        detail::track(r, relative_error(kfac_block(f, l), layer_block(g, spec, l)));
      }
      if (t % 4 == 0) {
        const NetworkSpec relu = make_mlp(detail::random_dims(rng, 2, 3, 6, 2, 4), Activation::relu);
        const NetworkParams q = init_params(relu, rng);
        const Matrix xr = detail::gaussian(rng, 10, static_cast<Eigen::Index>(relu.input_dim()));
        const KfacFactors fr = estimate_kfac_factors(CurvatureMetric::gn, relu, q, xr, LossKind::squared_error);
        const Matrix gr = dense_curvature(CurvatureKind::gauss_newton, relu, q, xr, LossKind::squared_error);
        largest = std::max(largest, relative_error(kfac_block(fr, 0), layer_block(gr, relu, 0)));
      }
    }
    r.control_error = largest;
    r.controls_ok = largest > r.tolerance;
  });
}

struct Registered {
  std::string name;
  std::function<CheckReport(std::size_t, std::uint64_t)> run;
};

inline std::vector<Registered> registry(const Backend& backend = {}) {
  return {
      {"jacobian_homogeneity", [backend](std::size_t n, std::uint64_t s) { return check_jacobian_homogeneity(n, s, backend); }},
      {"gn_norm_identities", check_gn_norm_identities},
      {"kfac_gn_jacobian", check_kfac_gn_jacobian},
      {"equivalences", check_equivalences},
      {"bn_scale_invariance", check_bn_scale_invariance},
      {"update_rules", check_update_rules},
      {"curvature_scaling", check_curvature_scaling},
      {"gn_gradient", check_gn_gradient},
      {"kfac_linear_exactness", check_kfac_linear_exactness},
  };
}

/// Runs every registered check (or only `only` when non-empty). Check i uses
/// seed + i so reports are reproducible one by one.
inline std::vector<CheckReport> run_all(std::uint64_t seed = 0, const std::string& only = "",
                                        std::size_t trials = kDefaultTrials, const Backend& backend = {}) {
  std::vector<CheckReport> out;
  const auto checks = registry(backend);
  bool found = only.empty();
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (!only.empty() && checks[i].name != only) continue;
    found = true;
    out.push_back(checks[i].run(trials, seed + i));
  }
  if (!found) throw DomainError("verify: no check named '" + only + "'");
  return out;
}

inline bool all_pass(const std::vector<CheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.pass; });
}

inline nlohmann::json to_json(const std::vector<CheckReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CheckReport& r : reports) arr.push_back(to_json(r));
  return arr;
}

}  // namespace wdlab::verify
