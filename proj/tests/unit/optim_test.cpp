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

#include <gtest/gtest.h>

#include <cstring>

#include "support.hpp"
#include "wdlab/curvature.hpp"
#include "wdlab/optim.hpp"

namespace wdlab {
namespace {

using testing::random_matrix;

NetworkParams scalar(double w) {
  NetworkParams p;
  p.weights.push_back(Matrix::Constant(1, 1, w));
  return p;
}

Gradients scalar_grad(double g) {
  Gradients out;
  out.weights.push_back(Matrix::Constant(1, 1, g));
  return out;
}

Coupling coupling(CouplingMode mode, double beta, std::vector<bool> mask = {}) { return {mode, beta, std::move(mask)}; }

TEST(Sgd, DecayArithmetic) {
  Sgd opt(LrSchedule{0.1, {}});
  NetworkParams p = scalar(1.0);
  opt.step(p, scalar_grad(0.0), coupling(CouplingMode::weight_decay, 0.5));
  EXPECT_DOUBLE_EQ(p.weights[0](0, 0), 0.95);
}

TEST(Sgd, InstabilityGuard) {
  Sgd opt(LrSchedule{1.0, {}});
  NetworkParams p = scalar(1.0);
  EXPECT_THROW(opt.step(p, scalar_grad(0.0), coupling(CouplingMode::weight_decay, 1.0)), InstabilityError);
  EXPECT_THROW(opt.step(p, scalar_grad(0.0), coupling(CouplingMode::l2, 2.0)), InstabilityError);
}

TEST(Sgd, MaskLeavesLayerOnPlainStep) {
  Rng rng(1);
  const NetworkSpec spec = make_mlp({3, 4, 2}, Activation::relu);
  NetworkParams p = init_params(spec, rng);
  const NetworkParams start = p;
  Gradients g;
  g.weights = {random_matrix(rng, 4, 3), random_matrix(rng, 2, 4)};
  Sgd opt(LrSchedule{0.1, {}});
  opt.step(p, g, coupling(CouplingMode::weight_decay, 0.3, {false, true}));
  EXPECT_EQ(p.weights[0], Matrix(start.weights[0] - 0.1 * g.weights[0]));
  EXPECT_EQ(p.weights[1], Matrix((1.0 - 0.03) * start.weights[1] - 0.1 * g.weights[1]));
}

TEST(Sgd, CouplingsAreBitIdenticalWithoutMomentum) {
  Rng rng(2);
  const NetworkSpec spec = make_mlp({5, 6, 3}, Activation::relu, false, true);
  NetworkParams a = init_params(spec, rng);
  NetworkParams b = a;
  Sgd oa(LrSchedule{0.05, {}}), ob(LrSchedule{0.05, {}});
  for (int step = 0; step < 200; ++step) {
    Gradients g;
    g.weights = {random_matrix(rng, 6, 5), random_matrix(rng, 3, 6)};
    g.biases = {random_matrix(rng, 6, 1), random_matrix(rng, 3, 1)};
    oa.step(a, g, coupling(CouplingMode::l2, 0.2));
    ob.step(b, g, coupling(CouplingMode::weight_decay, 0.2));
  }
  const Vector ta = flatten(spec, a), tb = flatten(spec, b);
  EXPECT_EQ(std::memcmp(ta.data(), tb.data(), sizeof(double) * static_cast<std::size_t>(ta.size())), 0);
}

TEST(Sgd, MomentumSeparatesCouplings) {
  NetworkParams a = scalar(1.0), b = scalar(1.0);
  Sgd oa(LrSchedule{0.1, {}}, SgdConfig{0.9}), ob(LrSchedule{0.1, {}}, SgdConfig{0.9});
  for (int i = 0; i < 3; ++i) {
    oa.step(a, scalar_grad(0.0), coupling(CouplingMode::l2, 0.5));
    ob.step(b, scalar_grad(0.0), coupling(CouplingMode::weight_decay, 0.5));
  }
  EXPECT_NE(a.weights[0](0, 0), b.weights[0](0, 0));
  EXPECT_NEAR(b.weights[0](0, 0), std::pow(0.95, 3), 1e-15);
}

TEST(Adam, DecoupledDecayIsGeometric) {
  Adam opt(LrSchedule{0.1, {}});
  NetworkParams p = scalar(2.0);
  for (int i = 1; i <= 5; ++i) {
    opt.step(p, scalar_grad(0.0), coupling(CouplingMode::weight_decay, 0.5));
    EXPECT_NEAR(p.weights[0](0, 0), 2.0 * std::pow(0.95, i), 1e-14);
  }
}

TEST(Adam, L2MatchesMomentRecursion) {
  const double eta = 0.01, beta = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam opt(LrSchedule{eta, {}});
  NetworkParams p = scalar(10.0);
  double theta = 10.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 4; ++t) {
    const double g = beta * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= eta * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    opt.step(p, scalar_grad(0.0), coupling(CouplingMode::l2, beta));
    EXPECT_NEAR(p.weights[0](0, 0), theta, 1e-14);
  }
  // The first step moves by ~eta regardless of beta: no geometric decay.
  EXPECT_GT(std::abs(theta - 10.0 * std::pow(1 - eta * beta, 4)), 0.1);
}

TEST(Adam, ZeroBetaCouplingsAgree) {
  Rng rng(3);
  const NetworkSpec spec = make_mlp({3, 4, 2}, Activation::relu);
  NetworkParams a = init_params(spec, rng), b = a;
  Adam oa(LrSchedule{0.01, {}}), ob(LrSchedule{0.01, {}});
  for (int i = 0; i < 20; ++i) {
    Gradients g;
    g.weights = {random_matrix(rng, 4, 3), random_matrix(rng, 2, 4)};
    oa.step(a, g, coupling(CouplingMode::l2, 0.0));
    ob.step(b, g, coupling(CouplingMode::weight_decay, 0.0));
  }
  EXPECT_EQ(flatten(spec, a), flatten(spec, b));
}

TEST(Adam, CouplingsDifferUnderNonScalarPreconditioner) {
  Rng rng(4);
  const NetworkSpec spec = make_mlp({3, 4, 2}, Activation::relu);
  NetworkParams a = init_params(spec, rng), b = a;
  Adam oa(LrSchedule{0.01, {}}), ob(LrSchedule{0.01, {}});
  for (int i = 0; i < 5; ++i) {
    Gradients g;
    g.weights = {random_matrix(rng, 4, 3), random_matrix(rng, 2, 4)};
    oa.step(a, g, coupling(CouplingMode::l2, 0.1));
    ob.step(b, g, coupling(CouplingMode::weight_decay, 0.1));
  }
  EXPECT_GT((flatten(spec, a) - flatten(spec, b)).norm(), 1e-6);
}

Kfac scalar_kfac(double eta, bool literal = false) {
  KfacConfig cfg;
  cfg.damping = 1e-300;
  cfg.alg1_literal = literal;
  Kfac opt(LrSchedule{eta, {}}, cfg);
  KfacFactors f;
  f.A.push_back(Matrix::Constant(1, 1, 2.0));
  f.S.push_back(Matrix::Constant(1, 1, 1.0));
  opt.set_factors(f);
  return opt;
}

TEST(Kfac, ScalarCouplingArithmetic) {
  Kfac l2 = scalar_kfac(0.1), wd = scalar_kfac(0.1), lit = scalar_kfac(0.1, true);
  NetworkParams a = scalar(1.0), b = scalar(1.0), c = scalar(1.0);
  l2.step(a, scalar_grad(4.0), coupling(CouplingMode::l2, 0.5));
  wd.step(b, scalar_grad(4.0), coupling(CouplingMode::weight_decay, 0.5));
  lit.step(c, scalar_grad(4.0), coupling(CouplingMode::weight_decay, 0.5));
  EXPECT_NEAR(a.weights[0](0, 0), 0.775, 1e-14);
  EXPECT_NEAR(b.weights[0](0, 0), 0.75, 1e-14);
  EXPECT_NEAR(c.weights[0](0, 0), 0.3, 1e-14);
}

TEST(Kfac, IdentityFactorsReduceToSgd) {
  Rng rng(5);
  const NetworkSpec spec = make_mlp({3, 4, 2}, Activation::relu);
  NetworkParams a = init_params(spec, rng), b = a;
  KfacConfig cfg;
  cfg.damping = 1e-14;
  Kfac kfac(LrSchedule{0.1, {}}, cfg);
  KfacFactors f = zero_factors(spec);
  for (auto& m : f.A) m.setIdentity();
  for (auto& m : f.S) m.setIdentity();
  kfac.set_factors(f);
  Sgd sgd(LrSchedule{0.1, {}});
  Gradients g;
  g.weights = {random_matrix(rng, 4, 3), random_matrix(rng, 2, 4)};
  kfac.step(a, g, Coupling{});
  sgd.step(b, g, Coupling{});
  EXPECT_LE(relative_error(flatten(spec, a), flatten(spec, b)), 1e-6);
}

TEST(Kfac, RequiresFactorsBeforeStepping) {
  Kfac opt(LrSchedule{0.1, {}}, KfacConfig{});
  NetworkParams p = scalar(1.0);
  EXPECT_THROW(opt.step(p, scalar_grad(1.0), Coupling{}), ContractError);
}

TEST(Kfac, UpdateIntervals) {
  KfacConfig cfg;
  cfg.t_stats = 3;
  cfg.t_inv = 5;
  Kfac opt = Kfac(LrSchedule{0.1, {}}, cfg);
  KfacFactors f;
  f.A.push_back(Matrix::Identity(1, 1));
  f.S.push_back(Matrix::Identity(1, 1));
  opt.set_factors(f);
  std::vector<int> stats, inv;
  NetworkParams p = scalar(1.0);
  for (int k = 0; k < 12; ++k) {
    if (opt.stats_due()) stats.push_back(k);
    if (opt.inverse_due()) inv.push_back(k);
    opt.step(p, scalar_grad(0.0), Coupling{});
  }
  EXPECT_EQ(stats, (std::vector<int>{0, 2, 5, 8, 11}));
  EXPECT_EQ(inv, (std::vector<int>{0, 4, 9}));
}

TEST(Kfac, DenseDampingMatchesDampedBlockSolve) {
  Rng rng(6);
  const NetworkSpec spec = make_mlp({3, 4, 2}, Activation::relu);
  const NetworkParams p0 = init_params(spec, rng);
  KfacFactors f = zero_factors(spec);
  for (auto& m : f.A) m = testing::random_psd(rng, m.rows());
  for (auto& m : f.S) m = testing::random_psd(rng, m.rows());
  KfacConfig cfg;
  cfg.damping = 0.05;
  cfg.damping_mode = DampingMode::dense;
  Kfac opt(LrSchedule{0.1, {}}, cfg);
  opt.set_factors(f);
  Gradients g;
  g.weights = {random_matrix(rng, 4, 3), random_matrix(rng, 2, 4)};
  NetworkParams p = p0;
  opt.step(p, g, Coupling{});
  NetworkParams gp;
  gp.weights = g.weights;
  const Vector grad = flatten(spec, gp);
  for (std::size_t l = 0; l < 2; ++l) {
    Matrix block = kfac_block(f, l);
    block.diagonal().array() += 0.05;
    const auto off = static_cast<Eigen::Index>(layer_offset(spec, l));
    const auto sz = static_cast<Eigen::Index>(layer_param_count(spec, l));
    const Vector step = block.ldlt().solve(grad.segment(off, sz));
    const Vector moved = flatten(spec, p0).segment(off, sz) - flatten(spec, p).segment(off, sz);
    EXPECT_LE(relative_error(moved, Vector(0.1 * step)), 1e-10);
  }
}

TEST(Kfac, GaussNewtonStepOnDeepLinearNetMatchesDenseNaturalGradient) {
  Rng rng(7);
  const NetworkSpec spec = make_mlp({3, 4, 3, 2}, Activation::identity);
  const NetworkParams p0 = init_params(spec, rng);
  const Matrix x = random_matrix(rng, 16, 3);
  const Targets y = Targets::regression(random_matrix(rng, 16, 2));
  KfacConfig cfg;
  cfg.damping = 1e-3;
  cfg.damping_mode = DampingMode::dense;
  Kfac opt(LrSchedule{1e-4, {}}, cfg);
  NetworkParams p = p0;
  Rng step_rng(1);
  kfac_step(opt, spec, p, nullptr, x, y, LossKind::squared_error, Coupling{}, step_rng);

  const ForwardTrace t = forward(spec, p0, x, Mode::train);
  const Gradients g = backward(spec, p0, t, loss_and_grad(LossKind::squared_error, t.logits, y).grad);
  NetworkParams gp;
  gp.weights = g.weights;
  const Vector grad = flatten(spec, gp);
  const Matrix dense = dense_curvature(CurvatureKind::gauss_newton, spec, p0, x, LossKind::squared_error);
  const Vector moved = flatten(spec, p0) - flatten(spec, p);
  for (std::size_t l = 0; l < 3; ++l) {
    Matrix block = layer_block(dense, spec, l);
    block.diagonal().array() += 1e-3;
    const auto off = static_cast<Eigen::Index>(layer_offset(spec, l));
    const auto sz = static_cast<Eigen::Index>(layer_param_count(spec, l));
    const Vector want = block.ldlt().solve(grad.segment(off, sz));
    const Vector got = moved.segment(off, sz);
    EXPECT_LE((got.normalized() - want.normalized()).norm(), 1e-6);
  }
}

TEST(Kfac, CouplingsDiffer) {
  Rng rng(8);
  const NetworkSpec spec = make_mlp({4, 5, 3}, Activation::relu);
  const NetworkParams p0 = init_params(spec, rng);
  const Matrix x = random_matrix(rng, 20, 4);
  const Targets y = Targets::classes({0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1});
  NetworkParams a = p0, b = p0;
  Kfac oa(LrSchedule{0.05, {}}, KfacConfig{}), ob(LrSchedule{0.05, {}}, KfacConfig{});
  Rng ra(3), rb(3);
  for (int i = 0; i < 5; ++i) {
    kfac_step(oa, spec, a, nullptr, x, y, LossKind::cross_entropy, coupling(CouplingMode::l2, 0.1), ra);
    kfac_step(ob, spec, b, nullptr, x, y, LossKind::cross_entropy, coupling(CouplingMode::weight_decay, 0.1), rb);
  }
  EXPECT_GT((flatten(spec, a) - flatten(spec, b)).norm(), 1e-6);
}

TEST(Kfac, SingularDampedFactorsSurface) {
  KfacConfig cfg;
  cfg.damping = 1e-320;
  Kfac opt(LrSchedule{0.1, {}}, cfg);
  KfacFactors f;
  f.A.push_back(Matrix::Zero(1, 1));
  f.S.push_back(Matrix::Zero(1, 1));
  opt.set_factors(f);
  NetworkParams p = scalar(1.0);
  EXPECT_THROW(opt.step(p, scalar_grad(1.0), Coupling{}), NumericalError);
}

TEST(Schedule, StepDecay) {
  Sgd opt(LrSchedule{0.1, {40, 80}});
  opt.apply_lr_schedule(39);
  EXPECT_DOUBLE_EQ(opt.lr(), 0.1);
  opt.apply_lr_schedule(40);
  EXPECT_NEAR(opt.lr(), 0.01, 1e-18);
  opt.apply_lr_schedule(40);
  EXPECT_NEAR(opt.lr(), 0.01, 1e-18);
  opt.apply_lr_schedule(80);
  EXPECT_NEAR(opt.lr(), 0.001, 1e-18);
  EXPECT_EQ((LrSchedule{0.3, {}}.at(1000)), 0.3);
  EXPECT_THROW((LrSchedule{0.1, {5, 5}}.validate()), DomainError);
}

TEST(Masks, Presets) {
  const NetworkSpec spec = make_mlp({3, 4, 4, 2}, Activation::relu, true);
  EXPECT_EQ(make_mask(MaskPreset::all, spec), (std::vector<bool>{true, true, true}));
  EXPECT_EQ(make_mask(MaskPreset::hidden_only, spec), (std::vector<bool>{true, true, false}));
  EXPECT_EQ(make_mask(MaskPreset::output_only, spec), (std::vector<bool>{false, false, true}));
  EXPECT_EQ(make_mask(MaskPreset::none, spec), (std::vector<bool>{false, false, false}));
}

TEST(ReferenceSgd, ProjectionAndScaling) {
  Vector th(3);
  th << 0.0, 0.6, 0.8;
  EXPECT_LE((reference_normalized_sgd_step(th, 2.0, 5.0 * th, 0.1) - th).norm(), 1e-15);
  Vector g(3);
  g << 1.0, 0.0, 0.0;
  const Vector raw = reference_normalized_sgd_step(th, 2.0, g, 0.1, false);
  EXPECT_NEAR(raw[0], -0.1 / 4.0, 1e-16);
  EXPECT_THROW(reference_normalized_sgd_step(th, 0.0, g, 0.1), DegenerateError);
}

TEST(ReferenceKfac, LimitsAndReductions) {
  Rng rng(9);
  Vector th = random_matrix(rng, 4, 1);
  th.normalize();
  const Vector g = random_matrix(rng, 4, 1);
  const Matrix c = testing::random_psd(rng, 4);
  // Dominant damping: (C + n^2 lambda)^-1 ~ 1 / (n^2 lambda).
  const double lambda = 1e6, norm = 2.0;
  const Vector kfac = reference_normalized_kfac_step(th, norm, c, lambda, g, 0.1, false);
  const Vector sgd = reference_normalized_sgd_step(th, 1.0, g, 0.1 / (lambda * norm * norm), false);
  EXPECT_LE((kfac - sgd).norm(), 1e-12);
  const Vector r1 = reference_normalized_kfac_step(th, 1.0, Matrix::Identity(4, 4), 0.0, g, 0.1);
  const Vector r2 = reference_normalized_sgd_step(th, 1.0, g, 0.1);
  EXPECT_LE((r1 - r2).norm(), 1e-15);
}

}  // namespace
}  // namespace wdlab
