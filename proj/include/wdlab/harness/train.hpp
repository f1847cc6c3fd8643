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

// Training runs: data loading, the epoch loop, per-epoch metric records and
// the files a run leaves behind (metrics.csv, checkpoint, summary.json).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "wdlab/curvature.hpp"
#include "wdlab/diagnostics.hpp"
#include "wdlab/harness/checkpoint.hpp"
#include "wdlab/harness/config.hpp"
#include "wdlab/harness/data.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"
#include "wdlab/optim.hpp"

namespace wdlab::harness {

struct DataBundle {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim() || a.classes != b.classes) throw StructuralError("concat: datasets differ in shape");
  Dataset out;
  out.classes = a.classes;
  out.x.resize(a.x.rows() + b.x.rows(), a.x.cols());
  out.x << a.x, b.x;
  out.y = a.y;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

/// Fits a PCA whitener on the training split and applies it to all three.
inline DataBundle pca_whiten(const DataBundle& d, std::size_t k) {
  const PcaWhitener w = fit_pca_whitener(d.train.x, k);
  DataBundle out = d;
  for (Dataset* s : {&out.train, &out.val, &out.test}) s->x = w.apply(s->x);
  return out;
}

/// Loads the configured source and cuts disjoint train/val/test subsets with
/// data.split_seed.
inline DataBundle load_data(const ExperimentConfig& c) {
  const std::size_t total = c.data.n_train + c.data.n_val + c.data.n_test;
  Dataset all;
  if (c.data.source == DataSource::mnist) {
    all = load_mnist(c.data.images, c.data.labels);
  } else {
    std::vector<std::size_t> dims{c.data.synthetic_dim};
    dims.insert(dims.end(), c.data.synthetic_teacher.begin(), c.data.synthetic_teacher.end());
    dims.push_back(c.data.synthetic_classes);
    SyntheticOptions opt;
    opt.whitened = c.data.synthetic_whitened;
    all = gen_synthetic(total, c.data.synthetic_dim, c.data.synthetic_classes, make_mlp(dims, Activation::relu),
                        c.data.split_seed, opt);
  }
  const Splits s = make_splits(all.size(), c.data.n_train, c.data.n_val, c.data.n_test, c.data.split_seed);
  DataBundle d{all.subset(s.train), all.subset(s.val), all.subset(s.test)};
  if (c.data.pca_components > 0) d = pca_whiten(d, c.data.pca_components);
  return d;
}

struct RunResult {
  MetricLog log;
  NetworkParams params;
  BatchNormState bn;
  bool diverged = false;
  std::string message;
  std::size_t steps = 0;
  double seconds = 0.0;
};

using Progress = std::function<void(const MetricRecord&)>;

namespace detail {

inline Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

inline std::vector<std::size_t> fixed_subset(std::size_t n, std::size_t want, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (want >= n) return idx;
  Rng rng = stream_rng(seed, 99);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Evaluation {
  double loss = 0.0;
  double acc = 0.0;
};

inline Evaluation evaluate(const NetworkSpec& spec, const NetworkParams& params, const BatchNormState& bn,
                           const Dataset& d, LossKind loss) {
  if (d.size() == 0) return {kNaN, kNaN};
  const Eigen::Index chunk = 1000;
  BatchNormState copy = bn;
  double total_loss = 0.0;
  double correct = 0.0;
  for (Eigen::Index start = 0; start < d.x.rows(); start += chunk) {
    const Eigen::Index m = std::min(chunk, d.x.rows() - start);
    const Matrix logits =
        forward(spec, params, d.x.middleRows(start, m), Mode::eval, spec.any_bn() ? &copy : nullptr).logits;
    const std::vector<std::size_t> labels(d.y.begin() + start, d.y.begin() + start + m);
    total_loss += loss_and_grad(loss, logits, Targets::classes(labels)).loss * static_cast<double>(m);
    correct += accuracy(logits, labels) * static_cast<double>(m);
  }
  const double n = static_cast<double>(d.size());
  return {total_loss / n, correct / n};
}

class AnyOptimizer {
 public:
  AnyOptimizer(const ExperimentConfig& c) {
    const LrSchedule sched = c.schedule();
    switch (c.optim.kind) {
      case OptimizerKind::sgd: impl_.emplace<Sgd>(sched, SgdConfig{c.optim.momentum}); break;
      case OptimizerKind::adam: impl_.emplace<Adam>(sched, c.optim.adam); break;
      case OptimizerKind::kfac_f:
      case OptimizerKind::kfac_g: {
        KfacConfig k = c.optim.kfac;
        k.metric = c.optim.kind == OptimizerKind::kfac_f ? CurvatureMetric::fisher : CurvatureMetric::gn;
        impl_.emplace<Kfac>(sched, k);
        break;
      }
    }
  }

  bool is_kfac() const { return std::holds_alternative<Kfac>(impl_); }
  CurvatureMetric metric() const { return std::get<Kfac>(impl_).config().metric; }
  double damping() const { return std::get<Kfac>(impl_).config().damping; }
  double lr() const {
    return std::visit([](const auto& o) { return o.lr(); }, impl_);
  }
  void apply_lr_schedule(std::size_t epoch) {
    std::visit([&](auto& o) { o.apply_lr_schedule(epoch); }, impl_);
  }

  /// One mini-batch update; returns the mini-batch loss before the update.
  double step(const NetworkSpec& spec, NetworkParams& params, BatchNormState& bn, const Matrix& x, const Targets& y,
              LossKind loss, const Coupling& coupling, Rng& rng) {
    BatchNormState* state = spec.any_bn() ? &bn : nullptr;
    if (auto* k = std::get_if<Kfac>(&impl_)) return kfac_step(*k, spec, params, state, x, y, loss, coupling, rng);
    const ForwardTrace trace = forward(spec, params, x, Mode::train, state);
    const LossResult r = loss_and_grad(loss, trace.logits, y);
    if (!std::isfinite(r.loss)) return r.loss;
    const Gradients g = backward(spec, params, trace, r.grad);
    std::visit(
        [&](auto& o) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(o)>, Kfac>) o.step(params, g, coupling);
        },
        impl_);
    return r.loss;
  }

 private:
  std::variant<Sgd, Adam, Kfac> impl_{std::in_place_type<Sgd>, LrSchedule{}};
};

inline bool params_finite(const NetworkParams& p) {
  for (const Matrix& w : p.weights) {
    if (!w.allFinite()) return false;
  }
  for (const Vector& b : p.biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

}  // namespace detail

/// Everything measured at one epoch boundary.
inline MetricRecord record_metrics(const ExperimentConfig& c, const NetworkSpec& spec, const NetworkParams& params,
                                   const BatchNormState& bn, const Dataset& train, const Dataset& eval,
                                   const Matrix& jac_x, const Matrix& trace_x, std::size_t epoch, double lr,
                                   std::optional<std::pair<CurvatureMetric, double>> kfac) {
  MetricRecord r;
  r.resize_layers(spec.num_layers());
  r.epoch = epoch;
  r.lr = lr;
  const auto tr = detail::evaluate(spec, params, bn, train, c.train.loss);
  const auto te = detail::evaluate(spec, params, bn, eval, c.train.loss);
  r.train_loss = tr.loss;
  r.train_acc = tr.acc;
  r.test_loss = te.loss;
  r.test_acc = te.acc;
  r.generalization_gap = generalization_gap(tr.loss, te.loss);
  if (!detail::params_finite(params)) return r;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    r.layer_norm[l] = params.weights[l].norm();
    r.effective_lr[l] = r.layer_norm[l] > 0.0 ? effective_lr(lr, r.layer_norm[l]) : kNaN;
  }
  if (c.diag.jacobian && jac_x.rows() > 0) {
    r.jacobian_frob = jacobian_frob_norm(spec, params, jac_x, spec.any_bn() ? &bn : nullptr);
  }
  if (c.diag.gn_norms && jac_x.rows() > 0) {
    if (!spec.use_bias && !spec.any_bn()) r.gn_norm = gn_norm(spec, params, jac_x);
    if (jac_x.rows() >= 2 || !spec.any_bn()) r.kfac_gn_norm = kfac_gn_norm(spec, params, jac_x);
  }
  if (c.diag.traces && trace_x.rows() >= 2) {
    const LayerTraces t = curvature_traces(spec, params, trace_x, c.train.loss);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const double norm_sq = r.layer_norm[l] * r.layer_norm[l];
      r.trace_fisher[l] = norm_sq * t.fisher[l];
      r.trace_gn[l] = norm_sq * t.gn[l];
      if (kfac) {
        const double per_param =
            (kfac->first == CurvatureMetric::fisher ? r.trace_fisher[l] : r.trace_gn[l]) /
            static_cast<double>(spec.in_dim(l) * spec.out_dim(l));
        r.damping_ratio[l] = per_param > 0.0 ? kfac->second * norm_sq / per_param : kNaN;
      }
    }
  }
  return r;
}

/// Trains on `train` and measures on `eval` at every epoch boundary. Never
/// throws for divergence: a non-finite loss or an instability stops the run
/// with `diverged` set and a last record describing the state.
inline RunResult run_training(const ExperimentConfig& c, const Dataset& train, const Dataset& eval,
                              const Progress& progress = {}) {
  c.validate();
  const auto start = std::chrono::steady_clock::now();
  const NetworkSpec spec = c.network();
  if (train.dim() != spec.input_dim()) throw StructuralError("run_training: data dimension does not match the network");
  if (c.train.batch_size > train.size()) throw DomainError("run_training: batch size exceeds the training set");

  Rng init_rng = detail::stream_rng(c.train.seed, 0);
  Rng shuffle_rng = detail::stream_rng(c.train.seed, 1);
  Rng sample_rng = detail::stream_rng(c.train.seed, 2);

  RunResult out;
  out.log = MetricLog(spec.num_layers());
  out.params = init_params(spec, init_rng);
  out.bn = BatchNormState::initial(spec);
  detail::AnyOptimizer opt(c);
  const Coupling coupling = c.coupling();
  const std::optional<std::pair<CurvatureMetric, double>> kfac =
      opt.is_kfac() ? std::optional(std::pair(opt.metric(), opt.damping())) : std::nullopt;

  std::optional<MetricLog> reference;
  std::vector<bool> transfer_mask;
  if (!c.diag.transfer_from.empty()) {
    reference = MetricLog::read(c.diag.transfer_from);
    if (reference->num_layers() != spec.num_layers() || reference->size() < c.train.epochs + 1) {
      throw StructuralError("norm transfer: reference log " + c.diag.transfer_from +
                            " does not cover this network and epoch count");
    }
    transfer_mask = make_mask(c.diag.transfer_mask, spec);
  }
  const auto transfer = [&](std::size_t epoch) {
    if (!reference) return;
    out.params = norm_transfer(spec, out.params, reference->records()[epoch].layer_norm, transfer_mask, &out.bn,
                               c.diag.transfer_strict ? TransferPolicy::strict : TransferPolicy::warn);
  };

  const Matrix jac_x = c.diag.jacobian || c.diag.gn_norms
                           ? eval.subset(detail::fixed_subset(eval.size(), c.diag.jacobian_examples,
                                                              c.diag.jacobian_seed))
                                 .x
                           : Matrix();
  const Matrix trace_x =
      c.diag.traces
          ? train.subset(detail::fixed_subset(train.size(), c.diag.trace_examples, c.diag.jacobian_seed + 1)).x
          : Matrix();
  const auto record = [&](std::size_t epoch, double lr) {
    out.log.append(record_metrics(c, spec, out.params, out.bn, train, eval, jac_x, trace_x, epoch, lr, kfac));
    if (progress) progress(out.log.back());
  };

  transfer(0);
  opt.apply_lr_schedule(0);
  record(0, opt.lr());

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto d = static_cast<Eigen::Index>(train.dim());
  for (std::size_t epoch = 1; epoch <= c.train.epochs && !out.diverged; ++epoch) {
    opt.apply_lr_schedule(epoch - 1);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += c.train.batch_size) {
      const std::size_t m = std::min(c.train.batch_size, order.size() - begin);
      if (m < 2 && spec.any_bn()) break;  // BN needs two examples for batch statistics
      Matrix xb(static_cast<Eigen::Index>(m), d);
      std::vector<std::size_t> yb(m);
      for (std::size_t i = 0; i < m; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = train.x.row(static_cast<Eigen::Index>(order[begin + i]));
        yb[i] = train.y[order[begin + i]];
      }
      double loss = kNaN;
      try {
        loss = opt.step(spec, out.params, out.bn, xb, Targets::classes(yb), c.train.loss, coupling, sample_rng);
      } catch (const DomainError& e) {
        out.diverged = true;
        out.message = e.what();
      } catch (const NumericalError& e) {
        out.diverged = true;
        out.message = e.what();
      }
      ++out.steps;
      if (!out.diverged && (!std::isfinite(loss) || !detail::params_finite(out.params))) {
        out.diverged = true;
        out.message = "non-finite loss at step " + std::to_string(out.steps);
      }
      if (out.diverged) break;
    }
    if (!out.diverged) transfer(epoch);
    record(epoch, opt.lr());
    if (!out.diverged && !std::isfinite(out.log.back().train_loss)) {
      out.diverged = true;
      out.message = "non-finite training loss after epoch " + std::to_string(epoch);
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline nlohmann::json record_json(const MetricLog& log, const MetricRecord& r) {
  nlohmann::json j = nlohmann::json::object();
  const auto names = log.header();
  const auto values = MetricLog::values(r);
  for (std::size_t i = 0; i < names.size(); ++i) {
    j[names[i]] = std::isfinite(values[i]) ? nlohmann::json(values[i]) : nlohmann::json(nullptr);
  }
  return j;
}

/// Writes metrics.csv, checkpoint.{json,bin} and summary.json into `dir`.
inline void write_run(const std::string& dir, const ExperimentConfig& c, const RunResult& r,
                      const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  r.log.write(dir + "/metrics.csv");
  Checkpoint ck{c, r.params, r.bn, r.log.size() == 0 ? 0 : r.log.back().epoch};
  const bool bin = c.output.checkpoint == CheckpointFormat::bin;
  save_checkpoint(dir + (bin ? "/checkpoint.bin" : "/checkpoint.json"), ck, c.output.checkpoint);
  nlohmann::json summary = {{"config", to_json(c)},
                            {"diverged", r.diverged},
                            {"message", r.message},
                            {"steps", r.steps},
                            {"epochs_recorded", r.log.size()},
                            {"seconds", r.seconds}};
  if (r.log.size() > 0) summary["final"] = record_json(r.log, r.log.back());
  for (const auto& [k, v] : extra.items()) summary[k] = v;
  std::ofstream(dir + "/summary.json") << summary.dump(2) << "\n";
}

/// The `train` command: load data, train on the training split, measure on
/// the test split, write the run directory.
inline RunResult train(const ExperimentConfig& c, const Progress& progress = {}) {
  c.validate();
  const DataBundle data = load_data(c);
  RunResult r = run_training(c, data.train, data.test, progress);
  write_run(c.output.dir, c, r);
  return r;
}

}  // namespace wdlab::harness
