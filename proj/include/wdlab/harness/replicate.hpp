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

// The three bundled mechanism experiments.
//
//   m1  BN MLP, SGD: baseline, weight decay on the BN-covered layers, and a
//       no-decay run whose BN-covered layers are rescaled each epoch to the
//       decay run's norms.
//   m2  MLP without BN: SGD and K-FAC-G, each with and without weight decay,
//       with Jacobian and GN norms logged.
//   m3  BN MLP: K-FAC-F and K-FAC-G with and without weight decay, logging
//       normalized curvature traces and the effective damping ratio.
//
// Each writes one run directory per (arm, seed), optional SVG plots and a
// summary.json holding the comparisons.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "wdlab/harness/svg.hpp"
#include "wdlab/harness/train.hpp"

namespace wdlab::harness {

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::string dir;
  MetricLog log;
  bool diverged = false;
  std::string message;
};

struct MechanismReport {
  std::string name;
  nlohmann::json summary;
  std::map<std::string, bool> criteria;
  double seconds = 0.0;

  bool pass() const {
    for (const auto& [k, v] : criteria) {
      if (!v) return false;
    }
    return !criteria.empty();
  }
};

using ReplicateLog = std::function<void(const std::string&)>;

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json series_json(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(finite_or_null(x));
  return a;
}

template <typename F>
std::vector<double> column(const MetricLog& log, F&& get) {
  std::vector<double> out;
  for (const MetricRecord& r : log.records()) out.push_back(get(r));
  return out;
}

inline std::vector<double> epochs_of(const MetricLog& log) {
  return column(log, [](const MetricRecord& r) { return static_cast<double>(r.epoch); });
}

class ArmRunner {
 public:
  ArmRunner(std::string root, const DataBundle& data, const ReplicateLog& say) : root_(std::move(root)), data_(data), say_(say) {}

  ArmRun run(ExperimentConfig c, const std::string& arm, std::uint64_t seed) {
    c.train.seed = seed;
    c.output.dir = root_ + "/" + arm + "_seed" + std::to_string(seed);
    const auto start = std::chrono::steady_clock::now();
    const RunResult r = run_training(c, data_.train, data_.test);
    write_run(c.output.dir, c, r);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (say_) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%s seed %llu: train_acc %.4f test_acc %.4f (%.1fs)%s", arm.c_str(),
                    static_cast<unsigned long long>(seed), r.log.back().train_acc, r.log.back().test_acc, s,
                    r.diverged ? " DIVERGED" : "");
      say_(buf);
    }
    return {arm, seed, c.output.dir, r.log, r.diverged, r.message};
  }

 private:
  std::string root_;
  const DataBundle& data_;
  const ReplicateLog& say_;
};

inline ExperimentConfig quiet(ExperimentConfig c) {
  c.diag.jacobian = false;
  c.diag.gn_norms = false;
  c.diag.traces = false;
  c.diag.transfer_from.clear();
  return c;
}

inline ExperimentConfig with_coupling(ExperimentConfig c, CouplingMode mode, double beta, MaskPreset mask) {
  c.reg.coupling = mode;
  c.reg.beta = beta;
  c.reg.mask = mask;
  return c;
}

inline void plot(bool enabled, const std::string& path, const std::vector<ArmRun>& runs, std::uint64_t seed,
                 const std::function<double(const MetricRecord&)>& get, svg::PlotOptions opt) {
  if (!enabled) return;
  std::vector<svg::Series> series;
  for (const ArmRun& r : runs) {
    if (r.seed != seed) continue;
    series.push_back({r.arm, epochs_of(r.log), column(r.log, get)});
  }
  svg::write_line_plot(path, series, opt);
}

inline const ArmRun& find(const std::vector<ArmRun>& runs, const std::string& arm, std::uint64_t seed) {
  for (const ArmRun& r : runs) {
    if (r.arm == arm && r.seed == seed) return r;
  }
  throw StructuralError("replicate: missing run " + arm + " seed " + std::to_string(seed));
}

inline void finish(MechanismReport& rep, const std::string& dir, std::chrono::steady_clock::time_point start) {
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rep.summary["seconds"] = rep.seconds;
  nlohmann::json crit = nlohmann::json::object();
  for (const auto& [k, v] : rep.criteria) crit[k] = v;
  rep.summary["criteria"] = crit;
  rep.summary["pass"] = rep.pass();
  std::ofstream(dir + "/summary.json") << rep.summary.dump(2) << "\n";
}

}  // namespace detail

/// Pearson correlation coefficient; NaN for fewer than two points or zero variance.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw StructuralError("pearson: lengths differ");
  if (a.size() < 2) return kNaN;
  const double ma = detail::mean(a), mb = detail::mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

/// m1: effective learning rate and norm transfer on a BN MLP trained with SGD.
inline MechanismReport replicate_m1(const ExperimentConfig& base, const DataBundle& data, const std::string& dir,
                                    const ReplicateLog& say = {}) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(dir);
  const ReplicateConfig& rc = base.replicate;
  ExperimentConfig c = detail::quiet(base);
  c.model.batch_norm = true;
  c.optim.kind = OptimizerKind::sgd;
  c.optim.lr = rc.m1_lr;
  const NetworkSpec spec = c.network();
  const std::vector<bool> hidden = make_mask(MaskPreset::hidden_only, spec);

  detail::ArmRunner runner(dir, data, say);
  std::vector<ArmRun> runs;
  for (std::uint64_t seed : rc.seeds) {
    runs.push_back(runner.run(detail::with_coupling(c, CouplingMode::none, 0.0, MaskPreset::all), "baseline", seed));
    const ArmRun& wd = runs.emplace_back(runner.run(
        detail::with_coupling(c, CouplingMode::weight_decay, rc.m1_beta, MaskPreset::hidden_only), "wd_hidden", seed));
    ExperimentConfig t = detail::with_coupling(c, CouplingMode::none, 0.0, MaskPreset::all);
    t.diag.transfer_from = wd.dir + "/metrics.csv";
    t.diag.transfer_mask = MaskPreset::hidden_only;
    runs.push_back(runner.run(t, "norm_transfer", seed));
    if (rc.m1_extra_arms) {
      runs.push_back(runner.run(detail::with_coupling(c, CouplingMode::weight_decay, rc.m1_beta, MaskPreset::all),
                                "wd_all", seed));
      runs.push_back(runner.run(
          detail::with_coupling(c, CouplingMode::weight_decay, rc.m1_beta, MaskPreset::output_only), "wd_output", seed));
    }
  }

  MechanismReport rep;
  rep.name = "m1";
  nlohmann::json arms = nlohmann::json::object();
  std::map<std::string, std::vector<double>> final_acc;
  for (const ArmRun& r : runs) {
    nlohmann::json& a = arms[r.arm];
    final_acc[r.arm].push_back(r.log.back().test_acc);
    nlohmann::json lr_series = nlohmann::json::array(), norms = nlohmann::json::array();
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      lr_series.push_back(detail::series_json(detail::column(r.log, [l](const MetricRecord& m) { return m.effective_lr[l]; })));
      norms.push_back(detail::series_json(detail::column(r.log, [l](const MetricRecord& m) { return m.layer_norm[l]; })));
    }
    a["runs"].push_back({{"seed", r.seed},
                         {"dir", r.dir},
                         {"diverged", r.diverged},
                         {"final_train_acc", r.log.back().train_acc},
                         {"final_test_acc", r.log.back().test_acc},
                         {"final_test_loss", r.log.back().test_loss},
                         {"effective_lr", lr_series},
                         {"layer_norm", norms}});
  }
  for (auto& [arm, accs] : final_acc) arms[arm]["mean_final_test_acc"] = detail::mean(accs);
  rep.summary["arms"] = arms;

  // Weight decay keeps the decayed layers' norms strictly below the baseline
  // (effective learning rate strictly above) from epoch 5 on, for every seed.
  bool below = true;
  nlohmann::json violations = nlohmann::json::array();
  for (std::uint64_t seed : rc.seeds) {
    const ArmRun& b = detail::find(runs, "baseline", seed);
    const ArmRun& w = detail::find(runs, "wd_hidden", seed);
    for (std::size_t e = 5; e < std::min(b.log.size(), w.log.size()); ++e) {
      for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        if (!hidden[l]) continue;
        const MetricRecord& rb = b.log.records()[e];
        const MetricRecord& rw = w.log.records()[e];
        if (!(rw.layer_norm[l] < rb.layer_norm[l]) || !(rw.effective_lr[l] > rb.effective_lr[l])) {
          below = false;
          violations.push_back({{"seed", seed}, {"epoch", e}, {"layer", l}});
        }
      }
    }
    if (b.log.size() != w.log.size() || b.diverged || w.diverged) below = false;
  }
  const double acc_base = detail::mean(final_acc["baseline"]);
  const double acc_wd = detail::mean(final_acc["wd_hidden"]);
  const double acc_tr = detail::mean(final_acc["norm_transfer"]);
  const double gap_pp = std::abs(acc_tr - acc_wd) * 100.0;
  rep.summary["comparisons"] = {{"norms_below_baseline_from_epoch5", below},
                                {"violations", violations},
                                {"mean_test_acc_baseline", acc_base},
                                {"mean_test_acc_wd_hidden", acc_wd},
                                {"mean_test_acc_norm_transfer", acc_tr},
                                {"transfer_vs_wd_pp", gap_pp}};
  rep.criteria["3a_wd_norms_below_baseline"] = below;
  rep.criteria["3b_transfer_within_0.5pp_of_wd"] = gap_pp <= 0.5;
  rep.criteria["3b_transfer_above_baseline"] = acc_tr > acc_base;

  const std::uint64_t s0 = rc.seeds.front();
  detail::plot(rc.svg, dir + "/effective_lr_layer0.svg", runs, s0, [](const MetricRecord& m) { return m.effective_lr[0]; },
               {"effective learning rate, layer 0", "epoch", "eta / ||theta_0||^2", true});
  detail::plot(rc.svg, dir + "/test_acc.svg", runs, s0, [](const MetricRecord& m) { return m.test_acc; },
               {"test accuracy", "epoch", "accuracy", false});
  detail::finish(rep, dir, start);
  return rep;
}

/// m2: Jacobian norms under SGD and K-FAC-G with and without weight decay.
inline MechanismReport replicate_m2(const ExperimentConfig& base, const DataBundle& data, const std::string& dir,
                                    const ReplicateLog& say = {}) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(dir);
  const ReplicateConfig& rc = base.replicate;
  ExperimentConfig c = detail::quiet(base);
  c.model.batch_norm = false;
  c.model.bias = false;
  c.diag.jacobian = true;
  c.diag.gn_norms = true;
  c.train.epochs = rc.m2_epochs;
  DataBundle local;
  if (rc.m2_pca_components > 0 && c.data.pca_components == 0) {
    c.data.pca_components = rc.m2_pca_components;
    c.validate();
    local = pca_whiten(data, rc.m2_pca_components);
  }
  const DataBundle& inputs = local.train.size() > 0 ? local : data;

  ExperimentConfig sgd = c;
  sgd.optim.kind = OptimizerKind::sgd;
  sgd.optim.lr = rc.m2_sgd_lr;
  sgd.optim.momentum = rc.m2_sgd_momentum;
  ExperimentConfig kfac = c;
  kfac.optim.kind = OptimizerKind::kfac_g;
  kfac.optim.lr = rc.m2_kfac_lr;

  detail::ArmRunner runner(dir, inputs, say);
  std::vector<ArmRun> runs;
  for (std::uint64_t seed : rc.seeds) {
    runs.push_back(runner.run(detail::with_coupling(sgd, CouplingMode::none, 0.0, MaskPreset::all), "sgd", seed));
    runs.push_back(runner.run(detail::with_coupling(sgd, CouplingMode::weight_decay, rc.m2_sgd_beta, MaskPreset::all),
                              "sgd_wd", seed));
    runs.push_back(runner.run(detail::with_coupling(kfac, CouplingMode::none, 0.0, MaskPreset::all), "kfac_g", seed));
    runs.push_back(runner.run(
        detail::with_coupling(kfac, CouplingMode::weight_decay, rc.m2_kfac_beta, MaskPreset::all), "kfac_g_wd", seed));
  }

  MechanismReport rep;
  rep.name = "m2";
  nlohmann::json arms = nlohmann::json::object();
  std::map<std::string, std::vector<double>> jac;
  std::vector<double> corr_kfac_gn, corr_jac;
  nlohmann::json nets = nlohmann::json::array();
  for (const ArmRun& r : runs) {
    const MetricRecord& f = r.log.back();
    jac[r.arm].push_back(f.jacobian_frob);
    arms[r.arm]["runs"].push_back({{"seed", r.seed},
                                   {"dir", r.dir},
                                   {"diverged", r.diverged},
                                   {"final_train_acc", f.train_acc},
                                   {"final_test_acc", f.test_acc},
                                   {"jacobian_frob", detail::finite_or_null(f.jacobian_frob)},
                                   {"kfac_gn_norm", detail::finite_or_null(f.kfac_gn_norm)},
                                   {"gn_norm", detail::finite_or_null(f.gn_norm)}});
    if (!r.diverged && f.train_acc == 1.0 && std::isfinite(f.kfac_gn_norm) && std::isfinite(f.jacobian_frob)) {
      corr_kfac_gn.push_back(f.kfac_gn_norm);
      corr_jac.push_back(f.jacobian_frob);
      nets.push_back({{"arm", r.arm}, {"seed", r.seed}});
    }
  }
  for (auto& [arm, v] : jac) arms[arm]["mean_jacobian_frob"] = detail::mean(v);
  rep.summary["arms"] = arms;
  const double ratio_sgd = detail::mean(jac["sgd"]) / detail::mean(jac["sgd_wd"]);
  const double ratio_kfac = detail::mean(jac["kfac_g"]) / detail::mean(jac["kfac_g_wd"]);
  const double r = pearson(corr_kfac_gn, corr_jac);
  rep.summary["comparisons"] = {{"jacobian_ratio_sgd", detail::finite_or_null(ratio_sgd)},
                                {"jacobian_ratio_kfac_g", detail::finite_or_null(ratio_kfac)},
                                {"correlation_nets", nets},
                                {"correlation_n", corr_jac.size()},
                                {"pearson_kfac_gn_norm_vs_jacobian", detail::finite_or_null(r)}};
  rep.criteria["4a_kfac_g_ratio_exceeds_sgd"] = ratio_kfac > ratio_sgd;
  rep.criteria["4b_pearson_at_least_0.8_over_8_nets"] = corr_jac.size() >= 8 && r >= 0.8;

  const std::uint64_t s0 = rc.seeds.front();
  detail::plot(rc.svg, dir + "/jacobian_frob.svg", runs, s0, [](const MetricRecord& m) { return m.jacobian_frob; },
               {"mean squared Jacobian norm (held-out subset)", "epoch", "E ||J_x||_F^2", true});
  detail::plot(rc.svg, dir + "/kfac_gn_norm.svg", runs, s0, [](const MetricRecord& m) { return m.kfac_gn_norm; },
               {"K-FAC GN norm", "epoch", "sum_l theta_l^T G_l theta_l", true});
  detail::finish(rep, dir, start);
  return rep;
}

/// m3: normalized Fisher and GN traces of the first layer and the effective
/// damping ratio under K-FAC on a BN MLP.
inline MechanismReport replicate_m3(const ExperimentConfig& base, const DataBundle& data, const std::string& dir,
                                    const ReplicateLog& say = {}) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(dir);
  const ReplicateConfig& rc = base.replicate;
  ExperimentConfig c = detail::quiet(base);
  c.model.batch_norm = true;
  c.diag.traces = true;
  c.optim.lr = rc.m3_lr;
  c.train.epochs = rc.m3_epochs;

  detail::ArmRunner runner(dir, data, say);
  std::vector<ArmRun> runs;
  for (std::uint64_t seed : rc.m3_seeds) {
    for (OptimizerKind kind : {OptimizerKind::kfac_f, OptimizerKind::kfac_g}) {
      ExperimentConfig k = c;
      k.optim.kind = kind;
      const std::string name = to_string(kind);
      runs.push_back(runner.run(detail::with_coupling(k, CouplingMode::none, 0.0, MaskPreset::all), name, seed));
      runs.push_back(runner.run(detail::with_coupling(k, CouplingMode::weight_decay, rc.m3_beta, MaskPreset::all),
                                name + "_wd", seed));
    }
  }

  MechanismReport rep;
  rep.name = "m3";
  nlohmann::json arms = nlohmann::json::object();
  for (const ArmRun& r : runs) {
    arms[r.arm]["runs"].push_back(
        {{"seed", r.seed},
         {"dir", r.dir},
         {"diverged", r.diverged},
         {"final_train_acc", r.log.back().train_acc},
         {"final_test_acc", r.log.back().test_acc},
         {"trace_fisher_0", detail::series_json(detail::column(r.log, [](const MetricRecord& m) { return m.trace_fisher[0]; }))},
         {"trace_gn_0", detail::series_json(detail::column(r.log, [](const MetricRecord& m) { return m.trace_gn[0]; }))},
         {"damping_ratio_0",
          detail::series_json(detail::column(r.log, [](const MetricRecord& m) { return m.damping_ratio[0]; }))}});
  }
  rep.summary["arms"] = arms;

  bool trained = true, fisher_decays = true, gn_stable = true, damping_higher = true;
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::uint64_t seed : rc.m3_seeds) {
    const ArmRun& f = detail::find(runs, "kfac_f", seed);
    const ArmRun& fw = detail::find(runs, "kfac_f_wd", seed);
    const auto tf = detail::column(f.log, [](const MetricRecord& m) { return m.trace_fisher[0]; });
    const auto tg = detail::column(f.log, [](const MetricRecord& m) { return m.trace_gn[0]; });
    const std::size_t last = tf.size() - 1;
    // Early training: the first quarter of the epochs (at least one).
    const std::size_t early = std::max<std::size_t>(1, (c.train.epochs + 3) / 4);
    std::size_t peak = 0;
    for (std::size_t e = 0; e <= std::min(early, last); ++e) {
      if (tf[e] > tf[peak]) peak = e;
    }
    const double decay = tf[peak] / tf[last];
    double g_lo = tg[peak], g_hi = tg[peak];
    for (std::size_t e = peak; e <= last; ++e) {
      g_lo = std::min(g_lo, tg[e]);
      g_hi = std::max(g_hi, tg[e]);
    }
    const double g_change = g_hi / g_lo;
    const double acc = f.log.back().train_acc;
    const std::size_t mid = (c.train.epochs + 1) / 2;
    bool higher = f.log.size() == fw.log.size() && !f.diverged && !fw.diverged;
    for (std::size_t e = mid; higher && e < f.log.size(); ++e) {
      higher = f.log.records()[e].damping_ratio[0] > fw.log.records()[e].damping_ratio[0];
    }
    trained = trained && !f.diverged && acc >= 0.99;
    fisher_decays = fisher_decays && decay >= 10.0;
    gn_stable = gn_stable && g_change <= 4.0;
    damping_higher = damping_higher && higher;
    per_seed.push_back({{"seed", seed},
                        {"kfac_f_final_train_acc", acc},
                        {"fisher_peak_epoch", peak},
                        {"fisher_decay_factor", detail::finite_or_null(decay)},
                        {"gn_change_factor", detail::finite_or_null(g_change)},
                        {"damping_ratio_higher_without_wd_from_epoch", mid},
                        {"damping_ratio_higher_without_wd", higher}});
  }
  rep.summary["comparisons"] = per_seed;
  rep.criteria["5_kfac_f_train_acc_at_least_0.99"] = trained;
  rep.criteria["5_fisher_trace_decays_10x"] = fisher_decays;
  rep.criteria["5_gn_trace_changes_at_most_4x"] = gn_stable;
  rep.criteria["5_damping_ratio_no_wd_exceeds_wd"] = damping_higher;

  const std::uint64_t s0 = rc.m3_seeds.front();
  detail::plot(rc.svg, dir + "/trace_fisher_layer0.svg", runs, s0, [](const MetricRecord& m) { return m.trace_fisher[0]; },
               {"tr F(theta_hat_0)", "epoch", "trace", true});
  detail::plot(rc.svg, dir + "/trace_gn_layer0.svg", runs, s0, [](const MetricRecord& m) { return m.trace_gn[0]; },
               {"tr G(theta_hat_0)", "epoch", "trace", true});
  detail::plot(rc.svg, dir + "/damping_ratio_layer0.svg", runs, s0, [](const MetricRecord& m) { return m.damping_ratio[0]; },
               {"effective damping ratio, layer 0", "epoch", "lambda ||theta||^2 / (tr C / P)", true});
  detail::finish(rep, dir, start);
  return rep;
}

/// Runs the selected mechanisms ("m1", "m2", "m3"; empty = all) under `dir`
/// and writes dir/summary.json combining their summaries.
inline std::vector<MechanismReport> replicate_mechanisms(const ExperimentConfig& base, const std::string& dir,
                                                         const std::vector<std::string>& which = {},
                                                         const ReplicateLog& say = {}) {
  base.validate();
  const DataBundle data = load_data(base);
  const auto wanted = [&](const std::string& m) {
    return which.empty() || std::find(which.begin(), which.end(), m) != which.end();
  };
  for (const std::string& m : which) {
    if (m != "m1" && m != "m2" && m != "m3") throw DomainError("replicate: unknown mechanism '" + m + "'");
  }
  std::vector<MechanismReport> out;
  if (wanted("m1")) out.push_back(replicate_m1(base, data, dir + "/m1", say));
  if (wanted("m2")) out.push_back(replicate_m2(base, data, dir + "/m2", say));
  if (wanted("m3")) out.push_back(replicate_m3(base, data, dir + "/m3", say));
  nlohmann::json all = nlohmann::json::object();
  for (const MechanismReport& r : out) {
    all[r.name] = {{"pass", r.pass()}, {"seconds", r.seconds}, {"criteria", r.summary["criteria"]},
                   {"comparisons", r.summary["comparisons"]}};
  }
  all["config"] = to_json(base);
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/summary.json") << all.dump(2) << "\n";
  return out;
}

}  // namespace wdlab::harness
