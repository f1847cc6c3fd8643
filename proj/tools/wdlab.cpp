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

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wdlab/wdlab.hpp"

namespace {

using namespace wdlab;
using namespace wdlab::harness;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  bool quiet = false;
};

ExperimentConfig build_config(const Common& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  apply_overrides(c, o.sets);
  if (o.seed) c.train.seed = *o.seed;
  if (!o.out.empty()) c.output.dir = o.out;
  return c;
}

void print_record(const MetricRecord& r) {
  std::fprintf(stderr, "epoch %3zu  lr %.3g  train_loss %.4f  train_acc %.4f  test_loss %.4f  test_acc %.4f\n", r.epoch,
               r.lr, r.train_loss, r.train_acc, r.test_loss, r.test_acc);
}

int cmd_train(const Common& o) {
  const ExperimentConfig c = build_config(o);
  const RunResult r = train(c, o.quiet ? Progress{} : Progress(print_record));
  std::cout << c.output.dir << "/metrics.csv\n";
  if (r.diverged) {
    std::cerr << "diverged: " << r.message << "\n";
    return 3;
  }
  return 0;
}

int cmd_grid(const Common& o) {
  const ExperimentConfig c = build_config(o);
  const GridResult g = run_grid(c, o.jobs, [&](const GridCell& cell) {
    if (!o.quiet) {
      std::fprintf(stderr, "lr %-10g beta %-10g %-9s val_acc %.4f %s\n", cell.lr, cell.beta, to_string(cell.status),
                   cell.val_acc, cell.message.c_str());
    }
  });
  const GridCell& best = g.cells[g.best];
  std::printf("best lr %g beta %g val_acc %.4f test_acc %.4f\n", best.lr, best.beta, best.val_acc,
              g.retrain.log.back().test_acc);
  return 0;
}

int cmd_verify(const Common& o, const std::string& only, const std::string& json_path, std::size_t trials) {
  const std::uint64_t seed = o.seed.value_or(0);
  const auto reports = verify::run_all(seed, only, trials);
  for (const auto& r : reports) {
    std::printf("%-4s %-22s trials %3zu  max_rel_error %.3e  tol %.1e", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.trials, r.max_rel_error, r.tolerance);
    if (r.control_error) std::printf("  control %.3e (%s)", *r.control_error, r.controls_ok ? "ok" : "NOT SEPARATED");
    std::printf("  %.2fs\n", r.seconds);
  }
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw DomainError("cannot write " + json_path);
    out << verify::to_json(reports).dump(2) << "\n";
  }
  return verify::all_pass(reports) ? 0 : 1;
}

int cmd_replicate(const Common& o, const std::vector<std::string>& only) {
  ExperimentConfig c = build_config(o);
  if (o.seed) {
    c.replicate.seeds = {*o.seed};
    c.replicate.m3_seeds = {*o.seed};
  }
  const auto reports = replicate_mechanisms(c, c.output.dir, only, [&](const std::string& line) {
    if (!o.quiet) std::cerr << line << "\n";
  });
  bool pass = true;
  for (const auto& r : reports) {
    for (const auto& [name, ok] : r.criteria) std::printf("%-4s %s %s\n", ok ? "PASS" : "FAIL", r.name.c_str(), name.c_str());
    std::printf("     %s took %.1fs\n", r.name.c_str(), r.seconds);
    pass = pass && r.pass();
  }
  std::printf("summary: %s/summary.json\n", c.output.dir.c_str());
  return pass ? 0 : 1;
}

int cmd_diag(const Common& o, const std::string& checkpoint, bool traces) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  ExperimentConfig c = ck.config;
  apply_overrides(c, o.sets);
  c.diag.jacobian = true;
  c.diag.gn_norms = true;
  c.diag.traces = traces;
  const DataBundle data = load_data(c);
  const NetworkSpec spec = c.network();
  const Matrix jac_x = data.test.subset(harness::detail::fixed_subset(data.test.size(), c.diag.jacobian_examples,
                                                             c.diag.jacobian_seed)).x;
  const Matrix trace_x =
      data.train.subset(harness::detail::fixed_subset(data.train.size(), c.diag.trace_examples, c.diag.jacobian_seed + 1)).x;
  std::optional<std::pair<CurvatureMetric, double>> kfac;
  if (c.optim.kind == OptimizerKind::kfac_f) kfac = std::pair(CurvatureMetric::fisher, c.optim.kfac.damping);
  if (c.optim.kind == OptimizerKind::kfac_g) kfac = std::pair(CurvatureMetric::gn, c.optim.kfac.damping);
  const MetricRecord r = record_metrics(c, spec, ck.params, ck.bn, data.train, data.test, jac_x, trace_x, ck.epoch,
                                        c.schedule().at(ck.epoch == 0 ? 0 : ck.epoch - 1), kfac);
  MetricLog log(spec.num_layers());
  std::cout << record_json(log, r).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wdlab: weight decay, curvature and normalization experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Common o;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "override, section.key=value (repeatable)");
  auto* seed_opt = app.add_option("--seed", seed, "seed (train.seed; verify seed; replicate seed list)");
  app.add_option("--out", o.out, "output directory (output.dir)");
  app.add_option("--jobs", o.jobs, "parallel grid cells")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", o.quiet, "no progress output");

  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  auto* grid_cmd = app.add_subcommand("grid", "grid search over grid.lrs x grid.betas");

  auto* verify_cmd = app.add_subcommand("verify", "randomized identity checks");
  std::string only, json_path;
  std::size_t trials = verify::kDefaultTrials;
  verify_cmd->add_option("--only", only, "run a single check");
  verify_cmd->add_option("--json", json_path, "write the reports as JSON");
  verify_cmd->add_option("--trials", trials, "trials per check")->check(CLI::PositiveNumber);

  auto* rep_cmd = app.add_subcommand("replicate", "mechanism experiments m1, m2, m3");
  std::vector<std::string> mechanisms;
  rep_cmd->add_option("--only", mechanisms, "subset of m1,m2,m3")->delimiter(',');

  auto* diag_cmd = app.add_subcommand("diag", "diagnostics for a saved checkpoint");
  std::string checkpoint;
  bool traces = false;
  diag_cmd->add_option("checkpoint", checkpoint, "checkpoint.json or checkpoint.bin")->required()->check(CLI::ExistingFile);
  diag_cmd->add_flag("--traces", traces, "also compute curvature traces");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) o.seed = seed;

  try {
    if (*train_cmd) return cmd_train(o);
    if (*grid_cmd) return cmd_grid(o);
    if (*verify_cmd) return cmd_verify(o, only, json_path, trials);
    if (*rep_cmd) return cmd_replicate(o, mechanisms);
    if (*diag_cmd) return cmd_diag(o, checkpoint, traces);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
