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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "wdlab/harness/checkpoint.hpp"
#include "wdlab/harness/config.hpp"
#include "wdlab/harness/grid.hpp"
#include "wdlab/harness/replicate.hpp"
#include "wdlab/harness/svg.hpp"
#include "wdlab/harness/train.hpp"

namespace {

using namespace wdlab;
using namespace wdlab::harness;

std::string scratch(const std::string& name) {
  const std::string dir = ::testing::TempDir() + "wdlab_harness/" + name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Linearly separable synthetic problem with a single linear layer.
ExperimentConfig tiny(const std::string& dir) {
  ExperimentConfig c;
  apply_overrides(c, {"data.source=synthetic", "data.synthetic_dim=6", "data.synthetic_classes=3",
                      "data.synthetic_teacher=", "data.n_train=240", "data.n_val=60", "data.n_test=60",
                      "model.hidden=", "model.batch_norm=false", "optim.lr=0.5", "optim.schedule=",
                      "train.epochs=4", "train.batch_size=32", "diag.jacobian_examples=20"});
  c.output.dir = dir;
  return c;
}

ExperimentConfig tiny_bn(const std::string& dir) {
  ExperimentConfig c = tiny(dir);
  apply_overrides(c, {"model.hidden=8,8", "model.batch_norm=true", "optim.lr=0.1", "data.synthetic_teacher=8"});
  return c;
}

TEST(Config, ParsesSectionsListsAndOverrides) {
  std::istringstream in(
      "# desk run\n[model]\nhidden = 64, 32\nbatch_norm = no\n[optim]\nkind = kfac_g\nschedule = 5,9\n"
      "[reg]\ncoupling = weight_decay\nmask = hidden-only\nbeta = 5e-4\n");
  ExperimentConfig c = parse_config(in);
  EXPECT_EQ(c.model.hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_FALSE(c.model.batch_norm);
  EXPECT_EQ(c.optim.kind, OptimizerKind::kfac_g);
  EXPECT_EQ(c.optim.schedule, (std::vector<std::size_t>{5, 9}));
  EXPECT_EQ(c.reg.mask, MaskPreset::hidden_only);
  EXPECT_DOUBLE_EQ(c.reg.beta, 5e-4);
  apply_overrides(c, {"reg.beta=0.01", "train.seed=9"});
  EXPECT_DOUBLE_EQ(c.reg.beta, 0.01);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.network().layer_dims, (std::vector<std::size_t>{784, 64, 32, 10}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  std::istringstream typo("[optim]\nlearning_rate = 0.1\n");
  EXPECT_THROW(parse_config(typo), DomainError);
  std::istringstream loose("lr = 0.1\n");
  EXPECT_THROW(parse_config(loose), DomainError);
  ExperimentConfig c;
  EXPECT_THROW(apply_overrides(c, {"train.epochs=-3"}), DomainError);
  EXPECT_THROW(apply_overrides(c, {"model.batch_norm=maybe"}), DomainError);
  EXPECT_THROW(apply_overrides(c, {"train.epochs"}), DomainError);
  c.train.batch_size = c.data.n_train + 1;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  apply_overrides(c, {"optim.lr=0.123456789", "reg.coupling=l2", "replicate.seeds=4,5", "model.hidden=3"});
  const ExperimentConfig back = from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Data, SplitsAreDisjointAndSized) {
  const ExperimentConfig c = tiny("");
  const DataBundle d = load_data(c);
  EXPECT_EQ(d.train.size(), 240u);
  EXPECT_EQ(d.val.size(), 60u);
  EXPECT_EQ(d.test.size(), 60u);
  std::set<std::vector<double>> rows;
  for (const Dataset* s : {&d.train, &d.val, &d.test}) {
    for (Eigen::Index i = 0; i < s->x.rows(); ++i) {
      const Vector r = s->x.row(i).transpose();
      rows.insert(std::vector<double>(r.data(), r.data() + r.size()));
    }
  }
  EXPECT_EQ(rows.size(), 360u);
}

TEST(Data, PcaComponentsShrinkInputsAndWhitenTrain) {
  ExperimentConfig c = tiny("");
  c.data.pca_components = 4;
  const DataBundle d = load_data(c);
  EXPECT_EQ(d.train.dim(), 4u);
  EXPECT_EQ(d.test.dim(), 4u);
  EXPECT_LE(whiteness_residual(d.train.x), 1e-10);
  EXPECT_EQ(c.network().input_dim(), 4u);
  c.data.pca_components = 7;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Checkpoint, RoundTripsBothEncodings) {
  ExperimentConfig c = tiny_bn("");
  c.model.bias = true;
  Rng rng(5);
  const NetworkSpec spec = c.network();
  Checkpoint ck{c, init_params(spec, rng), BatchNormState::initial(spec), 3};
  ck.params.biases[1].setConstant(0.25);
  ck.bn.mean[0].setConstant(-1.5);
  for (CheckpointFormat f : {CheckpointFormat::json, CheckpointFormat::bin}) {
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck, f));
    EXPECT_EQ(back.epoch, 3u);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      EXPECT_EQ(back.params.weights[l], ck.params.weights[l]);
      EXPECT_EQ(back.params.biases[l], ck.params.biases[l]);
      EXPECT_EQ(back.bn.mean[l], ck.bn.mean[l]);
      EXPECT_EQ(back.bn.var[l], ck.bn.var[l]);
    }
    EXPECT_EQ(to_json(back.config).dump(), to_json(c).dump());
  }
}

TEST(Checkpoint, CorruptInputIsFormatError) {
  const ExperimentConfig c = tiny("");
  Rng rng(1);
  const NetworkSpec spec = c.network();
  const Checkpoint ck{c, init_params(spec, rng), BatchNormState::initial(spec), 0};
  std::string bin = encode_checkpoint(ck, CheckpointFormat::bin);
  bin.resize(bin.size() - 3);
  EXPECT_THROW(decode_checkpoint(bin), FormatError);
  EXPECT_THROW(decode_checkpoint("{\"format\":\"other\"}\n"), FormatError);
  EXPECT_THROW(decode_checkpoint("not json\n"), FormatError);
}

TEST(Train, ZeroEpochsRecordsOnlyTheInitialState) {
  ExperimentConfig c = tiny(scratch("zero"));
  c.train.epochs = 0;
  const RunResult r = train(c);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log.back().epoch, 0u);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(std::filesystem::exists(c.output.dir + "/metrics.csv"));
  EXPECT_TRUE(std::filesystem::exists(c.output.dir + "/checkpoint.json"));
  EXPECT_TRUE(std::filesystem::exists(c.output.dir + "/summary.json"));
}

TEST(Train, RecordsPerRunEqualEpochsPlusOne) {
  const ExperimentConfig c = tiny(scratch("count"));
  const RunResult r = train(c);
  EXPECT_EQ(r.log.size(), c.train.epochs + 1);
  EXPECT_EQ(MetricLog::read(c.output.dir + "/metrics.csv").size(), c.train.epochs + 1);
  for (const MetricRecord& m : r.log.records()) {
    EXPECT_GE(m.train_acc, 0.0);
    EXPECT_LE(m.train_acc, 1.0);
    EXPECT_GE(m.jacobian_frob, 0.0);
  }
}

TEST(Train, LinearModelFitsSeparableData) {
  ExperimentConfig c = tiny(scratch("separable"));
  c.train.epochs = 300;
  c.optim.lr = 5.0;
  c.diag.jacobian = false;
  c.diag.gn_norms = false;
  const RunResult r = train(c);
  EXPECT_FALSE(r.diverged);
  EXPECT_GE(r.log.back().train_acc, 0.98);
  EXPECT_LT(r.log.back().train_loss, 0.1 * r.log.records().front().train_loss);
}

TEST(Train, ZeroBetaL2MatchesNoCoupling) {
  ExperimentConfig a = tiny(scratch("l2a"));
  ExperimentConfig b = tiny(scratch("l2b"));
  b.reg.coupling = CouplingMode::l2;
  b.reg.beta = 0.0;
  train(a);
  train(b);
  EXPECT_EQ(slurp(a.output.dir + "/metrics.csv"), slurp(b.output.dir + "/metrics.csv"));
}

TEST(Train, SameSeedSameBytesDifferentSeedDifferentBytes) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::kfac_f}) {
    ExperimentConfig a = tiny_bn(scratch("det_a"));
    a.optim.kind = kind;
    a.optim.kfac.t_inv = 3;
    a.diag.traces = true;
    a.diag.trace_examples = 40;
    ExperimentConfig b = a;
    b.output.dir = scratch("det_b");
    ExperimentConfig d = a;
    d.output.dir = scratch("det_d");
    d.train.seed = 2;
    train(a);
    train(b);
    train(d);
    EXPECT_EQ(slurp(a.output.dir + "/metrics.csv"), slurp(b.output.dir + "/metrics.csv"));
    EXPECT_NE(slurp(a.output.dir + "/metrics.csv"), slurp(d.output.dir + "/metrics.csv"));
  }
}

TEST(Train, NormTransferTracksReferenceNorms) {
  ExperimentConfig wd = tiny_bn(scratch("ref"));
  wd.reg.coupling = CouplingMode::weight_decay;
  wd.reg.beta = 0.5;
  wd.reg.mask = MaskPreset::hidden_only;
  const RunResult ref = train(wd);
  ExperimentConfig t = tiny_bn(scratch("transfer"));
  t.diag.transfer_from = wd.output.dir + "/metrics.csv";
  const RunResult r = train(t);
  ASSERT_EQ(r.log.size(), ref.log.size());
  for (std::size_t e = 0; e < r.log.size(); ++e) {
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_NEAR(r.log.records()[e].layer_norm[l], ref.log.records()[e].layer_norm[l],
                  1e-12 * ref.log.records()[e].layer_norm[l]);
    }
  }
  EXPECT_NE(r.log.back().layer_norm[2], ref.log.back().layer_norm[2]);
}

TEST(Train, TransferOntoUncoveredLayerIsContractError) {
  ExperimentConfig ref = tiny(scratch("ref_plain"));
  train(ref);
  ExperimentConfig t = tiny(scratch("transfer_plain"));
  t.diag.transfer_from = ref.output.dir + "/metrics.csv";
  t.diag.transfer_mask = MaskPreset::all;
  EXPECT_THROW(train(t), ContractError);
}

TEST(Train, DivergenceStopsWithADiagnosticRecord) {
  ExperimentConfig c = tiny(scratch("diverge"));
  apply_overrides(c, {"reg.coupling=l2", "reg.beta=1e5", "optim.lr=1e5"});
  const RunResult r = train(c);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.message.empty());
  EXPECT_LT(r.log.size(), c.train.epochs + 1);
  EXPECT_FALSE(std::isfinite(r.log.back().train_loss) && r.log.back().train_acc > 0.99);
}

TEST(Grid, SingletonGridWinsAndRetrains) {
  ExperimentConfig c = tiny(scratch("grid1"));
  c.grid.lrs = {0.2};
  c.grid.betas = {0.0};
  const GridResult g = run_grid(c);
  ASSERT_EQ(g.cells.size(), 1u);
  EXPECT_EQ(g.best, 0u);
  EXPECT_EQ(g.retrain.log.size(), c.train.epochs + 1);
  EXPECT_TRUE(std::filesystem::exists(c.output.dir + "/grid.csv"));
  EXPECT_TRUE(std::filesystem::exists(c.output.dir + "/best.json"));
}

TEST(Grid, UnstableCellIsRejectedNotFatal) {
  ExperimentConfig c = tiny(scratch("grid2"));
  c.reg.coupling = CouplingMode::weight_decay;
  c.grid.lrs = {0.5};
  c.grid.betas = {0.0, 4.0};
  const GridResult g = run_grid(c, 2);
  EXPECT_EQ(g.cells[1].status, CellStatus::rejected);
  EXPECT_EQ(g.best, 0u);
}

TEST(Grid, TieBreakPrefersSmallerBetaThenSmallerLr) {
  auto cell = [](double lr, double beta, CellStatus status, double acc) {
    GridCell g;
    g.lr = lr;
    g.beta = beta;
    g.status = status;
    g.val_acc = acc;
    return g;
  };
  std::vector<GridCell> cells{cell(0.1, 1e-3, CellStatus::ok, 0.9), cell(0.1, 1e-4, CellStatus::ok, 0.9),
                              cell(0.05, 1e-4, CellStatus::ok, 0.9), cell(0.01, 0.0, CellStatus::diverged, 0.95)};
  EXPECT_EQ(select_best(cells), 2u);
  cells[0].val_acc = 0.91;
  EXPECT_EQ(select_best(cells), 0u);
  for (auto& c : cells) c.status = CellStatus::rejected;
  EXPECT_THROW(select_best(cells), DomainError);
}

TEST(Grid, ParallelMatchesSerial) {
  ExperimentConfig a = tiny(scratch("grid_serial"));
  a.grid.lrs = {0.1, 0.3};
  a.grid.betas = {0.0, 1e-3};
  ExperimentConfig b = a;
  b.output.dir = scratch("grid_parallel");
  run_grid(a, 1);
  run_grid(b, 3);
  EXPECT_EQ(slurp(a.output.dir + "/grid.csv"), slurp(b.output.dir + "/grid.csv"));
}

TEST(Svg, WritesSeriesAndSkipsNonFinite) {
  const std::string doc = svg::line_plot({{"a<b", {0, 1, 2}, {1, kNaN, 3}}, {"c", {0, 1}, {0.5, 0.25}}},
                                         {"title", "epoch", "y", true});
  EXPECT_NE(doc.find("<svg"), std::string::npos);
  EXPECT_NE(doc.find("a&lt;b"), std::string::npos);
  EXPECT_EQ(doc.find("nan"), std::string::npos);
  EXPECT_THROW(svg::line_plot({{"bad", {0, 1}, {1}}}, {}), StructuralError);
}

TEST(Replicate, PearsonBasics) {
  EXPECT_NEAR(pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
  EXPECT_TRUE(std::isnan(pearson({1, 1}, {2, 3})));
}

TEST(Replicate, MechanismSummariesHaveTheirSchema) {
  ExperimentConfig c = tiny_bn("");
  apply_overrides(c, {"replicate.seeds=1", "replicate.m2_epochs=2", "replicate.m3_epochs=2", "train.epochs=2",
                      "replicate.m1_lr=0.1", "replicate.m3_lr=0.05", "diag.trace_examples=30",
                      "replicate.m2_pca_components=4"});
  const std::string dir = scratch("replicate");
  const auto reports = replicate_mechanisms(c, dir);
  ASSERT_EQ(reports.size(), 3u);
  const auto& m1 = reports[0].summary;
  for (const char* arm : {"baseline", "wd_hidden", "norm_transfer"}) {
    ASSERT_TRUE(m1["arms"].contains(arm)) << arm;
    EXPECT_EQ(m1["arms"][arm]["runs"][0]["effective_lr"].size(), 3u);
  }
  const auto& m2 = reports[1].summary["comparisons"];
  EXPECT_TRUE(m2.contains("jacobian_ratio_sgd"));
  EXPECT_TRUE(m2.contains("jacobian_ratio_kfac_g"));
  const auto& m3 = reports[2].summary["comparisons"][0];
  EXPECT_TRUE(m3.contains("fisher_decay_factor"));
  EXPECT_TRUE(m3.contains("gn_change_factor"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/summary.json"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/m1/effective_lr_layer0.svg"));
  EXPECT_THROW(replicate_mechanisms(c, dir, {"m4"}), DomainError);
}

}  // namespace
