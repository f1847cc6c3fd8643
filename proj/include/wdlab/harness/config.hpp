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

// Experiment configuration. Files use INI syntax:
//
//   # comment            ; comment
//   [section]
//   key = value
//
// Lists are comma separated (`hidden = 256,256`). Booleans accept
// true/false/1/0/yes/no/on/off. Unknown sections or keys are rejected. Overrides of
// the form `section.key=value` are applied after the file.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "wdlab/error.hpp"
#include "wdlab/loss.hpp"
#include "wdlab/nn.hpp"
#include "wdlab/optim.hpp"

namespace wdlab::harness {

#ifdef WDLAB_DATA_DIR
inline const std::string kDefaultDataDir = WDLAB_DATA_DIR;
#else
inline const std::string kDefaultDataDir = "data";
#endif

enum class DataSource { mnist, synthetic };
enum class CheckpointFormat { json, bin };

struct DataConfig {
  DataSource source = DataSource::mnist;
  std::string images = kDefaultDataDir + "/mnist10k-images-idx3-ubyte.gz";
  std::string labels = kDefaultDataDir + "/mnist10k-labels-idx1-ubyte.gz";
  std::size_t n_train = 5000;
  std::size_t n_val = 1000;
  std::size_t n_test = 2000;
  std::uint64_t split_seed = 20181020;  // fixed across training seeds
  std::size_t synthetic_dim = 20;
  std::size_t synthetic_classes = 10;
  std::vector<std::size_t> synthetic_teacher{32};
  bool synthetic_whitened = false;
  std::size_t pca_components = 0;  // 0 keeps the raw inputs
};

struct ModelConfig {
  std::vector<std::size_t> hidden{256, 256};
  Activation activation = Activation::relu;
  bool batch_norm = true;
  bool bias = false;
  double bn_epsilon = 1e-8;
};

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.1;
  std::vector<std::size_t> schedule{12, 24};
  double lr_factor = 10.0;
  double momentum = 0.0;
  AdamConfig adam;
  KfacConfig kfac;
};

struct RegConfig {
  CouplingMode coupling = CouplingMode::none;
  double beta = 0.0;
  MaskPreset mask = MaskPreset::all;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::cross_entropy;
};

struct DiagConfig {
  bool jacobian = true;
  std::size_t jacobian_examples = 200;
  std::uint64_t jacobian_seed = 7;
  bool gn_norms = true;
  bool traces = false;
  std::size_t trace_examples = 500;
  std::string transfer_from;  // metrics.csv whose layer norms are imposed each epoch
  MaskPreset transfer_mask = MaskPreset::hidden_only;
  bool transfer_strict = true;
};

struct OutputConfig {
  std::string dir = "runs/default";
  CheckpointFormat checkpoint = CheckpointFormat::json;
};

struct GridConfig {
  std::vector<double> lrs{0.1};
  std::vector<double> betas{0.0};
};

/// Settings for the three bundled mechanism experiments. Data, widths,
/// epochs, batch size and schedule come from the rest of the config.
struct ReplicateConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double m1_lr = 0.1;
  double m1_beta = 0.02;
  bool m1_extra_arms = false;  // wd on all layers and on the output layer only
  double m2_sgd_lr = 0.05;
  double m2_sgd_momentum = 0.9;
  double m2_sgd_beta = 1e-2;
  double m2_kfac_lr = 0.01;
  double m2_kfac_beta = 5e-2;
  std::size_t m2_pca_components = 100;
  std::size_t m2_epochs = 30;
  std::vector<std::uint64_t> m3_seeds{1};
  double m3_lr = 0.01;
  double m3_beta = 5e-2;
  std::size_t m3_epochs = 30;
  bool svg = true;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  OptimConfig optim;
  RegConfig reg;
  TrainConfig train;
  DiagConfig diag;
  OutputConfig output;
  GridConfig grid;
  ReplicateConfig replicate;

  std::size_t raw_input_dim() const { return data.source == DataSource::mnist ? 784 : data.synthetic_dim; }
  std::size_t input_dim() const { return data.pca_components > 0 ? data.pca_components : raw_input_dim(); }
  std::size_t classes() const { return data.source == DataSource::mnist ? 10 : data.synthetic_classes; }

  NetworkSpec network() const {
    std::vector<std::size_t> dims{input_dim()};
    dims.insert(dims.end(), model.hidden.begin(), model.hidden.end());
    dims.push_back(classes());
    NetworkSpec spec = make_mlp(dims, model.activation, model.batch_norm, model.bias);
    spec.bn.epsilon = model.bn_epsilon;
    spec.validate();
    return spec;
  }

  LrSchedule schedule() const { return LrSchedule{optim.lr, optim.schedule, optim.lr_factor}; }

  Coupling coupling() const { return Coupling{reg.coupling, reg.beta, make_mask(reg.mask, network())}; }

  void validate() const {
    if (data.n_train == 0) throw DomainError("config: data.n_train must be > 0");
    if (train.batch_size == 0) throw DomainError("config: train.batch_size must be > 0");
    if (train.batch_size > data.n_train) {
      throw DomainError("config: train.batch_size " + std::to_string(train.batch_size) + " exceeds data.n_train " +
                        std::to_string(data.n_train));
    }
    if (data.pca_components > raw_input_dim() || (data.pca_components > 0 && data.pca_components >= data.n_train)) {
      throw DomainError("config: data.pca_components must be at most the input dimension and below data.n_train");
    }
    if (reg.beta < 0.0) throw DomainError("config: reg.beta must be >= 0");
    if (diag.jacobian && diag.jacobian_examples == 0) throw DomainError("config: diag.jacobian_examples must be > 0");
    if (diag.traces && diag.trace_examples < 2) throw DomainError("config: diag.trace_examples must be >= 2");
    if (grid.lrs.empty() || grid.betas.empty()) throw DomainError("config: grid.lrs and grid.betas must be nonempty");
    if (replicate.seeds.empty() || replicate.m3_seeds.empty()) throw DomainError("config: replicate seed lists must be nonempty");
    schedule().validate();
    (void)network();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline bool parse_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DomainError("config: " + key + " expects a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DomainError("config: " + key + " expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
    throw DomainError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw DomainError("config: " + key + " is out of range: '" + v + "'");
  }
}

inline std::vector<std::size_t> parse_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(v)) out.push_back(static_cast<std::size_t>(parse_count(key, item)));
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_count(key, item));
  return out;
}

inline std::vector<double> parse_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_real(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

/// Sets one `section.key` to `value`. Throws DomainError for unknown keys or
/// malformed values.
inline void apply_setting(ExperimentConfig& c, const std::string& dotted, const std::string& raw) {
  using namespace detail;
  const std::string value = trim(raw);
  const std::string& k = dotted;
  auto real = [&] { return parse_real(k, value); };
  auto count = [&] { return static_cast<std::size_t>(parse_count(k, value)); };
  auto flag = [&] { return parse_bool(k, value); };

  if (k == "data.source") {
    if (value == "mnist") c.data.source = DataSource::mnist;
    else if (value == "synthetic") c.data.source = DataSource::synthetic;
    else throw DomainError("config: data.source must be mnist or synthetic");
  } else if (k == "data.images") c.data.images = value;
  else if (k == "data.labels") c.data.labels = value;
  else if (k == "data.n_train") c.data.n_train = count();
  else if (k == "data.n_val") c.data.n_val = count();
  else if (k == "data.n_test") c.data.n_test = count();
  else if (k == "data.split_seed") c.data.split_seed = parse_count(k, value);
  else if (k == "data.synthetic_dim") c.data.synthetic_dim = count();
  else if (k == "data.synthetic_classes") c.data.synthetic_classes = count();
  else if (k == "data.synthetic_teacher") c.data.synthetic_teacher = parse_counts(k, value);
  else if (k == "data.synthetic_whitened") c.data.synthetic_whitened = flag();
  else if (k == "data.pca_components") c.data.pca_components = count();
  else if (k == "model.hidden") c.model.hidden = parse_counts(k, value);
  else if (k == "model.activation") c.model.activation = parse_activation(value);
  else if (k == "model.batch_norm") c.model.batch_norm = flag();
  else if (k == "model.bias") c.model.bias = flag();
  else if (k == "model.bn_epsilon") c.model.bn_epsilon = real();
  else if (k == "optim.kind") c.optim.kind = parse_optimizer(value);
  else if (k == "optim.lr") c.optim.lr = real();
  else if (k == "optim.schedule") c.optim.schedule = parse_counts(k, value);
  else if (k == "optim.lr_factor") c.optim.lr_factor = real();
  else if (k == "optim.momentum") c.optim.momentum = real();
  else if (k == "optim.adam_beta1") c.optim.adam.beta1 = real();
  else if (k == "optim.adam_beta2") c.optim.adam.beta2 = real();
  else if (k == "optim.adam_epsilon") c.optim.adam.epsilon = real();
  else if (k == "optim.damping") c.optim.kfac.damping = real();
  else if (k == "optim.t_stats") c.optim.kfac.t_stats = count();
  else if (k == "optim.t_inv") c.optim.kfac.t_inv = count();
  else if (k == "optim.ema_decay") c.optim.kfac.ema_decay = real();
  else if (k == "optim.damping_mode") {
    if (value == "factored") c.optim.kfac.damping_mode = DampingMode::factored;
    else if (value == "dense") c.optim.kfac.damping_mode = DampingMode::dense;
    else throw DomainError("config: optim.damping_mode must be factored or dense");
  } else if (k == "optim.alg1_literal") c.optim.kfac.alg1_literal = flag();
  else if (k == "reg.coupling") c.reg.coupling = parse_coupling(value);
  else if (k == "reg.beta") c.reg.beta = real();
  else if (k == "reg.mask") c.reg.mask = parse_mask(value);
  else if (k == "train.epochs") c.train.epochs = count();
  else if (k == "train.batch_size") c.train.batch_size = count();
  else if (k == "train.seed") c.train.seed = parse_count(k, value);
  else if (k == "train.loss") c.train.loss = parse_loss(value);
  else if (k == "diag.jacobian") c.diag.jacobian = flag();
  else if (k == "diag.jacobian_examples") c.diag.jacobian_examples = count();
  else if (k == "diag.jacobian_seed") c.diag.jacobian_seed = parse_count(k, value);
  else if (k == "diag.gn_norms") c.diag.gn_norms = flag();
  else if (k == "diag.traces") c.diag.traces = flag();
  else if (k == "diag.trace_examples") c.diag.trace_examples = count();
  else if (k == "diag.transfer_from") c.diag.transfer_from = value;
  else if (k == "diag.transfer_mask") c.diag.transfer_mask = parse_mask(value);
  else if (k == "diag.transfer_strict") c.diag.transfer_strict = flag();
  else if (k == "output.dir") c.output.dir = value;
  else if (k == "output.checkpoint") {
    if (value == "json") c.output.checkpoint = CheckpointFormat::json;
    else if (value == "bin") c.output.checkpoint = CheckpointFormat::bin;
    else throw DomainError("config: output.checkpoint must be json or bin");
  } else if (k == "grid.lrs") c.grid.lrs = parse_reals(k, value);
  else if (k == "grid.betas") c.grid.betas = parse_reals(k, value);
  else if (k == "replicate.seeds") c.replicate.seeds = parse_seeds(k, value);
  else if (k == "replicate.m1_lr") c.replicate.m1_lr = real();
  else if (k == "replicate.m1_beta") c.replicate.m1_beta = real();
  else if (k == "replicate.m1_extra_arms") c.replicate.m1_extra_arms = flag();
  else if (k == "replicate.m2_sgd_lr") c.replicate.m2_sgd_lr = real();
  else if (k == "replicate.m2_sgd_momentum") c.replicate.m2_sgd_momentum = real();
  else if (k == "replicate.m2_sgd_beta") c.replicate.m2_sgd_beta = real();
  else if (k == "replicate.m2_kfac_lr") c.replicate.m2_kfac_lr = real();
  else if (k == "replicate.m2_kfac_beta") c.replicate.m2_kfac_beta = real();
  else if (k == "replicate.m2_pca_components") c.replicate.m2_pca_components = count();
  else if (k == "replicate.m2_epochs") c.replicate.m2_epochs = count();
  else if (k == "replicate.m3_seeds") c.replicate.m3_seeds = parse_seeds(k, value);
  else if (k == "replicate.m3_lr") c.replicate.m3_lr = real();
  else if (k == "replicate.m3_beta") c.replicate.m3_beta = real();
  else if (k == "replicate.m3_epochs") c.replicate.m3_epochs = count();
  else if (k == "replicate.svg") c.replicate.svg = flag();
  else throw DomainError("config: unknown key '" + k + "'");
}

/// Applies `section.key=value` strings in order.
inline void apply_overrides(ExperimentConfig& c, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw DomainError("override '" + o + "' is not of the form section.key=value");
    apply_setting(c, detail::trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

/// Reads settings from INI text on top of `base`. Keys outside a section are
/// rejected.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw DomainError("config: key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) apply_setting(base, section + "." + key, value.data());
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config " + path);
  return parse_config(in, std::move(base));
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using detail::join;
  const char* mode = c.optim.kfac.damping_mode == DampingMode::factored ? "factored" : "dense";
  return {
      {"data",
       {{"source", c.data.source == DataSource::mnist ? "mnist" : "synthetic"},
        {"images", c.data.images},
        {"labels", c.data.labels},
        {"n_train", c.data.n_train},
        {"n_val", c.data.n_val},
        {"n_test", c.data.n_test},
        {"split_seed", c.data.split_seed},
        {"synthetic_dim", c.data.synthetic_dim},
        {"synthetic_classes", c.data.synthetic_classes},
        {"synthetic_teacher", join(c.data.synthetic_teacher)},
        {"synthetic_whitened", c.data.synthetic_whitened},
        {"pca_components", c.data.pca_components}}},
      {"model",
       {{"hidden", join(c.model.hidden)},
        {"activation", to_string(c.model.activation)},
        {"batch_norm", c.model.batch_norm},
        {"bias", c.model.bias},
        {"bn_epsilon", c.model.bn_epsilon}}},
      {"optim",
       {{"kind", to_string(c.optim.kind)},
        {"lr", c.optim.lr},
        {"schedule", join(c.optim.schedule)},
        {"lr_factor", c.optim.lr_factor},
        {"momentum", c.optim.momentum},
        {"adam_beta1", c.optim.adam.beta1},
        {"adam_beta2", c.optim.adam.beta2},
        {"adam_epsilon", c.optim.adam.epsilon},
        {"damping", c.optim.kfac.damping},
        {"t_stats", c.optim.kfac.t_stats},
        {"t_inv", c.optim.kfac.t_inv},
        {"ema_decay", c.optim.kfac.ema_decay},
        {"damping_mode", mode},
        {"alg1_literal", c.optim.kfac.alg1_literal}}},
      {"reg", {{"coupling", to_string(c.reg.coupling)}, {"beta", c.reg.beta}, {"mask", to_string(c.reg.mask)}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"seed", c.train.seed},
        {"loss", to_string(c.train.loss)}}},
      {"diag",
       {{"jacobian", c.diag.jacobian},
        {"jacobian_examples", c.diag.jacobian_examples},
        {"jacobian_seed", c.diag.jacobian_seed},
        {"gn_norms", c.diag.gn_norms},
        {"traces", c.diag.traces},
        {"trace_examples", c.diag.trace_examples},
        {"transfer_from", c.diag.transfer_from},
        {"transfer_mask", to_string(c.diag.transfer_mask)},
        {"transfer_strict", c.diag.transfer_strict}}},
      {"output", {{"dir", c.output.dir}, {"checkpoint", c.output.checkpoint == CheckpointFormat::json ? "json" : "bin"}}},
      {"grid", {{"lrs", join(c.grid.lrs)}, {"betas", join(c.grid.betas)}}},
      {"replicate",
       {{"seeds", join(c.replicate.seeds)},
        {"m1_lr", c.replicate.m1_lr},
        {"m1_beta", c.replicate.m1_beta},
        {"m1_extra_arms", c.replicate.m1_extra_arms},
        {"m2_sgd_lr", c.replicate.m2_sgd_lr},
        {"m2_sgd_momentum", c.replicate.m2_sgd_momentum},
        {"m2_sgd_beta", c.replicate.m2_sgd_beta},
        {"m2_kfac_lr", c.replicate.m2_kfac_lr},
        {"m2_kfac_beta", c.replicate.m2_kfac_beta},
        {"m2_pca_components", c.replicate.m2_pca_components},
        {"m2_epochs", c.replicate.m2_epochs},
        {"m3_seeds", join(c.replicate.m3_seeds)},
        {"m3_lr", c.replicate.m3_lr},
        {"m3_beta", c.replicate.m3_beta},
        {"m3_epochs", c.replicate.m3_epochs},
        {"svg", c.replicate.svg}}},
  };
}

/// Rebuilds a config from `to_json` output (used by checkpoints).
inline ExperimentConfig from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  for (const auto& [section, body] : j.items()) {
    for (const auto& [key, value] : body.items()) {
      std::string text;
      if (value.is_string()) text = value.get<std::string>();
      else if (value.is_boolean()) text = value.get<bool>() ? "true" : "false";
      else if (value.is_number_unsigned()) text = std::to_string(value.get<std::uint64_t>());
      else if (value.is_number_integer()) text = std::to_string(value.get<std::int64_t>());
      else {
        std::ostringstream os;
        os.precision(17);
        os << value.get<double>();
        text = os.str();
      }
      apply_setting(c, section + "." + key, text);
    }
  }
  return c;
}

}  // namespace wdlab::harness
