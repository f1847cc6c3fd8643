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

// Grid search over (learning rate, coupling strength) with selection on the
// validation split and a final retrain on train + validation.

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "wdlab/harness/train.hpp"

namespace wdlab::harness {

enum class CellStatus { ok, rejected, diverged, failed };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::rejected: return "rejected";
    case CellStatus::diverged: return "diverged";
    case CellStatus::failed: return "failed";
  }
  return "?";
}

struct GridCell {
  double lr = 0.0;
  double beta = 0.0;
  CellStatus status = CellStatus::ok;
  double val_acc = kNaN;
  double val_loss = kNaN;
  std::string message;
  std::string dir;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  ExperimentConfig best_config;
  RunResult retrain;
};

/// Cells whose per-step shrink factor would be non-positive are not trained.
inline bool cell_is_stable(const ExperimentConfig& c, double lr, double beta) {
  if (c.reg.coupling != CouplingMode::weight_decay || beta == 0.0) return true;
  const bool literal = c.optim.kfac.alg1_literal &&
                       (c.optim.kind == OptimizerKind::kfac_f || c.optim.kind == OptimizerKind::kfac_g);
  return (literal ? beta : lr * beta) < 1.0;
}

/// Highest validation accuracy among trained cells; ties go to the smaller
/// beta, then the smaller learning rate. Throws when no cell trained.
inline std::size_t select_best(const std::vector<GridCell>& cells) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    if (c.status != CellStatus::ok || std::isnan(c.val_acc)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const GridCell& b = cells[*best];
    if (c.val_acc > b.val_acc || (c.val_acc == b.val_acc && (c.beta < b.beta || (c.beta == b.beta && c.lr < b.lr)))) {
      best = i;
    }
  }
  if (!best) throw DomainError("grid: no cell trained successfully");
  return *best;
}

inline std::string cell_name(double lr, double beta) {
  char buf[80];
  std::snprintf(buf, sizeof buf, "lr%.6g_beta%.6g", lr, beta);
  return buf;
}

inline ExperimentConfig cell_config(const ExperimentConfig& base, double lr, double beta, const std::string& dir) {
  ExperimentConfig c = base;
  c.optim.lr = lr;
  c.reg.beta = beta;
  c.output.dir = dir;
  return c;
}

/// Trains every cell on the training split (up to `jobs` at once), scores on
/// the validation split, retrains the winner on train + validation and
/// measures it on the test split. Writes grid.csv, best.json and one run
/// directory per cell under base.output.dir.
inline GridResult run_grid(const ExperimentConfig& base, std::size_t jobs = 1,
                           const std::function<void(const GridCell&)>& on_cell = {}) {
  base.validate();
  if (base.data.n_val == 0) throw DomainError("grid: needs a validation split (data.n_val > 0)");
  const DataBundle data = load_data(base);
  GridResult out;
  for (double lr : base.grid.lrs) {
    for (double beta : base.grid.betas) {
      GridCell cell;
      cell.lr = lr;
      cell.beta = beta;
      cell.dir = base.output.dir + "/cells/" + cell_name(lr, beta);
      if (!cell_is_stable(base, lr, beta)) {
        cell.status = CellStatus::rejected;
        cell.message = "lr * beta >= 1";
      }
      out.cells.push_back(cell);
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex report;
  const auto worker = [&] {
    for (std::size_t i = next++; i < out.cells.size(); i = next++) {
      GridCell& cell = out.cells[i];
      if (cell.status == CellStatus::ok) {
        try {
          const ExperimentConfig c = cell_config(base, cell.lr, cell.beta, cell.dir);
          const RunResult r = run_training(c, data.train, data.val);
          write_run(cell.dir, c, r);
          cell.val_acc = r.log.back().test_acc;
          cell.val_loss = r.log.back().test_loss;
          if (r.diverged) {
            cell.status = CellStatus::diverged;
            cell.message = r.message;
          }
        } catch (const std::exception& e) {
          cell.status = CellStatus::failed;
          cell.message = e.what();
        }
      }
      if (on_cell) {
        std::lock_guard<std::mutex> lock(report);
        on_cell(cell);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(jobs, 1); ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::filesystem::create_directories(base.output.dir);
  {
    std::ofstream csv(base.output.dir + "/grid.csv");
    csv << "lr,beta,status,val_acc,val_loss\n";
    for (const GridCell& c : out.cells) {
      csv << format_double(c.lr) << "," << format_double(c.beta) << "," << to_string(c.status) << ","
          << format_double(c.val_acc) << "," << format_double(c.val_loss) << "\n";
    }
  }
  out.best = select_best(out.cells);
  const GridCell& win = out.cells[out.best];
  out.best_config = cell_config(base, win.lr, win.beta, base.output.dir + "/best");
  out.retrain = run_training(out.best_config, concat(data.train, data.val), data.test);
  write_run(out.best_config.output.dir, out.best_config, out.retrain,
            {{"selected_by", "validation accuracy"}, {"val_acc", win.val_acc}});

  nlohmann::json cells = nlohmann::json::array();
  for (const GridCell& c : out.cells) {
    cells.push_back({{"lr", c.lr},
                     {"beta", c.beta},
                     {"status", to_string(c.status)},
                     {"val_acc", std::isnan(c.val_acc) ? nlohmann::json(nullptr) : nlohmann::json(c.val_acc)},
                     {"message", c.message}});
  }
  nlohmann::json best = {{"lr", win.lr},
                         {"beta", win.beta},
                         {"val_acc", win.val_acc},
                         {"test_acc", out.retrain.log.back().test_acc},
                         {"test_loss", out.retrain.log.back().test_loss},
                         {"cells", cells}};
  std::ofstream(base.output.dir + "/best.json") << best.dump(2) << "\n";
  return out;
}

}  // namespace wdlab::harness
