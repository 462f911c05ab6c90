#pragma once

// Early-stopping bookkeeping shared by the neural models.

#include "evdep/core.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <string>
#include <vector>

namespace evdep::nn {

struct EarlyStoppingConfig {
  int max_epochs = 2000;
  int patience = 500;           ///< epochs without validation improvement
  int eval_every = 25;          ///< validation cadence in epochs
  std::size_t valid_samples = 2000;  ///< generated points per validation
};

struct GibbsConfig {
  int grid = 256;    ///< CODINE conditional grid points
  int burn_in = 100; ///< sweeps discarded per chain
  int thin = 5;      ///< keep every thin-th sweep
  int chains = 32;   ///< parallel chains
};

struct ValidationPoint {
  int epoch;
  double tau_diff;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<ValidationPoint> validation;
  int best_epoch = -1;
  double best_tau_diff = std::numeric_limits<double>::infinity();
  std::string stop_reason;
  long steps = 0;
};

inline nlohmann::json to_json(const TrainLog& log) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& p : log.validation) v.push_back({{"epoch", p.epoch}, {"tau_diff", p.tau_diff}});
  return {{"epoch_loss", log.epoch_loss}, {"validation", v},       {"best_epoch", log.best_epoch},
          {"best_tau_diff", log.best_tau_diff}, {"stop_reason", log.stop_reason}, {"steps", log.steps}};
}

inline nlohmann::json to_json(const GibbsConfig& g) {
  return {{"grid", g.grid}, {"burn_in", g.burn_in}, {"thin", g.thin}, {"chains", g.chains}};
}

inline GibbsConfig gibbs_from_json(const nlohmann::json& j, GibbsConfig g = {}) {
  g.grid = j.value("grid", g.grid);
  g.burn_in = j.value("burn_in", g.burn_in);
  g.thin = j.value("thin", g.thin);
  g.chains = j.value("chains", g.chains);
  return g;
}

inline nlohmann::json to_json(const EarlyStoppingConfig& e) {
  return {{"max_epochs", e.max_epochs}, {"patience", e.patience}, {"eval_every", e.eval_every},
          {"valid_samples", e.valid_samples}};
}

inline EarlyStoppingConfig early_stopping_from_json(const nlohmann::json& j, EarlyStoppingConfig e = {}) {
  e.max_epochs = j.value("max_epochs", e.max_epochs);
  e.patience = j.value("patience", e.patience);
  e.eval_every = j.value("eval_every", e.eval_every);
  e.valid_samples = j.value("valid_samples", e.valid_samples);
  return e;
}

/// Tracks the best validation score and decides when to stop.
class EarlyStopper {
 public:
  explicit EarlyStopper(const EarlyStoppingConfig& cfg) : cfg_(cfg) {
    require(cfg.max_epochs >= 1 && cfg.patience >= 1 && cfg.eval_every >= 1, ErrorCode::InvalidArgument,
            "early stopping needs positive max_epochs, patience and eval_every");
    require(cfg.valid_samples >= 2, ErrorCode::InvalidArgument, "need at least 2 validation samples");
  }

  bool should_validate(int epoch) const {
    return epoch % cfg_.eval_every == 0 || epoch == cfg_.max_epochs;
  }

  /// Returns true when the score is a new best.
  bool record(TrainLog& log, int epoch, double tau_diff) {
    log.validation.push_back({epoch, tau_diff});
    if (std::isfinite(tau_diff) && tau_diff < log.best_tau_diff) {
      log.best_tau_diff = tau_diff;
      log.best_epoch = epoch;
      return true;
    }
    return false;
  }

  bool exhausted(const TrainLog& log, int epoch) const {
    const int since = log.best_epoch < 0 ? epoch : epoch - log.best_epoch;
    return since >= cfg_.patience;
  }

  const EarlyStoppingConfig& config() const { return cfg_; }

 private:
  EarlyStoppingConfig cfg_;
};

}  // namespace evdep::nn
