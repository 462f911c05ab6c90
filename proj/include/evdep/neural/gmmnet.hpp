#pragma once

// Ensemble of conditional mixture density networks: network i maps the other
// two standardized features to a K-component Gaussian mixture for feature i.
// Sampling is systematic-scan Gibbs over these full conditionals.

#include "evdep/kendall.hpp"
#include "evdep/neural/mlp.hpp"
#include "evdep/neural/training.hpp"
#include "evdep/sessions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace evdep::nn {

struct GmmNetConfig {
  std::vector<int> hidden{32, 32};
  bool batch_norm = true;
  int components = 5;
  double learning_rate = 1e-3;
  std::size_t batch = 64;
  double grad_clip = 5.0;  ///< global L2 gradient norm per network
  double log_sigma_min = -7.0;
  double log_sigma_max = 3.0;
  std::size_t init_rows = 1000;  ///< training rows kept for chain initialization
  double state_margin = 1.0;     ///< Gibbs states stay within the training range widened by this (sd units)
  EarlyStoppingConfig stopping{};
  GibbsConfig gibbs{};
};

/// Mixture parameters for a batch: one row per input row, K columns each.
struct Mixture {
  Matrix weights, means, sigmas;
};

struct GmmNetModel {
  std::vector<Mlp> nets;  ///< one per feature
  Standardizer standardizer;
  Matrix init_states;     ///< standardized training rows
  Eigen::RowVectorXd state_lo, state_hi;  ///< standardized bounds for Gibbs states
  int components = 5;
  double log_sigma_min = -7.0, log_sigma_max = 3.0;
};

/// Indices of the conditioning features for network i.
inline std::array<int, 2> conditioning_features(int i) {
  return i == 0 ? std::array<int, 2>{1, 2} : (i == 1 ? std::array<int, 2>{0, 2} : std::array<int, 2>{0, 1});
}

inline Matrix conditioning_inputs(const Matrix& z, int i) {
  const auto f = conditioning_features(i);
  Matrix x(z.rows(), 2);
  x.col(0) = z.col(f[0]);
  x.col(1) = z.col(f[1]);
  return x;
}

/// Softmax weights, means and clamped scales from raw network outputs.
inline Mixture mixture_from_outputs(const Matrix& out, int k, double ls_min, double ls_max) {
  require(out.cols() == 3 * k, ErrorCode::InvalidArgument, "mixture head width mismatch");
  Mixture m;
  const Matrix logits = out.leftCols(k);
  const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  m.weights = (logits.colwise() - mx).array().exp();
  const Eigen::VectorXd total = m.weights.rowwise().sum();
  m.weights = m.weights.array().colwise() / total.array();
  m.means = out.middleCols(k, k);
  m.sigmas = out.rightCols(k).cwiseMax(ls_min).cwiseMin(ls_max).array().exp();
  return m;
}

inline Mixture gmmnet_mixture(const GmmNetModel& m, int feature, const Matrix& cond_inputs) {
  const Matrix out = m.nets.at(static_cast<std::size_t>(feature)).predict(cond_inputs);
  return mixture_from_outputs(out, m.components, m.log_sigma_min, m.log_sigma_max);
}

/// Mean negative log-likelihood of target under the mixture head and its
/// gradient with respect to the raw outputs (already divided by batch size).
inline double mixture_nll(const Matrix& out, const Eigen::VectorXd& target, int k, double ls_min, double ls_max,
                          Matrix* grad) {
  const Eigen::Index b = out.rows();
  if (grad) grad->setZero(b, 3 * k);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  std::vector<double> logw(static_cast<std::size_t>(k)), logn(static_cast<std::size_t>(k)),
      resp(static_cast<std::size_t>(k));
  for (Eigen::Index r = 0; r < b; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) mx = std::max(mx, out(r, c));
    double zsum = 0.0;
    for (int c = 0; c < k; ++c) zsum += std::exp(out(r, c) - mx);
    const double lse_logits = mx + std::log(zsum);
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      const double ls = std::clamp(out(r, 2 * k + c), ls_min, ls_max);
      const double zc = (target(r) - out(r, k + c)) * std::exp(-ls);
      logw[uc] = out(r, c) - lse_logits;
      logn[uc] = -half_log_2pi - ls - 0.5 * zc * zc;
      best = std::max(best, logw[uc] + logn[uc]);
    }
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(logw[static_cast<std::size_t>(c)] + logn[static_cast<std::size_t>(c)] - best);
    const double logp = best + std::log(s);
    total -= logp;
    if (grad) {
      const double inv_b = 1.0 / static_cast<double>(b);
      for (int c = 0; c < k; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        resp[uc] = std::exp(logw[uc] + logn[uc] - logp);
        const double raw_ls = out(r, 2 * k + c);
        const double ls = std::clamp(raw_ls, ls_min, ls_max);
        const double inv_var = std::exp(-2.0 * ls);
        const double diff = target(r) - out(r, k + c);
        (*grad)(r, c) = (std::exp(logw[uc]) - resp[uc]) * inv_b;
        (*grad)(r, k + c) = -resp[uc] * diff * inv_var * inv_b;
        const bool active = raw_ls > ls_min && raw_ls < ls_max;
        (*grad)(r, 2 * k + c) = active ? -resp[uc] * (diff * diff * inv_var - 1.0) * inv_b : 0.0;
      }
    }
  }
  return total / static_cast<double>(b);
}

/// Per-network mean NLL on standardized data (eval mode).
inline std::array<double, 3> gmmnet_nll(const GmmNetModel& m, const Matrix& z) {
  std::array<double, 3> res{};
  for (int i = 0; i < 3; ++i) {
    const Matrix out = m.nets[static_cast<std::size_t>(i)].predict(conditioning_inputs(z, i));
    res[static_cast<std::size_t>(i)] =
        mixture_nll(out, z.col(i), m.components, m.log_sigma_min, m.log_sigma_max, nullptr);
  }
  return res;
}

struct GmmGibbsStats {
  std::size_t clamped_draws = 0;  ///< draws pulled back into the state bounds
};

/// Gibbs sampling in standardized space; chains start at stored training rows.
/// Draws outside the state bounds are clamped so that extrapolating
/// conditionals cannot drive the chain away.
inline Matrix gibbs_sample_gmmnet_standardized(const GmmNetModel& m, std::size_t n, const GibbsConfig& cfg,
                                               std::uint64_t seed, GmmGibbsStats* stats = nullptr) {
  require(m.nets.size() == 3, ErrorCode::Precondition, "GMMNet model is not trained");
  require(n > 0, ErrorCode::InvalidArgument, "sample size must be positive");
  require(cfg.burn_in >= 0 && cfg.thin >= 1 && cfg.chains >= 1, ErrorCode::InvalidArgument,
          "invalid Gibbs configuration");
  require(m.init_states.rows() >= 1, ErrorCode::Precondition, "GMMNet model has no initial states");
  require(m.state_lo.size() == 3 && m.state_hi.size() == 3, ErrorCode::Precondition, "GMMNet model has no state bounds");
  Rng rng(seed);
  const auto chains = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(cfg.chains), n));
  Matrix state(chains, 3);
  for (Eigen::Index c = 0; c < chains; ++c)
    state.row(c) = m.init_states.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.init_states.rows()))));
  const std::size_t per_chain = (n + static_cast<std::size_t>(chains) - 1) / static_cast<std::size_t>(chains);
  const std::size_t sweeps = static_cast<std::size_t>(cfg.burn_in) + per_chain * static_cast<std::size_t>(cfg.thin);
  Matrix out(static_cast<Eigen::Index>(n), 3);
  Eigen::Index filled = 0;
  std::size_t clamped = 0;
  for (std::size_t sweep = 1; sweep <= sweeps; ++sweep) {
    for (int i = 0; i < 3; ++i) {
      const Mixture mix = gmmnet_mixture(m, i, conditioning_inputs(state, i));
      for (Eigen::Index c = 0; c < chains; ++c) {
        double u = rng.uniform(), acc = 0.0;
        int comp = m.components - 1;
        for (int k = 0; k < m.components; ++k) {
          acc += mix.weights(c, k);
          if (u < acc) {
            comp = k;
            break;
          }
        }
        double x = mix.means(c, comp) + mix.sigmas(c, comp) * rng.normal();
        if (!(x >= m.state_lo(i) && x <= m.state_hi(i))) {
          x = std::isnan(x) ? m.init_states(0, i) : std::clamp(x, m.state_lo(i), m.state_hi(i));
          ++clamped;
        }
        state(c, i) = x;
      }
    }
    if (sweep > static_cast<std::size_t>(cfg.burn_in) &&
        (sweep - static_cast<std::size_t>(cfg.burn_in)) % static_cast<std::size_t>(cfg.thin) == 0) {
      for (Eigen::Index c = 0; c < chains && filled < out.rows(); ++c) out.row(filled++) = state.row(c);
    }
  }
  if (stats) stats->clamped_draws += clamped;
  return out;
}

/// Gibbs sampling de-standardized to the data scale.
inline Dataset gibbs_sample_gmmnet(const GmmNetModel& m, std::size_t n, const GibbsConfig& cfg,
                                   std::uint64_t seed) {
  return Dataset::from_features(m.standardizer.invert(gibbs_sample_gmmnet_standardized(m, n, cfg, seed)),
                                "GMMNet");
}

struct GmmNetFit {
  GmmNetModel model;
  TrainLog log;
};

/// Trains on standardized features `z_train`; `z_valid` drives early stopping.
inline GmmNetFit train_gmmnet_standardized(const Matrix& z_train, const Matrix& z_valid, const Standardizer& st,
                                           const GmmNetConfig& hp, std::uint64_t seed) {
  require(z_train.cols() == 3 && z_valid.cols() == 3, ErrorCode::InvalidArgument, "GMMNet expects 3 features");
  require(z_train.rows() >= 2, ErrorCode::Precondition, "GMMNet needs training data");
  require(z_valid.rows() >= 2, ErrorCode::Precondition, "GMMNet needs a non-empty validation set");
  require(hp.components >= 1 && hp.batch >= 2, ErrorCode::InvalidArgument, "invalid GMMNet hyperparameters");
  require(hp.log_sigma_min < hp.log_sigma_max, ErrorCode::InvalidArgument, "invalid log-sigma clamp");
  require(hp.state_margin >= 0.0, ErrorCode::InvalidArgument, "state margin must be non-negative");

  Rng rng(seed);
  GmmNetFit fit;
  auto& model = fit.model;
  model.standardizer = st;
  model.components = hp.components;
  model.log_sigma_min = hp.log_sigma_min;
  model.log_sigma_max = hp.log_sigma_max;
  model.state_lo = z_train.colwise().minCoeff().array() - hp.state_margin;
  model.state_hi = z_train.colwise().maxCoeff().array() + hp.state_margin;
  const MlpConfig mc{2, hp.hidden, 3 * hp.components, Activation::ReLU, 0.0, hp.batch_norm};
  std::vector<Adam> opts;
  for (int i = 0; i < 3; ++i) {
    model.nets.emplace_back(mc, rng);
    opts.emplace_back(hp.learning_rate);
  }
  {
    const auto keep = subsample_indices(static_cast<std::size_t>(z_train.rows()), hp.init_rows, rng.next());
    model.init_states.resize(static_cast<Eigen::Index>(keep.size()), 3);
    for (std::size_t r = 0; r < keep.size(); ++r)
      model.init_states.row(static_cast<Eigen::Index>(r)) = z_train.row(static_cast<Eigen::Index>(keep[r]));
  }

  EarlyStopper stopper(hp.stopping);
  const Matrix valid_tau = kendall_matrix(z_valid);
  const auto n = static_cast<std::size_t>(z_train.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto snapshot = [&] {
    std::vector<std::vector<double>> s;
    for (const auto& net : model.nets) s.push_back(net.state());
    return s;
  };
  auto best = snapshot();
  fit.log.stop_reason = "max_epochs";
  long steps = 0;

  for (int epoch = 1; epoch <= hp.stopping.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += hp.batch) {
      const std::size_t len = std::min(hp.batch, n - start);
      if (len < 2) break;  // batch norm needs two rows
      Matrix zb(static_cast<Eigen::Index>(len), 3);
      for (std::size_t r = 0; r < len; ++r) zb.row(static_cast<Eigen::Index>(r)) = z_train.row(static_cast<Eigen::Index>(order[start + r]));
      double batch_loss = 0.0;
      for (int i = 0; i < 3; ++i) {
        auto& net = model.nets[static_cast<std::size_t>(i)];
        const Matrix out = net.forward(conditioning_inputs(zb, i), Mode::Train);
        Matrix grad;
        const double loss = mixture_nll(out, zb.col(i), hp.components, hp.log_sigma_min, hp.log_sigma_max, &grad);
        require(std::isfinite(loss), ErrorCode::Numerical, "GMMNet: non-finite loss after clamping");
        net.backward(grad);
        net.clip_grad_norm(hp.grad_clip);
        opts[static_cast<std::size_t>(i)].step(net.parameters());
        batch_loss += loss;
      }
      ++steps;
      epoch_loss += batch_loss / 3.0;
      ++batches;
    }
    fit.log.epoch_loss.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);

    if (stopper.should_validate(epoch)) {
      const Matrix gen = gibbs_sample_gmmnet_standardized(model, hp.stopping.valid_samples, hp.gibbs,
                                                          mix64(seed ^ (0x6A3Aull << 32) ^ static_cast<std::uint64_t>(epoch)));
      double td = std::numeric_limits<double>::infinity();
      if (gen.allFinite()) {
        try {
          td = (kendall_matrix(gen) - valid_tau).norm();
        } catch (const Error&) {
        }
      }
      if (stopper.record(fit.log, epoch, td)) best = snapshot();
      if (stopper.exhausted(fit.log, epoch)) {
        fit.log.stop_reason = "patience";
        break;
      }
    }
  }
  fit.log.steps = steps;
  for (std::size_t i = 0; i < 3; ++i) model.nets[i].set_state(best[i]);
  return fit;
}

/// Standardizes with train statistics, then trains.
inline GmmNetFit train_gmmnet(const Dataset& train, const Dataset& valid, const GmmNetConfig& hp,
                              std::uint64_t seed) {
  const Matrix x = train.features();
  const Standardizer st = Standardizer::fit(x);
  return train_gmmnet_standardized(st.apply(x), st.apply(valid.features()), st, hp, seed);
}

inline nlohmann::json to_json(const GmmNetModel& m) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : m.nets) nets.push_back({{"mlp", n.config_json()}, {"state", n.state()}});
  std::vector<double> init(m.init_states.data(), m.init_states.data() + m.init_states.size());
  return {{"nets", nets},
          {"components", m.components},
          {"log_sigma_min", m.log_sigma_min},
          {"log_sigma_max", m.log_sigma_max},
          {"standardizer",
           {{"mean", std::vector<double>(m.standardizer.mean.data(), m.standardizer.mean.data() + m.standardizer.mean.size())},
            {"sd", std::vector<double>(m.standardizer.sd.data(), m.standardizer.sd.data() + m.standardizer.sd.size())}}},
          {"state_lo", std::vector<double>(m.state_lo.data(), m.state_lo.data() + m.state_lo.size())},
          {"state_hi", std::vector<double>(m.state_hi.data(), m.state_hi.data() + m.state_hi.size())},
          {"init_states", {{"rows", m.init_states.rows()}, {"values_colmajor", init}}}};
}

inline GmmNetModel gmmnet_from_json(const nlohmann::json& j) {
  GmmNetModel m;
  Rng rng(0);
  for (const auto& n : j.at("nets")) {
    m.nets.emplace_back(Mlp::config_from_json(n.at("mlp")), rng);
    m.nets.back().set_state(n.at("state").get<std::vector<double>>());
  }
  require(m.nets.size() == 3, ErrorCode::Parse, "GMMNet checkpoint needs 3 networks");
  m.components = j.at("components").get<int>();
  m.log_sigma_min = j.at("log_sigma_min").get<double>();
  m.log_sigma_max = j.at("log_sigma_max").get<double>();
  const auto mean = j.at("standardizer").at("mean").get<std::vector<double>>();
  const auto sd = j.at("standardizer").at("sd").get<std::vector<double>>();
  m.standardizer.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.standardizer.sd = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  const auto lo = j.at("state_lo").get<std::vector<double>>();
  const auto hi = j.at("state_hi").get<std::vector<double>>();
  require(lo.size() == 3 && hi.size() == 3, ErrorCode::Parse, "GMMNet checkpoint needs 3 state bounds");
  m.state_lo = Eigen::Map<const Eigen::RowVectorXd>(lo.data(), 3);
  m.state_hi = Eigen::Map<const Eigen::RowVectorXd>(hi.data(), 3);
  const auto rows = j.at("init_states").at("rows").get<Eigen::Index>();
  const auto vals = j.at("init_states").at("values_colmajor").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(vals.size()) == rows * 3, ErrorCode::Parse, "bad init_states size");
  m.init_states = Eigen::Map<const Matrix>(vals.data(), rows, 3);
  return m;
}

}  // namespace evdep::nn
