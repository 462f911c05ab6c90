#pragma once

// Copula density estimation with a discriminator: the network separates
// pseudo-observations from uniform noise on the unit cube under the GAN
// objective  E_real[log D] + E_unif[log(1 - D)].  At the optimum
// D/(1-D) is the density ratio against the uniform reference, i.e. the
// copula density, which equals exp(logit).

#include "evdep/kendall.hpp"
#include "evdep/neural/mlp.hpp"
#include "evdep/neural/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace evdep::nn {

struct CodineConfig {
  MlpConfig mlp{3, {100, 100, 100}, 1, Activation::LeakyReLU, 0.2, false};
  double learning_rate = 1e-4;
  std::size_t batch = 64;
  EarlyStoppingConfig stopping{};
  GibbsConfig gibbs{};
};

struct CodineModel {
  Mlp discriminator;
  bool trained = false;
};

struct GibbsStats {
  std::size_t degenerate_conditionals = 0;  ///< coordinates resampled uniformly
};

inline void require_trained(const CodineModel& m) {
  require(m.trained, ErrorCode::Precondition, "CODINE model is not trained");
}

/// Discriminator output in (0,1).
inline double codine_discriminator(const CodineModel& m, const Eigen::Vector3d& u) {
  require_trained(m);
  const Matrix x = u.transpose();
  return sigmoid(m.discriminator.predict(x)(0, 0));
}

/// Density-ratio read-out D/(1-D), evaluated as exp(logit).
inline double codine_density(const CodineModel& m, const Eigen::Vector3d& u) {
  require_trained(m);
  for (int i = 0; i < 3; ++i)
    require(is_interior(u(i)), ErrorCode::Boundary, "CODINE density needs an interior point");
  const Matrix x = u.transpose();
  return std::exp(m.discriminator.predict(x)(0, 0));
}

/// Batched log-density for rows of `u`.
inline Eigen::VectorXd codine_log_density(const CodineModel& m, const Matrix& u) {
  require_trained(m);
  return m.discriminator.predict(u).col(0);
}

/// Systematic-scan Gibbs sampler over the learned density. Each coordinate is
/// drawn from its conditional tabulated at `grid` cell midpoints, by
/// inverse CDF and a uniform jitter inside the chosen cell.
inline Matrix gibbs_sample_codine(const CodineModel& m, std::size_t n, const GibbsConfig& cfg,
                                  std::uint64_t seed, GibbsStats* stats = nullptr) {
  require_trained(m);
  require(n > 0, ErrorCode::InvalidArgument, "sample size must be positive");
  require(cfg.grid >= 2 && cfg.burn_in >= 0 && cfg.thin >= 1 && cfg.chains >= 1, ErrorCode::InvalidArgument,
          "invalid Gibbs configuration");
  Rng rng(seed);
  const auto chains = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(cfg.chains), n));
  const Eigen::Index g = cfg.grid;
  Matrix state(chains, 3);
  for (Eigen::Index c = 0; c < chains; ++c)
    for (int j = 0; j < 3; ++j) state(c, j) = rng.uniform();

  const std::size_t per_chain = (n + static_cast<std::size_t>(chains) - 1) / static_cast<std::size_t>(chains);
  const std::size_t sweeps = static_cast<std::size_t>(cfg.burn_in) + per_chain * static_cast<std::size_t>(cfg.thin);
  Matrix out(static_cast<Eigen::Index>(n), 3);
  Eigen::Index filled = 0;
  Eigen::MatrixXf batch(chains * g, 3);
  std::vector<double> cum(static_cast<std::size_t>(g));
  GibbsStats local;

  for (std::size_t sweep = 1; sweep <= sweeps; ++sweep) {
    for (int coord = 0; coord < 3; ++coord) {
      for (Eigen::Index c = 0; c < chains; ++c)
        for (Eigen::Index k = 0; k < g; ++k) {
          batch.row(c * g + k) = state.row(c).cast<float>();
          batch(c * g + k, coord) = static_cast<float>((static_cast<double>(k) + 0.5) / static_cast<double>(g));
        }
      const Eigen::MatrixXf logits = m.discriminator.predict_float(batch);
      for (Eigen::Index c = 0; c < chains; ++c) {
        const auto seg = logits.col(0).segment(c * g, g);
        const double mx = seg.maxCoeff();
        double total = 0.0;
        for (Eigen::Index k = 0; k < g; ++k) {
          total += std::exp(static_cast<double>(seg(k)) - mx);
          cum[static_cast<std::size_t>(k)] = total;
        }
        if (!std::isfinite(total) || !(total > 0.0)) {
          ++local.degenerate_conditionals;
          state(c, coord) = rng.uniform();
          continue;
        }
        const double target = rng.uniform() * total;
        const auto it = std::upper_bound(cum.begin(), cum.end(), target);
        const auto cell = std::min<std::ptrdiff_t>(it - cum.begin(), g - 1);
        state(c, coord) = (static_cast<double>(cell) + rng.uniform()) / static_cast<double>(g);
      }
    }
    if (sweep > static_cast<std::size_t>(cfg.burn_in) &&
        (sweep - static_cast<std::size_t>(cfg.burn_in)) % static_cast<std::size_t>(cfg.thin) == 0) {
      for (Eigen::Index c = 0; c < chains && filled < out.rows(); ++c) out.row(filled++) = state.row(c);
    }
  }
  if (stats) stats->degenerate_conditionals += local.degenerate_conditionals;
  return out;
}

struct CodineFit {
  CodineModel model;
  TrainLog log;
};

/// One optimizer step on a real batch and an equal-size uniform batch;
/// returns the GAN discriminator loss (negated objective).
inline double codine_step(Mlp& net, Adam& opt, const Matrix& real, Rng& rng) {
  const Eigen::Index b = real.rows();
  Matrix x(2 * b, 3);
  x.topRows(b) = real;
  for (Eigen::Index i = b; i < 2 * b; ++i)
    for (int j = 0; j < 3; ++j) x(i, j) = rng.uniform();
  const Matrix z = net.forward(x, Mode::Train);
  Matrix grad(2 * b, 1);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    loss += softplus(-z(i, 0)) * inv;
    grad(i, 0) = (sigmoid(z(i, 0)) - 1.0) * inv;
  }
  for (Eigen::Index i = b; i < 2 * b; ++i) {
    loss += softplus(z(i, 0)) * inv;
    grad(i, 0) = sigmoid(z(i, 0)) * inv;
  }
  require(std::isfinite(loss), ErrorCode::Numerical, "CODINE: non-finite discriminator loss");
  net.backward(grad);
  opt.step(net.parameters());
  return loss;
}

inline CodineFit train_codine(const Matrix& pseudo_train, const Matrix& pseudo_valid, const CodineConfig& hp,
                              std::uint64_t seed) {
  require(pseudo_train.cols() == 3 && pseudo_valid.cols() == 3, ErrorCode::InvalidArgument,
          "CODINE expects 3-column pseudo-observations");
  require(pseudo_train.rows() >= 2, ErrorCode::Precondition, "CODINE needs training data");
  require(pseudo_valid.rows() >= 2, ErrorCode::Precondition, "CODINE needs a non-empty validation set");
  require(hp.batch >= 1, ErrorCode::InvalidArgument, "batch size must be positive");
  require(hp.mlp.inputs == 3 && hp.mlp.outputs == 1, ErrorCode::InvalidArgument,
          "CODINE discriminator must map 3 inputs to 1 logit");

  Rng rng(seed);
  CodineFit fit;
  fit.model.discriminator = Mlp(hp.mlp, rng);
  fit.model.trained = true;
  Adam opt(hp.learning_rate);
  EarlyStopper stopper(hp.stopping);
  const Matrix valid_tau = kendall_matrix(pseudo_valid);

  const auto n = static_cast<std::size_t>(pseudo_train.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> best_state = fit.model.discriminator.state();
  fit.log.stop_reason = "max_epochs";

  for (int epoch = 1; epoch <= hp.stopping.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += hp.batch) {
      const std::size_t len = std::min(hp.batch, n - start);
      Matrix real(static_cast<Eigen::Index>(len), 3);
      for (std::size_t r = 0; r < len; ++r) real.row(static_cast<Eigen::Index>(r)) = pseudo_train.row(static_cast<Eigen::Index>(order[start + r]));
      epoch_loss += codine_step(fit.model.discriminator, opt, real, rng);
      ++batches;
    }
    fit.log.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));

    if (stopper.should_validate(epoch)) {
      const Matrix gen = gibbs_sample_codine(fit.model, hp.stopping.valid_samples, hp.gibbs,
                                             mix64(seed ^ (0xC0D1ull << 32) ^ static_cast<std::uint64_t>(epoch)));
      const double td = (kendall_matrix(gen) - valid_tau).norm();
      if (stopper.record(fit.log, epoch, td)) best_state = fit.model.discriminator.state();
      if (stopper.exhausted(fit.log, epoch)) {
        fit.log.stop_reason = "patience";
        break;
      }
    }
  }
  fit.log.steps = opt.steps();
  fit.model.discriminator.set_state(best_state);
  return fit;
}

inline nlohmann::json to_json(const CodineModel& m) {
  return {{"mlp", m.discriminator.config_json()}, {"state", m.discriminator.state()}, {"trained", m.trained}};
}

inline CodineModel codine_from_json(const nlohmann::json& j) {
  CodineModel m;
  Rng rng(0);
  m.discriminator = Mlp(Mlp::config_from_json(j.at("mlp")), rng);
  m.discriminator.set_state(j.at("state").get<std::vector<double>>());
  m.trained = j.value("trained", true);
  return m;
}

}  // namespace evdep::nn
