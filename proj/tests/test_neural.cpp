#include "evdep/neural/codine.hpp"
#include "evdep/neural/gmmnet.hpp"

#include <gtest/gtest.h>

using namespace evdep;
using namespace evdep::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Loss = sum(weights .* net(x)); checks parameter and input gradients.
double gradient_check(const MlpConfig& cfg, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  Mlp net(cfg, rng);
  const Matrix x = random_matrix(10, cfg.inputs, rng);
  const Matrix w = random_matrix(10, cfg.outputs, rng);
  if (mode == Mode::Eval) {
    // move running statistics away from their identity initialisation
    for (int k = 0; k < 3; ++k) net.forward(random_matrix(16, cfg.inputs, rng) * 2.0, Mode::Train);
  }
  auto loss = [&] { return (net.forward(x, mode).array() * w.array()).sum(); };
  loss();
  const Matrix gx = net.backward(w);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : net.parameters()) analytic.emplace_back(p.grad, p.grad + p.size);

  const double h = 1e-5;
  double worst = 0.0;
  auto params = net.parameters();
  for (std::size_t b = 0; b < params.size(); ++b)
    for (Eigen::Index k = 0; k < params[b].size; ++k) {
      double& v = params[b].value[k];
      const double keep = v;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double down = loss();
      v = keep;
      worst = std::max(worst, rel_err(analytic[b][static_cast<std::size_t>(k)], (up - down) / (2 * h)));
    }
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = xp.data()[i];
    auto at = [&](double val) {
      xp.data()[i] = val;
      return (net.forward(xp, mode).array() * w.array()).sum();
    };
    const double fd = (at(keep + h) - at(keep - h)) / (2 * h);
    xp.data()[i] = keep;
    worst = std::max(worst, rel_err(gx.data()[i], fd));
  }
  return worst;
}

}  // namespace

TEST(Mlp, GradientCheckPlain) {
  EXPECT_LT(gradient_check({3, {4}, 1, Activation::LeakyReLU, 0.2, false}, Mode::Train, 1), 1e-4);
  EXPECT_LT(gradient_check({3, {8, 6, 5}, 2, Activation::ReLU, 0.0, false}, Mode::Train, 2), 1e-4);
}

TEST(Mlp, GradientCheckBatchNorm) {
  const MlpConfig cfg{2, {8, 7}, 6, Activation::ReLU, 0.0, true};
  EXPECT_LT(gradient_check(cfg, Mode::Train, 3), 1e-4);
  EXPECT_LT(gradient_check(cfg, Mode::Eval, 4), 1e-4);
  EXPECT_LT(gradient_check({3, {5}, 1, Activation::LeakyReLU, 0.2, true}, Mode::Train, 5), 1e-4);
}

TEST(Mlp, ZeroWeightsGiveHalf) {
  Rng rng(1);
  Mlp net({3, {100, 100, 100}, 1, Activation::LeakyReLU, 0.2, false}, rng);
  net.fill_weights(0.0);
  const Matrix out = net.predict(random_matrix(20, 3, rng));
  for (Eigen::Index i = 0; i < out.rows(); ++i) EXPECT_EQ(sigmoid(out(i, 0)), 0.5);
}

TEST(Mlp, PredictMatchesForwardEvalAndFloat) {
  Rng rng(2);
  Mlp net({2, {8, 8}, 3, Activation::ReLU, 0.0, true}, rng);
  for (int k = 0; k < 5; ++k) net.forward(random_matrix(32, 2, rng), Mode::Train);
  const Matrix x = random_matrix(12, 2, rng);
  const Matrix a = net.predict(x);
  EXPECT_LT((a - net.forward(x, Mode::Eval)).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXf f = net.predict_float(x.cast<float>());
  EXPECT_LT((a - f.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Mlp, StateRoundTrip) {
  Rng rng(3);
  Mlp a({3, {4, 4}, 2, Activation::LeakyReLU, 0.2, true}, rng);
  Mlp b({3, {4, 4}, 2, Activation::LeakyReLU, 0.2, true}, rng);
  a.forward(random_matrix(8, 3, rng), Mode::Train);
  b.set_state(a.state());
  const Matrix x = random_matrix(5, 3, rng);
  EXPECT_EQ(a.predict(x), b.predict(x));
  std::vector<double> s = a.state();
  s.push_back(0.0);
  EXPECT_THROW(b.set_state(s), Error);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(4);
  Mlp net({3, {4}, 1, Activation::ReLU, 0.0, false}, rng);
  for (auto& p : net.parameters()) std::fill(p.grad, p.grad + p.size, 0.0);
  const auto before = net.state();
  Adam opt(1e-2);
  for (int i = 0; i < 10; ++i) opt.step(net.parameters());
  EXPECT_EQ(net.state(), before);
  EXPECT_EQ(opt.steps(), 10);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  double w = 1.0, g = 0.3;
  Adam opt(0.01);
  opt.step({{&w, &g, 1}});
  EXPECT_NEAR(w, 1.0 - 0.01, 1e-9);
}

TEST(Mlp, GradClip) {
  Rng rng(5);
  Mlp net({3, {6}, 2, Activation::ReLU, 0.0, false}, rng);
  net.forward(random_matrix(4, 3, rng), Mode::Train);
  net.backward(Matrix::Constant(4, 2, 100.0));
  ASSERT_GT(net.grad_norm(), 5.0);
  net.clip_grad_norm(5.0);
  EXPECT_NEAR(net.grad_norm(), 5.0, 1e-9);
}

TEST(Mixture, WeightsSumToOneAndSigmaClamped) {
  Rng rng(6);
  Matrix out = random_matrix(200, 15, rng) * 20.0;
  const Mixture m = mixture_from_outputs(out, 5, -7.0, 3.0);
  for (Eigen::Index r = 0; r < out.rows(); ++r) EXPECT_NEAR(m.weights.row(r).sum(), 1.0, 1e-9);
  EXPECT_GE(m.sigmas.minCoeff(), std::exp(-7.0) * (1 - 1e-15));
  EXPECT_LE(m.sigmas.maxCoeff(), std::exp(3.0) * (1 + 1e-15));
}

TEST(Mixture, NllGradient) {
  Rng rng(7);
  const int k = 3;
  Matrix out = random_matrix(6, 3 * k, rng);
  out(0, 2 * k) = -9.0;  // clamped below
  out(1, 2 * k + 1) = 4.0;  // clamped above
  const Eigen::VectorXd y = random_matrix(6, 1, rng).col(0);
  Matrix g;
  mixture_nll(out, y, k, -7.0, 3.0, &g);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    Matrix p = out, q = out;
    p.data()[i] += h;
    q.data()[i] -= h;
    const double fd = (mixture_nll(p, y, k, -7.0, 3.0, nullptr) - mixture_nll(q, y, k, -7.0, 3.0, nullptr)) / (2 * h);
    EXPECT_LT(rel_err(g.data()[i], fd), 1e-4) << i;
  }
  EXPECT_EQ(g(0, 2 * k), 0.0);
  EXPECT_EQ(g(1, 2 * k + 1), 0.0);
}

TEST(Mixture, SingleComponentIsGaussianNll) {
  Matrix out(1, 3);
  out << 0.7, 1.0, std::log(2.0);
  Eigen::VectorXd y(1);
  y << 2.0;
  const double expect = 0.5 * std::log(2 * std::numbers::pi) + std::log(2.0) + 0.5 * 0.25;
  EXPECT_NEAR(mixture_nll(out, y, 1, -7.0, 3.0, nullptr), expect, 1e-14);
}

TEST(Codine, DensityReadOut) {
  Rng rng(8);
  CodineModel m{Mlp({3, {4}, 1, Activation::LeakyReLU, 0.2, false}, rng), true};
  m.discriminator.fill_weights(0.0);
  const Eigen::Vector3d u(0.3, 0.5, 0.9);
  EXPECT_DOUBLE_EQ(codine_discriminator(m, u), 0.5);
  EXPECT_DOUBLE_EQ(codine_density(m, u), 1.0);
  auto s = m.discriminator.state();
  s.back() = std::log(3.0);
  m.discriminator.set_state(s);
  EXPECT_NEAR(codine_discriminator(m, u), 0.75, 1e-15);
  EXPECT_NEAR(codine_density(m, u), 3.0, 1e-14);
  EXPECT_THROW(codine_density(m, Eigen::Vector3d(0.0, 0.5, 0.5)), Error);
  EXPECT_THROW(codine_density(CodineModel{}, u), Error);
}

TEST(Codine, GibbsOnFlatDensityIsUniform) {
  Rng rng(9);
  CodineModel m{Mlp({3, {8}, 1, Activation::LeakyReLU, 0.2, false}, rng), true};
  m.discriminator.fill_weights(0.0);
  const GibbsConfig g{};
  GibbsStats stats;
  const Matrix s = gibbs_sample_codine(m, 5000, g, 10, &stats);
  EXPECT_EQ(stats.degenerate_conditionals, 0u);
  const Matrix t = kendall_matrix(s);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_LT(std::abs(t(i, j)), 0.04);
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd x = s.col(k);
    std::sort(x.data(), x.data() + x.size());
    double d = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) d = std::max({d, (i + 1.0) / 5000.0 - x(i), x(i) - i / 5000.0});
    EXPECT_LT(d, 1.628 / std::sqrt(5000.0));
  }
  EXPECT_GT(s.minCoeff(), 0.0);
  EXPECT_LT(s.maxCoeff(), 1.0);
  EXPECT_EQ(s, gibbs_sample_codine(m, 5000, g, 10));
  EXPECT_THROW(gibbs_sample_codine(m, 0, g, 1), Error);
}

TEST(Codine, TrainingDeterministic) {
  Rng rng(11);
  Matrix u(300, 3), v(100, 3);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.uniform();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform();
  CodineConfig hp;
  hp.mlp.hidden = {16, 16};
  hp.stopping = {4, 10, 2, 64};
  hp.gibbs.burn_in = 5;
  const auto a = train_codine(u, v, hp, 3), b = train_codine(u, v, hp, 3);
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
  ASSERT_EQ(a.log.validation.size(), 2u);
  EXPECT_EQ(a.model.discriminator.state(), b.model.discriminator.state());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : a.log.validation) best = std::min(best, p.tau_diff);
  EXPECT_EQ(a.log.best_tau_diff, best);
  EXPECT_EQ(a.log.steps, 4 * 5);
  const auto j = codine_from_json(nlohmann::json::parse(to_json(a.model).dump()));
  EXPECT_EQ(j.discriminator.predict(v), a.model.discriminator.predict(v));
}

TEST(EarlyStopper, PatienceAndBest) {
  EarlyStopper s({100, 20, 10, 2});
  TrainLog log;
  EXPECT_TRUE(s.should_validate(10));
  EXPECT_FALSE(s.should_validate(11));
  EXPECT_TRUE(s.should_validate(100));
  EXPECT_TRUE(s.record(log, 10, 0.5));
  EXPECT_FALSE(s.record(log, 20, std::numeric_limits<double>::infinity()));
  EXPECT_FALSE(s.exhausted(log, 20));
  EXPECT_FALSE(s.record(log, 30, 0.6));
  EXPECT_TRUE(s.exhausted(log, 30));
  EXPECT_EQ(log.best_epoch, 10);
  EXPECT_THROW(EarlyStopper({0, 1, 1, 2}), Error);
}

TEST(GmmNet, TrainsAndSamplesIndependentNormals) {
  Rng rng(12);
  Matrix z(3000, 3), zv(300, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < zv.size(); ++i) zv.data()[i] = rng.normal();
  GmmNetConfig hp;
  hp.stopping = {60, 100, 20, 500};
  const auto st = Standardizer::fit(z);
  const auto fit = train_gmmnet_standardized(st.apply(z), st.apply(zv), st, hp, 4);
  EXPECT_LT(fit.log.epoch_loss.back(), fit.log.epoch_loss.front());
  Matrix zh(5000, 3);
  for (Eigen::Index i = 0; i < zh.size(); ++i) zh.data()[i] = rng.normal();
  const auto nll = gmmnet_nll(fit.model, st.apply(zh));
  for (double v : nll) EXPECT_NEAR(v, 0.5 * std::log(2 * std::numbers::pi * std::exp(1.0)), 0.1);

  nn::GmmGibbsStats stats;
  const Matrix s = gibbs_sample_gmmnet_standardized(fit.model, 5000, hp.gibbs, 5, &stats);
  const Matrix t = kendall_matrix(s);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_LT(std::abs(t(i, j)), 0.05);
  const Eigen::RowVectorXd mean = s.colwise().mean();
  for (int j = 0; j < 3; ++j) EXPECT_LT(std::abs(mean(j)), 0.1);
  for (int j = 0; j < 3; ++j) {
    EXPECT_GE(s.col(j).minCoeff(), fit.model.state_lo(j));
    EXPECT_LE(s.col(j).maxCoeff(), fit.model.state_hi(j));
  }
  EXPECT_EQ(s, gibbs_sample_gmmnet_standardized(fit.model, 5000, hp.gibbs, 5));

  const auto back = gmmnet_from_json(nlohmann::json::parse(to_json(fit.model).dump()));
  EXPECT_EQ(gibbs_sample_gmmnet_standardized(back, 200, hp.gibbs, 6),
            gibbs_sample_gmmnet_standardized(fit.model, 200, hp.gibbs, 6));
}

TEST(GmmNet, StateBoundsHoldForRunawayConditionals) {
  Rng rng(13);
  Matrix z(200, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  GmmNetConfig hp;
  hp.stopping = {1, 10, 1, 10};
  const auto st = Standardizer::fit(z);
  auto fit = train_gmmnet_standardized(st.apply(z), st.apply(z), st, hp, 1);
  // every network predicts a mean of 1000 with zero weights
  for (auto& net : fit.model.nets) net.fill_weights(0.0);
  for (auto& net : fit.model.nets) {
    auto s = net.state();
    for (std::size_t i = s.size() - 15 + 5; i < s.size() - 5; ++i) s[i] = 1000.0;
    net.set_state(s);
  }
  GmmGibbsStats stats;
  const Matrix s = gibbs_sample_gmmnet_standardized(fit.model, 100, hp.gibbs, 2, &stats);
  EXPECT_GT(stats.clamped_draws, 0u);
  for (int j = 0; j < 3; ++j) EXPECT_LE(s.col(j).maxCoeff(), fit.model.state_hi(j));
}
