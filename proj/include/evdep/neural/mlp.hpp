#pragma once

// Small multilayer perceptron with explicit backpropagation.
// Batches are row-major in meaning: one sample per row.

#include "evdep/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace evdep::nn {

using RowVector = Eigen::RowVectorXd;

enum class Activation { ReLU, LeakyReLU };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "leaky_relu"; }

struct MlpConfig {
  int inputs = 3;
  std::vector<int> hidden{100, 100, 100};
  int outputs = 1;
  Activation activation = Activation::LeakyReLU;
  double slope = 0.2;  ///< LeakyReLU negative slope
  bool batch_norm = false;

  void validate() const {
    require(inputs > 0 && outputs > 0, ErrorCode::InvalidArgument, "MLP needs positive input/output widths");
    require(!hidden.empty(), ErrorCode::InvalidArgument, "MLP needs at least one hidden layer");
    for (int w : hidden) require(w > 0, ErrorCode::InvalidArgument, "hidden widths must be positive");
  }
};

enum class Mode { Train, Eval };

/// View of one parameter block and its gradient.
struct ParamRef {
  double* value;
  double* grad;
  Eigen::Index size;
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int in = cfg.inputs;
    for (int w : cfg.hidden) {
      dense_.push_back(make_dense(in, w, rng));
      if (cfg.batch_norm) bn_.push_back(make_bn(w));
      in = w;
    }
    dense_.push_back(make_dense(in, cfg.outputs, rng));
    pre_act_.resize(cfg.hidden.size());
  }

  const MlpConfig& config() const { return cfg_; }

  /// Forward pass; caches intermediates for backward().
  Matrix forward(const Matrix& x, Mode mode) {
    require(x.cols() == cfg_.inputs, ErrorCode::InvalidArgument, "MLP input width mismatch");
    Matrix h = x;
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      dense_[l].input = h;
      h = affine(dense_[l], h);
      if (cfg_.batch_norm) h = bn_forward(bn_[l], h, mode, true);
      pre_act_[l] = h;
      activate(h);
    }
    dense_.back().input = h;
    return affine(dense_.back(), h);
  }

  /// Inference without caching or running-stat updates.
  Matrix predict(const Matrix& x) const {
    require(x.cols() == cfg_.inputs, ErrorCode::InvalidArgument, "MLP input width mismatch");
    Matrix h = x;
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      h = affine(dense_[l], h);
      if (cfg_.batch_norm) h = bn_eval(bn_[l], h);
      activate(h);
    }
    return affine(dense_.back(), h);
  }

  /// Single-precision inference (eval mode) for large sampling batches.
  Eigen::MatrixXf predict_float(const Eigen::MatrixXf& x) const {
    require(x.cols() == cfg_.inputs, ErrorCode::InvalidArgument, "MLP input width mismatch");
    Eigen::MatrixXf h = x;
    const float slope = static_cast<float>(cfg_.slope);
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      Eigen::MatrixXf y = h * dense_[l].W.cast<float>();
      y.rowwise() += dense_[l].b.cast<float>();
      if (l + 1 == dense_.size()) return y;
      if (cfg_.batch_norm) {
        const auto& b = bn_[l];
        const Eigen::RowVectorXf scale =
            (b.gamma.array() * (b.running_var.array() + b.eps).rsqrt()).matrix().cast<float>();
        const Eigen::RowVectorXf shift =
            (b.beta.array() - b.running_mean.array() * scale.cast<double>().array()).matrix().cast<float>();
        y = y.array().rowwise() * scale.array();
        y.rowwise() += shift;
      }
      if (cfg_.activation == Activation::ReLU) h = y.cwiseMax(0.0f);
      else h = y.cwiseMax(slope * y);
    }
    return h;
  }

  /// Backward pass for the last forward(); overwrites parameter gradients and
  /// returns dL/dx.
  Matrix backward(const Matrix& grad_out) {
    Matrix g = grad_out;
    for (std::size_t l = dense_.size(); l-- > 0;) {
      Dense& d = dense_[l];
      d.gW.noalias() = d.input.transpose() * g;
      d.gb = g.colwise().sum();
      Matrix gin = g * d.W.transpose();
      if (l == 0) return gin;
      const std::size_t hl = l - 1;
      const Matrix& z = pre_act_[hl];
      const double neg = cfg_.activation == Activation::ReLU ? 0.0 : cfg_.slope;
      gin = (z.array() > 0.0).select(gin, neg * gin);
      if (cfg_.batch_norm) gin = bn_backward(bn_[hl], gin);
      g = std::move(gin);
    }
    return g;
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> p;
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      p.push_back({dense_[l].W.data(), dense_[l].gW.data(), dense_[l].W.size()});
      p.push_back({dense_[l].b.data(), dense_[l].gb.data(), dense_[l].b.size()});
      if (cfg_.batch_norm && l < bn_.size()) {
        p.push_back({bn_[l].gamma.data(), bn_[l].ggamma.data(), bn_[l].gamma.size()});
        p.push_back({bn_[l].beta.data(), bn_[l].gbeta.data(), bn_[l].beta.size()});
      }
    }
    return p;
  }

  /// Trainable parameters followed by batch-norm running statistics.
  std::vector<double> state() const {
    std::vector<double> s;
    auto put = [&](const auto& m) { s.insert(s.end(), m.data(), m.data() + m.size()); };
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      put(dense_[l].W);
      put(dense_[l].b);
      if (cfg_.batch_norm && l < bn_.size()) {
        put(bn_[l].gamma);
        put(bn_[l].beta);
        put(bn_[l].running_mean);
        put(bn_[l].running_var);
      }
    }
    return s;
  }

  void set_state(std::span<const double> s) {
    std::size_t pos = 0;
    auto get = [&](auto& m) {
      require(pos + static_cast<std::size_t>(m.size()) <= s.size(), ErrorCode::Parse, "MLP state is too short");
      std::copy(s.begin() + static_cast<std::ptrdiff_t>(pos),
                s.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(m.size())), m.data());
      pos += static_cast<std::size_t>(m.size());
    };
    for (std::size_t l = 0; l < dense_.size(); ++l) {
      get(dense_[l].W);
      get(dense_[l].b);
      if (cfg_.batch_norm && l < bn_.size()) {
        get(bn_[l].gamma);
        get(bn_[l].beta);
        get(bn_[l].running_mean);
        get(bn_[l].running_var);
      }
    }
    require(pos == s.size(), ErrorCode::Parse, "MLP state has trailing values");
  }

  /// Sets every weight and bias to `value` (batch-norm affine untouched).
  void fill_weights(double value) {
    for (auto& d : dense_) {
      d.W.setConstant(value);
      d.b.setConstant(value);
    }
  }

  double grad_norm() {
    double s = 0.0;
    for (const auto& p : parameters())
      s += Eigen::Map<const Eigen::VectorXd>(p.grad, p.size).squaredNorm();
    return std::sqrt(s);
  }

  /// Rescales gradients so their global L2 norm is at most max_norm.
  void clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm && n > 0.0) {
      const double f = max_norm / n;
      for (auto& p : parameters()) Eigen::Map<Eigen::VectorXd>(p.grad, p.size) *= f;
    }
  }

  nlohmann::json config_json() const {
    return {{"inputs", cfg_.inputs},         {"hidden", cfg_.hidden},  {"outputs", cfg_.outputs},
            {"activation", to_string(cfg_.activation)}, {"slope", cfg_.slope}, {"batch_norm", cfg_.batch_norm}};
  }

  static MlpConfig config_from_json(const nlohmann::json& j) {
    MlpConfig c;
    c.inputs = j.at("inputs").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.outputs = j.at("outputs").get<int>();
    c.activation = j.at("activation").get<std::string>() == "relu" ? Activation::ReLU : Activation::LeakyReLU;
    c.slope = j.at("slope").get<double>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    return c;
  }

 private:
  struct Dense {
    Matrix W, gW;  // in x out
    RowVector b, gb;
    Matrix input;
  };

  struct BatchNorm {
    RowVector gamma, beta, ggamma, gbeta, running_mean, running_var;
    Matrix xhat;
    RowVector inv_std;
    Mode mode = Mode::Train;
    double momentum = 0.1, eps = 1e-5;
  };

  static Dense make_dense(int in, int out, Rng& rng) {
    Dense d;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    d.W.resize(in, out);
    d.b.resize(out);
    for (Eigen::Index i = 0; i < d.W.size(); ++i) d.W.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < d.b.size(); ++i) d.b(i) = rng.uniform(-bound, bound);
    d.gW = Matrix::Zero(in, out);
    d.gb = RowVector::Zero(out);
    return d;
  }

  static BatchNorm make_bn(int width) {
    BatchNorm b;
    b.gamma = RowVector::Ones(width);
    b.beta = RowVector::Zero(width);
    b.ggamma = RowVector::Zero(width);
    b.gbeta = RowVector::Zero(width);
    b.running_mean = RowVector::Zero(width);
    b.running_var = RowVector::Ones(width);
    return b;
  }

  static Matrix affine(const Dense& d, const Matrix& x) {
    Matrix y = x * d.W;
    y.rowwise() += d.b;
    return y;
  }

  void activate(Matrix& h) const {
    if (cfg_.activation == Activation::ReLU) h = h.cwiseMax(0.0);
    else h = (h.array() > 0.0).select(h, cfg_.slope * h);
  }

  static Matrix bn_eval(const BatchNorm& b, const Matrix& x) {
    const RowVector inv = (b.running_var.array() + b.eps).rsqrt();
    Matrix y = x.rowwise() - b.running_mean;
    y = y.array().rowwise() * (inv.array() * b.gamma.array());
    y.rowwise() += b.beta;
    return y;
  }

  static Matrix bn_forward(BatchNorm& b, const Matrix& x, Mode mode, bool update_running) {
    b.mode = mode;
    if (mode == Mode::Eval) {
      b.inv_std = (b.running_var.array() + b.eps).rsqrt();
      b.xhat = (x.rowwise() - b.running_mean).array().rowwise() * b.inv_std.array();
      Matrix y = b.xhat.array().rowwise() * b.gamma.array();
      y.rowwise() += b.beta;
      return y;
    }
    const double n = static_cast<double>(x.rows());
    require(x.rows() >= 2, ErrorCode::InvalidArgument, "batch norm in training mode needs batch >= 2");
    const RowVector mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - mean;
    const RowVector var = centered.array().square().colwise().sum() / n;
    b.inv_std = (var.array() + b.eps).rsqrt();
    b.xhat = centered.array().rowwise() * b.inv_std.array();
    if (update_running) {
      b.running_mean = (1.0 - b.momentum) * b.running_mean + b.momentum * mean;
      b.running_var = (1.0 - b.momentum) * b.running_var + b.momentum * var * (n / (n - 1.0));
    }
    Matrix y = b.xhat.array().rowwise() * b.gamma.array();
    y.rowwise() += b.beta;
    return y;
  }

  static Matrix bn_backward(BatchNorm& b, const Matrix& dy) {
    b.gbeta = dy.colwise().sum();
    b.ggamma = (dy.array() * b.xhat.array()).colwise().sum();
    if (b.mode == Mode::Eval) return dy.array().rowwise() * (b.gamma.array() * b.inv_std.array());
    const double n = static_cast<double>(dy.rows());
    const Matrix dxhat = dy.array().rowwise() * b.gamma.array();
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = (dxhat.array() * b.xhat.array()).colwise().sum();
    Matrix dx = (n * dxhat).rowwise() - sum_dxhat;
    dx -= (b.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    dx = dx.array().rowwise() * (b.inv_std.array() / n);
    return dx;
  }

  MlpConfig cfg_;
  std::vector<Dense> dense_;
  std::vector<BatchNorm> bn_;
  std::vector<Matrix> pre_act_;
};

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamRef>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(Eigen::VectorXd::Zero(p.size));
        v_.emplace_back(Eigen::VectorXd::Zero(p.size));
      }
    }
    require(m_.size() == params.size(), ErrorCode::InvalidArgument, "Adam parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Eigen::Map<Eigen::VectorXd> w(params[i].value, params[i].size);
      Eigen::Map<const Eigen::VectorXd> g(params[i].grad, params[i].size);
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
      w.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace evdep::nn
