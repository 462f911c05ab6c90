#pragma once

// Three-dimensional regular vine: two unconditional pair-copulas on a path
// through a center variable plus one conditional pair-copula.
//
//   c(u) = c_{a,c}(u_a, u_c) * c_{b,c}(u_b, u_c) * c_{a,b|c}(h(u_a|u_c), h(u_b|u_c))
//
// At d = 3 every regular vine is a path, so C-, D- and R-vines coincide up to
// labeling and structure selection reduces to choosing the center.

#include "evdep/copulas.hpp"
#include "evdep/kendall.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace evdep {

enum class SelectionCriterion { Aic, LogLik };

struct VineFitOptions {
  std::vector<Family> candidates{Family::Independence, Family::Gaussian, Family::Clayton,
                                 Family::Frank, Family::Gumbel, Family::StudentT};
  SelectionCriterion criterion = SelectionCriterion::Aic;
};

struct CandidateScore {
  Family family;
  double loglik;
  double aic;
};

struct VineEdge {
  int first = 0, second = 0;  ///< copula arguments (variable indices)
  int given = -1;             ///< conditioning variable, -1 in tree 1
  BivariateCopula copula;
  double loglik = 0.0;
  std::vector<CandidateScore> scores;  ///< fitted candidates (empty if built by hand)
};

struct VineModel {
  int center = 0;
  int leaf_a = 1, leaf_b = 2;
  std::array<VineEdge, 2> tree1;  ///< (leaf_a, center), (leaf_b, center)
  VineEdge tree2;                 ///< (leaf_a, leaf_b | center)

  std::array<int, 3> order() const { return {center, leaf_a, leaf_b}; }

  /// Assembles a model from three copulas for a given center.
  static VineModel make(int center, const BivariateCopula& a_c, const BivariateCopula& b_c,
                        const BivariateCopula& ab_given_c) {
    require(center >= 0 && center < 3, ErrorCode::InvalidArgument, "center must be 0, 1 or 2");
    VineModel m;
    m.center = center;
    m.leaf_a = center == 0 ? 1 : 0;
    m.leaf_b = center == 2 ? 1 : 2;
    m.tree1[0] = {m.leaf_a, center, -1, a_c, 0.0, {}};
    m.tree1[1] = {m.leaf_b, center, -1, b_c, 0.0, {}};
    m.tree2 = {m.leaf_a, m.leaf_b, center, ab_given_c, 0.0, {}};
    return m;
  }
};

/// Center = argmax over variables of the summed |tau| to the other two;
/// ties go to the lowest index.
inline int select_center(const Matrix& tau) {
  require(tau.rows() == 3 && tau.cols() == 3, ErrorCode::InvalidArgument, "vine expects d = 3");
  int best = 0;
  double best_w = -1.0;
  for (int i = 0; i < 3; ++i) {
    double w = 0.0;
    for (int j = 0; j < 3; ++j)
      if (j != i) w += std::abs(tau(i, j));
    if (w > best_w) {
      best_w = w;
      best = i;
    }
  }
  return best;
}

inline int select_structure(const Matrix& pseudo) {
  require(pseudo.cols() == 3, ErrorCode::InvalidArgument, "vine expects d = 3");
  return select_center(kendall_matrix(pseudo));
}

/// Fits every admissible candidate by likelihood and keeps the best by the
/// configured criterion. Clayton and Gumbel are skipped for negative tau.
inline VineEdge select_pair_copula(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                   const VineFitOptions& opt) {
  require(!opt.candidates.empty(), ErrorCode::InvalidArgument, "empty candidate family set");
  const double tau = kendall_tau(u, v);
  VineEdge edge;
  double best_score = std::numeric_limits<double>::infinity();
  for (Family f : opt.candidates) {
    if ((f == Family::Clayton || f == Family::Gumbel) && tau < 0.0) continue;
    BivariateCopula c;
    try {
      c = f == Family::Independence ? BivariateCopula{} : fit_mle(f, u, v);
    } catch (const Error&) {
      continue;
    }
    if (c.family != f) continue;  // collapsed to independence; scored separately
    const double ll = pair_loglik(c, u, v);
    if (!std::isfinite(ll)) continue;
    const double aic = 2.0 * parameter_count(f) - 2.0 * ll;
    edge.scores.push_back({f, ll, aic});
    const double score = opt.criterion == SelectionCriterion::Aic ? aic : -ll;
    if (score < best_score) {
      best_score = score;
      edge.copula = c;
      edge.loglik = ll;
    }
  }
  require(std::isfinite(best_score), ErrorCode::Numerical, "no candidate family could be fitted");
  return edge;
}

/// Sequential fit: structure, tree-1 edges, h-transform, tree-2 edge.
inline VineModel fit_vine(const Matrix& pseudo, const VineFitOptions& opt = {}) {
  require(pseudo.cols() == 3, ErrorCode::InvalidArgument, "vine expects d = 3");
  const int c = select_structure(pseudo);
  VineModel m = VineModel::make(c, {}, {}, {});
  const Eigen::VectorXd uc = pseudo.col(c), ua = pseudo.col(m.leaf_a), ub = pseudo.col(m.leaf_b);
  for (int e = 0; e < 2; ++e) {
    const Eigen::VectorXd& leaf = e == 0 ? ua : ub;
    VineEdge fitted = select_pair_copula(leaf, uc, opt);
    fitted.first = e == 0 ? m.leaf_a : m.leaf_b;
    fitted.second = c;
    fitted.given = -1;
    m.tree1[static_cast<std::size_t>(e)] = std::move(fitted);
  }
  Eigen::VectorXd a_given(pseudo.rows()), b_given(pseudo.rows());
  for (Eigen::Index i = 0; i < pseudo.rows(); ++i) {
    a_given(i) = detail::clamp_open(h_function(m.tree1[0].copula, ua(i), uc(i)));
    b_given(i) = detail::clamp_open(h_function(m.tree1[1].copula, ub(i), uc(i)));
  }
  VineEdge t2 = select_pair_copula(a_given, b_given, opt);
  t2.first = m.leaf_a;
  t2.second = m.leaf_b;
  t2.given = c;
  m.tree2 = std::move(t2);
  return m;
}

inline double vine_log_density(const VineModel& m, const Eigen::Vector3d& u) {
  for (int i = 0; i < 3; ++i)
    require(is_interior(u(i)), ErrorCode::Boundary, "vine arguments must lie strictly inside (0,1)");
  const double ua = u(m.leaf_a), ub = u(m.leaf_b), uc = u(m.center);
  const double l1 = pair_log_density(m.tree1[0].copula, ua, uc);
  const double l2 = pair_log_density(m.tree1[1].copula, ub, uc);
  if (m.tree2.copula.family == Family::Independence) return l1 + l2;
  const double x = detail::clamp_open(h_function(m.tree1[0].copula, ua, uc));
  const double y = detail::clamp_open(h_function(m.tree1[1].copula, ub, uc));
  return l1 + l2 + pair_log_density(m.tree2.copula, x, y);
}

inline double vine_density(const VineModel& m, const Eigen::Vector3d& u) {
  return std::exp(vine_log_density(m, u));
}

inline double vine_loglik(const VineModel& m, const Matrix& pseudo) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < pseudo.rows(); ++i) ll += vine_log_density(m, pseudo.row(i).transpose());
  require(std::isfinite(ll), ErrorCode::Numerical, "vine log-likelihood is not finite");
  return ll;
}

/// Conditional inversion through the tree structure. All families in use are
/// exchangeable, so h(y|x) of the tree-2 copula uses the same h-function.
inline Matrix vine_sample(const VineModel& m, std::size_t n, Rng& rng) {
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double w1 = rng.uniform(), w2 = rng.uniform(), w3 = rng.uniform();
    const double uc = w1;
    const double ua = h_inverse(m.tree1[0].copula, w2, uc);
    const double a_given = detail::clamp_open(h_function(m.tree1[0].copula, ua, uc));
    const double b_given = h_inverse(m.tree2.copula, w3, a_given);
    const double ub = h_inverse(m.tree1[1].copula, b_given, uc);
    out(i, m.center) = uc;
    out(i, m.leaf_a) = ua;
    out(i, m.leaf_b) = ub;
  }
  return out;
}

inline Matrix vine_sample(const VineModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return vine_sample(m, n, rng);
}

inline nlohmann::json to_json(const VineModel& m) {
  auto edge = [](const VineEdge& e) {
    nlohmann::json j = to_json(e.copula);
    if (e.given < 0) {
      j["pair"] = {e.first, e.second};
    } else {
      j["cond"] = {e.first, e.second};
      j["given"] = e.given;
    }
    return j;
  };
  return {{"order", m.order()}, {"edges", {edge(m.tree1[0]), edge(m.tree1[1]), edge(m.tree2)}}};
}

inline VineModel vine_from_json(const nlohmann::json& j) {
  const auto order = j.at("order").get<std::array<int, 3>>();
  const auto& edges = j.at("edges");
  require(edges.size() == 3, ErrorCode::Parse, "vine JSON needs exactly 3 edges");
  VineModel m = VineModel::make(order[0], bivariate_from_json(edges.at(0)), bivariate_from_json(edges.at(1)),
                                bivariate_from_json(edges.at(2)));
  require(m.leaf_a == order[1] && m.leaf_b == order[2], ErrorCode::Parse, "vine order is inconsistent");
  return m;
}

}  // namespace evdep
