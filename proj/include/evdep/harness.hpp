#pragma once

// Experiment orchestration: configuration, the model registry (fit, sample,
// checkpoint), per-cell evaluation, aggregation over seeds, ranking and
// report files.

#include "evdep/copulas.hpp"
#include "evdep/metrics.hpp"
#include "evdep/neural/codine.hpp"
#include "evdep/neural/gmmnet.hpp"
#include "evdep/sessions.hpp"
#include "evdep/vine.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace evdep {

inline constexpr std::array<const char*, 8> kModelNames{"Clayton",  "Frank", "Gumbel", "Gaussian",
                                                        "StudentT", "Vine",  "CODINE", "GMMNet"};

inline bool is_known_model(const std::string& name) {
  return std::find_if(kModelNames.begin(), kModelNames.end(), [&](const char* m) { return name == m; }) !=
         kModelNames.end();
}

inline constexpr int kCheckpointVersion = 1;

// ---------------------------------------------------------------- configuration

struct DatasetSpec {
  std::string name, path;
  CsvSchema schema;
  bool preprocessed = false;  ///< path holds arrival_shifted,duration,energy,timestamp
};

struct ModelSettings {
  VineFitOptions vine{};
  nn::CodineConfig codine{};
  nn::GmmNetConfig gmmnet{};
};

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  std::vector<std::string> models{kModelNames.begin(), kModelNames.end()};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t global_seed = 0;
  std::size_t subsample_cap = 20000;
  std::string output_dir = "results";
  unsigned workers = 1;
  int csv_precision = 4;
  ModelSettings settings{};
  MetricsConfig metrics{};

  void validate() const {
    require(!models.empty(), ErrorCode::Precondition, "experiment needs at least one model");
    require(!seeds.empty(), ErrorCode::Precondition, "experiment needs at least one seed");
    require(subsample_cap > 0, ErrorCode::InvalidArgument, "subsample cap must be positive");
    for (const auto& m : models) require(is_known_model(m), ErrorCode::InvalidArgument, "unknown model '" + m + "'");
    for (std::size_t i = 0; i < models.size(); ++i)
      for (std::size_t k = i + 1; k < models.size(); ++k)
        require(models[i] != models[k], ErrorCode::InvalidArgument, "model '" + models[i] + "' listed twice");
    for (std::size_t i = 0; i < datasets.size(); ++i)
      for (std::size_t k = i + 1; k < datasets.size(); ++k)
        require(datasets[i].name != datasets[k].name, ErrorCode::InvalidArgument,
                "dataset name '" + datasets[i].name + "' used twice");
  }
};

inline nlohmann::json to_json(const nn::CodineConfig& c) {
  nlohmann::json j = to_json(c.stopping);
  j["learning_rate"] = c.learning_rate;
  j["batch"] = c.batch;
  j["hidden"] = c.mlp.hidden;
  j["leaky_slope"] = c.mlp.slope;
  j["gibbs"] = to_json(c.gibbs);
  return j;
}

inline nn::CodineConfig codine_config_from_json(const nlohmann::json& j, nn::CodineConfig c = {}) {
  c.stopping = nn::early_stopping_from_json(j, c.stopping);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch = j.value("batch", c.batch);
  c.mlp.hidden = j.value("hidden", c.mlp.hidden);
  c.mlp.slope = j.value("leaky_slope", c.mlp.slope);
  if (j.contains("gibbs")) c.gibbs = nn::gibbs_from_json(j.at("gibbs"), c.gibbs);
  return c;
}

inline nlohmann::json to_json(const nn::GmmNetConfig& c) {
  nlohmann::json j = to_json(c.stopping);
  j["hidden"] = c.hidden;
  j["batch_norm"] = c.batch_norm;
  j["components"] = c.components;
  j["learning_rate"] = c.learning_rate;
  j["batch"] = c.batch;
  j["grad_clip"] = c.grad_clip;
  j["log_sigma_min"] = c.log_sigma_min;
  j["log_sigma_max"] = c.log_sigma_max;
  j["init_rows"] = c.init_rows;
  j["state_margin"] = c.state_margin;
  j["gibbs"] = to_json(c.gibbs);
  return j;
}

inline nn::GmmNetConfig gmmnet_config_from_json(const nlohmann::json& j, nn::GmmNetConfig c = {}) {
  c.stopping = nn::early_stopping_from_json(j, c.stopping);
  c.hidden = j.value("hidden", c.hidden);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.components = j.value("components", c.components);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch = j.value("batch", c.batch);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.log_sigma_min = j.value("log_sigma_min", c.log_sigma_min);
  c.log_sigma_max = j.value("log_sigma_max", c.log_sigma_max);
  c.init_rows = j.value("init_rows", c.init_rows);
  c.state_margin = j.value("state_margin", c.state_margin);
  if (j.contains("gibbs")) c.gibbs = nn::gibbs_from_json(j.at("gibbs"), c.gibbs);
  return c;
}

inline nlohmann::json to_json(const VineFitOptions& v) {
  std::vector<std::string> fams;
  for (Family f : v.candidates) fams.emplace_back(to_string(f));
  return {{"candidates", fams}, {"criterion", v.criterion == SelectionCriterion::Aic ? "aic" : "loglik"}};
}

inline VineFitOptions vine_options_from_json(const nlohmann::json& j, VineFitOptions v = {}) {
  if (j.contains("candidates")) {
    v.candidates.clear();
    for (const auto& f : j.at("candidates")) v.candidates.push_back(family_from_string(f.get<std::string>()));
    require(!v.candidates.empty(), ErrorCode::InvalidArgument, "vine needs at least one candidate family");
  }
  if (j.contains("criterion")) {
    const auto c = j.at("criterion").get<std::string>();
    require(c == "aic" || c == "loglik", ErrorCode::InvalidArgument, "vine criterion must be 'aic' or 'loglik'");
    v.criterion = c == "aic" ? SelectionCriterion::Aic : SelectionCriterion::LogLik;
  }
  return v;
}

inline nlohmann::json to_json(const MetricsConfig& m) {
  return {{"alpha", m.alpha},
          {"epsilon", m.epsilon},
          {"rho2_train_cap", m.rho2_train_cap},
          {"kde_folds", m.kde.folds},
          {"kde_grid", m.kde.grid.empty() ? default_bandwidth_grid() : m.kde.grid}};
}

inline MetricsConfig metrics_config_from_json(const nlohmann::json& j, MetricsConfig m = {}) {
  m.alpha = j.value("alpha", m.alpha);
  m.epsilon = j.value("epsilon", m.epsilon);
  m.rho2_train_cap = j.value("rho2_train_cap", m.rho2_train_cap);
  m.kde.folds = j.value("kde_folds", m.kde.folds);
  m.kde.grid = j.value("kde_grid", m.kde.grid);
  return m;
}

inline nlohmann::json to_json(const CsvSchema& s) {
  return {{"start", s.start}, {"duration", s.duration}, {"end", s.end}, {"energy", s.energy}};
}

inline CsvSchema schema_from_json(const nlohmann::json& j, CsvSchema s = {}) {
  s.start = j.value("start", s.start);
  s.duration = j.value("duration", s.duration);
  s.end = j.value("end", s.end);
  s.energy = j.value("energy", s.energy);
  return s;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : c.datasets)
    ds.push_back({{"name", d.name}, {"path", d.path}, {"columns", to_json(d.schema)}, {"preprocessed", d.preprocessed}});
  return {{"datasets", ds},
          {"models", c.models},
          {"seeds", c.seeds},
          {"global_seed", c.global_seed},
          {"subsample_cap", c.subsample_cap},
          {"output_dir", c.output_dir},
          {"workers", c.workers},
          {"csv_precision", c.csv_precision},
          {"vine", to_json(c.settings.vine)},
          {"codine", to_json(c.settings.codine)},
          {"gmmnet", to_json(c.settings.gmmnet)},
          {"metrics", to_json(c.metrics)}};
}

/// Relative dataset paths are resolved against `base_dir`.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& base_dir = {}) {
  ExperimentConfig c;
  if (j.contains("datasets")) {
    for (const auto& d : j.at("datasets")) {
      DatasetSpec s;
      s.path = d.at("path").get<std::string>();
      if (!base_dir.empty() && std::filesystem::path(s.path).is_relative())
        s.path = (std::filesystem::path(base_dir) / s.path).lexically_normal().string();
      s.name = d.value("name", std::filesystem::path(s.path).stem().string());
      if (d.contains("columns")) s.schema = schema_from_json(d.at("columns"));
      s.preprocessed = d.value("preprocessed", false);
      c.datasets.push_back(s);
    }
  }
  c.models = j.value("models", c.models);
  c.seeds = j.value("seeds", c.seeds);
  c.global_seed = j.value("global_seed", c.global_seed);
  c.subsample_cap = j.value("subsample_cap", c.subsample_cap);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.workers = j.value("workers", c.workers);
  c.csv_precision = j.value("csv_precision", c.csv_precision);
  if (j.contains("vine")) c.settings.vine = vine_options_from_json(j.at("vine"));
  if (j.contains("codine")) c.settings.codine = codine_config_from_json(j.at("codine"));
  if (j.contains("gmmnet")) c.settings.gmmnet = gmmnet_config_from_json(j.at("gmmnet"));
  if (j.contains("metrics")) c.metrics = metrics_config_from_json(j.at("metrics"));
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, "invalid JSON in '" + path + "': " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  require(out.good(), ErrorCode::Io, "write to '" + path + "' failed");
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_json_file(path), std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------- models

using ModelParams =
    std::variant<ArchimedeanCopula3D, EllipticalCopula3D, VineModel, nn::CodineModel, nn::GmmNetModel>;

struct FittedModel {
  std::string name;
  std::vector<EmpiricalMarginal> marginals;  ///< empty for GMMNet, which samples on the data scale
  ModelParams params;
  nn::GibbsConfig gibbs{};
  std::optional<nn::TrainLog> log;
};

/// Fits `name` on the training split; neural models early-stop on `valid`.
/// Copula fits ignore the seed.
inline FittedModel fit_model(const std::string& name, const Dataset& train, const Dataset& valid,
                             const ModelSettings& s, std::uint64_t seed) {
  require(is_known_model(name), ErrorCode::InvalidArgument, "unknown model '" + name + "'");
  FittedModel m;
  m.name = name;
  if (name == "GMMNet") {
    auto fit = nn::train_gmmnet(train, valid, s.gmmnet, seed);
    m.params = std::move(fit.model);
    m.gibbs = s.gmmnet.gibbs;
    m.log = std::move(fit.log);
    return m;
  }
  m.marginals = fit_marginals(train);
  const Matrix pseudo = pseudo_observations(train);
  if (name == "Vine") {
    m.params = fit_vine(pseudo, s.vine);
  } else if (name == "CODINE") {
    auto fit = nn::train_codine(pseudo, pseudo_observations(valid), s.codine, seed);
    m.params = std::move(fit.model);
    m.gibbs = s.codine.gibbs;
    m.log = std::move(fit.log);
  } else {
    const Family f = family_from_string(name);
    if (is_elliptical(f)) m.params = fit_elliptical_3d(f, pseudo);
    else m.params = fit_archimedean_3d(f, pseudo);
  }
  return m;
}

/// Copula-scale draws for copula-based models.
inline Matrix sample_uniforms(const FittedModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return std::visit(
      [&](const auto& p) -> Matrix {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ArchimedeanCopula3D>) return sample_archimedean_3d(p, n, rng);
        else if constexpr (std::is_same_v<T, EllipticalCopula3D>) return sample_elliptical_3d(p, n, rng);
        else if constexpr (std::is_same_v<T, VineModel>) return vine_sample(p, n, rng);
        else if constexpr (std::is_same_v<T, nn::CodineModel>) return nn::gibbs_sample_codine(p, n, m.gibbs, seed);
        else throw Error(ErrorCode::InvalidArgument, m.name + " does not sample on the copula scale");
      },
      m.params);
}

inline Dataset sample_model(const FittedModel& m, std::size_t n, std::uint64_t seed) {
  require(n > 0, ErrorCode::InvalidArgument, "sample size must be positive");
  if (const auto* g = std::get_if<nn::GmmNetModel>(&m.params)) {
    Dataset ds = nn::gibbs_sample_gmmnet(*g, n, m.gibbs, seed);
    ds.name = m.name;
    return ds;
  }
  return from_uniforms(sample_uniforms(m, n, seed), m.marginals, m.name);
}

inline nlohmann::json checkpoint_to_json(const FittedModel& m) {
  nlohmann::json marg = nlohmann::json::array();
  for (const auto& e : m.marginals) marg.push_back(e.sorted_values());
  nlohmann::json params = std::visit([](const auto& p) { return to_json(p); }, m.params);
  nlohmann::json j{{"format", "evdep-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"model", m.name},
                   {"marginals", marg},
                   {"params", params},
                   {"gibbs", to_json(m.gibbs)}};
  if (m.log) j["train_log"] = to_json(*m.log);
  return j;
}

inline FittedModel checkpoint_from_json(const nlohmann::json& j) {
  require(j.value("format", std::string()) == "evdep-checkpoint", ErrorCode::Parse, "not a model checkpoint");
  require(j.value("version", 0) == kCheckpointVersion, ErrorCode::Parse,
          "unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  FittedModel m;
  m.name = j.at("model").get<std::string>();
  require(is_known_model(m.name), ErrorCode::Parse, "unknown model '" + m.name + "' in checkpoint");
  int feature = 0;
  for (const auto& v : j.at("marginals")) m.marginals.emplace_back(v.get<std::vector<double>>(), feature++);
  const auto& p = j.at("params");
  if (m.name == "Vine") m.params = vine_from_json(p);
  else if (m.name == "CODINE") m.params = nn::codine_from_json(p);
  else if (m.name == "GMMNet") m.params = nn::gmmnet_from_json(p);
  else if (is_elliptical(family_from_string(m.name))) m.params = elliptical_from_json(p);
  else m.params = archimedean_from_json(p);
  m.gibbs = nn::gibbs_from_json(j.value("gibbs", nlohmann::json::object()));
  require(m.name == "GMMNet" || m.marginals.size() == 3, ErrorCode::Parse, "checkpoint needs 3 marginals");
  return m;
}

// ---------------------------------------------------------------- results

struct DatasetInfo {
  std::string name, path;
  std::size_t rows = 0, dropped = 0, n_train = 0, n_valid = 0, n_test = 0, n_test_eval = 0;
  double span_days = 1.0;
  bool operator==(const DatasetInfo&) const = default;
};

struct CellResult {
  std::string model, dataset;
  std::uint64_t seed = 0, run_seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  std::optional<nlohmann::json> train_log;
  bool operator==(const CellResult&) const = default;
};

struct TableRow {
  std::string dataset, model;
  std::size_t seeds_ok = 0, seeds_total = 0;
  bool failed = false;                  ///< no successful seed; ranked last
  std::vector<double> mean, sd;         ///< 7 entries each, empty when failed
  std::vector<double> ranks;            ///< 7 entries
  double avg_rank = 0.0;
  std::optional<std::uint64_t> best_seed;
  bool operator==(const TableRow&) const = default;
};

struct ResultsTable {
  nlohmann::json config;
  std::vector<DatasetInfo> datasets;
  std::vector<CellResult> cells;
  std::vector<TableRow> rows;
  bool operator==(const ResultsTable&) const = default;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  require(!v.empty(), ErrorCode::Precondition, "mean of an empty list");
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// argmin tau-diff over (seed, tau_diff) pairs; non-finite entries are
/// skipped and ties go to the lowest seed.
inline std::uint64_t select_best_seed(const std::vector<std::pair<std::uint64_t, double>>& results) {
  std::optional<std::pair<std::uint64_t, double>> best;
  for (const auto& [seed, td] : results) {
    if (!std::isfinite(td)) continue;
    if (!best || td < best->second || (td == best->second && seed < best->first)) best = {seed, td};
  }
  require(best.has_value(), ErrorCode::Precondition, "no successful seed to select from");
  return best->first;
}

/// Ranks rows of one dataset per column (lower is better, ties averaged);
/// failed rows share the last places.
inline void rank_rows(std::vector<TableRow*>& rows) {
  const std::size_t n = rows.size();
  std::vector<std::size_t> ok_idx;
  for (std::size_t i = 0; i < n; ++i)
    if (!rows[i]->failed) ok_idx.push_back(i);
  const double failed_rank = 0.5 * static_cast<double>(ok_idx.size() + 1 + n);
  for (auto* r : rows) r->ranks.assign(kMetricColumns.size(), failed_rank);
  for (std::size_t c = 0; c < kMetricColumns.size(); ++c) {
    std::vector<double> vals;
    for (std::size_t i : ok_idx) vals.push_back(rows[i]->mean[c]);
    const auto rk = average_ranks(vals);
    for (std::size_t k = 0; k < ok_idx.size(); ++k) rows[ok_idx[k]]->ranks[c] = rk[k];
  }
  for (auto* r : rows) {
    double s = 0.0;
    for (double x : r->ranks) s += x;
    r->avg_rank = s / static_cast<double>(r->ranks.size());
  }
}

/// Aggregates cells into rows (dataset order, then model order) and ranks them.
inline std::vector<TableRow> aggregate(const std::vector<CellResult>& cells, const std::vector<std::string>& datasets,
                                       const std::vector<std::string>& models) {
  std::vector<TableRow> rows;
  for (const auto& d : datasets)
    for (const auto& m : models) {
      TableRow row;
      row.dataset = d;
      row.model = m;
      std::vector<std::vector<double>> cols(kMetricColumns.size());
      std::vector<std::pair<std::uint64_t, double>> tds;
      for (const auto& c : cells) {
        if (c.dataset != d || c.model != m) continue;
        ++row.seeds_total;
        if (!c.ok) continue;
        ++row.seeds_ok;
        for (std::size_t k = 0; k < kMetricColumns.size(); ++k) cols[k].push_back(metric_value(c.metrics, k));
        tds.emplace_back(c.seed, c.metrics.tau_diff);
      }
      row.failed = row.seeds_ok == 0;
      if (!row.failed) {
        for (const auto& col : cols) {
          const auto [mu, sd] = mean_sd(col);
          row.mean.push_back(mu);
          row.sd.push_back(sd);
        }
        row.best_seed = select_best_seed(tds);
      }
      rows.push_back(std::move(row));
    }
  for (const auto& d : datasets) {
    std::vector<TableRow*> group;
    for (auto& r : rows)
      if (r.dataset == d) group.push_back(&r);
    rank_rows(group);
  }
  return rows;
}

inline nlohmann::json to_json(const DatasetInfo& d) {
  return {{"name", d.name},       {"path", d.path},       {"rows", d.rows},
          {"dropped", d.dropped}, {"n_train", d.n_train}, {"n_valid", d.n_valid},
          {"n_test", d.n_test},   {"n_test_eval", d.n_test_eval}, {"span_days", d.span_days}};
}

inline nlohmann::json to_json(const ResultsTable& t) {
  nlohmann::json ds = nlohmann::json::array(), cells = nlohmann::json::array(), rows = nlohmann::json::array();
  for (const auto& d : t.datasets) ds.push_back(to_json(d));
  for (const auto& c : t.cells) {
    nlohmann::json j{{"model", c.model}, {"dataset", c.dataset}, {"seed", c.seed}, {"run_seed", c.run_seed},
                     {"ok", c.ok}};
    if (c.ok) j["metrics"] = to_json(c.metrics);
    else j["error"] = c.error;
    if (c.train_log) j["train_log"] = *c.train_log;
    cells.push_back(j);
  }
  for (const auto& r : t.rows) {
    nlohmann::json j{{"dataset", r.dataset},     {"model", r.model}, {"seeds_ok", r.seeds_ok},
                     {"seeds_total", r.seeds_total}, {"failed", r.failed}, {"mean", r.mean},
                     {"sd", r.sd},               {"ranks", r.ranks}, {"avg_rank", r.avg_rank}};
    if (r.best_seed) j["best_seed"] = *r.best_seed;
    rows.push_back(j);
  }
  std::vector<std::string> columns(kMetricColumns.begin(), kMetricColumns.end());
  return {{"config", t.config}, {"columns", columns}, {"datasets", ds}, {"cells", cells}, {"rows", rows}};
}

inline ResultsTable results_from_json(const nlohmann::json& j) {
  ResultsTable t;
  t.config = j.at("config");
  for (const auto& d : j.at("datasets")) {
    DatasetInfo i;
    i.name = d.at("name").get<std::string>();
    i.path = d.at("path").get<std::string>();
    i.rows = d.at("rows").get<std::size_t>();
    i.dropped = d.at("dropped").get<std::size_t>();
    i.n_train = d.at("n_train").get<std::size_t>();
    i.n_valid = d.at("n_valid").get<std::size_t>();
    i.n_test = d.at("n_test").get<std::size_t>();
    i.n_test_eval = d.at("n_test_eval").get<std::size_t>();
    i.span_days = d.at("span_days").get<double>();
    t.datasets.push_back(i);
  }
  for (const auto& c : j.at("cells")) {
    CellResult r;
    r.model = c.at("model").get<std::string>();
    r.dataset = c.at("dataset").get<std::string>();
    r.seed = c.at("seed").get<std::uint64_t>();
    r.run_seed = c.at("run_seed").get<std::uint64_t>();
    r.ok = c.at("ok").get<bool>();
    if (r.ok) r.metrics = metrics_from_json(c.at("metrics"));
    else r.error = c.at("error").get<std::string>();
    if (c.contains("train_log")) r.train_log = c.at("train_log");
    t.cells.push_back(r);
  }
  for (const auto& rj : j.at("rows")) {
    TableRow r;
    r.dataset = rj.at("dataset").get<std::string>();
    r.model = rj.at("model").get<std::string>();
    r.seeds_ok = rj.at("seeds_ok").get<std::size_t>();
    r.seeds_total = rj.at("seeds_total").get<std::size_t>();
    r.failed = rj.at("failed").get<bool>();
    r.mean = rj.at("mean").get<std::vector<double>>();
    r.sd = rj.at("sd").get<std::vector<double>>();
    r.ranks = rj.at("ranks").get<std::vector<double>>();
    r.avg_rank = rj.at("avg_rank").get<double>();
    if (rj.contains("best_seed")) r.best_seed = rj.at("best_seed").get<std::uint64_t>();
    t.rows.push_back(r);
  }
  return t;
}

inline std::string format_fixed(double x, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

/// Table layout: one row per (dataset, model) with "mean ± sd" cells.
inline std::string results_csv(const ResultsTable& t, int precision) {
  std::string out = "dataset,model,NLL,tau_diff,rho1,rho2,MAE_LT,MAE_UT,MAE_Load,avg_rank,seeds_ok,status\n";
  for (const auto& r : t.rows) {
    out += r.dataset + ',' + r.model;
    for (std::size_t c = 0; c < kMetricColumns.size(); ++c) {
      out += ',';
      out += r.failed ? std::string("failed") : format_fixed(r.mean[c], precision) + " ± " + format_fixed(r.sd[c], precision);
    }
    out += ',' + format_fixed(r.avg_rank, 2) + ',' + std::to_string(r.seeds_ok) + '/' + std::to_string(r.seeds_total);
    out += r.failed ? ",failed" : (r.seeds_ok < r.seeds_total ? ",partial" : ",ok");
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- experiment

struct PreparedDataset {
  DatasetInfo info;
  SplitBundle split;
  Dataset test_eval;  ///< capped test set used for every metric
};

inline PreparedDataset prepare_dataset(const DatasetSpec& spec, std::size_t cap, std::uint64_t global_seed) {
  PreparedDataset p;
  Dataset all;
  if (spec.preprocessed) {
    all = read_preprocessed_csv(spec.path);
    std::stable_sort(all.sessions.begin(), all.sessions.end(),
                     [](const Session& a, const Session& b) { return a.timestamp < b.timestamp; });
  } else {
    LoadResult lr = load_csv(spec.path, spec.schema);
    p.info.dropped = lr.dropped;
    all = std::move(lr.dataset);
  }
  all.name = spec.name;
  p.split = chronological_split(all);
  p.test_eval = subsample(p.split.test, cap, derive_seed(global_seed, "test-subsample", spec.name));
  p.info.name = spec.name;
  p.info.path = spec.path;
  p.info.rows = all.size();
  p.info.n_train = p.split.train.size();
  p.info.n_valid = p.split.valid.size();
  p.info.n_test = p.split.test.size();
  p.info.n_test_eval = p.test_eval.size();
  p.info.span_days = observation_span_days(p.test_eval);
  return p;
}

/// Per-run seed: independent of which other models or datasets are present.
inline std::uint64_t cell_seed(std::uint64_t global, std::uint64_t seed, const std::string& model,
                               const std::string& dataset) {
  return derive_seed(mix64(global) ^ seed, model, dataset);
}

struct ExperimentOutput {
  ResultsTable table;
  std::vector<PreparedDataset> data;
  std::vector<Dataset> synthetic;  ///< parallel to table.cells (empty for failed cells)
};

/// Fits, samples and scores one cell; failures are captured, not thrown.
inline CellResult run_cell(const ExperimentConfig& cfg, const PreparedDataset& d, const std::string& model,
                           std::uint64_t seed, Dataset* synthetic_out) {
  CellResult c;
  c.model = model;
  c.dataset = d.info.name;
  c.seed = seed;
  c.run_seed = cell_seed(cfg.global_seed, seed, model, d.info.name);
  try {
    const FittedModel fm = fit_model(model, d.split.train, d.split.valid, cfg.settings, c.run_seed);
    if (fm.log) c.train_log = to_json(*fm.log);
    Dataset syn = sample_model(fm, d.test_eval.size(), mix64(c.run_seed ^ 0x53414D50ull));
    syn = subsample(syn, cfg.subsample_cap, mix64(c.run_seed ^ 0x43415030ull));
    MetricsConfig mc = cfg.metrics;
    mc.workers = 1;
    c.metrics = evaluate_all(d.split.train, d.test_eval, syn, mc, c.run_seed);
    c.metrics.model = model;
    c.metrics.dataset = d.info.name;
    c.metrics.seed = seed;
    for (double v : {c.metrics.nll, c.metrics.tau_diff, c.metrics.rho1, c.metrics.rho2, c.metrics.mae_lt,
                     c.metrics.mae_ut, c.metrics.mae_load})
      require(std::isfinite(v), ErrorCode::Numerical, "non-finite metric value");
    c.ok = true;
    if (synthetic_out) *synthetic_out = std::move(syn);
  } catch (const Error& e) {
    c.error = std::string(to_string(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    c.error = std::string("internal: ") + e.what();
  }
  return c;
}

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  require(!cfg.datasets.empty(), ErrorCode::Precondition, "experiment needs at least one dataset");
  ExperimentOutput out;
  out.table.config = to_json(cfg);
  for (const auto& spec : cfg.datasets) {
    out.data.push_back(prepare_dataset(spec, cfg.subsample_cap, cfg.global_seed));
    out.table.datasets.push_back(out.data.back().info);
  }
  struct Job {
    std::size_t dataset;
    std::string model;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < out.data.size(); ++d)
    for (const auto& m : cfg.models)
      for (auto s : cfg.seeds) jobs.push_back({d, m, s});
  out.table.cells.resize(jobs.size());
  out.synthetic.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();)
      out.table.cells[i] = run_cell(cfg, out.data[jobs[i].dataset], jobs[i].model, jobs[i].seed, &out.synthetic[i]);
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.workers ? cfg.workers : std::thread::hardware_concurrency(),
                                                          static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<std::string> names;
  for (const auto& d : out.data) names.push_back(d.info.name);
  out.table.rows = aggregate(out.table.cells, names, cfg.models);
  return out;
}

/// Writes results.json, results.csv, best-seed samples and load profiles.
inline void emit_report(const ExperimentOutput& out, const std::string& dir, int precision = 4) {
  require(!out.table.rows.empty(), ErrorCode::Precondition, "nothing to report: result table is empty");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "samples", ec);
  fs::create_directories(fs::path(dir) / "load_profiles", ec);
  require(!ec, ErrorCode::Io, "cannot create output directory '" + dir + "': " + ec.message());
  write_json_file((fs::path(dir) / "results.json").string(), to_json(out.table));
  {
    std::ofstream csv(fs::path(dir) / "results.csv", std::ios::binary);
    require(csv.good(), ErrorCode::Io, "cannot write results.csv in '" + dir + "'");
    csv << results_csv(out.table, precision);
    require(csv.good(), ErrorCode::Io, "write to results.csv failed");
  }
  for (const auto& d : out.data) {
    std::vector<std::pair<std::string, LoadProfile>> cols{{"test", build_load_profile(d.test_eval, d.info.span_days)}};
    for (const auto& r : out.table.rows) {
      if (r.dataset != d.info.name || !r.best_seed) continue;
      for (std::size_t i = 0; i < out.table.cells.size(); ++i) {
        const auto& c = out.table.cells[i];
        if (c.dataset != r.dataset || c.model != r.model || c.seed != *r.best_seed || !c.ok) continue;
        const std::string file = d.info.name + "_" + r.model + "_seed" + std::to_string(c.seed) + ".csv";
        if (i < out.synthetic.size() && !out.synthetic[i].empty()) {
          write_preprocessed_csv(out.synthetic[i], (fs::path(dir) / "samples" / file).string(), false);
          cols.emplace_back(r.model, build_load_profile(out.synthetic[i], d.info.span_days));
        }
      }
    }
    write_load_profile_csv((fs::path(dir) / "load_profiles" / (d.info.name + ".csv")).string(), cols);
  }
}

}  // namespace evdep
