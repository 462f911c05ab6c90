// evdep command-line interface: prepare, fit, sample, evaluate, experiment.

#include "evdep/harness.hpp"

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SchemaFlags {
  std::string start = "start", duration, end, energy = "energy";

  void add(CLI::App* app) {
    app->add_option("--col-start", start, "plug-in timestamp column")->capture_default_str();
    auto* d = app->add_option("--col-duration", duration, "duration column (hours or H:MM:SS)");
    auto* e = app->add_option("--col-end", end, "plug-out timestamp column");
    d->excludes(e);
    app->add_option("--col-energy", energy, "energy column (kWh)")->capture_default_str();
  }

  evdep::CsvSchema schema() const {
    evdep::CsvSchema s{start, duration, end, energy};
    if (s.duration.empty() && s.end.empty()) s.duration = "duration";
    return s;
  }
};

json split_entry(const evdep::Dataset& d, const std::string& file) {
  json j{{"file", file}, {"rows", d.size()}};
  if (!d.empty()) {
    j["first"] = evdep::csv::format_timestamp(d.sessions.front().timestamp);
    j["last"] = evdep::csv::format_timestamp(d.sessions.back().timestamp);
  }
  return j;
}

evdep::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? evdep::ExperimentConfig{} : evdep::load_experiment_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic EV charging session generation and evaluation"};
  app.require_subcommand(1);

  SchemaFlags schema;
  std::string input, out, config_path, model, train_path, valid_path, test_path, synthetic_path, checkpoint;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  unsigned workers = 1;

  auto* prepare = app.add_subcommand("prepare", "raw CSV -> preprocessed splits and manifest");
  prepare->add_option("--input", input, "raw charging log")->required();
  schema.add(prepare);
  prepare->add_option("--out", out, "output directory")->required();

  auto* fit = app.add_subcommand("fit", "fit one model and write a checkpoint");
  fit->add_option("--model", model, "Clayton|Frank|Gumbel|Gaussian|StudentT|Vine|CODINE|GMMNet")->required();
  fit->add_option("--train", train_path, "preprocessed training CSV")->required();
  fit->add_option("--valid", valid_path, "preprocessed validation CSV (neural models)");
  fit->add_option("--config", config_path, "JSON config with model hyperparameters");
  fit->add_option("--seed", seed, "random seed");
  fit->add_option("--out", out, "checkpoint path")->required();

  auto* sample = app.add_subcommand("sample", "checkpoint -> synthetic CSV");
  sample->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  sample->add_option("--n", n, "number of sessions")->required()->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "random seed");
  sample->add_option("--out", out, "synthetic CSV path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "synthetic vs test -> metrics JSON");
  evaluate->add_option("--synthetic", synthetic_path, "synthetic CSV")->required();
  evaluate->add_option("--test", test_path, "preprocessed test CSV (timestamps required)")->required();
  evaluate->add_option("--train", train_path, "preprocessed training CSV (for rho2)")->required();
  evaluate->add_option("--config", config_path, "JSON config with metric settings");
  evaluate->add_option("--seed", seed, "random seed");
  evaluate->add_option("--workers", workers, "threads for KDE and nearest neighbours");
  evaluate->add_option("--out", out, "metrics JSON path (stdout if omitted)");

  auto* experiment = app.add_subcommand("experiment", "full model x dataset x seed table");
  experiment->add_option("--config", config_path, "experiment JSON config")->required();
  auto* seed_opt = experiment->add_option("--seed", seed, "global seed (overrides config)");
  auto* out_opt = experiment->add_option("--out", out, "output directory (overrides config)");
  auto* workers_opt = experiment->add_option("--workers", workers, "concurrent cells (overrides config; 0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    json summary;
    if (*prepare) {
      const auto lr = evdep::load_csv(input, schema.schema());
      const auto split = evdep::chronological_split(lr.dataset);
      fs::create_directories(out);
      evdep::write_preprocessed_csv(split.train, (fs::path(out) / "train.csv").string());
      evdep::write_preprocessed_csv(split.valid, (fs::path(out) / "valid.csv").string());
      evdep::write_preprocessed_csv(split.test, (fs::path(out) / "test.csv").string());
      summary = {{"source", input},
                 {"rows", lr.dataset.size()},
                 {"dropped", lr.dropped},
                 {"columns", evdep::to_json(schema.schema())},
                 {"splits",
                  {{"train", split_entry(split.train, "train.csv")},
                   {"valid", split_entry(split.valid, "valid.csv")},
                   {"test", split_entry(split.test, "test.csv")}}}};
      evdep::write_json_file((fs::path(out) / "manifest.json").string(), summary);
    } else if (*fit) {
      const auto cfg = config_or_default(config_path);
      const auto train = evdep::read_preprocessed_csv(train_path);
      const bool neural = model == "CODINE" || model == "GMMNet";
      evdep::require(!neural || !valid_path.empty(), evdep::ErrorCode::InvalidArgument,
                     model + " needs --valid for early stopping");
      const auto valid = valid_path.empty() ? evdep::Dataset{} : evdep::read_preprocessed_csv(valid_path);
      const auto m = evdep::fit_model(model, train, valid, cfg.settings, seed);
      evdep::write_json_file(out, evdep::checkpoint_to_json(m));
      summary = {{"model", model}, {"checkpoint", out}, {"train_rows", train.size()}};
    } else if (*sample) {
      const auto m = evdep::checkpoint_from_json(evdep::read_json_file(checkpoint));
      const auto ds = evdep::sample_model(m, n, seed);
      evdep::write_preprocessed_csv(ds, out, false);
      summary = {{"model", m.name}, {"rows", ds.size()}, {"out", out}};
    } else if (*evaluate) {
      const auto cfg = config_or_default(config_path);
      auto mc = cfg.metrics;
      mc.workers = workers;
      const auto syn = evdep::read_preprocessed_csv(synthetic_path);
      const auto test = evdep::read_preprocessed_csv(test_path);
      const auto train = evdep::read_preprocessed_csv(train_path);
      auto report = evdep::evaluate_all(train, test, syn, mc, seed);
      report.dataset = test_path;
      report.model = synthetic_path;
      summary = evdep::to_json(report);
      if (!out.empty()) evdep::write_json_file(out, summary);
    } else if (*experiment) {
      auto cfg = evdep::load_experiment_config(config_path);
      if (seed_opt->count()) cfg.global_seed = seed;
      if (out_opt->count()) cfg.output_dir = out;
      if (workers_opt->count()) cfg.workers = workers;
      const auto result = evdep::run_experiment(cfg);
      evdep::emit_report(result, cfg.output_dir, cfg.csv_precision);
      std::size_t failed = 0;
      for (const auto& c : result.table.cells) failed += c.ok ? 0 : 1;
      summary = {{"output_dir", cfg.output_dir}, {"cells", result.table.cells.size()}, {"failed_cells", failed}};
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const evdep::Error& e) {
    std::cerr << json{{"error", {{"code", evdep::to_string(e.code())}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}
