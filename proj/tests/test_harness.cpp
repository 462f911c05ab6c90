#include "evdep/harness.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace evdep;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("evdep_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(EVDEP_CLI) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const SplitBundle& fixture_split() {
  static const SplitBundle s = chronological_split(load_csv(EVDEP_FIXTURE, {"start", "duration", "", "energy"}).dataset);
  return s;
}

ModelSettings tiny_settings() {
  ModelSettings s;
  s.codine.mlp.hidden = {16, 16};
  s.codine.stopping = {2, 10, 1, 64};
  s.codine.gibbs = {32, 5, 2, 4};
  s.gmmnet.stopping = {2, 10, 1, 64};
  s.gmmnet.gibbs = {32, 5, 2, 4};
  return s;
}

TableRow row(const std::string& model, std::vector<double> mean, bool failed = false) {
  TableRow r;
  r.dataset = "d";
  r.model = model;
  r.failed = failed;
  if (!failed) {
    r.mean = std::move(mean);
    r.sd.assign(7, 0.0);
  }
  return r;
}

}  // namespace

TEST(Ranking, AveragedTiesAndFailures) {
  auto a = row("A", {1, 2, 3, 4, 5, 6, 7});
  auto b = row("B", {2, 2, 1, 4, 5, 6, 8});
  auto c = row("C", {3, 1, 2, 5, 5, 5, 9});
  auto f = row("F", {}, true);
  std::vector<TableRow*> rows{&a, &b, &c, &f};
  rank_rows(rows);
  EXPECT_EQ(a.ranks, (std::vector<double>{1, 2.5, 3, 1.5, 2, 2.5, 1}));
  EXPECT_EQ(b.ranks, (std::vector<double>{2, 2.5, 1, 1.5, 2, 2.5, 2}));
  EXPECT_EQ(c.ranks, (std::vector<double>{3, 1, 2, 3, 2, 1, 3}));
  EXPECT_EQ(f.ranks, std::vector<double>(7, 4.0));
  EXPECT_NEAR(a.avg_rank, 13.5 / 7.0, 1e-15);
}

TEST(Ranking, SeveralFailuresShareLastPlaces) {
  auto a = row("A", std::vector<double>(7, 1.0));
  auto f1 = row("F1", {}, true), f2 = row("F2", {}, true);
  std::vector<TableRow*> rows{&f1, &a, &f2};
  rank_rows(rows);
  EXPECT_EQ(a.ranks, std::vector<double>(7, 1.0));
  EXPECT_EQ(f1.ranks, std::vector<double>(7, 2.5));
  EXPECT_EQ(f2.ranks, std::vector<double>(7, 2.5));
}

TEST(BestSeed, Selection) {
  EXPECT_EQ(select_best_seed({{0, 0.3}, {1, 0.2}, {2, 0.25}, {3, 0.2}, {4, 0.4}}), 1u);
  EXPECT_EQ(select_best_seed({{7, 0.9}}), 7u);
  EXPECT_EQ(select_best_seed({{0, std::nan("")}, {1, 0.5}, {2, std::numeric_limits<double>::infinity()}}), 1u);
  EXPECT_THROW(select_best_seed({{0, std::nan("")}}), Error);
}

TEST(MeanSd, Values) {
  EXPECT_EQ(mean_sd({2.5}), (std::pair<double, double>{2.5, 0.0}));
  const auto [m, s] = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_THROW(mean_sd({}), Error);
}

TEST(Aggregate, PartialAndFailedRows) {
  std::vector<CellResult> cells;
  for (std::uint64_t s = 0; s < 3; ++s) {
    CellResult ok;
    ok.model = "Clayton";
    ok.dataset = "d";
    ok.seed = s;
    ok.ok = s != 1;
    if (!ok.ok) ok.error = "numerical: diverged";
    if (ok.ok) ok.metrics.tau_diff = 0.1 * static_cast<double>(3 - s);
    cells.push_back(ok);
    CellResult bad = ok;
    bad.model = "GMMNet";
    bad.ok = false;
    bad.error = "numerical: diverged";
    bad.metrics = {};
    cells.push_back(bad);
  }
  ResultsTable t;
  t.cells = cells;
  t.rows = aggregate(cells, {"d"}, {"Clayton", "GMMNet"});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].seeds_ok, 2u);
  EXPECT_EQ(t.rows[0].best_seed, 2u);
  EXPECT_TRUE(t.rows[1].failed);
  const std::string csv = results_csv(t, 4);
  EXPECT_NE(csv.find("d,Clayton,"), std::string::npos);
  EXPECT_NE(csv.find(",2/3,partial\n"), std::string::npos);
  EXPECT_NE(csv.find("failed,failed"), std::string::npos);
  EXPECT_EQ(results_from_json(nlohmann::json::parse(to_json(t).dump())), t);
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c;
  c.models.clear();
  EXPECT_THROW(c.validate(), Error);
  c.models = {"Clayton", "Clayton"};
  EXPECT_THROW(c.validate(), Error);
  c.models = {"Copula9"};
  EXPECT_THROW(c.validate(), Error);
  c.models = {"Vine"};
  c.seeds.clear();
  EXPECT_THROW(c.validate(), Error);
  ExperimentConfig e;
  EXPECT_THROW(run_experiment(e), Error);
  const auto back = experiment_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(back.models, c.models);
  EXPECT_EQ(back.subsample_cap, 20000u);
}

TEST(CellSeed, IndependentOfOtherCells) {
  EXPECT_EQ(cell_seed(0, 1, "Vine", "a"), cell_seed(0, 1, "Vine", "a"));
  EXPECT_NE(cell_seed(0, 1, "Vine", "a"), cell_seed(0, 2, "Vine", "a"));
  EXPECT_NE(cell_seed(0, 1, "Vine", "a"), cell_seed(0, 1, "Frank", "a"));
  EXPECT_NE(cell_seed(0, 1, "Vine", "a"), cell_seed(1, 1, "Vine", "a"));
}

TEST(Checkpoint, RoundTripEveryModel) {
  const auto& s = fixture_split();
  const auto settings = tiny_settings();
  for (const char* name : kModelNames) {
    const FittedModel m = fit_model(name, s.train, s.valid, settings, 3);
    const FittedModel back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(m).dump()));
    EXPECT_EQ(back.name, m.name);
    EXPECT_EQ(sample_model(back, 40, 11).features(), sample_model(m, 40, 11).features()) << name;
  }
  EXPECT_THROW(checkpoint_from_json({{"format", "other"}}), Error);
  EXPECT_THROW(fit_model("Nope", s.train, s.valid, settings, 0), Error);
}

TEST(Experiment, SmallTable) {
  ExperimentConfig cfg;
  cfg.datasets.push_back({"fixture", EVDEP_FIXTURE, {"start", "duration", "", "energy"}, false});
  cfg.models = {"Clayton", "Gaussian"};
  cfg.seeds = {0};
  const auto out = run_experiment(cfg);
  ASSERT_EQ(out.table.cells.size(), 2u);
  for (const auto& c : out.table.cells) EXPECT_TRUE(c.ok) << c.error;
  EXPECT_EQ(out.table.datasets[0].n_test, 500u);
  const auto dir = scratch("small");
  emit_report(out, dir.string());
  const std::string csv = slurp(dir / "results.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("± 0.0000"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "samples" / "fixture_Clayton_seed0.csv"));
  EXPECT_TRUE(fs::exists(dir / "load_profiles" / "fixture.csv"));
  EXPECT_EQ(results_from_json(read_json_file((dir / "results.json").string())), out.table);
  EXPECT_EQ(run_experiment(cfg).table, out.table);
}

TEST(Cli, UsageAndRuntimeErrors) {
  const auto dir = scratch("cli_err");
  EXPECT_EQ(run("fit --model Clayton", dir / "e1"), 2);
  EXPECT_NE(slurp(dir / "e1").find("\"usage\""), std::string::npos);
  EXPECT_EQ(run("sample --checkpoint /nonexistent.json --n 5 --out x.csv", dir / "e2"), 1);
  const auto err = nlohmann::json::parse(slurp(dir / "e2"));
  EXPECT_EQ(err.at("error").at("code"), "io");
  EXPECT_EQ(run("fit --model Nope --train /nonexistent.csv --out x.json", dir / "e3"), 1);
}

TEST(Cli, EndToEnd) {
  const auto dir = scratch("cli");
  const auto d = dir.string();
  ASSERT_EQ(run(std::string("prepare --input ") + EVDEP_FIXTURE + " --out " + d + "/prep", dir / "e"), 0) << slurp(dir / "e");
  const auto manifest = read_json_file(d + "/prep/manifest.json");
  EXPECT_EQ(manifest.at("rows"), 5000);
  EXPECT_EQ(manifest.at("splits").at("train").at("rows"), 4000);
  ASSERT_EQ(run("fit --model Frank --train " + d + "/prep/train.csv --seed 1 --out " + d + "/frank.json", dir / "e"), 0)
      << slurp(dir / "e");
  ASSERT_EQ(run("sample --checkpoint " + d + "/frank.json --n 300 --seed 2 --out " + d + "/syn.csv", dir / "e"), 0)
      << slurp(dir / "e");
  EXPECT_EQ(read_preprocessed_csv(d + "/syn.csv").size(), 300u);
  ASSERT_EQ(run("evaluate --synthetic " + d + "/syn.csv --test " + d + "/prep/test.csv --train " + d +
                    "/prep/train.csv --out " + d + "/metrics.json",
                dir / "e"),
            0)
      << slurp(dir / "e");
  const auto m = metrics_from_json(read_json_file(d + "/metrics.json"));
  EXPECT_EQ(m.n_synthetic, 300u);
  EXPECT_TRUE(std::isfinite(m.nll));
  EXPECT_GT(m.tau_diff, 0.0);
}
