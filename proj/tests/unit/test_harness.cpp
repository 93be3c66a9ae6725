#include <gtest/gtest.h>

#include <fstream>

#include "mitoda/harness.hpp"
#include "support.hpp"

using namespace mitoda;
using testing_support::TempDir;

namespace {

void write_domain(const fs::path& root, std::uint64_t seed, const FixtureStyle& style = {}) {
  save_dataset(make_blob_fixture(3, 32, 32, 3, seed, style), root / "train");
  save_dataset(make_blob_fixture(2, 32, 32, 3, seed + 100, style), root / "test");
}

ExperimentConfig tiny_config(DatasetRegistry& reg, const fs::path& dir) {
  write_domain(dir / "A", 1);
  FixtureStyle dark;
  dark.gamma = 0.6;
  write_domain(dir / "B", 2, dark);
  reg.register_domain("A", dir / "A");
  reg.register_domain("B", dir / "B");
  ExperimentConfig cfg;
  cfg.methods = {MethodSpec::parse("baseline")};
  cfg.pairs = {{"A", "B"}};
  cfg.repeats = 2;
  cfg.unet.depth = 3;
  cfg.unet.base_filters = 4;
  cfg.baseline_plan.phases[0].epochs = 4;
  cfg.baseline_plan.phases[0].lr_policy = LrPolicy::one_cycle(1e-2);
  cfg.baseline_plan.patches = {.patch_size = 16, .count = 32, .val_fraction = 0.25};
  return cfg;
}

void write_styled(const fs::path& root, std::initializer_list<std::size_t> epochs, std::size_t h = 32) {
  for (auto e : epochs) save_dataset(make_blob_fixture(2, h, 32, 3, 50 + e), root / styled_dir_name(e));
}

}  // namespace

TEST(StyledRegistry, RegistersEveryEpoch) {
  TempDir dir;
  write_styled(dir / "fam", {1, 10, 50, 100});
  DatasetRegistry reg;
  const auto ids = reg.register_styled_dataset(dir / "fam", {100, 1, 50, 10});
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids.front(), "fam@epoch_1");
  const auto fam = reg.family("fam");
  ASSERT_EQ(fam.size(), 4u);
  EXPECT_EQ(*fam.front().stylization_epoch, 1u);
  EXPECT_EQ(*fam.back().stylization_epoch, 100u);
  EXPECT_EQ(reg.at("fam@epoch_50").kind, "styled");

  const auto before = reg;
  EXPECT_EQ(reg.register_styled_dataset(dir / "fam", {100, 1, 50, 10}), ids);
  EXPECT_EQ(reg, before);

  DatasetRegistry single;
  EXPECT_EQ(single.register_styled_dataset(dir / "fam", {10}, "x").size(), 1u);
  EXPECT_EQ(single.family("x").size(), 1u);
}

TEST(StyledRegistry, Errors) {
  TempDir dir;
  write_styled(dir / "fam", {1, 10});
  DatasetRegistry reg;
  try {
    reg.register_styled_dataset(dir / "fam", {1, 7, 10});
    FAIL() << "missing epoch accepted";
  } catch (const RegistrationError& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
  EXPECT_THROW(reg.register_styled_dataset(dir / "fam", {}), RegistrationError);
  EXPECT_THROW(reg.register_domain("A", dir / "fam"), RegistrationError);
  EXPECT_THROW(reg.at("nope"), RegistrationError);
}

TEST(Methods, ParseAndName) {
  for (const char* s : {"baseline", "baseline+hm", "baseline+clahe", "ssl", "ssl+hm", "ynet+hm", "styled-baseline"})
    EXPECT_EQ(MethodSpec::parse(s).name(), s);
  EXPECT_THROW(MethodSpec::parse("cyclegan"), ConfigError);
  EXPECT_THROW(MethodSpec::parse("baseline+blur"), ConfigError);
}

TEST(Stats, PopulationStd) {
  const auto s = mean_std({0.5, 0.7});
  EXPECT_DOUBLE_EQ(s.mean, 0.6);
  EXPECT_NEAR(s.std, 0.1, 1e-15);
  EXPECT_EQ(mean_std({0.3}).std, 0.0);
}

TEST(Grid, RunsAggregatesAndIsDeterministic) {
  TempDir dir;
  DatasetRegistry reg;
  auto cfg = tiny_config(reg, dir.path());
  std::size_t seen = 0;
  const auto a = run_grid(cfg, reg, dir / "run1", [&](const RunRecord&) { ++seen; });
  EXPECT_EQ(seen, 2u);
  ASSERT_EQ(a.runs.size(), 2u);
  for (const auto& r : a.runs) {
    EXPECT_TRUE(r.ok) << r.error;
    EXPECT_EQ(r.attempts, 1u);
  }
  EXPECT_EQ(a.runs[1].seed, cfg.seed_base + 1);
  ASSERT_EQ(a.table.cells.size(), 3u);
  for (auto c : kAllCriteria) {
    const auto& cell = a.table.at(c, "baseline", "A", "B");
    EXPECT_TRUE(cell.complete()) << to_string(c);
    EXPECT_EQ(cell.values.size(), 2u);
    const auto recomputed = mean_std(cell.values);
    EXPECT_DOUBLE_EQ(cell.stats.mean, recomputed.mean);
    EXPECT_DOUBLE_EQ(cell.stats.std, recomputed.std);
  }
  EXPECT_EQ(a.table.at(Criterion::last_epoch, "baseline", "A", "B").selected_epochs, (std::vector<std::size_t>{4, 4}));
  for (const char* f : {"registry.json", "table.csv", "table_wide.csv", "runs/baseline__A__B__r0.json",
                        "traces/baseline__A__B__r1.jsonl"})
    EXPECT_TRUE(fs::exists(dir / "run1" / f)) << f;

  const auto b = run_grid(cfg, reg, dir / "run2");
  for (auto c : kAllCriteria)
    EXPECT_EQ(a.table.at(c, "baseline", "A", "B").values, b.table.at(c, "baseline", "A", "B").values);

  const auto again = aggregate_runs(dir / "run1", cfg);
  EXPECT_EQ(again.to_csv(), a.table.to_csv());
}

TEST(Grid, SingleRepeatHasZeroSpread) {
  TempDir dir;
  DatasetRegistry reg;
  auto cfg = tiny_config(reg, dir.path());
  cfg.repeats = 1;
  cfg.criteria = {Criterion::last_epoch};
  const auto r = run_grid(cfg, reg, dir / "run");
  EXPECT_EQ(r.table.at(Criterion::last_epoch, "baseline", "A", "B").stats.std, 0.0);
}

TEST(Grid, FailedRunLeavesCellIncomplete) {
  TempDir dir;
  DatasetRegistry reg;
  auto cfg = tiny_config(reg, dir.path());
  // Stylized stacks with the wrong height cannot stand in for the target test set.
  write_styled(dir / "fam", {1, 2}, 64);
  reg.register_styled_dataset(dir / "fam", {1, 2});
  cfg.styled = {{"fam", "A", "B"}};
  cfg.methods = {MethodSpec::parse("baseline"), MethodSpec::parse("styled-baseline")};
  cfg.repeats = 1;
  const auto r = run_grid(cfg, reg, dir / "run");
  const auto& bad = r.table.at(Criterion::solidity, "styled-baseline", "A", "B");
  EXPECT_FALSE(bad.complete());
  EXPECT_TRUE(r.table.at(Criterion::solidity, "baseline", "A", "B").complete());
  const auto rec = std::find_if(r.runs.begin(), r.runs.end(), [](const RunRecord& x) { return !x.ok; });
  ASSERT_NE(rec, r.runs.end());
  EXPECT_EQ(rec->attempts, 2u);
  EXPECT_FALSE(rec->error.empty());
  std::ifstream is(dir / "run" / "runs" / (rec->run_id + ".json"));
  EXPECT_EQ(nlohmann::json::parse(is).at("status"), "failed");
  std::ifstream wide(dir / "run" / "table_wide.csv");
  const std::string text((std::istreambuf_iterator<char>(wide)), {});
  EXPECT_NE(text.find("styled-baseline,"), std::string::npos);
}

TEST(Grid, StyledBaselineTracesStylizationEpochs) {
  TempDir dir;
  DatasetRegistry reg;
  auto cfg = tiny_config(reg, dir.path());
  write_styled(dir / "fam", {1, 5, 9});
  reg.register_styled_dataset(dir / "fam", {1, 5, 9});
  cfg.styled = {{"fam", "A", "B"}};
  cfg.methods = {MethodSpec::parse("styled-baseline")};
  cfg.repeats = 1;
  const auto r = run_grid(cfg, reg, dir / "run");
  ASSERT_TRUE(r.runs[0].ok) << r.runs[0].error;
  EXPECT_EQ(r.table.at(Criterion::last_epoch, "styled-baseline", "A", "B").selected_epochs,
            std::vector<std::size_t>{9});
  EXPECT_TRUE(r.table.at(Criterion::source_val, "styled-baseline", "A", "B").values.empty());
}

TEST(Export, EnvelopeAndObjectiveLine) {
  TempDir dir;
  DatasetRegistry reg;
  auto cfg = tiny_config(reg, dir.path());
  const auto grid = run_grid(cfg, reg, dir / "run");
  const auto groups = export_traces(dir / "run");
  ASSERT_EQ(groups.size(), 1u);
  const auto& g = groups[0];
  EXPECT_EQ(g.repeats, 2u);
  EXPECT_EQ(g.objective_solidity, grid.runs[0].objective_solidity);
  EXPECT_TRUE(fs::exists(g.png));
  ASSERT_EQ(g.epochs.size(), 4u);

  std::vector<std::vector<TraceEntry>> traces;
  for (const auto& run : grid.runs) {
    std::ifstream is(dir / "run" / "traces" / (run.run_id + ".jsonl"));
    traces.emplace_back();
    for (std::string line; std::getline(is, line);) traces.back().push_back(trace_entry_from_json(nlohmann::json::parse(line)));
  }
  for (std::size_t e = 0; e < 4; ++e) {
    std::vector<double> iou;
    for (const auto& t : traces) iou.push_back(*t[e].target_iou);
    EXPECT_DOUBLE_EQ(g.epochs[e].iou.mean, mean_std(iou).mean);
    EXPECT_DOUBLE_EQ(g.epochs[e].iou.std, mean_std(iou).std);
  }
  std::ifstream csv(g.csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,n_solidity,solidity_mean,solidity_std,n_iou,iou_mean,iou_std,objective_solidity");
}

TEST(GridFile, Parses) {
  TempDir dir;
  write_domain(dir / "A", 1);
  write_domain(dir / "B", 2);
  write_styled(dir / "fam", {1, 2});
  {
    std::ofstream os(dir / "plan.toml");
    os << "[[phase]]\nname = \"sup\"\nepochs = 2\nlr_policy = { kind = \"one_cycle\", max_lr = 1e-3 }\n"
          "[network]\ndepth = 3\nbase_filters = 4\n";
  }
  {
    std::ofstream os(dir / "grid.toml");
    os << R"(methods = ["baseline", "baseline+hm", "styled-baseline"]
criteria = ["solidity", "last_epoch"]
repeats = 3
seed_base = 40
parallelism = 2

[[dataset]]
id = "A"
root = "A"

[[dataset]]
id = "B"
root = "B"

[[styled]]
root = "fam"
epochs = [1, 2]
source = "A"
target = "B"

[[pair]]
source = "A"
target = "B"

[plans]
baseline = "plan.toml"

[histogram_matching]
baseline_direction = "s2t"

[[reference]]
method = "baseline+hm"
source = "A"
target = "B"
criterion = "source_val"
mean = 0.5
std = 0.1
note = "external"
)";
  }
  const auto g = load_grid(dir / "grid.toml");
  EXPECT_EQ(g.config.methods.size(), 3u);
  EXPECT_EQ(g.config.criteria, (std::vector<Criterion>{Criterion::solidity, Criterion::last_epoch}));
  EXPECT_EQ(g.config.repeats, 3u);
  EXPECT_EQ(g.config.seed_base, 40u);
  EXPECT_EQ(g.config.parallelism, 2u);
  EXPECT_EQ(g.config.baseline_plan.phases[0].epochs, 2u);
  EXPECT_EQ(g.config.unet.depth, 3u);
  EXPECT_EQ(g.config.baseline_hm_direction, MatchDirection::source_to_target);
  EXPECT_EQ(g.config.styled_family("A", "B"), "fam");
  EXPECT_TRUE(g.registry.contains("fam@epoch_2"));
  ASSERT_EQ(g.config.references.size(), 1u);
  EXPECT_EQ(g.config.references[0].mean, 0.5);

  std::ofstream(dir / "bad.toml") << "methods = [\"baseline\"]\n[[pair]]\nsource = \"A\"\ntarget = \"Z\"\n";
  EXPECT_THROW(load_grid(dir / "bad.toml"), RegistrationError);
  std::ofstream(dir / "bad2.toml") << "methods = [\"nope\"]\n";
  EXPECT_THROW(load_grid(dir / "bad2.toml"), ConfigError);
}

#ifdef MITODA_SOURCE_DIR
TEST(ShippedConfigs, PlansAndGridsLoad) {
  const fs::path configs = fs::path(MITODA_SOURCE_DIR) / "configs";
  for (const char* name : {"baseline.toml", "ssl.toml", "ynet.toml", "desk/baseline.toml", "desk/ssl.toml",
                           "desk/ynet.toml"})
    EXPECT_NO_THROW(load_plan(configs / name)) << name;
  EXPECT_EQ(load_plan(configs / "ynet.toml").plan.phases.size(), 3u);

  TempDir tmp;
  fs::copy(configs, tmp.path() / "configs", fs::copy_options::recursive);
  write_domain(tmp.path() / "desk_data" / "A", 1);
  write_domain(tmp.path() / "desk_data" / "B", 2);
  const auto desk = load_grid(tmp.path() / "configs" / "desk" / "grid.toml");
  EXPECT_EQ(desk.config.methods.size(), 4u);
  EXPECT_EQ(desk.config.ynet.variant, Variant::attention_ynet);

  write_domain(tmp.path() / "data" / "lucchi_pp", 3);
  write_domain(tmp.path() / "data" / "kasthuri_pp", 4);
  const auto full = load_grid(tmp.path() / "configs" / "grid.toml");
  ASSERT_EQ(full.config.references.size(), 2u);
  EXPECT_DOUBLE_EQ(full.config.references[0].mean, 0.679);
  EXPECT_EQ(full.config.repeats, 10u);
}
#endif
