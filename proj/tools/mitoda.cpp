// Command-line front end: fixtures, preprocessing, training, model selection
// and experiment grids.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mitoda.hpp"

namespace fs = std::filesystem;
using namespace mitoda;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

/// A domain root (train/ + test/) or a single dataset directory used for both.
struct DomainArg {
  AnnotatedDataset train, test;
};

DomainArg load_domain_arg(const fs::path& p) {
  if (fs::is_directory(p / "train")) {
    auto d = load_domain(p);
    return {std::move(d.train), std::move(d.test)};
  }
  auto ds = load_dataset(p);
  return {ds, ds};
}

struct FixtureArgs {
  fs::path out;
  std::size_t slices = 4, height = 128, width = 128, blobs = 8;
  std::uint64_t seed = 1;
  FixtureStyle style;
  bool single = false;
};

void cmd_make_fixture(const FixtureArgs& a) {
  auto make = [&](std::uint64_t seed, Partition part) {
    auto ds = make_blob_fixture(a.slices, a.height, a.width, a.blobs, seed, a.style);
    ds.partition = part;
    ds.requires_labels = part == Partition::train;
    return ds;
  };
  if (a.single) {
    save_dataset(make(a.seed, Partition::train), a.out);
  } else {
    save_dataset(make(a.seed, Partition::train), a.out / "train");
    save_dataset(make(derive_seed(a.seed, {0x74657374ULL}), Partition::test), a.out / "test");
  }
  std::cout << "wrote fixture to " << a.out << "\n";
}

struct HmArgs {
  fs::path source, target, out;
  std::string direction = "s2t";
  bool zero_correct = false;
  std::size_t window = 10;
};

void cmd_hm(const HmArgs& a) {
  const auto dir = parse_direction(a.direction);
  auto src = load_dataset(a.source);
  auto tgt = load_dataset(a.target);
  // s2t rewrites the source towards the target mean; t2s the reverse.
  auto& moved = dir == MatchDirection::source_to_target ? src : tgt;
  const auto& reference = dir == MatchDirection::source_to_target ? tgt : src;
  const auto hist = mean_target_histogram(reference.images, a.zero_correct, a.window);
  moved.images = histogram_match(moved.images, hist, a.zero_correct);
  save_dataset(moved, a.out);
  nlohmann::json bins = nlohmann::json::array();
  for (double b : hist.bins) bins.push_back(b);
  write_json(a.out / "preprocess.json", {{"transform", "histogram_match"},
                                         {"direction", to_string(dir)},
                                         {"zero_correct", a.zero_correct},
                                         {"regression_window", a.window},
                                         {"source", fs::absolute(a.source).string()},
                                         {"target", fs::absolute(a.target).string()},
                                         {"reference_histogram", bins}});
  std::cout << "wrote " << a.out << "\n";
}

struct ClaheArgs {
  fs::path input, out;
  ClaheConfig cfg;
};

void cmd_clahe(const ClaheArgs& a) {
  auto ds = load_dataset(a.input);
  ds.images = clahe(ds.images, a.cfg);
  save_dataset(ds, a.out);
  write_json(a.out / "preprocess.json", {{"transform", "clahe"},
                                         {"clip_limit", a.cfg.clip_limit},
                                         {"tile_grid", a.cfg.tile_grid},
                                         {"input", fs::absolute(a.input).string()}});
  std::cout << "wrote " << a.out << "\n";
}

struct TrainArgs {
  std::string method;
  fs::path config, source, target, out;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
  PlanFile pf;
  if (!a.config.empty()) {
    pf = load_plan(a.config);
  } else {
    pf.plan = a.method == "ssl" ? default_ssl_plan() : a.method == "ynet" ? default_ynet_plan() : default_baseline_plan();
  }
  NetworkSpec spec = pf.network.value_or(NetworkSpec{});
  spec.variant = a.method == "ynet" ? Variant::attention_ynet : Variant::attention_unet;

  const auto src = load_domain_arg(a.source);
  std::optional<TargetDomain> target;
  if (!a.target.empty()) {
    auto t = load_domain_arg(a.target);
    target = TargetDomain{t.train.images, t.test.images, t.test.labels};
  }
  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.quiet)
    opts.on_epoch = [](const TraceEntry& e) { std::cout << to_json(e).dump() << std::endl; };

  if (a.method != "baseline" && !target) throw TrainingError("--target is required for " + a.method);
  const auto result = a.method == "baseline" ? train_baseline(src.train, target ? &*target : nullptr, spec, pf.plan, opts)
                      : a.method == "ssl"    ? train_ssl(src.train, *target, spec, pf.plan, opts)
                                             : train_ynet(src.train, *target, spec, pf.plan, opts);
  std::cout << "trained " << result.trace.entries.size() << " epochs; " << result.checkpoints.size()
            << " checkpoints in " << a.out << "\n";
}

struct SelectArgs {
  fs::path trace;
  std::string criterion = "solidity";
  std::optional<double> objective;
};

void cmd_select(const SelectArgs& a) {
  SolidityTrace trace;
  std::ifstream is(a.trace);
  if (!is) throw IoError("cannot open " + a.trace.string());
  if (a.trace.extension() == ".jsonl") {
    for (std::string line; std::getline(is, line);)
      if (!line.empty()) trace.entries.push_back(trace_entry_from_json(nlohmann::json::parse(line)));
    // A trace.json next to the lines carries the objective.
    const auto meta = a.trace.parent_path() / "trace.json";
    if (fs::exists(meta)) {
      std::ifstream ms(meta);
      trace.objective_solidity = solidity_trace_from_json(nlohmann::json::parse(ms)).objective_solidity;
    }
  } else {
    trace = solidity_trace_from_json(nlohmann::json::parse(is));
  }
  if (a.objective) trace.objective_solidity = a.objective;
  const auto epoch = select_by_criterion(trace, parse_criterion(a.criterion));
  auto j = to_json(entry_at(trace, epoch));
  j["criterion"] = a.criterion;
  if (trace.objective_solidity) j["objective_solidity"] = *trace.objective_solidity;
  std::cout << j.dump(2) << "\n";
}

void cmd_experiment_run(const fs::path& config, const fs::path& out) {
  const auto grid = load_grid(config);
  const auto result = run_grid(grid.config, grid.registry, out, [](const RunRecord& r) {
    std::cout << r.run_id << ": " << (r.ok ? "ok" : "failed: " + r.error) << std::endl;
  });
  export_traces(out);
  std::cout << result.table.to_wide_csv();
}

void cmd_experiment_export(const fs::path& run_dir) {
  for (const auto& g : export_traces(run_dir)) std::cout << g.csv.string() << "\n" << g.png.string() << "\n";
}

void cmd_register_styled(const fs::path& root, const std::vector<std::size_t>& epochs, const std::string& family,
                         const fs::path& registry_out) {
  DatasetRegistry reg;
  for (const auto& id : reg.register_styled_dataset(root, epochs, family)) std::cout << id << "\n";
  if (!registry_out.empty()) write_json(registry_out, reg.to_json());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain adaptation toolkit for mitochondria segmentation in EM stacks"};
  app.require_subcommand(1);

  FixtureArgs fx;
  auto* make = app.add_subcommand("make-fixture", "Write a synthetic blob dataset (train/ and test/)");
  make->add_option("--out", fx.out)->required();
  make->add_option("--slices", fx.slices);
  make->add_option("--height", fx.height);
  make->add_option("--width", fx.width);
  make->add_option("--blobs", fx.blobs);
  make->add_option("--seed", fx.seed);
  make->add_option("--gamma", fx.style.gamma);
  make->add_option("--gain", fx.style.gain);
  make->add_option("--offset", fx.style.offset);
  make->add_option("--texture-radius", fx.style.texture_radius);
  make->add_option("--texture-amplitude", fx.style.texture_amplitude);
  make->add_option("--padding", fx.style.padding, "Zero frame width");
  make->add_flag("--single", fx.single, "Write one dataset instead of a train/test domain");

  auto* pre = app.add_subcommand("preprocess", "Histogram matching or CLAHE");
  pre->require_subcommand(1);
  HmArgs hm;
  auto* hm_cmd = pre->add_subcommand("hm", "Match histograms between two datasets");
  hm_cmd->add_option("--source", hm.source)->required();
  hm_cmd->add_option("--target", hm.target)->required();
  hm_cmd->add_option("--direction", hm.direction)->check(CLI::IsMember({"s2t", "t2s"}));
  hm_cmd->add_flag("--zero-correct", hm.zero_correct, "Regress the zero bin from the first bins");
  hm_cmd->add_option("--window", hm.window, "Bins used for the zero regression");
  hm_cmd->add_option("--out", hm.out)->required();
  ClaheArgs cl;
  auto* cl_cmd = pre->add_subcommand("clahe", "Contrast limited adaptive equalisation");
  cl_cmd->add_option("--input", cl.input)->required();
  cl_cmd->add_option("--clip-limit", cl.cfg.clip_limit);
  cl_cmd->add_option("--tile-grid", cl.cfg.tile_grid);
  cl_cmd->add_option("--out", cl.out)->required();

  TrainArgs tr;
  std::vector<std::pair<std::string, CLI::App*>> train_cmds;
  for (const char* m : {"baseline", "ssl", "ynet"}) {
    auto* c = app.add_subcommand(std::string("train-") + m, std::string("Train the ") + m + " method");
    c->add_option("--config", tr.config, "Plan TOML; defaults to the built-in plan");
    c->add_option("--source", tr.source)->required();
    c->add_option("--target", tr.target);
    c->add_option("--out", tr.out)->required();
    c->add_flag("--quiet", tr.quiet);
    train_cmds.emplace_back(m, c);
  }

  SelectArgs sel;
  auto* sel_cmd = app.add_subcommand("select-model", "Pick an epoch from a trace");
  sel_cmd->add_option("--trace", sel.trace)->required();
  sel_cmd->add_option("--criterion", sel.criterion)->check(CLI::IsMember({"source_val", "last_epoch", "solidity"}));
  sel_cmd->add_option("--objective", sel.objective, "Override the objective solidity");

  auto* exp = app.add_subcommand("experiment", "Cross-dataset grids");
  exp->require_subcommand(1);
  fs::path grid_cfg, grid_out, export_dir, styled_root, registry_out;
  std::vector<std::size_t> styled_epochs;
  std::string styled_family;
  auto* run = exp->add_subcommand("run", "Run a grid");
  run->add_option("--config", grid_cfg)->required();
  run->add_option("--out", grid_out)->required();
  auto* exp_export = exp->add_subcommand("export", "Write trace CSVs and plots");
  exp_export->add_option("--run-dir", export_dir)->required();
  auto* styled = exp->add_subcommand("register-styled", "Validate a stylized dataset family");
  styled->add_option("--root", styled_root)->required();
  styled->add_option("--epochs", styled_epochs)->required();
  styled->add_option("--family", styled_family);
  styled->add_option("--registry-out", registry_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make) cmd_make_fixture(fx);
    if (*hm_cmd) cmd_hm(hm);
    if (*cl_cmd) cmd_clahe(cl);
    for (auto& [m, c] : train_cmds)
      if (*c) {
        tr.method = m;
        cmd_train(tr);
      }
    if (*sel_cmd) cmd_select(sel);
    if (*run) cmd_experiment_run(grid_cfg, grid_out);
    if (*exp_export) cmd_experiment_export(export_dir);
    if (*styled) cmd_register_styled(styled_root, styled_epochs, styled_family, registry_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
