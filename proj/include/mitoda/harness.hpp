#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "mitoda/dataio.hpp"
#include "mitoda/error.hpp"
#include "mitoda/morpho.hpp"
#include "mitoda/nets.hpp"
#include "mitoda/objectives.hpp"
#include "mitoda/plot.hpp"
#include "mitoda/preprocess.hpp"
#include "mitoda/train.hpp"

namespace mitoda {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset registry

/// A domain root holds `train/` (labeled for sources) and `test/` datasets.
/// A styled entry is one stylization epoch of an externally translated stack.
struct RegisteredDataset {
  std::string id;
  fs::path root;
  std::string kind = "domain";
  std::string family;
  std::optional<std::size_t> stylization_epoch;

  friend bool operator==(const RegisteredDataset&, const RegisteredDataset&) = default;
};

inline std::string styled_dir_name(std::size_t epoch) { return "epoch_" + std::to_string(epoch); }

class DatasetRegistry {
 public:
  const std::string& register_domain(const std::string& id, const fs::path& root) {
    if (id.empty() || id.find_first_of("/\\@ ") != std::string::npos)
      throw RegistrationError("invalid dataset id '" + id + "'");
    for (const char* part : {"train", "test"})
      if (!fs::is_directory(root / part)) throw RegistrationError(root.string() + " has no " + part + "/ dataset");
    return insert({id, fs::weakly_canonical(root), "domain", "", std::nullopt}).id;
  }

  /// Registers `<styled_root>/epoch_<N>` for every requested N. Registering
  /// the same root again yields the same ids.
  std::vector<std::string> register_styled_dataset(const fs::path& styled_root, const std::vector<std::size_t>& epochs,
                                                   std::string family = {}) {
    if (epochs.empty()) throw RegistrationError("no stylization epochs given for " + styled_root.string());
    const fs::path root = fs::weakly_canonical(styled_root);
    if (family.empty()) family = root.filename().string();
    std::vector<std::string> missing;
    for (auto e : epochs)
      if (!fs::is_directory(root / styled_dir_name(e) / DatasetLayout{}.image_dir))
        missing.push_back(std::to_string(e));
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw RegistrationError("stylized stacks missing in " + root.string() + " for epochs " + list);
    }
    std::vector<std::size_t> sorted = epochs;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::string> ids;
    for (auto e : sorted)
      ids.push_back(insert({family + "@" + styled_dir_name(e), root / styled_dir_name(e), "styled", family, e}).id);
    return ids;
  }

  bool contains(const std::string& id) const { return entries_.count(id) != 0; }

  const RegisteredDataset& at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw RegistrationError("dataset '" + id + "' is not registered");
    return it->second;
  }

  /// Styled members of a family ordered by stylization epoch.
  std::vector<RegisteredDataset> family(const std::string& name) const {
    std::vector<RegisteredDataset> out;
    for (const auto& [id, d] : entries_)
      if (d.kind == "styled" && d.family == name) out.push_back(d);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.stylization_epoch < b.stylization_epoch; });
    if (out.empty()) throw RegistrationError("no styled family '" + name + "'");
    return out;
  }

  const std::map<std::string, RegisteredDataset>& entries() const noexcept { return entries_; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [id, d] : entries_) {
      nlohmann::json j{{"id", id}, {"root", d.root.string()}, {"kind", d.kind}};
      if (d.kind == "domain") j["manifests"] = {(d.root / "train" / DatasetLayout{}.manifest).string(),
                                                (d.root / "test" / DatasetLayout{}.manifest).string()};
      else j["manifest"] = (d.root / DatasetLayout{}.manifest).string();
      if (!d.family.empty()) j["family"] = d.family;
      if (d.stylization_epoch) j["stylization_epoch"] = *d.stylization_epoch;
      arr.push_back(j);
    }
    return {{"datasets", arr}};
  }

  friend bool operator==(const DatasetRegistry&, const DatasetRegistry&) = default;

 private:
  const RegisteredDataset& insert(RegisteredDataset d) {
    auto [it, inserted] = entries_.emplace(d.id, d);
    if (!inserted && !(it->second == d))
      throw RegistrationError("dataset id '" + d.id + "' already registered with a different root");
    return it->second;
  }

  std::map<std::string, RegisteredDataset> entries_;
};

// ---------------------------------------------------------------------------
// Experiment configuration

enum class BaseMethod : std::uint8_t { baseline, ssl, ynet, styled_baseline };
enum class Preprocessing : std::uint8_t { none, hm, clahe };

struct MethodSpec {
  BaseMethod base = BaseMethod::baseline;
  Preprocessing pre = Preprocessing::none;

  std::string name() const {
    std::string n;
    switch (base) {
      case BaseMethod::baseline: n = "baseline"; break;
      case BaseMethod::ssl: n = "ssl"; break;
      case BaseMethod::ynet: n = "ynet"; break;
      case BaseMethod::styled_baseline: return "styled-baseline";
    }
    if (pre == Preprocessing::hm) n += "+hm";
    if (pre == Preprocessing::clahe) n += "+clahe";
    return n;
  }

  static MethodSpec parse(const std::string& s) {
    if (s == "styled-baseline") return {BaseMethod::styled_baseline, Preprocessing::none};
    const auto plus = s.find('+');
    const std::string base = s.substr(0, plus), suffix = plus == std::string::npos ? "" : s.substr(plus + 1);
    MethodSpec m;
    if (base == "baseline") m.base = BaseMethod::baseline;
    else if (base == "ssl") m.base = BaseMethod::ssl;
    else if (base == "ynet") m.base = BaseMethod::ynet;
    else throw ConfigError("unknown method '" + s + "'");
    if (suffix == "hm") m.pre = Preprocessing::hm;
    else if (suffix == "clahe") m.pre = Preprocessing::clahe;
    else if (!suffix.empty()) throw ConfigError("unknown method variant '" + s + "'");
    return m;
  }

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

/// Binds a registered styled family to the (source, target) pair whose target
/// it translates.
struct StyledBinding {
  std::string family;
  std::string source;
  std::string target;
};

/// Published reference value carried through to the results. Never asserted.
struct ReferenceValue {
  std::string method, source, target, criterion;
  double mean = 0, std = 0;
  std::string note;
};

struct ExperimentConfig {
  std::vector<MethodSpec> methods;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::size_t repeats = 10;
  std::vector<Criterion> criteria{kAllCriteria.begin(), kAllCriteria.end()};
  std::uint64_t seed_base = 0;
  /// Runs executed concurrently.
  std::size_t parallelism = 1;

  NetworkSpec unet{};
  NetworkSpec ynet{.variant = Variant::attention_ynet};
  TrainPlan baseline_plan = default_baseline_plan();
  TrainPlan ssl_plan = default_ssl_plan();
  TrainPlan ynet_plan = default_ynet_plan();
  ClaheConfig clahe;
  HistogramMatchSettings hm;
  /// Direction for baseline+hm; the SSL and Y-Net variants match source to target inside the plan.
  MatchDirection baseline_hm_direction = MatchDirection::target_to_source;
  std::vector<StyledBinding> styled;
  std::vector<ReferenceValue> references;

  void validate(const DatasetRegistry& registry) const {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (methods.empty()) throw ConfigError("no methods configured");
    if (pairs.empty()) throw ConfigError("no dataset pairs configured");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    for (const auto& [s, t] : pairs) {
      for (const auto* id : {&s, &t})
        if (registry.at(*id).kind != "domain") throw ConfigError("pair member '" + *id + "' is not a domain dataset");
    }
    for (const auto& m : methods)
      if (m.base == BaseMethod::styled_baseline)
        for (const auto& [s, t] : pairs)
          if (!styled_family(s, t)) throw ConfigError("no styled family bound to " + s + " -> " + t);
    for (const auto& b : styled) registry.family(b.family);
  }

  std::optional<std::string> styled_family(const std::string& source, const std::string& target) const {
    for (const auto& b : styled)
      if (b.source == source && b.target == target) return b.family;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::string> toml_strings(const toml::node_view<const toml::node>& v, const char* what) {
  std::vector<std::string> out;
  if (!v) return out;
  const auto* arr = v.as_array();
  if (!arr) throw ConfigError(std::string(what) + " must be an array");
  for (const auto& e : *arr) {
    auto s = e.value<std::string>();
    if (!s) throw ConfigError(std::string(what) + " entries must be strings");
    out.push_back(*s);
  }
  return out;
}

}  // namespace detail

/// Grid file plus the registry it declares. Relative paths resolve against
/// the grid file's directory.
struct GridFile {
  ExperimentConfig config;
  DatasetRegistry registry;
};

inline GridFile load_grid(const fs::path& path) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + std::string(e.description()));
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  GridFile g;
  auto& cfg = g.config;
  const toml::table& r = root;

  for (const auto& m : detail::toml_strings(r["methods"], "methods")) cfg.methods.push_back(MethodSpec::parse(m));
  if (r.contains("criteria")) {
    cfg.criteria.clear();
    for (const auto& c : detail::toml_strings(r["criteria"], "criteria")) {
      try {
        cfg.criteria.push_back(parse_criterion(c));
      } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  const auto repeats = detail::toml_get<std::int64_t>(r, "repeats", 10);
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  cfg.repeats = static_cast<std::size_t>(repeats);
  cfg.seed_base = static_cast<std::uint64_t>(detail::toml_get<std::int64_t>(r, "seed_base", 0));
  cfg.parallelism = static_cast<std::size_t>(std::max<std::int64_t>(1, detail::toml_get<std::int64_t>(r, "parallelism", 1)));

  if (const auto* arr = r["dataset"].as_array())
    for (const auto& n : *arr) {
      const auto* t = n.as_table();
      if (!t) throw ConfigError("[[dataset]] entries must be tables");
      g.registry.register_domain(detail::toml_get<std::string>(*t, "id", ""),
                                 resolve(detail::toml_get<std::string>(*t, "root", "")));
    }
  if (const auto* arr = r["styled"].as_array())
    for (const auto& n : *arr) {
      const auto* t = n.as_table();
      if (!t) throw ConfigError("[[styled]] entries must be tables");
      std::vector<std::size_t> epochs;
      if (const auto* ep = (*t)["epochs"].as_array())
        for (const auto& e : *ep) epochs.push_back(static_cast<std::size_t>(e.value<std::int64_t>().value_or(0)));
      const auto ids = g.registry.register_styled_dataset(resolve(detail::toml_get<std::string>(*t, "root", "")),
                                                          epochs, detail::toml_get<std::string>(*t, "family", ""));
      cfg.styled.push_back({g.registry.at(ids.front()).family, detail::toml_get<std::string>(*t, "source", ""),
                            detail::toml_get<std::string>(*t, "target", "")});
    }
  if (const auto* arr = r["pair"].as_array())
    for (const auto& n : *arr) {
      const auto* t = n.as_table();
      if (!t) throw ConfigError("[[pair]] entries must be tables");
      cfg.pairs.emplace_back(detail::toml_get<std::string>(*t, "source", ""),
                             detail::toml_get<std::string>(*t, "target", ""));
    }

  auto plan_from = [&](const char* key, TrainPlan& plan, std::optional<NetworkSpec>* spec) {
    if (const auto p = r["plans"][key].value<std::string>()) {
      auto f = load_plan(resolve(*p));
      plan = std::move(f.plan);
      if (spec && f.network) *spec = f.network;
    }
  };
  std::optional<NetworkSpec> unet, ynet;
  plan_from("baseline", cfg.baseline_plan, &unet);
  plan_from("ssl", cfg.ssl_plan, nullptr);
  plan_from("ynet", cfg.ynet_plan, &ynet);
  if (const auto* t = r["network"]["unet"].as_table()) unet = network_spec_from_json(detail::toml_to_json(*t));
  if (const auto* t = r["network"]["ynet"].as_table()) ynet = network_spec_from_json(detail::toml_to_json(*t));
  if (unet) cfg.unet = *unet;
  if (ynet) cfg.ynet = *ynet;
  cfg.unet.variant = Variant::attention_unet;
  cfg.ynet.variant = Variant::attention_ynet;

  if (const auto* t = r["clahe"].as_table()) {
    cfg.clahe.clip_limit = detail::toml_get<double>(*t, "clip_limit", cfg.clahe.clip_limit);
    cfg.clahe.tile_grid = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "tile_grid", 8));
  }
  if (const auto* t = r["histogram_matching"].as_table()) {
    cfg.hm.correct_zeros = detail::toml_get<bool>(*t, "correct_zeros", true);
    cfg.hm.window = static_cast<std::size_t>(detail::toml_get<std::int64_t>(*t, "window", 10));
    cfg.baseline_hm_direction = parse_direction(detail::toml_get<std::string>(*t, "baseline_direction", "t2s"));
  }
  if (const auto* arr = r["reference"].as_array())
    for (const auto& n : *arr) {
      const auto* t = n.as_table();
      if (!t) continue;
      cfg.references.push_back({detail::toml_get<std::string>(*t, "method", ""),
                                detail::toml_get<std::string>(*t, "source", ""),
                                detail::toml_get<std::string>(*t, "target", ""),
                                detail::toml_get<std::string>(*t, "criterion", ""),
                                detail::toml_get<double>(*t, "mean", 0.0), detail::toml_get<double>(*t, "std", 0.0),
                                detail::toml_get<std::string>(*t, "note", "")});
    }
  cfg.validate(g.registry);
  return g;
}

// ---------------------------------------------------------------------------
// Results

/// Population statistics (divide by n), so a single repeat has zero spread.
struct MeanStd {
  double mean = 0, std = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

struct Selection {
  std::size_t epoch = 0;
  std::optional<double> iou_f;
  std::optional<double> solidity;
};

struct RunRecord {
  std::string run_id, method, source, target;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::size_t attempts = 0;
  std::string error;
  std::optional<double> objective_solidity;
  std::map<Criterion, Selection> selections;
};

inline std::string run_id(const std::string& method, const std::string& source, const std::string& target,
                          std::size_t repeat) {
  return method + "__" + source + "__" + target + "__r" + std::to_string(repeat);
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json sel = nlohmann::json::object();
  for (const auto& [c, s] : r.selections)
    sel[to_string(c)] = {{"epoch", s.epoch}, {"iou_f", detail::opt(s.iou_f)}, {"solidity", detail::opt(s.solidity)}};
  nlohmann::json j{{"run_id", r.run_id},   {"method", r.method},   {"source", r.source},
                   {"target", r.target},   {"repeat", r.repeat},   {"seed", r.seed},
                   {"status", r.ok ? "ok" : "failed"},             {"attempts", r.attempts},
                   {"objective_solidity", detail::opt(r.objective_solidity)}, {"selections", sel}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.source = j.at("source").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.repeat = j.at("repeat").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  r.attempts = j.value("attempts", std::size_t{1});
  r.error = j.value("error", std::string{});
  r.objective_solidity = detail::opt_from(j, "objective_solidity");
  for (const auto& [k, v] : j.at("selections").items())
    r.selections[parse_criterion(k)] = {v.at("epoch").get<std::size_t>(), detail::opt_from(v, "iou_f"),
                                        detail::opt_from(v, "solidity")};
  return r;
}

struct ResultCell {
  Criterion criterion = Criterion::solidity;
  std::string method, source, target;
  std::vector<double> values;
  std::vector<std::size_t> selected_epochs;
  MeanStd stats;
  std::size_t expected = 0;
  /// Every expected run finished and contributed a value.
  bool complete() const noexcept { return values.size() == expected; }
};

struct ResultTable {
  std::vector<ResultCell> cells;

  const ResultCell& at(Criterion c, const std::string& method, const std::string& source,
                       const std::string& target) const {
    for (const auto& cell : cells)
      if (cell.criterion == c && cell.method == method && cell.source == source && cell.target == target) return cell;
    throw ArgumentError("no result cell for " + method + " " + source + "->" + target);
  }

  /// Long format, one row per (criterion, method, source, target).
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "criterion,method,source,target,iou_mean,iou_std,n,repeats,complete,selected_epochs\n";
    for (const auto& c : cells) {
      os << to_string(c.criterion) << ',' << c.method << ',' << c.source << ',' << c.target << ',';
      if (!c.values.empty()) os << c.stats.mean << ',' << c.stats.std;
      else os << ',';
      os << ',' << c.values.size() << ',' << c.expected << ',' << (c.complete() ? "yes" : "no") << ',';
      for (std::size_t i = 0; i < c.selected_epochs.size(); ++i) os << (i ? ";" : "") << c.selected_epochs[i];
      os << '\n';
    }
    return os.str();
  }

  /// Criterion/method rows and one "mean±std" column per pair.
  std::string to_wide_csv() const {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::pair<Criterion, std::string>> rows;
    for (const auto& c : cells) {
      if (std::find(pairs.begin(), pairs.end(), std::pair{c.source, c.target}) == pairs.end())
        pairs.emplace_back(c.source, c.target);
      if (std::find(rows.begin(), rows.end(), std::pair{c.criterion, c.method}) == rows.end())
        rows.emplace_back(c.criterion, c.method);
    }
    std::ostringstream os;
    os << "criterion,method";
    for (const auto& [s, t] : pairs) os << ',' << s << "->" << t;
    os << '\n';
    for (const auto& [crit, method] : rows) {
      os << to_string(crit) << ',' << method;
      for (const auto& [s, t] : pairs) {
        os << ',';
        for (const auto& c : cells)
          if (c.criterion == crit && c.method == method && c.source == s && c.target == t && !c.values.empty()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.3f±%.3f%s", c.stats.mean, c.stats.std, c.complete() ? "" : "*");
            os << buf;
          }
      }
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::vector<RunRecord> read_runs(const fs::path& run_dir) {
  std::vector<RunRecord> runs;
  const fs::path dir = run_dir / "runs";
  if (!fs::is_directory(dir)) return runs;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream is(f);
    runs.push_back(run_record_from_json(nlohmann::json::parse(is)));
  }
  return runs;
}

}  // namespace detail

/// Builds the table from the per-run JSON files in `run_dir/runs`.
inline ResultTable aggregate_runs(const fs::path& run_dir, const ExperimentConfig& cfg) {
  const auto runs = detail::read_runs(run_dir);
  ResultTable table;
  for (auto crit : cfg.criteria)
    for (const auto& m : cfg.methods)
      for (const auto& [s, t] : cfg.pairs) {
        ResultCell cell{crit, m.name(), s, t, {}, {}, {}, cfg.repeats};
        for (std::size_t i = 0; i < cfg.repeats; ++i) {
          const auto id = run_id(cell.method, s, t, i);
          auto it = std::find_if(runs.begin(), runs.end(), [&](const RunRecord& r) { return r.run_id == id; });
          if (it == runs.end() || !it->ok) continue;
          auto sel = it->selections.find(crit);
          if (sel == it->selections.end() || !sel->second.iou_f) continue;
          cell.values.push_back(*sel->second.iou_f);
          cell.selected_epochs.push_back(sel->second.epoch);
        }
        cell.stats = mean_std(cell.values);
        table.cells.push_back(std::move(cell));
      }
  return table;
}

// ---------------------------------------------------------------------------
// Grid execution

struct DomainData {
  AnnotatedDataset train;
  AnnotatedDataset test;
};

inline DomainData load_domain(const fs::path& root) {
  return {load_dataset(root / "train"), load_dataset(root / "test")};
}

namespace detail {

struct PreparedPair {
  AnnotatedDataset source;
  TargetDomain target;
};

inline ImageStack clahe_stack(const ImageStack& s, const ClaheConfig& c) { return clahe(s, c); }

inline PreparedPair prepare_pair(const DomainData& src, const DomainData& tgt, const MethodSpec& m,
                                 const ExperimentConfig& cfg) {
  PreparedPair p{src.train, {tgt.train.images, tgt.test.images, tgt.test.labels}};
  if (m.pre == Preprocessing::clahe) {
    p.source.images = clahe_stack(p.source.images, cfg.clahe);
    p.target.train = clahe_stack(p.target.train, cfg.clahe);
    p.target.test = clahe_stack(p.target.test, cfg.clahe);
  } else if (m.pre == Preprocessing::hm && m.base == BaseMethod::baseline) {
    if (cfg.baseline_hm_direction == MatchDirection::target_to_source) {
      const auto hist = mean_target_histogram(p.source.images, cfg.hm.correct_zeros, cfg.hm.window);
      p.target.train = histogram_match(p.target.train, hist, cfg.hm.correct_zeros);
      p.target.test = histogram_match(p.target.test, hist, cfg.hm.correct_zeros);
    } else {
      const auto hist = mean_target_histogram(p.target.train, cfg.hm.correct_zeros, cfg.hm.window);
      p.source.images = histogram_match(p.source.images, hist, cfg.hm.correct_zeros);
    }
  }
  return p;
}

/// SSL/Y-Net plans carry their own histogram-matching flags; plain and CLAHE
/// variants switch them off.
inline TrainPlan plan_for(const MethodSpec& m, const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainPlan plan = m.base == BaseMethod::ssl    ? cfg.ssl_plan
                   : m.base == BaseMethod::ynet ? cfg.ynet_plan
                                                : cfg.baseline_plan;
  if (m.base == BaseMethod::ssl || m.base == BaseMethod::ynet) {
    if (m.pre != Preprocessing::hm)
      for (auto& ph : plan.phases) ph.histogram_match = false;
    plan.histogram_matching = cfg.hm;
  }
  plan.rng_seed = seed;
  plan.checkpoint_every = 0;
  return plan;
}

}  // namespace detail

struct GridResult {
  ResultTable table;
  std::vector<RunRecord> runs;
};

/// Runs one grid cell member and returns its trace. Styled runs train the
/// baseline once and trace its predictions over the stylization epochs.
inline SolidityTrace execute_run(const MethodSpec& m, const detail::PreparedPair& data, const ExperimentConfig& cfg,
                                 const DatasetRegistry& registry, const std::string& source_id,
                                 const std::string& target_id, std::uint64_t seed) {
  const TrainPlan plan = detail::plan_for(m, cfg, seed);
  switch (m.base) {
    case BaseMethod::baseline: return train_baseline(data.source, &data.target, cfg.unet, plan).trace;
    case BaseMethod::ssl: return train_ssl(data.source, data.target, cfg.unet, plan).trace;
    case BaseMethod::ynet: return train_ynet(data.source, data.target, cfg.ynet, plan).trace;
    case BaseMethod::styled_baseline: {
      auto r = train_baseline(data.source, nullptr, cfg.unet, plan);
      SolidityTrace trace;
      trace.objective_solidity = r.trace.objective_solidity;
      trace.min_object_px = r.trace.min_object_px;
      for (const auto& member : registry.family(*cfg.styled_family(source_id, target_id))) {
        const auto styled = load_dataset(member.root);
        if (styled.images.depth() != data.target.test.depth() ||
            styled.images.height() != data.target.test.height() || styled.images.width() != data.target.test.width())
          throw GeometryError("stylized stack " + member.id + " does not match the target test geometry");
        std::vector<Plane> preds;
        SolidityAccumulator acc(plan.min_object_px);
        for (const auto& slice : styled.images.slices) {
          preds.push_back(predict_plane(r.net, slice));
          acc.add(binarize(preds.back()));
        }
        TraceEntry e;
        e.epoch = *member.stylization_epoch;
        e.phase = "stylization";
        e.target_solidity = acc.mean();
        if (data.target.test_labels) e.target_iou = iou_f(preds, *data.target.test_labels).iou_f;
        trace.entries.push_back(e);
      }
      return trace;
    }
  }
  throw ConfigError("unhandled method");
}

inline std::map<Criterion, Selection> select_all(const SolidityTrace& trace, const std::vector<Criterion>& criteria) {
  std::map<Criterion, Selection> out;
  for (auto c : criteria) {
    try {
      const auto epoch = select_by_criterion(trace, c);
      const auto& e = entry_at(trace, epoch);
      out[c] = {epoch, e.target_iou, e.target_solidity};
    } catch (const SelectionError&) {
      // The trace cannot support this criterion; the cell stays empty.
    }
  }
  return out;
}

/// Executes repeats x methods x pairs, writing `runs/*.json`,
/// `traces/*.jsonl`, `table.csv`, `table_wide.csv` and `registry.json`.
inline GridResult run_grid(const ExperimentConfig& cfg, const DatasetRegistry& registry, const fs::path& out_dir,
                           std::function<void(const RunRecord&)> on_run = {}) {
  cfg.validate(registry);
  fs::create_directories(out_dir / "runs");
  fs::create_directories(out_dir / "traces");
  detail::write_atomic(out_dir / "registry.json", registry.to_json().dump(2) + "\n");
  if (!cfg.references.empty()) {
    nlohmann::json refs = nlohmann::json::array();
    for (const auto& r : cfg.references)
      refs.push_back({{"method", r.method}, {"source", r.source}, {"target", r.target}, {"criterion", r.criterion},
                      {"mean", r.mean}, {"std", r.std}, {"note", r.note}, {"asserted", false}});
    detail::write_atomic(out_dir / "reference.json", refs.dump(2) + "\n");
  }

  std::map<std::string, DomainData> domains;
  for (const auto& [s, t] : cfg.pairs)
    for (const auto* id : {&s, &t})
      if (!domains.count(*id)) domains.emplace(*id, load_domain(registry.at(*id).root));

  struct Job {
    std::size_t method, pair, repeat;
  };
  std::vector<Job> jobs;
  std::map<std::pair<std::size_t, std::size_t>, detail::PreparedPair> prepared;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
    for (std::size_t pi = 0; pi < cfg.pairs.size(); ++pi) {
      const auto& [s, t] = cfg.pairs[pi];
      prepared.emplace(std::pair{mi, pi}, detail::prepare_pair(domains.at(s), domains.at(t), cfg.methods[mi], cfg));
      for (std::size_t r = 0; r < cfg.repeats; ++r) jobs.push_back({mi, pi, r});
    }

  std::vector<RunRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[j];
      const auto& m = cfg.methods[job.method];
      const auto& [s, t] = cfg.pairs[job.pair];
      RunRecord rec;
      rec.method = m.name();
      rec.source = s;
      rec.target = t;
      rec.repeat = job.repeat;
      rec.seed = cfg.seed_base + job.repeat;
      rec.run_id = run_id(rec.method, s, t, job.repeat);
      // A failed run is retried once before it is flagged.
      for (rec.attempts = 1; rec.attempts <= 2; ++rec.attempts) {
        try {
          const auto trace =
              execute_run(m, prepared.at({job.method, job.pair}), cfg, registry, s, t, rec.seed);
          std::string lines;
          for (const auto& e : trace.entries) lines += to_json(e).dump() + "\n";
          detail::write_atomic(out_dir / "traces" / (rec.run_id + ".jsonl"), lines);
          rec.objective_solidity = trace.objective_solidity;
          rec.selections = select_all(trace, cfg.criteria);
          rec.ok = true;
          rec.error.clear();
          break;
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
      }
      rec.attempts = std::min<std::size_t>(rec.attempts, 2);
      detail::write_atomic(out_dir / "runs" / (rec.run_id + ".json"), to_json(rec).dump(2) + "\n");
      records[j] = rec;
      if (on_run) {
        std::lock_guard lock(report);
        on_run(rec);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < std::min(cfg.parallelism, jobs.size()); ++i) pool.emplace_back(worker);
    worker();
  }

  GridResult result{aggregate_runs(out_dir, cfg), std::move(records)};
  detail::write_atomic(out_dir / "table.csv", result.table.to_csv());
  detail::write_atomic(out_dir / "table_wide.csv", result.table.to_wide_csv());
  return result;
}

// ---------------------------------------------------------------------------
// Trace export

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t n_solidity = 0, n_iou = 0;
  MeanStd solidity, iou;
};

struct TraceGroup {
  std::string method, source, target;
  std::size_t repeats = 0;
  std::optional<double> objective_solidity;
  std::vector<EpochStats> epochs;
  fs::path csv, png;
};

/// Per (method, source, target): solidity and IoU mean/std across repeats at
/// every epoch, as `plots/<group>.csv` and `plots/<group>.png` with the
/// source objective drawn dashed.
inline std::vector<TraceGroup> export_traces(const fs::path& run_dir) {
  const auto runs = detail::read_runs(run_dir);
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs)
    if (r.ok) groups[r.method + "__" + r.source + "__" + r.target].push_back(&r);

  fs::create_directories(run_dir / "plots");
  std::vector<TraceGroup> out;
  for (const auto& [key, members] : groups) {
    TraceGroup g{members.front()->method, members.front()->source, members.front()->target, members.size(),
                 members.front()->objective_solidity, {}, {}, {}};
    std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_epoch;
    for (const auto* r : members) {
      std::ifstream is(run_dir / "traces" / (r->run_id + ".jsonl"));
      for (std::string line; std::getline(is, line);) {
        if (line.empty()) continue;
        const auto e = trace_entry_from_json(nlohmann::json::parse(line));
        auto& slot = by_epoch[e.epoch];
        if (e.target_solidity) slot.first.push_back(*e.target_solidity);
        if (e.target_iou) slot.second.push_back(*e.target_iou);
      }
    }
    for (const auto& [epoch, v] : by_epoch) {
      if (v.first.empty() && v.second.empty()) continue;
      g.epochs.push_back({epoch, v.first.size(), v.second.size(), mean_std(v.first), mean_std(v.second)});
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "epoch,n_solidity,solidity_mean,solidity_std,n_iou,iou_mean,iou_std,objective_solidity\n";
    plot::Series sol{"S", plot::kBlue, {}, {}, {}}, iou{"IOU", plot::kOrange, {}, {}, {}};
    for (const auto& e : g.epochs) {
      csv << e.epoch << ',' << e.n_solidity << ',';
      if (e.n_solidity) csv << e.solidity.mean << ',' << e.solidity.std;
      else csv << ',';
      csv << ',' << e.n_iou << ',';
      if (e.n_iou) csv << e.iou.mean << ',' << e.iou.std;
      else csv << ',';
      csv << ',';
      if (g.objective_solidity) csv << *g.objective_solidity;
      csv << '\n';
      const auto x = static_cast<double>(e.epoch);
      if (e.n_solidity) {
        sol.x.push_back(x);
        sol.mean.push_back(e.solidity.mean);
        sol.spread.push_back(e.solidity.std);
      }
      if (e.n_iou) {
        iou.x.push_back(x);
        iou.mean.push_back(e.iou.mean);
        iou.spread.push_back(e.iou.std);
      }
    }
    g.csv = run_dir / "plots" / (key + ".csv");
    g.png = run_dir / "plots" / (key + ".png");
    detail::write_atomic(g.csv, csv.str());
    plot::Figure fig;
    if (!sol.x.empty()) fig.series.push_back(sol);
    if (!iou.x.empty()) fig.series.push_back(iou);
    fig.reference = g.objective_solidity;
    plot::render(fig, g.png);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace mitoda
