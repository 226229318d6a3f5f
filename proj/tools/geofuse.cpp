// geofuse command-line driver: synth, split, train, eval, ablate, analyze.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "geofuse/checkpoint.hpp"
#include "geofuse/config.hpp"
#include "geofuse/hash.hpp"
#include "geofuse/pipeline.hpp"
#include "geofuse/synth.hpp"

namespace fs = std::filesystem;
using namespace geofuse;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text(const fs::path& p) { return detail::read_file(p.string()); }

Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(p.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void write_json(const fs::path& p, const Json& j) { detail::write_file(p.string(), j.dump(2) + "\n"); }

const char* kDataFiles[] = {"samples.jsonl", "images.gfeb", "texts.gfeb", "variables.json"};

/// Content hashes of every input file, keyed by a short label.
Json hash_inputs(const std::vector<std::pair<std::string, fs::path>>& files) {
  Json j = Json::object();
  for (const auto& [label, path] : files)
    if (fs::exists(path)) j[label] = git_blob_hash(read_text(path));
  return j;
}

std::vector<std::pair<std::string, fs::path>> data_inputs(const fs::path& data) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const char* f : kDataFiles) out.emplace_back(f, data / f);
  return out;
}

/// Run manifest kept at the root of every output directory. `key` holds
/// everything that determines the outputs; reruns with the same key and all
/// outputs present are skipped.
struct Manifest {
  std::string command;
  Json key;
  std::vector<std::string> outputs;
  Json timings = Json::object();

  std::string hash() const { return git_blob_hash(key.dump()); }

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["manifest_hash"] = hash();
    j["inputs"] = key;
    j["outputs"] = outputs;
    j["timings_s"] = timings;
    return j;
  }
};

bool up_to_date(const fs::path& dir, const Manifest& m) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) return false;
  try {
    const auto old = read_json(path);
    if (old.value("manifest_hash", std::string()) != m.hash()) return false;
    for (const auto& o : old.at("outputs"))
      if (!fs::exists(dir / o.get<std::string>())) return false;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void finish(const fs::path& dir, const Manifest& m) {
  for (const auto& o : m.outputs) require(fs::exists(dir / o), "output '" + o + "' was not written");
  write_json(dir / "manifest.json", m.to_json());
}

std::size_t worker_count(std::size_t requested, bool deterministic) {
  if (deterministic) return 1;
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GEOFUSE_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, n);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    require(!item.empty(), "empty entry in seed list '" + s + "'");
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    require(used == item.size(), "bad seed '" + item + "'");
    out.push_back(v);
  }
  require(!out.empty(), "seed list is empty");
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

SplitFractions parse_fractions(const std::string& s) {
  const auto parts = split_csv(s);
  require(parts.size() == 3, "--fractions needs three comma-separated values");
  return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
}

// ---------------------------------------------------------------------------
// Shared experiment flags

struct ExperimentFlags {
  std::string config_path;
  std::size_t k = 10, j = 4;
  std::string locenc = "polar";
  double mask = 0.3, lr = 1e-4, weight_decay = 0.01;
  std::size_t epochs = 100, batch = 256;
  std::string modality = "text+images";
  std::string selection = "topj";
  std::size_t loc_dim = 512, layers = 2, heads = 8, ff_dim = 0, token_dim = 0;
  bool per_modality_fusion = false;
  std::string pooling = "cls";
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> overrides;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON experiment config; explicit flags override it");
    bind(app->add_option("--k", k, "neighbours per location")->capture_default_str(), [this](auto& c) { c.k = k; });
    bind(app->add_option("--j", j, "sentences per location")->capture_default_str(), [this](auto& c) { c.j = j; });
    bind(app->add_option("--locenc", locenc, "none|rank|learnable|coordinates|distance|polar")->capture_default_str(),
         [this](auto& c) { c.locenc.kind = parse_locenc_kind(locenc); });
    bind(app->add_option("--mask", mask, "token masking probability")->capture_default_str(),
         [this](auto& c) { c.mask_prob = mask; });
    bind(app->add_option("--lr", lr)->capture_default_str(), [this](auto& c) { c.train.lr = lr; });
    bind(app->add_option("--weight-decay", weight_decay)->capture_default_str(),
         [this](auto& c) { c.train.weight_decay = weight_decay; });
    bind(app->add_option("--epochs", epochs)->capture_default_str(), [this](auto& c) { c.train.epochs = epochs; });
    bind(app->add_option("--batch", batch)->capture_default_str(), [this](auto& c) { c.train.batch_size = batch; });
    bind(app->add_option("--modality", modality, "text+images|images|text|text+1image")->capture_default_str(),
         [this](auto& c) { c.mode = parse_input_mode(modality); });
    bind(app->add_option("--selection", selection, "topj|random")->capture_default_str(),
         [this](auto& c) { c.selection = parse_text_selection(selection); });
    bind(app->add_option("--loc-dim", loc_dim)->capture_default_str(), [this](auto& c) { c.locenc.loc_dim = loc_dim; });
    bind(app->add_option("--layers", layers)->capture_default_str(), [this](auto& c) { c.fusion.num_layers = layers; });
    bind(app->add_option("--heads", heads)->capture_default_str(), [this](auto& c) { c.fusion.num_heads = heads; });
    bind(app->add_option("--ff-dim", ff_dim, "0 = 4x token dim"), [this](auto& c) { c.fusion.ff_dim = ff_dim; });
    bind(app->add_option("--token-dim", token_dim, "0 = feature dim"),
         [this](auto& c) { c.fusion.token_dim = token_dim; });
    bind(app->add_flag("--per-modality-fusion", per_modality_fusion),
         [this](auto& c) { c.locenc.shared_fusion = !per_modality_fusion; });
    bind(app->add_option("--pooling", pooling, "cls|mean")->capture_default_str(), [this](auto& c) {
      require(pooling == "cls" || pooling == "mean", "--pooling must be cls or mean");
      c.fusion.pooling = pooling == "cls" ? Pooling::cls : Pooling::mean;
    });
  }

  void bind(CLI::Option* opt, std::function<void(ExperimentConfig&)> apply) {
    overrides.emplace_back(opt, std::move(apply));
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_path.empty()) {
      c = experiment_from_json(read_json(config_path));
      for (const auto& [opt, apply] : overrides)
        if (opt->count() > 0) apply(c);
    } else {
      for (const auto& [opt, apply] : overrides) apply(c);
    }
    c.locenc.validate();
    return c;
  }
};

struct DataFlags {
  std::string data, split;
  void add(CLI::App* app) {
    app->add_option("--data", data, "dataset directory")->required();
    app->add_option("--split", split, "split.json")->required();
  }
  PreparedData load() const {
    auto bundle = load_bundle(data);
    auto assignment = split_from_json(read_json(split), bundle.samples);
    return prepare(std::move(bundle), std::move(assignment));
  }
  std::vector<std::pair<std::string, fs::path>> inputs() const {
    auto files = data_inputs(data);
    files.emplace_back("split.json", split);
    return files;
  }
};

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

/// Trains one seed and writes its artifacts into `dir`.
ExperimentResult train_one(const PreparedData& data, ExperimentConfig cfg, const fs::path& dir, bool verbose) {
  fs::create_directories(dir);
  TrainCallbacks cb;
  if (verbose)
    cb.on_epoch = [](const EpochMetrics& e) {
      std::cerr << "  epoch " << e.epoch << " loss " << e.train_loss << " val_r2 " << e.val_mean_r2 << "\n";
    };
  auto res = run_experiment(data, cfg, false, cb);
  detail::write_file((dir / "metrics.csv").string(), metrics_csv(res.training.history));
  save_checkpoint(res.best, (dir / "model.gfck").string());
  write_json(dir / "run_config.json", to_json(cfg));
  detail::write_file((dir / "test_variables.csv").string(), variables_csv(res.test_report, data.schema));
  detail::write_file((dir / "test_groups.csv").string(), groups_csv(res.test_report));
  return res;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const std::string& config, const fs::path& out) {
  const auto t0 = Clock::now();
  const auto text = read_text(config);
  Manifest m{"synth", Json{{"config", git_blob_hash(text)}}, {}};
  m.outputs = {"samples.jsonl", "images.gfeb", "texts.gfeb", "variables.json", "manifest.json"};
  if (up_to_date(out, m)) return 0;
  const auto cfg = synth_from_json(Json::parse(text));
  const auto ds = gen_dataset(cfg);
  write_dataset(ds, out);
  // The dataset manifest doubles as the run manifest.
  auto j = ds.manifest();
  j["command"] = "synth";
  j["manifest_hash"] = m.hash();
  j["inputs"] = m.key;
  j["outputs"] = m.outputs;
  j["timings_s"] = {{"total", seconds_since(t0)}};
  write_json(out / "manifest.json", j);
  std::cout << "wrote " << ds.samples.size() << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_split(const std::string& data, double block_size, const std::string& fractions, std::uint64_t seed,
              const fs::path& out) {
  const auto samples = load_samples((fs::path(data) / "samples.jsonl").string());
  SplitConfig cfg{block_size, parse_fractions(fractions), seed};
  const auto pts = locations(samples);
  const auto split = block_split(pts, cfg.block_size_m, cfg.fractions, cfg.seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, split_json(split, samples, cfg));
  std::size_t counts[3] = {0, 0, 0};
  for (auto s : split.assignment) ++counts[static_cast<int>(s)];
  std::cout << "blocks " << split.block_grid.size() << ", samples train " << counts[0] << " val " << counts[1]
            << " test " << counts[2] << "\n";
  return 0;
}

int cmd_train(const DataFlags& df, const ExperimentFlags& ef, const std::string& seeds, const fs::path& out,
              std::size_t threads, bool deterministic, bool verbose) {
  const auto t0 = Clock::now();
  auto cfg = ef.resolve();
  cfg.train.threads = worker_count(threads, deterministic);
  const auto seed_list = parse_seed_list(seeds);
  Manifest m{"train", Json::object(), {}};
  m.key["files"] = hash_inputs(df.inputs());
  m.key["config"] = to_json(cfg);
  m.key["seeds"] = seed_list;
  for (auto s : seed_list)
    for (const char* f : {"metrics.csv", "model.gfck", "run_config.json", "test_variables.csv", "test_groups.csv"})
      m.outputs.push_back(seed_dir(s) + "/" + f);
  m.outputs.push_back("summary.csv");
  if (up_to_date(out, m)) {
    std::cout << "up to date: " << out.string() << "\n";
    return 0;
  }
  const auto data = df.load();
  std::string summary = "seed,mean_test_r2,best_epoch,best_val_mean_r2\n";
  for (auto s : seed_list) {
    const auto ts = Clock::now();
    cfg.train.seed = s;
    const auto res = train_one(data, cfg, out / seed_dir(s), verbose);
    summary += std::to_string(s) + "," + fmt_double(res.test_report.mean_r2) + "," +
               std::to_string(res.training.best_epoch) + "," + fmt_double(res.training.best_val_mean_r2) + "\n";
    m.timings[seed_dir(s)] = seconds_since(ts);
    std::cout << "seed " << s << " mean test R2 " << fmt_double(res.test_report.mean_r2) << "\n";
  }
  detail::write_file((out / "summary.csv").string(), summary);
  m.timings["total"] = seconds_since(t0);
  finish(out, m);
  return 0;
}

int cmd_eval(const DataFlags& df, const std::string& model, const std::string& split_name, const fs::path& out,
             std::size_t threads) {
  const auto ck = load_checkpoint(model);
  require(!ck.run.is_null(), "checkpoint '" + model + "' carries no run settings");
  const auto cfg = experiment_from_json(ck.run);
  const auto data = df.load();
  require(data.schema.size() == ck.fusion.m, "checkpoint predicts " + std::to_string(ck.fusion.m) +
                                                 " variables but the data keeps " +
                                                 std::to_string(data.schema.size()));
  const auto fm = ck.make_model();
  const auto refs = experiment_refs(data, cfg);
  const auto set = build_set(data, refs, parse_split(split_name), cfg, fm.locenc());
  const auto rep = evaluate(fm, set, data.schema, threads);
  fs::create_directories(out);
  detail::write_file((out / "variables.csv").string(), variables_csv(rep, data.schema));
  detail::write_file((out / "groups.csv").string(), groups_csv(rep));
  Json j;
  j["split"] = split_name;
  j["n"] = rep.n_test;
  j["mean_r2"] = rep.mean_r2;
  j["warnings"] = rep.warnings;
  Manifest m{"eval", Json::object(), {"variables.csv", "groups.csv", "report.json"}};
  auto files = df.inputs();
  files.emplace_back("model.gfck", model);
  m.key["files"] = hash_inputs(files);
  m.key["split_name"] = split_name;
  write_json(out / "report.json", j);
  finish(out, m);
  std::cout << split_name << " mean R2 " << fmt_double(rep.mean_r2) << " over " << rep.n_test << " samples\n";
  return 0;
}

struct SweepCell {
  std::string name;
  std::string value;
  std::function<void(ExperimentConfig&)> apply;
};

std::vector<SweepCell> parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  require(eq != std::string::npos, "--sweep expects name=values, got '" + spec + "'");
  const std::string name = spec.substr(0, eq);
  const std::string values = spec.substr(eq + 1);
  std::vector<SweepCell> cells;
  if (name == "k") {
    for (const auto& v : split_csv(values)) {
      const auto k = static_cast<std::size_t>(std::stoul(v));
      cells.push_back({name, v, [k](ExperimentConfig& c) { c.k = k; }});
    }
  } else if (name == "locenc") {
    std::vector<std::string> kinds;
    if (values == "all")
      for (auto kind : kAllLocEncKinds) kinds.emplace_back(to_string(kind));
    else
      kinds = split_csv(values);
    for (const auto& v : kinds) {
      const auto kind = parse_locenc_kind(v);
      cells.push_back({name, v, [kind](ExperimentConfig& c) { c.locenc.kind = kind; }});
    }
  } else if (name == "text") {
    for (const auto& v : split_csv(values)) {
      const auto colon = v.find(':');
      require(colon != std::string::npos, "text sweep entries look like topj:4 or random:4, got '" + v + "'");
      const auto sel = parse_text_selection(v.substr(0, colon));
      const auto j = static_cast<std::size_t>(std::stoul(v.substr(colon + 1)));
      cells.push_back({name, v, [sel, j](ExperimentConfig& c) {
                         c.selection = sel;
                         c.j = j;
                       }});
    }
  } else if (name == "modality") {
    for (const auto& v : split_csv(values)) {
      const auto mode = parse_input_mode(v);
      cells.push_back({name, v, [mode](ExperimentConfig& c) { c.mode = mode; }});
    }
  } else {
    throw Error("unknown sweep '" + name + "' (expected k, locenc, text or modality)");
  }
  require(!cells.empty(), "sweep '" + spec + "' has no values");
  return cells;
}

int cmd_ablate(const DataFlags& df, const ExperimentFlags& ef, const std::string& sweep, const std::string& seeds,
               const fs::path& out, std::size_t threads, bool deterministic) {
  const auto t0 = Clock::now();
  const auto base = ef.resolve();
  const auto cells = parse_sweep(sweep);
  const auto seed_list = parse_seed_list(seeds);
  const Json files = hash_inputs(df.inputs());
  fs::create_directories(out / "cells");

  std::optional<PreparedData> data;
  std::string csv = "sweep,value,seed,mean_test_r2,best_epoch,best_val_mean_r2,cell_hash\n";
  Manifest m{"ablate", Json::object(), {"sweep.csv"}};
  m.key["files"] = files;
  m.key["base_config"] = to_json(base);
  m.key["sweep"] = sweep;
  m.key["seeds"] = seed_list;
  std::size_t skipped = 0;
  for (const auto& cell : cells) {
    for (auto s : seed_list) {
      ExperimentConfig cfg = base;
      cell.apply(cfg);
      cfg.train.seed = s;
      cfg.train.threads = worker_count(threads, deterministic);
      const std::string hash = git_blob_hash(Json{{"files", files}, {"config", to_json(cfg)}}.dump());
      const auto cell_path = out / "cells" / (hash + ".json");
      Json result;
      if (fs::exists(cell_path)) {
        result = read_json(cell_path);
        ++skipped;
      } else {
        if (!data) data = df.load();
        const auto res = run_experiment(*data, cfg);
        result = {{"sweep", cell.name},
                  {"value", cell.value},
                  {"seed", s},
                  {"mean_test_r2", res.test_report.mean_r2},
                  {"best_epoch", res.training.best_epoch},
                  {"best_val_mean_r2", res.training.best_val_mean_r2},
                  {"config", to_json(cfg)},
                  {"metrics_csv", metrics_csv(res.training.history)}};
        write_json(cell_path, result);
        std::cout << cell.name << "=" << cell.value << " seed " << s << " mean test R2 "
                  << fmt_double(res.test_report.mean_r2) << "\n";
      }
      csv += cell.name + "," + cell.value + "," + std::to_string(s) + "," +
             fmt_double(result.at("mean_test_r2").get<double>()) + "," +
             std::to_string(result.at("best_epoch").get<std::size_t>()) + "," +
             fmt_double(result.at("best_val_mean_r2").get<double>()) + "," + hash + "\n";
      m.outputs.push_back("cells/" + hash + ".json");
    }
  }
  detail::write_file((out / "sweep.csv").string(), csv);
  m.timings["total"] = seconds_since(t0);
  finish(out, m);
  if (skipped) std::cout << "reused " << skipped << " completed cells\n";
  return 0;
}

int cmd_analyze(const DataFlags& df, const std::string& what, const fs::path& out, std::size_t k_max, double lag_m,
                double max_m, const std::string& model, const std::string& split_name) {
  const auto data = df.load();
  fs::create_directories(out);
  Manifest m{"analyze", Json::object(), {}};
  auto files = df.inputs();
  if (!model.empty()) files.emplace_back("model.gfck", model);
  m.key["files"] = hash_inputs(files);
  m.key["what"] = what;
  if (what == "knn-stats") {
    const std::vector<double> pct = {5, 25, 50, 75, 95};
    std::vector<std::size_t> all(data.samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto rows = knn_distance_stats(data.index, all, k_max, pct, std::span<const Split>(data.assignment));
    detail::write_file((out / "knn_stats.csv").string(), knn_stats_csv(rows, pct));
    m.outputs.push_back("knn_stats.csv");
  } else if (what == "similarity") {
    std::string csv;
    for (auto mod : {Modality::visual, Modality::text}) {
      const auto emb = per_sample_embeddings(data, mod);
      const auto members = data.members(parse_split(split_name));
      const auto rows = similarity_vs_distance(data.index, members, data.assignment, emb, to_string(mod), lag_m,
                                               max_m);
      auto part = bins_csv(rows);
      if (!csv.empty()) part = part.substr(part.find('\n') + 1);
      csv += part;
      if (!rows.empty())
        std::cout << to_string(mod) << " effective range " << fmt_double(effective_range(rows)) << " m\n";
    }
    detail::write_file((out / "similarity.csv").string(), csv);
    m.outputs.push_back("similarity.csv");
  } else if (what == "attention") {
    require(!model.empty(), "--what attention needs --model");
    const auto ck = load_checkpoint(model);
    require(!ck.run.is_null(), "checkpoint '" + model + "' carries no run settings");
    const auto cfg = experiment_from_json(ck.run);
    const auto fm = ck.make_model();
    const auto refs = experiment_refs(data, cfg);
    const auto set = build_set(data, refs, parse_split(split_name), cfg, fm.locenc());
    std::vector<AttentionRecord> recs;
    for (const auto& in : set.inputs) recs.push_back(*fm.forward(in, true).attention);
    detail::write_file((out / "attention.csv").string(), bins_csv(attention_vs_distance(recs, lag_m)));
    m.outputs.push_back("attention.csv");
  } else {
    throw Error("unknown analysis '" + what + "' (expected knn-stats, similarity or attention)");
  }
  finish(out, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geofuse: spatial-context fusion of image and text embeddings"};
  app.require_subcommand(1);

  std::size_t threads = 0;
  bool deterministic = false;
  auto add_exec = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "worker threads (0 = all, capped by GEOFUSE_THREADS)");
    sub->add_flag("--deterministic", deterministic, "single-threaded reproducible path");
  };

  std::string synth_config, out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", synth_config, "synthetic generator config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();

  std::string data;
  double block_size = 20'000.0;
  std::string fractions = "0.7,0.15,0.15";
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "spatial block split");
  split->add_option("--data", data, "dataset directory")->required();
  split->add_option("--block-size-m", block_size)->capture_default_str();
  split->add_option("--fractions", fractions)->capture_default_str();
  split->add_option("--seed", split_seed)->capture_default_str();
  split->add_option("--out", out, "split.json path")->required();

  DataFlags train_data;
  ExperimentFlags train_flags;
  std::string seeds = "0";
  bool verbose = false;
  auto* train = app.add_subcommand("train", "train over a seed list");
  train_data.add(train);
  train_flags.add(train);
  train->add_option("--seed-list", seeds)->capture_default_str();
  train->add_option("--out", out, "run directory")->required();
  train->add_flag("--verbose", verbose, "print per-epoch metrics");
  add_exec(train);

  DataFlags eval_data;
  std::string model, split_name = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_data.add(eval);
  eval->add_option("--model", model, "model.gfck")->required();
  eval->add_option("--split-name", split_name)->capture_default_str();
  eval->add_option("--out", out, "report directory")->required();
  add_exec(eval);

  DataFlags ablate_data;
  ExperimentFlags ablate_flags;
  std::string sweep;
  auto* ablate = app.add_subcommand("ablate", "resumable parameter sweep");
  ablate_data.add(ablate);
  ablate_flags.add(ablate);
  ablate->add_option("--sweep", sweep, "k=0,1,2 | locenc=all | text=random:4,topj:4 | modality=...")->required();
  ablate->add_option("--seed-list", seeds)->capture_default_str();
  ablate->add_option("--out", out, "run directory")->required();
  add_exec(ablate);

  DataFlags analyze_data;
  std::string what;
  std::size_t k_max = 10;
  double lag_m = 100.0, max_m = 3000.0;
  auto* analyze = app.add_subcommand("analyze", "spatial analyses");
  analyze_data.add(analyze);
  analyze->add_option("--what", what, "knn-stats|similarity|attention")->required();
  analyze->add_option("--out", out, "output directory")->required();
  analyze->add_option("--k-max", k_max)->capture_default_str();
  analyze->add_option("--lag-m", lag_m, "lag / bin width")->capture_default_str();
  analyze->add_option("--max-m", max_m, "largest pair distance for similarity")->capture_default_str();
  analyze->add_option("--model", model, "model.gfck (attention)");
  analyze->add_option("--split-name", split_name)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(synth_config, out);
    if (*split) return cmd_split(data, block_size, fractions, split_seed, out);
    if (*train) return cmd_train(train_data, train_flags, seeds, out, threads, deterministic, verbose);
    if (*eval) return cmd_eval(eval_data, model, split_name, out, worker_count(threads, deterministic));
    if (*ablate) return cmd_ablate(ablate_data, ablate_flags, sweep, seeds, out, threads, deterministic);
    if (*analyze) return cmd_analyze(analyze_data, what, out, k_max, lag_m, max_m, model, split_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
