#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geofuse/checkpoint.hpp"
#include "geofuse/config.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/eval.hpp"
#include "geofuse/fusion.hpp"
#include "geofuse/geo.hpp"
#include "geofuse/synth.hpp"
#include "geofuse/tokens.hpp"
#include "geofuse/train.hpp"

namespace geofuse {

/// Raw inputs of a run: samples with their embeddings.
struct DataBundle {
  std::vector<Sample> samples;
  VariableSchema schema;
  EmbeddingStore images;
  EmbeddingStore texts;
};

inline DataBundle load_bundle(const std::filesystem::path& dir) {
  DataBundle b;
  b.samples = load_samples((dir / "samples.jsonl").string());
  const auto vars = dir / "variables.json";
  b.schema = std::filesystem::exists(vars) ? load_variables(vars.string()) : default_schema(b.samples.front().targets.size());
  require(b.schema.size() == b.samples.front().targets.size(),
          "variables.json lists " + std::to_string(b.schema.size()) + " names but samples carry " +
              std::to_string(b.samples.front().targets.size()) + " targets");
  b.images = load_store((dir / "images.gfeb").string());
  b.texts = load_store((dir / "texts.gfeb").string());
  return b;
}

inline DataBundle bundle_from(const SynthDataset& ds) { return {ds.samples, ds.schema, ds.images, ds.texts}; }

struct SplitConfig {
  double block_size_m = 20'000.0;
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

inline std::vector<GeoPoint> locations(const std::vector<Sample>& samples) {
  std::vector<GeoPoint> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) pts.push_back(s.location);
  return pts;
}

inline SpatialIndex index_samples(const std::vector<Sample>& samples) {
  std::vector<std::pair<std::string, GeoPoint>> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) pts.emplace_back(s.id, s.location);
  return SpatialIndex(std::move(pts));
}

inline Json split_json(const BlockSplit& split, const std::vector<Sample>& samples, const SplitConfig& cfg) {
  Json j;
  j["block_size_m"] = split.block_size_m;
  j["fractions"] = {cfg.fractions.train, cfg.fractions.val, cfg.fractions.test};
  j["seed"] = cfg.seed;
  j["anchor"] = {split.anchor.east, split.anchor.north};
  Json blocks = Json::array();
  for (const auto& [key, s] : split.block_grid) blocks.push_back({key.row, key.col, to_string(s)});
  j["blocks"] = blocks;
  Json assign = Json::object();
  for (std::size_t i = 0; i < samples.size(); ++i) assign[samples[i].id] = to_string(split.assignment[i]);
  j["assignment"] = assign;
  return j;
}

/// Reads the per-sample assignment of a split.json, ordered like `samples`.
inline std::vector<Split> split_from_json(const Json& j, const std::vector<Sample>& samples) {
  const auto& a = j.at("assignment");
  std::vector<Split> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    require(a.contains(s.id), "split file has no assignment for sample '" + s.id + "'");
    out.push_back(parse_split(a.at(s.id).get<std::string>()));
  }
  return out;
}

/// Filtered, standardized samples with their spatial index and split.
struct PreparedData {
  std::vector<Sample> samples;
  VariableSchema schema;
  EmbeddingStore images;
  EmbeddingStore texts;
  std::vector<Split> assignment;
  SpatialIndex index;
  FilterReport filter;

  std::vector<std::size_t> members(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == s) out.push_back(i);
    return out;
  }

  StudyBounds bounds() const {
    StudyBounds b{INFINITY, INFINITY, -INFINITY, -INFINITY};
    for (const auto& s : samples) {
      b.min_east = std::min(b.min_east, s.location.east);
      b.min_north = std::min(b.min_north, s.location.north);
      b.max_east = std::max(b.max_east, s.location.east);
      b.max_north = std::max(b.max_north, s.location.north);
    }
    return b;
  }
};

inline PreparedData prepare(DataBundle bundle, std::vector<Split> assignment, double std_floor = 0.01,
                            double corr_ceiling = 0.98) {
  require(assignment.size() == bundle.samples.size(), "prepare: split does not cover every sample");
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == Split::train) train.push_back(i);
  require(!train.empty(), "prepare: empty training split");
  auto report = filter_variables(bundle.samples, bundle.schema, train, std_floor, corr_ceiling);
  select_variables(bundle.samples, bundle.schema, report.kept);
  auto schema = standardize_targets(bundle.samples, bundle.schema, train);
  auto index = index_samples(bundle.samples);
  return {std::move(bundle.samples), std::move(schema), std::move(bundle.images), std::move(bundle.texts),
          std::move(assignment), std::move(index), std::move(report)};
}

struct ExperimentConfig {
  std::size_t k = 10;
  std::size_t j = 4;
  InputMode mode = InputMode::text_images;
  TextSelection selection = TextSelection::top_j;
  double mask_prob = 0.3;
  LocEncConfig locenc;
  FusionConfig fusion;
  TrainConfig train;
};

inline const char* to_string(TextSelection s) { return s == TextSelection::top_j ? "topj" : "random"; }

inline TextSelection parse_text_selection(const std::string& s) {
  if (s == "topj") return TextSelection::top_j;
  if (s == "random") return TextSelection::random;
  throw Error("unknown text selection '" + s + "' (expected topj or random)");
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["k"] = c.k;
  j["j"] = c.j;
  j["modality"] = to_string(c.mode);
  j["selection"] = to_string(c.selection);
  j["mask_prob"] = c.mask_prob;
  j["locenc"] = to_json(c.locenc);
  j["fusion"] = to_json(c.fusion);
  j["train"] = to_json(c.train);
  return j;
}

inline ExperimentConfig experiment_from_json(const Json& j) {
  ExperimentConfig c;
  detail::read_opt(j, "k", c.k);
  detail::read_opt(j, "j", c.j);
  if (j.contains("modality")) c.mode = parse_input_mode(j.at("modality").get<std::string>());
  if (j.contains("selection")) c.selection = parse_text_selection(j.at("selection").get<std::string>());
  detail::read_opt(j, "mask_prob", c.mask_prob);
  if (j.contains("locenc")) c.locenc = locenc_from_json(j.at("locenc"));
  if (j.contains("fusion")) c.fusion = fusion_from_json(j.at("fusion"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  return c;
}

/// Context token sequences for every member of a split.
inline LabeledSet build_set(const PreparedData& data, const EmbeddingRefs& refs, Split split,
                            const ExperimentConfig& cfg, const LocEncConfig& loc) {
  LabeledSet set;
  for (std::size_t i : data.members(split)) {
    const auto ctx = assemble_context(data.samples, data.index, i, cfg.k, SplitMask{data.assignment, split});
    set.inputs.push_back(build_tokens(ctx, refs, data.images, data.texts, loc, cfg.mode));
    set.targets.push_back(data.samples[i].targets);
  }
  return set;
}

struct ExperimentResult {
  TrainResult training;
  Checkpoint best;
  R2Result test_r2;
  EvalReport test_report;
  std::vector<AttentionRecord> attention;
};

/// Model and token configuration actually used for a prepared dataset.
inline LocEncConfig effective_locenc(const PreparedData& data, const ExperimentConfig& cfg) {
  LocEncConfig loc = cfg.locenc;
  if (loc.kind == LocEncKind::coordinates && !loc.study_bounds) loc.study_bounds = data.bounds();
  return loc;
}

inline FusionConfig effective_fusion(const PreparedData& data, const ExperimentConfig& cfg) {
  FusionConfig f = cfg.fusion;
  f.k = cfg.k;
  f.j = cfg.j;
  f.m = data.schema.size();
  f.mask_prob = cfg.mask_prob;
  return f;
}

inline EmbeddingRefs experiment_refs(const PreparedData& data, const ExperimentConfig& cfg) {
  return resolve_refs(data.samples, data.images, data.texts, uses_text(cfg.mode) ? cfg.j : 0, cfg.selection,
                      cfg.train.seed);
}

inline EvalReport evaluate(const FusionModel& model, const LabeledSet& set, const VariableSchema& schema,
                           std::size_t threads, R2Result* r2_out = nullptr) {
  const auto r2 = r2_per_variable(predict(model, set, threads), set.targets);
  if (r2_out) *r2_out = r2;
  return group_report(r2, schema, set.size());
}

inline ExperimentResult run_experiment(const PreparedData& data, const ExperimentConfig& cfg,
                                       bool capture_attention = false, const TrainCallbacks& callbacks = {}) {
  const LocEncConfig loc = effective_locenc(data, cfg);
  const FusionConfig fusion = effective_fusion(data, cfg);
  TrainConfig tc = cfg.train;
  tc.mask_prob = cfg.mask_prob;

  const auto refs = experiment_refs(data, cfg);
  const auto train = build_set(data, refs, Split::train, cfg, loc);
  const auto val = build_set(data, refs, Split::val, cfg, loc);
  const auto test = build_set(data, refs, Split::test, cfg, loc);

  FusionModel model(fusion, loc, data.images.dim(), tc.seed);
  ExperimentResult res;
  res.training = train_loop(model, train, val, tc, callbacks);
  model.params().values() = res.training.best_params;
  res.best = make_checkpoint(model);
  res.best.run = to_json(cfg);
  res.test_report = evaluate(model, test, data.schema, tc.threads, &res.test_r2);
  if (capture_attention)
    for (const auto& in : test.inputs) res.attention.push_back(*model.forward(in, true).attention);
  return res;
}

// ---------------------------------------------------------------------------
// CSV reports

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,val_mean_r2\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," + fmt_double(e.val_mean_r2) + "\n";
  return out;
}

inline std::string variables_csv(const EvalReport& rep, const VariableSchema& schema) {
  std::map<std::string, std::string> group_of;
  for (const auto& [g, members] : schema.groups)
    for (const auto& n : members) group_of[n] = g;
  std::string out = "variable,group,r2,coefficient_of_determination\n";
  for (const auto& name : rep.order)
    out += name + "," + group_of[name] + "," + fmt_double(rep.per_variable_r2.at(name)) + "," +
           fmt_double(rep.per_variable_cod.at(name)) + "\n";
  return out;
}

inline std::string groups_csv(const EvalReport& rep) {
  std::string out = "group,r2\n";
  out += "ALL," + fmt_double(rep.mean_r2) + "\n";
  for (const auto& [g, v] : rep.per_group_r2) out += g + "," + fmt_double(v) + "\n";
  return out;
}

inline std::string bins_csv(const std::vector<BinRow>& rows) {
  std::string out = "bin_start_m,modality,mean,std,count\n";
  for (const auto& r : rows)
    out += fmt_double(r.bin_start_m) + "," + r.modality + "," + fmt_double(r.mean) + "," + fmt_double(r.std) + "," +
           std::to_string(r.count) + "\n";
  return out;
}

inline std::string knn_stats_csv(const std::vector<KnnDistanceRow>& rows, std::span<const double> percentiles) {
  std::string out = "rank,count,mean";
  for (double q : percentiles) out += ",p" + fmt_double(q);
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.rank) + "," + std::to_string(r.count) + "," + fmt_double(r.mean);
    for (double v : r.percentiles) out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

/// Per-sample feature used for similarity analyses: the image embedding, or
/// the mean of the sample's sentence embeddings.
inline std::vector<Embedding> per_sample_embeddings(const PreparedData& data, Modality modality) {
  std::vector<Embedding> out;
  out.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    if (modality == Modality::visual) {
      const auto e = data.images.get(s.image_ref);
      out.emplace_back(e.begin(), e.end());
    } else {
      Embedding mean(data.texts.dim(), 0.0);
      for (const auto& key : s.sentence_refs) {
        const auto e = data.texts.get(key);
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += e[c];
      }
      out.push_back(std::move(mean));
    }
  }
  return out;
}

}  // namespace geofuse
