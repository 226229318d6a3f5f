#include <gtest/gtest.h>

#include "geofuse/pipeline.hpp"
#include "test_util.hpp"

using namespace geofuse;

namespace {

SynthConfig tiny_synth() {
  SynthConfig c;
  c.n_samples = 240;
  c.area_m = 6000;
  c.m_targets = 4;
  c.d = 8;
  c.n_fourier = 64;
  c.sentences_max = 4;
  c.group_lengthscales_m = {{"fine", 800}, {"coarse", 2000}};
  return c;
}

std::vector<Split> split_of(const std::vector<Sample>& samples, double block = 1500, std::uint64_t seed = 0) {
  return block_split(locations(samples), block, {}, seed).assignment;
}

ExperimentConfig quick_experiment() {
  ExperimentConfig c;
  c.k = 3;
  c.j = 2;
  c.locenc.loc_dim = 8;
  c.fusion.num_heads = 2;
  c.fusion.num_layers = 1;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.lr = 1e-3;
  return c;
}

PreparedData prepared() {
  const auto ds = gen_dataset(tiny_synth());
  return prepare(bundle_from(ds), split_of(ds.samples));
}

}  // namespace

TEST(Split, JsonRoundTrip) {
  const auto ds = gen_dataset(tiny_synth());
  SplitConfig sc;
  sc.block_size_m = 1500;
  const auto split = block_split(locations(ds.samples), sc.block_size_m, sc.fractions, sc.seed);
  const auto j = split_json(split, ds.samples, sc);
  EXPECT_EQ(split_from_json(Json::parse(j.dump()), ds.samples), split.assignment);
  EXPECT_EQ(j.at("assignment").size(), ds.samples.size());
  EXPECT_EQ(j.at("blocks").size(), split.block_grid.size());
  auto missing = j;
  missing["assignment"].erase(ds.samples[5].id);
  EXPECT_THROW(split_from_json(missing, ds.samples), Error);
}

TEST(Prepare, FiltersAndStandardizesOnTrain) {
  auto ds = gen_dataset(tiny_synth());
  for (auto& s : ds.samples) s.targets.push_back(4.0);  // constant extra variable
  auto bundle = bundle_from(ds);
  bundle.schema.names.push_back("flat");
  const auto data = prepare(bundle, split_of(ds.samples));
  EXPECT_EQ(data.schema.size(), 4u);
  ASSERT_EQ(data.filter.removed.size(), 1u);
  EXPECT_EQ(data.filter.removed[0].name, "flat");
  const auto train = data.members(Split::train);
  for (std::size_t v = 0; v < 4; ++v) {
    double s = 0;
    for (auto i : train) s += data.samples[i].targets[v];
    EXPECT_NEAR(s / double(train.size()), 0.0, 1e-12);
  }
  EXPECT_EQ(data.index.size(), ds.samples.size());
  EXPECT_THROW(prepare(bundle_from(ds), std::vector<Split>(3, Split::train)), Error);
  EXPECT_THROW(prepare(bundle_from(ds), std::vector<Split>(ds.samples.size(), Split::test)), Error);
}

TEST(Bundle, LoadsWrittenDataset) {
  testutil::TempDir dir("bundle");
  const auto ds = gen_dataset(tiny_synth());
  write_dataset(ds, dir.path());
  const auto b = load_bundle(dir.path());
  EXPECT_EQ(b.samples.size(), ds.samples.size());
  EXPECT_EQ(b.schema.names, ds.schema.names);
  EXPECT_EQ(b.images, ds.images);
  write_text(dir.path() / "variables.json", R"({"names":["only"]})");
  EXPECT_THROW(load_bundle(dir.path()), Error);
  std::filesystem::remove(dir.path() / "variables.json");
  EXPECT_EQ(load_bundle(dir.path()).schema.names[0], "var0");
}

TEST(Experiment, ConfigJsonRoundTrip) {
  auto c = quick_experiment();
  c.mode = InputMode::text_one_image;
  c.selection = TextSelection::random;
  c.locenc.kind = LocEncKind::distance;
  c.fusion.pooling = Pooling::mean;
  const auto b = experiment_from_json(Json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(b).dump(), to_json(c).dump());
  EXPECT_THROW(parse_text_selection("best"), Error);
}

TEST(Experiment, SetsStayInsideTheirSplit) {
  const auto data = prepared();
  const auto cfg = quick_experiment();
  const auto loc = effective_locenc(data, cfg);
  const auto refs = experiment_refs(data, cfg);
  for (auto split : {Split::train, Split::val, Split::test}) {
    const auto set = build_set(data, refs, split, cfg, loc);
    EXPECT_EQ(set.size(), data.members(split).size());
    for (const auto& in : set.inputs)
      for (const auto& m : in.meta) EXPECT_LE(m.rank, cfg.k);
  }
}

TEST(Experiment, CoordinatesUseDataBounds) {
  const auto data = prepared();
  auto cfg = quick_experiment();
  cfg.locenc.kind = LocEncKind::coordinates;
  const auto loc = effective_locenc(data, cfg);
  ASSERT_TRUE(loc.study_bounds.has_value());
  EXPECT_EQ(loc.study_bounds->max_east, data.bounds().max_east);
}

TEST(Experiment, RunProducesReportsAndCheckpoint) {
  const auto data = prepared();
  auto res = run_experiment(data, quick_experiment(), true);
  EXPECT_EQ(res.training.history.size(), 2u);
  EXPECT_EQ(res.test_report.n_test, data.members(Split::test).size());
  EXPECT_EQ(res.attention.size(), data.members(Split::test).size());
  EXPECT_EQ(res.best.run.at("k"), 3);
  EXPECT_EQ(res.best.values, res.training.best_params);
  const auto back = deserialize_checkpoint(serialize_checkpoint(res.best));
  auto cfg = experiment_from_json(back.run);
  const auto model = back.make_model();
  const auto test = build_set(data, experiment_refs(data, cfg), Split::test, cfg, model.locenc());
  const auto rep = evaluate(model, test, data.schema, 1);
  EXPECT_EQ(rep.mean_r2, res.test_report.mean_r2);
}

TEST(Experiment, ReproducibleAcrossRunsAndThreads) {
  const auto data = prepared();
  auto cfg = quick_experiment();
  const auto a = run_experiment(data, cfg);
  const auto b = run_experiment(data, cfg);
  cfg.train.threads = 3;
  const auto c = run_experiment(data, cfg);
  EXPECT_EQ(metrics_csv(a.training.history), metrics_csv(b.training.history));
  EXPECT_EQ(metrics_csv(a.training.history), metrics_csv(c.training.history));
  EXPECT_EQ(variables_csv(a.test_report, data.schema), variables_csv(c.test_report, data.schema));
  cfg.train.seed = 5;
  cfg.train.threads = 1;
  EXPECT_NE(metrics_csv(run_experiment(data, cfg).training.history), metrics_csv(a.training.history));
}

TEST(Csv, Formats) {
  EXPECT_EQ(metrics_csv({{1, 0.5, 0.25}}), "epoch,train_loss,val_mean_r2\n1,0.5,0.25\n");
  EvalReport rep;
  rep.order = {"a", "b"};
  rep.per_variable_r2 = {{"a", 0.5}, {"b", 0.25}};
  rep.per_variable_cod = {{"a", 0.4}, {"b", -1}};
  rep.mean_r2 = 0.375;
  rep.per_group_r2 = {{"g", 0.5}};
  VariableSchema schema;
  schema.names = {"a", "b"};
  schema.groups = {{"g", {"a"}}};
  EXPECT_EQ(variables_csv(rep, schema), "variable,group,r2,coefficient_of_determination\na,g,0.5,0.4\nb,,0.25,-1\n");
  EXPECT_EQ(groups_csv(rep), "group,r2\nALL,0.375\ng,0.5\n");
  EXPECT_EQ(bins_csv({{100, "text", 0.5, 0.1, 3}}), "bin_start_m,modality,mean,std,count\n100,text,0.5,0.1,3\n");
  const std::vector<double> pct = {50};
  EXPECT_EQ(knn_stats_csv({{1, 4, 2.5, {2.0}}}, pct), "rank,count,mean,p50\n1,4,2.5,2\n");
}

TEST(Analysis, TextFeatureIsSentenceMean) {
  const auto data = prepared();
  const auto img = per_sample_embeddings(data, Modality::visual);
  const auto txt = per_sample_embeddings(data, Modality::text);
  ASSERT_EQ(txt.size(), data.samples.size());
  const auto& s = data.samples[4];
  Embedding mean(data.texts.dim(), 0.0);
  for (const auto& k : s.sentence_refs)
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += data.texts.get(k)[c];
  for (std::size_t c = 0; c < mean.size(); ++c) EXPECT_NEAR(txt[4][c], mean[c], 1e-15);
  const auto e = data.images.get(s.image_ref);
  EXPECT_EQ(img[4], Embedding(e.begin(), e.end()));
}
