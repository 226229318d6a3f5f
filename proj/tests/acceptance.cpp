// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "geofuse/checkpoint.hpp"
#include "geofuse/pipeline.hpp"
#include "geofuse/synth.hpp"
#include "test_util.hpp"

using namespace geofuse;

namespace {

struct Verdict {
  bool ok;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// 1. kNN exactness

Verdict knn_exactness() {
  const auto pts = testutil::uniform_points(1000, 1000, 11);
  const auto t0 = std::chrono::steady_clock::now();
  SpatialIndex index(pts);
  std::vector<NeighborList> got;
  for (std::size_t q = 0; q < pts.size(); ++q) got.push_back(index.query_knn(q, 32));
  const double secs = seconds_since(t0);
  std::size_t bad = 0;
  for (std::size_t q = 0; q < pts.size(); ++q) {
    const auto want = testutil::brute_knn(pts, q, 32);
    bool same = got[q].neighbors.size() == want.size();
    for (std::size_t r = 0; same && r < want.size(); ++r)
      same = index.id(got[q].neighbors[r].index) == want[r].first && got[q].neighbors[r].distance_m == want[r].second;
    bad += !same;
  }
  // Lattice with many exact distance ties exercises the id tie rule.
  std::vector<std::pair<std::string, GeoPoint>> lattice;
  for (std::size_t i = 0; i < 400; ++i)
    lattice.emplace_back(testutil::pid(399 - i), GeoPoint{double(i % 20), double(i / 20)});
  SpatialIndex lat(lattice);
  for (std::size_t q = 0; q < lattice.size(); ++q) {
    const auto g = lat.query_knn(q, 32);
    const auto want = testutil::brute_knn(lattice, q, 32);
    bool same = g.neighbors.size() == want.size();
    for (std::size_t r = 0; same && r < want.size(); ++r) same = lat.id(g.neighbors[r].index) == want[r].first;
    bad += !same;
  }
  return {bad == 0 && secs < 5.0, fmt("mismatched queries %zu of 1400, 1000x32 queries in %.3fs", bad, secs)};
}

// ---------------------------------------------------------------------------
// 2. Split hygiene

Verdict split_hygiene() {
  auto fx = testutil::make_fixture(2000, 4, 1, 1, 21, 1.0);
  std::vector<std::pair<std::string, GeoPoint>> pts;
  std::vector<GeoPoint> locs;
  Rng rng(22);
  for (auto& s : fx.samples) {
    s.location = {rng.uniform(0, 5000), rng.uniform(0, 4000)};  // 5 x 4 blocks of 1 km
    pts.emplace_back(s.id, s.location);
    locs.push_back(s.location);
  }
  SpatialIndex index(pts);
  const auto split = block_split(locs, 1000, {}, 3);
  std::size_t leaks = 0, neighbours = 0;
  for (std::size_t i = 0; i < fx.samples.size(); ++i) {
    const auto ctx = assemble_context(fx.samples, index, i, 16, SplitMask{split.assignment, split.assignment[i]});
    for (const auto& n : ctx.neighbors) {
      ++neighbours;
      leaks += split.assignment[n.index] != split.assignment[i];
    }
  }
  return {leaks == 0 && split.block_grid.size() == 20,
          fmt("%zu blocks, %zu cross-split of %zu neighbours", split.block_grid.size(), leaks, neighbours)};
}

// ---------------------------------------------------------------------------
// 3. Location-encoding invariants

std::vector<std::vector<Token>> fused_tokens(const testutil::Fixture& fx, const LocEncConfig& loc) {
  std::vector<std::pair<std::string, GeoPoint>> pts;
  for (const auto& s : fx.samples) pts.emplace_back(s.id, s.location);
  SpatialIndex index(pts);
  FusionConfig fc;
  fc.m = 3;
  fc.k = 6;
  fc.num_heads = 2;
  FusionModel model(fc, loc, 8, 1);
  const auto refs = resolve_refs(fx.samples, fx.images, fx.texts, 2, TextSelection::top_j, 0);
  std::vector<std::vector<Token>> out;
  for (std::size_t i = 0; i < fx.samples.size(); ++i) {
    const auto ctx = assemble_context(fx.samples, index, i, fc.k);
    out.push_back(model.fuse(build_tokens(ctx, refs, fx.images, fx.texts, loc, InputMode::text_images)));
  }
  return out;
}

bool same_tokens(const std::vector<std::vector<Token>>& a, const std::vector<std::vector<Token>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (std::size_t t = 0; t < a[i].size(); ++t)
      if (a[i][t].values != b[i][t].values) return false;
  }
  return true;
}

testutil::Fixture shifted_fixture(double de, double dn) {
  auto fx = testutil::make_fixture(80, 8, 3, 3, 31);
  // Quarter-meter grid keeps offsets exact under the shift.
  for (auto& s : fx.samples)
    s.location = {std::round(s.location.east * 4) / 4 + de, std::round(s.location.north * 4) / 4 + dn};
  return fx;
}

Verdict locenc_invariants() {
  const auto a = shifted_fixture(0, 0), b = shifted_fixture(2048.0, -768.5);
  std::ostringstream detail;
  bool ok = true;
  for (auto kind : {LocEncKind::rank, LocEncKind::learnable, LocEncKind::distance, LocEncKind::polar}) {
    LocEncConfig c;
    c.kind = kind;
    c.loc_dim = 16;
    const bool inv = same_tokens(fused_tokens(a, c), fused_tokens(b, c));
    ok &= inv;
    detail << to_string(kind) << (inv ? " invariant" : " NOT invariant") << ", ";
  }
  LocEncConfig coords;
  coords.kind = LocEncKind::coordinates;
  coords.loc_dim = 16;
  coords.study_bounds = StudyBounds{-1000, -1000, 4000, 4000};
  const bool coords_inv = same_tokens(fused_tokens(a, coords), fused_tokens(b, coords));
  ok &= !coords_inv;
  detail << "coordinates " << (coords_inv ? "invariant (wrong)" : "changes") << ", ";

  LocEncConfig polar;
  polar.kind = LocEncKind::polar;
  polar.loc_dim = 16;
  Rng rng(9);
  double worst = 0;
  const std::size_t half = polar.loc_dim / 2;
  for (int t = 0; t < 1000; ++t) {
    const double dx = rng.uniform(-3000, 3000), dy = rng.uniform(-3000, 3000), phi = rng.uniform(-kPi, kPi);
    const double rx = dx * std::cos(phi) - dy * std::sin(phi), ry = dx * std::sin(phi) + dy * std::cos(phi);
    const auto e = encode_polar(dx, dy, polar), r = encode_polar(rx, ry, polar);
    const double s = e[half] * std::cos(phi) + e[half + 1] * std::sin(phi);
    const double c = e[half + 1] * std::cos(phi) - e[half] * std::sin(phi);
    worst = std::max({worst, std::abs(r[half] - s), std::abs(r[half + 1] - c)});
  }
  ok &= worst < 1e-12;
  detail << fmt("polar n=1 rotation error %.2e", worst);
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. Gradient check

Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  FusionConfig fc;
  fc.num_layers = 1;
  fc.num_heads = 2;
  fc.token_dim = 8;
  fc.m = 3;
  fc.k = 3;
  double worst = 0;
  std::size_t checked = 0, failing = 0;
  std::string worst_at;
  for (auto kind : kAllLocEncKinds) {
    LocEncConfig loc;
    loc.kind = kind;
    loc.loc_dim = 8;
    if (kind == LocEncKind::coordinates) loc.study_bounds = StudyBounds{0, 0, 1000, 1000};
    FusionModel model(fc, loc, 8, 17);
    Rng rng(18);
    TokenInputs in;
    in.features.resize(4, 8);
    in.loc.resize(4, static_cast<Eigen::Index>(model.locenc().encoding_width()));
    for (Eigen::Index i = 0; i < in.features.size(); ++i) in.features.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < in.loc.size(); ++i) in.loc.data()[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < 4; ++i) in.meta.push_back({i < 2 ? Modality::visual : Modality::text, i % 4, 0.0});
    const std::vector<double> target = {0.4, -0.7, 1.3};
    std::vector<double> grad(model.params().size(), 0.0), scratch(grad.size());
    model.loss_and_gradient(in, target, grad, 1.0, nullptr);
    auto& v = model.params().values();
    for (const auto& t : model.params().tensors())
      for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
        const double keep = v[i], h = 1e-5;
        v[i] = keep + h;
        const double up = model.loss_and_gradient(in, target, scratch, 0.0, nullptr);
        v[i] = keep - h;
        const double dn = model.loss_and_gradient(in, target, scratch, 0.0, nullptr);
        v[i] = keep;
        const double num = (up - dn) / (2 * h);
        // Floor keeps exactly-zero gradients from dividing by zero.
        const double err = std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6});
        ++checked;
        failing += err >= 1e-4;
        if (err > worst) {
          worst = err;
          worst_at = std::string(to_string(kind)) + ":" + t.name;
        }
      }
  }
  const double secs = seconds_since(t0);
  return {failing == 0 && secs < 60.0, fmt("%zu parameters over %zu encodings, %zu above 1e-4, worst %.2e (%s), %.2fs",
                                           checked, kAllLocEncKinds.size(), failing, worst, worst_at.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 5. Masking statistics

// Independent statement of the removal and retention rule.
std::vector<std::size_t> mask_oracle(const std::vector<TokenMeta>& meta, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (!(rng.uniform() < p)) keep.push_back(i);
  if (!keep.empty()) return keep;
  for (Modality want : {Modality::visual, Modality::text}) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < meta.size(); ++i)
      if (meta[i].modality == want && (!best || meta[i].rank < meta[*best].rank)) best = i;
    if (best) return {*best};
  }
  return {};
}

Verdict masking_statistics() {
  std::vector<TokenMeta> meta;
  for (std::size_t r = 0; r <= 8; ++r) meta.push_back({Modality::visual, r, 100.0 * double(r)});
  for (std::size_t r = 0; r <= 8; ++r)
    for (int s = 0; s < 4; ++s) meta.push_back({Modality::text, r, 100.0 * double(r)});
  std::vector<Token> tokens;
  for (std::size_t i = 0; i < meta.size(); ++i)
    tokens.push_back({{double(i)}, meta[i].modality, meta[i].rank, meta[i].distance_m});

  const int trials = 10000;
  std::size_t dropped = 0, mismatch = 0;
  for (int t = 0; t < trials; ++t) {
    const auto out = mask_tokens(tokens, 0.3, std::uint64_t(t), true);
    dropped += tokens.size() - out.size();
    const auto want = mask_oracle(meta, 0.3, std::uint64_t(t));
    bool same = out.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i) same = out[i].values[0] == double(want[i]);
    mismatch += !same;
  }
  const double rate = double(dropped) / (double(trials) * double(tokens.size()));

  // Near-certain removal: the retention rule must fire and pick the right token.
  std::size_t fired = 0, wrong = 0;
  std::vector<TokenMeta> text_only(meta.begin() + 9, meta.end());
  std::vector<TokenMeta> shuffled(meta.rbegin(), meta.rend());
  for (const auto* set : {&meta, &text_only, &shuffled}) {
    std::vector<Token> toks;
    for (std::size_t i = 0; i < set->size(); ++i)
      toks.push_back({{double(i)}, (*set)[i].modality, (*set)[i].rank, (*set)[i].distance_m});
    for (int t = 0; t < 2000; ++t) {
      Rng probe{std::uint64_t(t)};
      bool all_drop = true;
      for (std::size_t i = 0; i < set->size(); ++i) all_drop &= probe.uniform() < 0.97;
      const auto out = mask_tokens(toks, 0.97, std::uint64_t(t), true);
      if (!all_drop) continue;
      ++fired;
      const auto want = mask_oracle(*set, 0.97, std::uint64_t(t));
      wrong += out.size() != 1 || out[0].values[0] != double(want[0]);
    }
  }

  // The class token is added by the model and never masked: every masked
  // input still yields one attention column more than surviving tokens.
  FusionConfig fc;
  fc.num_layers = 1;
  fc.num_heads = 2;
  fc.token_dim = 8;
  fc.m = 2;
  fc.k = 8;
  LocEncConfig loc;
  loc.loc_dim = 8;
  FusionModel model(fc, loc, 4, 5);
  Rng rng(6);
  TokenInputs in;
  in.features.resize(static_cast<Eigen::Index>(meta.size()), 4);
  in.loc.resize(static_cast<Eigen::Index>(meta.size()), static_cast<Eigen::Index>(model.locenc().encoding_width()));
  for (Eigen::Index i = 0; i < in.features.size(); ++i) in.features.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < in.loc.size(); ++i) in.loc.data()[i] = rng.uniform(-1, 1);
  in.meta = meta;
  std::size_t cls_missing = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto masked = mask_tokens(in, 0.3, std::uint64_t(t), true);
    const auto res = model.forward(masked, true);
    for (const auto& layer : res.attention->weights)
      for (const auto& P : layer)
        cls_missing += P.rows() != static_cast<Eigen::Index>(masked.size() + 1) ||
                       P.cols() != static_cast<Eigen::Index>(masked.size() + 1);
  }
  const bool ok = std::abs(rate - 0.3) <= 0.02 && mismatch == 0 && fired > 0 && wrong == 0 && cls_missing == 0;
  return {ok, fmt("drop rate %.4f over %d trials, oracle mismatches %zu, retention fired %zu times (%zu wrong), "
                  "class token missing %zu",
                  rate, trials, mismatch, fired, wrong, cls_missing)};
}

// ---------------------------------------------------------------------------
// 6. Metric oracle

Verdict metric_oracle() {
  auto col = [](std::initializer_list<double> xs) {
    std::vector<std::vector<double>> out;
    for (double x : xs) out.push_back({x});
    return out;
  };
  const auto t = col({1, 2, 3, 4, 5});
  std::vector<std::vector<double>> affine;
  for (const auto& r : t) affine.push_back({2 * r[0] + 3});
  const double e1 = r2_per_variable(t, t).r2[0];
  const double e2 = r2_per_variable(affine, t).r2[0];
  const double e3 = r2_per_variable(col({1, 3, 2}), col({1, 2, 3})).r2[0];
  bool ok = std::abs(e1 - 1) < 1e-12 && std::abs(e2 - 1) < 1e-12 && std::abs(e3 - 0.25) < 1e-12;

  Rng rng(41);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + static_cast<std::size_t>(rng.uniform(0, 200)), m = 4;
    std::vector<std::vector<double>> p(n, std::vector<double>(m)), y = p, q = p;
    std::vector<double> a(m), b(m);
    for (std::size_t v = 0; v < m; ++v) {
      a[v] = rng.uniform(0.1, 10) * (rng.uniform() < 0.5 ? -1 : 1);
      b[v] = rng.uniform(-100, 100);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t v = 0; v < m; ++v) {
        y[i][v] = rng.normal();
        p[i][v] = 0.6 * y[i][v] + rng.normal();
        q[i][v] = a[v] * p[i][v] + b[v];
      }
    const auto r0 = r2_per_variable(p, y).r2, r1 = r2_per_variable(q, y).r2;
    for (std::size_t v = 0; v < m; ++v) worst = std::max(worst, std::abs(r0[v] - r1[v]));
  }
  ok &= worst < 1e-12;
  return {ok, fmt("examples %.15f %.15f %.15f, worst affine deviation %.2e over 100 maps", e1, e2, e3, worst)};
}

// ---------------------------------------------------------------------------
// Trend experiments (criteria 7 to 11)

constexpr double kTrendEll = 900.0;  // about 4x the mean nearest-neighbour spacing
// Shorter range so that k = 8 context reaches well past twice the lengthscale.
constexpr double kAttentionEll = 300.0;
constexpr double kTrendNoise = 1.5;
constexpr std::size_t kTrendEpochs = 20;
constexpr double kTrendLr = 2e-3;
constexpr std::size_t kSeeds = 5;

SynthConfig trend_synth(double ell) {
  SynthConfig c;  // 2000 samples, d = 32, m = 16
  c.group_lengthscales_m = {{"fine", ell}, {"coarse", ell}};
  c.image_noise_sigma = kTrendNoise;
  c.text_noise_sigma = kTrendNoise;
  return c;
}

PreparedData trend_data(const SynthDataset& ds) {
  return prepare(bundle_from(ds), block_split(locations(ds.samples), 4000, {}, 0).assignment);
}

ExperimentConfig trend_config(std::size_t k, InputMode mode, TextSelection sel, std::uint64_t seed) {
  ExperimentConfig c;
  c.k = k;
  c.j = 4;
  c.mode = mode;
  c.selection = sel;
  c.locenc.loc_dim = 32;
  c.fusion.num_heads = 4;
  c.fusion.num_layers = 2;
  c.train.epochs = kTrendEpochs;
  c.train.batch_size = 32;
  c.train.lr = kTrendLr;
  c.train.seed = seed;
  c.train.threads = worker_count();
  return c;
}

struct TrendRuns {
  const PreparedData& data;
  bool capture_attention = false;
  std::map<std::tuple<std::size_t, int, int, std::uint64_t>, double> cache;
  std::vector<std::vector<AttentionRecord>> attention;  // k = 8 Text+Images, per seed

  double mean_r2(std::size_t k, InputMode mode, std::uint64_t seed, TextSelection sel = TextSelection::top_j) {
    const auto key = std::make_tuple(k, int(mode), int(sel), seed);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const bool keep_attention =
        capture_attention && k == 8 && mode == InputMode::text_images && sel == TextSelection::top_j;
    auto res = run_experiment(data, trend_config(k, mode, sel, seed), keep_attention);
    if (keep_attention) attention.push_back(std::move(res.attention));
    std::printf("  run k=%zu mode=%s selection=%s seed=%llu: test mean R2 %.4f (best epoch %zu)\n", k,
                to_string(mode), to_string(sel), static_cast<unsigned long long>(seed), res.test_report.mean_r2,
                res.training.best_epoch);
    std::fflush(stdout);
    return cache[key] = res.test_report.mean_r2;
  }
};

Verdict k_sweep(TrendRuns& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> r0, r8, r16;
  std::size_t wins = 0;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    r0.push_back(runs.mean_r2(0, InputMode::text_images, s));
    r8.push_back(runs.mean_r2(8, InputMode::text_images, s));
    r16.push_back(runs.mean_r2(16, InputMode::text_images, s));
    wins += r8.back() > r0.back();
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  const double g1 = mean(r8) - mean(r0), g2 = mean(r16) - mean(r8);
  const double secs = seconds_since(t0);
  const bool ok = wins == kSeeds && g1 > 0 && g2 < 0.5 * g1 && secs < 1200;
  return {ok, fmt("mean R2 k0 %.4f k8 %.4f k16 %.4f, k8>k0 in %zu/%zu seeds, gain 8->16 %.4f vs half of 0->8 %.4f, "
                  "%.0fs on %zu threads",
                  mean(r0), mean(r8), mean(r16), wins, kSeeds, g2, 0.5 * g1, secs, worker_count())};
}

Verdict modality_trend(TrendRuns& runs) {
  double ti = 0, im = 0, tx = 0;
  std::size_t strict = 0;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const double a = runs.mean_r2(8, InputMode::text_images, s);
    const double b = runs.mean_r2(8, InputMode::images, s);
    const double c = runs.mean_r2(8, InputMode::text, s);
    ti += a / kSeeds;
    im += b / kSeeds;
    tx += c / kSeeds;
    strict += a > c;
  }
  const bool ok = ti >= std::max(im, tx) && strict == kSeeds;
  return {ok, fmt("mean R2 text+images %.4f, images %.4f, text %.4f; above text in %zu/%zu seeds", ti, im, tx, strict,
                  kSeeds)};
}

Verdict selection_trend(TrendRuns& runs) {
  double margin = 0;
  for (std::uint64_t s = 0; s < kSeeds; ++s)
    margin += (runs.mean_r2(8, InputMode::text, s, TextSelection::top_j) -
               runs.mean_r2(8, InputMode::text, s, TextSelection::random)) /
              kSeeds;
  return {margin > 0, fmt("text-only top-4 minus random-4 mean R2 margin %.4f", margin)};
}

Verdict similarity_trend(const PreparedData& data) {
  const auto emb = per_sample_embeddings(data, Modality::visual);
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double lag = 100.0;
  auto rows = similarity_vs_distance(data.index, all, {}, emb, "visual", lag, 3 * kTrendEll);
  std::size_t violations = 0;
  double worst = -INFINITY;
  for (std::size_t i = 0; i + 1 < rows.size() && rows[i + 1].bin_start_m < kTrendEll; ++i) {
    const double se_a = rows[i].std / std::sqrt(double(rows[i].count));
    const double se_b = rows[i + 1].std / std::sqrt(double(rows[i + 1].count));
    const double rise = rows[i + 1].mean - rows[i].mean;
    worst = std::max(worst, rise / std::hypot(se_a, se_b));
    violations += rise > std::hypot(se_a, se_b);
  }
  const double range = effective_range(rows);
  const bool ok = violations == 0 && std::abs(range - kTrendEll) <= 0.5 * kTrendEll;
  return {ok, fmt("%zu lag rises beyond one standard error below %.0f m (largest %.2f se), effective range %.0f m "
                  "for generator %.0f m",
                  violations, kTrendEll, worst, range, kTrendEll)};
}

Verdict attention_trend(TrendRuns& runs) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) runs.mean_r2(8, InputMode::text_images, s);
  const double bin = 100.0, far = 2 * kAttentionEll;
  std::ostringstream detail;
  bool ok = true;
  for (const std::string modality : {"visual", "text"}) {
    // Seed-averaged bin means.
    std::map<double, std::pair<double, int>> by_bin;
    double far_mean = 0;
    std::size_t far_count = 0;
    for (const auto& recs : runs.attention) {
      double fs = 0;
      std::size_t fc = 0;
      for (const auto& r : attention_vs_distance(recs, bin)) {
        if (r.modality != modality) continue;
        by_bin[r.bin_start_m].first += r.mean;
        ++by_bin[r.bin_start_m].second;
        if (r.bin_start_m >= far) {
          fs += r.mean * double(r.count);
          fc += r.count;
        }
      }
      if (fc) far_mean += fs / double(fc) / double(runs.attention.size());
      far_count += fc;
    }
    if (by_bin.empty()) {
      ok = false;
      detail << modality << ": no tokens; ";
      continue;
    }
    const double nearest = by_bin.begin()->second.first / by_bin.begin()->second.second;
    double best_other = -INFINITY;
    for (auto it = std::next(by_bin.begin()); it != by_bin.end(); ++it)
      best_other = std::max(best_other, it->second.first / it->second.second);
    const bool peak = nearest > best_other;
    const bool lower = far_count > 0 && far_mean < nearest;
    ok &= peak && lower;
    detail << fmt("%s nearest bin %.3f, best other bin %.3f, beyond %.0f m %.3f (%zu tokens); ", modality.c_str(),
                  nearest, best_other, far, far_mean, far_count);
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 12. Reproducibility

Verdict reproducibility() {
  SynthConfig sc;
  sc.n_samples = 300;
  sc.area_m = 6000;
  sc.m_targets = 4;
  sc.d = 8;
  sc.n_fourier = 64;
  sc.group_lengthscales_m = {{"fine", 800}, {"coarse", 1600}};
  const auto ds = gen_dataset(sc);
  const auto data = prepare(bundle_from(ds), block_split(locations(ds.samples), 1500, {}, 1).assignment);
  ExperimentConfig c;
  c.k = 3;
  c.j = 2;
  c.locenc.loc_dim = 8;
  c.fusion.num_heads = 2;
  c.fusion.num_layers = 1;
  c.fusion.dropout = 0.1;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.train.lr = 1e-3;
  c.train.seed = 7;
  const auto a = run_experiment(data, c);
  c.train.threads = worker_count() + 1;
  const auto b = run_experiment(data, c);
  const bool metrics = metrics_csv(a.training.history) == metrics_csv(b.training.history) &&
                       variables_csv(a.test_report, data.schema) == variables_csv(b.test_report, data.schema);

  const auto store_bytes = serialize_store(ds.texts);
  const auto store_back = deserialize_store(store_bytes);
  const bool store = store_back == ds.texts && serialize_store(store_back) == store_bytes;

  auto ck = a.best;
  ck.optimizer = a.training.optimizer;
  const auto ck_bytes = serialize_checkpoint(ck);
  const auto ck_back = deserialize_checkpoint(ck_bytes);
  const bool checkpoint = ck_back.values == ck.values && serialize_checkpoint(ck_back) == ck_bytes &&
                          ck_back.optimizer->m == ck.optimizer->m && ck_back.optimizer->v == ck.optimizer->v;
  return {metrics && store && checkpoint,
          fmt("metrics CSV %s across runs, embedding store round trip %s, checkpoint round trip %s",
              metrics ? "identical" : "DIFFERENT", store ? "exact" : "INEXACT", checkpoint ? "exact" : "INEXACT")};
}

// ---------------------------------------------------------------------------
// 13. Variable filtering

Verdict variable_filtering() {
  Rng rng(13);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 200; ++i) {
    Sample s;
    s.id = testutil::pid(i);
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    s.targets = {a, b, 7.25, c, b};
    samples.push_back(std::move(s));
  }
  VariableSchema schema;
  schema.names = {"alpha", "beta", "flat", "gamma", "beta_dup"};
  std::vector<std::size_t> train(samples.size());
  std::iota(train.begin(), train.end(), std::size_t{0});
  const auto rep = filter_variables(samples, schema, train);
  const bool ok = rep.removed.size() == 2 && rep.removed[0].name == "flat" && rep.removed[0].reason == "low_std" &&
                  rep.removed[1].name == "beta_dup" && rep.removed[1].reason == "correlated" &&
                  rep.kept == std::vector<std::string>{"alpha", "beta", "gamma"};
  std::ostringstream detail;
  detail << rep.removed.size() << " removals:";
  for (const auto& r : rep.removed) detail << " " << r.name << " (" << r.reason << ")";
  return {ok, detail.str()};
}

}  // namespace

int main() {
  const auto t_all = std::chrono::steady_clock::now();
  std::printf("building trend dataset (ell %.0f m)\n", kTrendEll);
  const auto ds = gen_dataset(trend_synth(kTrendEll));
  const auto data = trend_data(ds);
  TrendRuns runs{data, false, {}, {}};
  std::printf("building attention dataset (ell %.0f m)\n", kAttentionEll);
  const auto attention_data = trend_data(gen_dataset(trend_synth(kAttentionEll)));
  TrendRuns attention_runs{attention_data, true, {}, {}};

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"1 knn exactness", knn_exactness},
      {"2 split hygiene", split_hygiene},
      {"3 location-encoding invariants", locenc_invariants},
      {"4 gradient check", gradient_check},
      {"5 masking statistics", masking_statistics},
      {"6 metric oracle", metric_oracle},
      {"7 k-sweep trend", [&] { return k_sweep(runs); }},
      {"8 modality trend", [&] { return modality_trend(runs); }},
      {"9 sentence selection trend", [&] { return selection_trend(runs); }},
      {"10 similarity vs distance", [&] { return similarity_trend(data); }},
      {"11 attention vs distance", [&] { return attention_trend(attention_runs); }},
      {"12 reproducibility", reproducibility},
      {"13 variable filtering", variable_filtering},
  };
  std::vector<std::string> lines;
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v{false, ""};
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all &= v.ok;
    lines.push_back(fmt("%s  [%s] %s (%.1fs)", v.ok ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(),
                        seconds_since(t0)));
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\nsummary (%.0fs total):\n", seconds_since(t_all));
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return all ? 0 : 1;
}
