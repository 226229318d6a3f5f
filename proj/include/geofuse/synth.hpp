#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geofuse/core.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/geo.hpp"

namespace geofuse {

/// Angular-frequency scale such that the field correlation at distance l
/// equals 0.1: corr(r) = exp(-c^2 r^2 / (2 l^2)) with c = sqrt(2 ln 10).
inline const double kRangeFrequencyScale = std::sqrt(2.0 * std::log(10.0));

/// Stationary Gaussian-process surrogate built from random Fourier features
/// with a Gaussian spectrum; unit marginal variance in expectation.
class RandomField {
 public:
  RandomField(std::uint64_t seed, double lengthscale_m, std::size_t n_fourier) : lengthscale_(lengthscale_m) {
    require(lengthscale_m > 0.0, "gen_field: lengthscale must be positive");
    require(n_fourier >= 1, "gen_field: need at least one Fourier feature");
    Rng rng(derive_seed(seed, "random_field"));
    const double sigma = kRangeFrequencyScale / lengthscale_m;
    features_.reserve(n_fourier);
    for (std::size_t f = 0; f < n_fourier; ++f) {
      Feature ft;
      ft.wx = sigma * rng.normal();
      ft.wy = sigma * rng.normal();
      ft.amp = rng.normal();
      ft.phase = rng.uniform(0.0, 2.0 * kPi);
      features_.push_back(ft);
    }
    norm_ = std::sqrt(2.0 / static_cast<double>(n_fourier));
  }

  double lengthscale() const { return lengthscale_; }

  double operator()(const GeoPoint& p) const {
    double s = 0.0;
    for (const auto& f : features_) s += f.amp * std::cos(f.wx * p.east + f.wy * p.north + f.phase);
    return norm_ * s;
  }

  /// Exact average of the field over the disk of radius `radius_m` around p.
  double disk_average(const GeoPoint& p, double radius_m) const {
    if (radius_m <= 0.0) return (*this)(p);
    double s = 0.0;
    for (const auto& f : features_) {
      const double x = std::hypot(f.wx, f.wy) * radius_m;
      const double damp = x > 1e-12 ? 2.0 * std::cyl_bessel_j(1.0, x) / x : 1.0;
      s += f.amp * damp * std::cos(f.wx * p.east + f.wy * p.north + f.phase);
    }
    return norm_ * s;
  }

 private:
  struct Feature {
    double wx, wy, amp, phase;
  };
  double lengthscale_;
  double norm_;
  std::vector<Feature> features_;
};

inline RandomField gen_field(std::uint64_t seed, double lengthscale_m, std::size_t n_fourier) {
  return RandomField(seed, lengthscale_m, n_fourier);
}

struct SynthConfig {
  std::size_t n_samples = 2000;
  double area_m = 20'000.0;
  std::size_t m_targets = 16;
  std::vector<std::pair<std::string, double>> group_lengthscales_m = {{"fine", 600.0}, {"coarse", 1500.0}};
  std::size_t d = 32;
  std::size_t n_fourier = 256;
  double image_noise_sigma = 0.5;
  double text_noise_sigma = 0.5;
  std::size_t sentences_min = 2;
  std::size_t sentences_max = 8;
  double signal_sentence_fraction = 0.5;
  double text_pool_radius_m = 500.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_samples >= 1, "synth: n_samples must be >= 1");
    require(area_m > 0.0, "synth: area_m must be positive");
    require(m_targets >= 1, "synth: m_targets must be >= 1");
    require(!group_lengthscales_m.empty(), "synth: need at least one group");
    for (const auto& [g, l] : group_lengthscales_m) require(l > 0.0, "synth: lengthscale of '" + g + "' must be > 0");
    require(d >= 2, "synth: d must be >= 2");
    require(n_fourier >= 1, "synth: n_fourier must be >= 1");
    require(image_noise_sigma >= 0.0 && text_noise_sigma >= 0.0, "synth: noise must be non-negative");
    require(sentences_min <= sentences_max, "synth: sentences_min > sentences_max");
    require(signal_sentence_fraction >= 0.0 && signal_sentence_fraction <= 1.0,
            "synth: signal_sentence_fraction must be in [0, 1]");
    require(text_pool_radius_m >= 0.0, "synth: text_pool_radius_m must be >= 0");
  }
};

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n_samples"] = c.n_samples;
  j["area_m"] = c.area_m;
  j["m_targets"] = c.m_targets;
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (const auto& [g, l] : c.group_lengthscales_m) groups[g] = l;
  j["group_lengthscales_m"] = groups;
  j["d"] = c.d;
  j["n_fourier"] = c.n_fourier;
  j["image_noise_sigma"] = c.image_noise_sigma;
  j["text_noise_sigma"] = c.text_noise_sigma;
  j["sentences_per_sample"] = {c.sentences_min, c.sentences_max};
  j["signal_sentence_fraction"] = c.signal_sentence_fraction;
  j["text_pool_radius_m"] = c.text_pool_radius_m;
  j["seed"] = c.seed;
  return j;
}

inline SynthConfig synth_from_json(const nlohmann::ordered_json& j) {
  SynthConfig c;
  auto opt = [&](const char* k, auto& out) {
    if (j.contains(k)) out = j.at(k).get<std::decay_t<decltype(out)>>();
  };
  opt("n_samples", c.n_samples);
  opt("area_m", c.area_m);
  opt("m_targets", c.m_targets);
  if (j.contains("group_lengthscales_m")) {
    c.group_lengthscales_m.clear();
    for (const auto& [g, l] : j.at("group_lengthscales_m").items()) c.group_lengthscales_m.emplace_back(g, l.get<double>());
  }
  opt("d", c.d);
  opt("n_fourier", c.n_fourier);
  opt("image_noise_sigma", c.image_noise_sigma);
  opt("text_noise_sigma", c.text_noise_sigma);
  if (j.contains("sentences_per_sample")) {
    const auto r = j.at("sentences_per_sample").get<std::vector<std::size_t>>();
    require(r.size() == 2, "synth: sentences_per_sample must be [min, max]");
    c.sentences_min = r[0];
    c.sentences_max = r[1];
  }
  opt("signal_sentence_fraction", c.signal_sentence_fraction);
  opt("text_pool_radius_m", c.text_pool_radius_m);
  opt("seed", c.seed);
  c.validate();
  return c;
}

struct SynthDataset {
  SynthConfig config;
  std::vector<Sample> samples;
  EmbeddingStore images;
  EmbeddingStore texts;
  VariableSchema schema;
  std::set<std::string> signal_keys;
  std::vector<double> variable_lengthscales;

  nlohmann::ordered_json manifest() const {
    nlohmann::ordered_json j;
    j["generator"] = "random-fourier-field";
    j["config"] = to_json(config);
    j["variable_lengthscales_m"] = variable_lengthscales;
    j["signal_sentence_keys"] = std::vector<std::string>(signal_keys.begin(), signal_keys.end());
    return j;
  }
};

namespace detail {
inline std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

inline void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}
}  // namespace detail

/// Uniform locations; targets are per-variable random fields; images embed
/// the local field vector through a fixed linear map plus noise; signal
/// sentences embed the disk-averaged field vector, distractors are random.
inline SynthDataset gen_dataset(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset out;
  out.config = cfg;
  out.images = EmbeddingStore(cfg.d);
  out.texts = EmbeddingStore(cfg.d);

  const std::size_t groups = cfg.group_lengthscales_m.size();
  std::vector<RandomField> fields;
  for (std::size_t v = 0; v < cfg.m_targets; ++v) {
    const auto& [gname, ell] = cfg.group_lengthscales_m[v % groups];
    std::string name = gname + "_" + std::to_string(v);
    out.schema.names.push_back(name);
    out.schema.groups[gname].push_back(name);
    out.variable_lengthscales.push_back(ell);
    fields.emplace_back(derive_seed(cfg.seed, 0xF1E1Du, v), ell, cfg.n_fourier);
  }

  std::vector<double> mix(cfg.d * cfg.m_targets);
  {
    Rng rng(derive_seed(cfg.seed, "mixing"));
    for (auto& a : mix) a = rng.normal();
  }
  auto embed = [&](const std::vector<double>& f) {
    std::vector<double> e(cfg.d, 0.0);
    for (std::size_t r = 0; r < cfg.d; ++r)
      for (std::size_t c = 0; c < cfg.m_targets; ++c) e[r] += mix[r * cfg.m_targets + c] * f[c];
    detail::normalize_in_place(e);
    return e;
  };
  const double noise_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));

  out.samples.reserve(cfg.n_samples);
  std::vector<double> f(cfg.m_targets), pooled(cfg.m_targets);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x5A3Bu, i));
    Sample s;
    s.id = detail::padded("p", i);
    s.location = {rng.uniform(0.0, cfg.area_m), rng.uniform(0.0, cfg.area_m)};
    for (std::size_t v = 0; v < cfg.m_targets; ++v) {
      f[v] = fields[v](s.location);
      pooled[v] = fields[v].disk_average(s.location, cfg.text_pool_radius_m);
    }
    s.targets = f;

    auto img = embed(f);
    for (auto& x : img) x += cfg.image_noise_sigma * noise_scale * rng.normal();
    s.image_ref = detail::padded("img", i);
    out.images.add(s.image_ref, img);

    const std::size_t count = cfg.sentences_min + rng.below(cfg.sentences_max - cfg.sentences_min + 1);
    const auto n_signal = static_cast<std::size_t>(std::floor(cfg.signal_sentence_fraction * static_cast<double>(count) + 0.5));
    std::vector<bool> is_signal(count, false);
    for (std::size_t t = 0; t < n_signal; ++t) is_signal[t] = true;
    rng.shuffle(is_signal.begin(), is_signal.end());
    const auto text_dir = embed(pooled);
    for (std::size_t t = 0; t < count; ++t) {
      std::vector<double> e(cfg.d);
      if (is_signal[t]) {
        e = text_dir;
        for (auto& x : e) x += cfg.text_noise_sigma * noise_scale * rng.normal();
      } else {
        for (auto& x : e) x = rng.normal();
        detail::normalize_in_place(e);
      }
      std::string key = s.id + "_s" + std::to_string(t);
      out.texts.add(key, e);
      if (is_signal[t]) out.signal_keys.insert(key);
      s.sentence_refs.push_back(std::move(key));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_file(path.string(), text);
}

/// Writes samples.jsonl, images.gfeb, texts.gfeb, variables.json, manifest.json.
inline void write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "samples.jsonl", format_samples(ds.samples));
  save_store(ds.images, (dir / "images.gfeb").string());
  save_store(ds.texts, (dir / "texts.gfeb").string());
  write_text(dir / "variables.json", variables_json(ds.schema).dump(2) + "\n");
  write_text(dir / "manifest.json", ds.manifest().dump(2) + "\n");
}

}  // namespace geofuse
