#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "geofuse/core.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/geo.hpp"

namespace geofuse {

struct Sample {
  std::string id;
  GeoPoint location;
  std::string image_ref;
  std::vector<std::string> sentence_refs;
  std::vector<double> targets;
};

struct VariableSchema {
  std::vector<std::string> names;
  std::map<std::string, std::vector<std::string>> groups;
  std::vector<double> train_mean;
  std::vector<double> train_std;

  std::size_t size() const { return names.size(); }
};

// ---------------------------------------------------------------------------
// I/O

inline std::vector<Sample> parse_samples(std::istream& in, const std::string& source = "samples") {
  std::vector<Sample> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    Sample s;
    try {
      const auto j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.location = {j.at("east_m").get<double>(), j.at("north_m").get<double>()};
      s.image_ref = j.at("image_ref").get<std::string>();
      s.sentence_refs = j.at("sentence_refs").get<std::vector<std::string>>();
      s.targets = j.at("targets").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + "malformed line (" + e.what() + ")");
    }
    if (!std::isfinite(s.location.east) || !std::isfinite(s.location.north))
      throw Error(where + "non-finite coordinate");
    if (!out.empty() && s.targets.size() != out.front().targets.size())
      throw Error(where + "expected " + std::to_string(out.front().targets.size()) +
                  " targets, found " + std::to_string(s.targets.size()));
    if (!seen.insert(s.id).second) throw Error(where + "duplicate id '" + s.id + "'");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(source + ": no samples");
  if (out.front().targets.empty()) throw Error(source + ": samples carry no targets");
  return out;
}

inline std::vector<Sample> load_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_samples(in, path);
}

inline std::string format_samples(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["east_m"] = s.location.east;
    j["north_m"] = s.location.north;
    j["image_ref"] = s.image_ref;
    j["sentence_refs"] = s.sentence_refs;
    j["targets"] = s.targets;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline VariableSchema parse_variables(const nlohmann::json& j) {
  VariableSchema schema;
  schema.names = j.at("names").get<std::vector<std::string>>();
  if (j.contains("groups"))
    schema.groups = j.at("groups").get<std::map<std::string, std::vector<std::string>>>();
  std::set<std::string> known(schema.names.begin(), schema.names.end());
  require(known.size() == schema.names.size(), "variables: duplicate variable name");
  for (const auto& [g, members] : schema.groups)
    for (const auto& n : members)
      require(known.count(n) != 0, "variables: group '" + g + "' names unknown variable '" + n + "'");
  return schema;
}

inline VariableSchema load_variables(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return parse_variables(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

inline nlohmann::ordered_json variables_json(const VariableSchema& schema) {
  nlohmann::ordered_json j;
  j["names"] = schema.names;
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (const auto& [g, members] : schema.groups) groups[g] = members;
  j["groups"] = groups;
  return j;
}

/// Schema with generated names when no variables file accompanies the samples.
inline VariableSchema default_schema(std::size_t m) {
  VariableSchema s;
  for (std::size_t i = 0; i < m; ++i) s.names.push_back("var" + std::to_string(i));
  return s;
}

// ---------------------------------------------------------------------------
// Variable filtering and standardization

struct ColumnStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline ColumnStats column_stats(const std::vector<Sample>& samples, std::span<const std::size_t> rows,
                                std::size_t col) {
  require(!rows.empty(), "column statistics over an empty row set");
  double sum = 0.0;
  for (auto r : rows) sum += samples[r].targets[col];
  const double mean = sum / static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto r : rows) {
    const double d = samples[r].targets[col] - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / static_cast<double>(rows.size()))};
}

struct VariableRemoval {
  std::string name;
  std::string reason;  // "low_std" or "correlated"
  std::string detail;
};

struct FilterReport {
  std::vector<std::string> kept;
  std::vector<VariableRemoval> removed;
  std::vector<std::string> notes;
};

/// Drops near-constant variables, then the later member of each highly
/// correlated pair, using statistics of the training rows only.
inline FilterReport filter_variables(const std::vector<Sample>& samples, const VariableSchema& schema,
                                     std::span<const std::size_t> train_rows, double std_floor = 0.01,
                                     double corr_ceiling = 0.98) {
  require(!train_rows.empty(), "filter_variables: empty training split");
  const std::size_t m = schema.size();
  for (const auto& s : samples)
    require(s.targets.size() == m, "filter_variables: target length does not match schema");

  FilterReport report;
  std::vector<std::size_t> alive;
  std::vector<ColumnStats> stats(m);
  for (std::size_t v = 0; v < m; ++v) {
    stats[v] = column_stats(samples, train_rows, v);
    if (stats[v].std < std_floor) {
      std::ostringstream os;
      os << "train std " << stats[v].std << " < " << std_floor;
      report.removed.push_back({schema.names[v], "low_std", os.str()});
    } else {
      alive.push_back(v);
    }
  }

  std::vector<std::size_t> kept;
  for (std::size_t v : alive) {
    bool dup = false;
    for (std::size_t u : kept) {
      double cov = 0.0;
      for (auto r : train_rows)
        cov += (samples[r].targets[u] - stats[u].mean) * (samples[r].targets[v] - stats[v].mean);
      cov /= static_cast<double>(train_rows.size());
      const double corr = cov / (stats[u].std * stats[v].std);
      if (std::abs(corr) > corr_ceiling) {
        std::ostringstream os;
        os << "|corr| with '" << schema.names[u] << "' = " << std::abs(corr) << " > " << corr_ceiling;
        report.removed.push_back({schema.names[v], "correlated", os.str()});
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(v);
  }
  if (kept.empty()) throw Error("filter_variables: every variable was removed");
  for (std::size_t v : kept) report.kept.push_back(schema.names[v]);
  report.notes.push_back("importance-based selection step not applied (requires habitat labels)");
  return report;
}

/// Restricts samples and schema to `keep` (a subsequence of schema.names).
inline void select_variables(std::vector<Sample>& samples, VariableSchema& schema,
                             const std::vector<std::string>& keep) {
  std::vector<std::size_t> cols;
  std::size_t pos = 0;
  for (const auto& name : keep) {
    while (pos < schema.names.size() && schema.names[pos] != name) ++pos;
    require(pos < schema.names.size(), "select_variables: '" + name + "' not an ordered subsequence");
    cols.push_back(pos++);
  }
  for (auto& s : samples) {
    std::vector<double> t;
    t.reserve(cols.size());
    for (auto c : cols) t.push_back(s.targets[c]);
    s.targets = std::move(t);
  }
  std::set<std::string> kept(keep.begin(), keep.end());
  for (auto& [g, members] : schema.groups)
    std::erase_if(members, [&](const std::string& n) { return kept.count(n) == 0; });
  schema.names = keep;
  schema.train_mean.clear();
  schema.train_std.clear();
}

/// Computes train-split mean/std (population) and rewrites every sample's
/// targets to standard units.
inline VariableSchema standardize_targets(std::vector<Sample>& samples, VariableSchema schema,
                                          std::span<const std::size_t> train_rows) {
  require(!train_rows.empty(), "standardize_targets: empty training split");
  const std::size_t m = schema.size();
  schema.train_mean.assign(m, 0.0);
  schema.train_std.assign(m, 0.0);
  for (std::size_t v = 0; v < m; ++v) {
    const auto st = column_stats(samples, train_rows, v);
    if (!(st.std > 0.0))
      throw Error("standardize_targets: variable '" + schema.names[v] +
                  "' has zero train std; run filter_variables first");
    schema.train_mean[v] = st.mean;
    schema.train_std[v] = st.std;
  }
  for (auto& s : samples)
    for (std::size_t v = 0; v < m; ++v)
      s.targets[v] = (s.targets[v] - schema.train_mean[v]) / schema.train_std[v];
  return schema;
}

inline std::vector<double> destandardize(std::span<const double> z, const VariableSchema& schema) {
  std::vector<double> y(z.size());
  for (std::size_t v = 0; v < z.size(); ++v) y[v] = z[v] * schema.train_std[v] + schema.train_mean[v];
  return y;
}

// ---------------------------------------------------------------------------
// Context assembly

struct ContextNeighbor {
  const Sample* sample;
  std::size_t index;
  double distance_m;
  double dx;  // neighbour minus origin, meters
  double dy;
};

struct ContextSample {
  const Sample* origin;
  std::size_t origin_index;
  std::vector<ContextNeighbor> neighbors;
  std::size_t k_effective = 0;
};

/// Origin plus up to k same-split neighbours in kNN order. The samples vector
/// must be indexed like the spatial index.
inline ContextSample assemble_context(const std::vector<Sample>& samples, const SpatialIndex& index,
                                      std::size_t origin, std::size_t k,
                                      std::optional<SplitMask> mask = std::nullopt) {
  require(samples.size() == index.size(), "assemble_context: sample/index size mismatch");
  const auto nl = index.query_knn(origin, k, mask);
  ContextSample ctx{&samples[origin], origin, {}, nl.neighbors.size()};
  const GeoPoint& o = samples[origin].location;
  for (const auto& n : nl.neighbors) {
    const GeoPoint& p = samples[n.index].location;
    ctx.neighbors.push_back({&samples[n.index], n.index, n.distance_m, p.east - o.east, p.north - o.north});
  }
  return ctx;
}

}  // namespace geofuse
