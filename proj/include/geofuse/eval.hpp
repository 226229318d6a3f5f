#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geofuse/core.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/fusion.hpp"
#include "geofuse/geo.hpp"

namespace geofuse {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct R2Result {
  std::vector<double> r2;                         // squared Pearson correlation
  std::vector<double> coefficient_of_determination;
  std::vector<bool> constant_prediction;          // R^2 forced to 0
};

/// Per-column squared Pearson correlation of predictions against targets
/// (n x m, row-major as vector of rows).
inline R2Result r2_per_variable(const std::vector<std::vector<double>>& preds,
                                const std::vector<std::vector<double>>& targets) {
  require(preds.size() == targets.size(), "r2_per_variable: row count mismatch");
  require(preds.size() >= 2, "r2_per_variable: need at least two rows");
  const std::size_t n = preds.size();
  const std::size_t m = targets.front().size();
  R2Result out;
  out.r2.assign(m, 0.0);
  out.coefficient_of_determination.assign(m, 0.0);
  out.constant_prediction.assign(m, false);
  for (std::size_t v = 0; v < m; ++v) {
    CompensatedSum sp, st;
    for (std::size_t i = 0; i < n; ++i) {
      require(preds[i].size() == m && targets[i].size() == m, "r2_per_variable: ragged rows");
      sp.add(preds[i][v]);
      st.add(targets[i][v]);
    }
    const double mp = sp.value() / static_cast<double>(n);
    const double mt = st.value() / static_cast<double>(n);
    CompensatedSum cov, vp, vt, sse;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = preds[i][v] - mp;
      const double b = targets[i][v] - mt;
      cov.add(a * b);
      vp.add(a * a);
      vt.add(b * b);
      const double e = preds[i][v] - targets[i][v];
      sse.add(e * e);
    }
    require(vt.value() > 0.0, "r2_per_variable: target variance is zero for variable " + std::to_string(v));
    out.coefficient_of_determination[v] = 1.0 - sse.value() / vt.value();
    if (!(vp.value() > 0.0)) {
      out.constant_prediction[v] = true;
      continue;
    }
    const double r = cov.value() / std::sqrt(vp.value() * vt.value());
    out.r2[v] = r * r;
  }
  return out;
}

struct EvalReport {
  std::map<std::string, double> per_variable_r2;
  std::map<std::string, double> per_variable_cod;
  std::vector<std::string> order;  // variable order of the schema
  double mean_r2 = 0.0;
  std::map<std::string, double> per_group_r2;
  std::vector<std::string> warnings;
  std::size_t n_test = 0;
};

inline double mean_of(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return xs.empty() ? 0.0 : s.value() / static_cast<double>(xs.size());
}

inline EvalReport group_report(const R2Result& r2, const VariableSchema& schema, std::size_t n_test) {
  require(r2.r2.size() == schema.size(), "group_report: variable count mismatch");
  EvalReport rep;
  rep.n_test = n_test;
  rep.order = schema.names;
  for (std::size_t v = 0; v < schema.size(); ++v) {
    rep.per_variable_r2[schema.names[v]] = r2.r2[v];
    rep.per_variable_cod[schema.names[v]] = r2.coefficient_of_determination[v];
    if (r2.constant_prediction[v])
      rep.warnings.push_back("constant prediction for '" + schema.names[v] + "'; R2 set to 0");
  }
  rep.mean_r2 = mean_of(r2.r2);
  for (const auto& [g, members] : schema.groups) {
    if (members.empty()) {
      rep.warnings.push_back("group '" + g + "' is empty; omitted");
      continue;
    }
    std::vector<double> vals;
    for (const auto& name : members) vals.push_back(rep.per_variable_r2.at(name));
    rep.per_group_r2[g] = mean_of(vals);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Binned tables

struct BinRow {
  double bin_start_m;
  std::string modality;
  double mean;
  double std;  // population
  std::size_t count;
};

namespace detail {

struct BinAccumulator {
  CompensatedSum sum, sumsq;
  std::size_t count = 0;
  void add(double x) {
    sum.add(x);
    sumsq.add(x * x);
    ++count;
  }
};

inline std::vector<BinRow> finish_bins(const std::map<std::pair<std::string, long>, BinAccumulator>& acc,
                                       double bin_m) {
  std::vector<BinRow> rows;
  for (const auto& [key, a] : acc) {
    if (a.count == 0) continue;
    const double mean = a.sum.value() / static_cast<double>(a.count);
    const double var = std::max(0.0, a.sumsq.value() / static_cast<double>(a.count) - mean * mean);
    rows.push_back({static_cast<double>(key.second) * bin_m, key.first, mean, std::sqrt(var), a.count});
  }
  std::sort(rows.begin(), rows.end(), [](const BinRow& a, const BinRow& b) {
    return a.modality < b.modality || (a.modality == b.modality && a.bin_start_m < b.bin_start_m);
  });
  return rows;
}

}  // namespace detail

/// Per-token score: log of the largest attention weight the token receives
/// from any query row in any layer and head.
inline std::vector<double> attention_scores(const AttentionRecord& rec) {
  const std::size_t n = rec.tokens.size();
  std::vector<double> best(n, 0.0);
  for (const auto& layer : rec.weights)
    for (const auto& P : layer) {
      require(static_cast<std::size_t>(P.cols()) == n + 1, "attention record: shape mismatch");
      for (std::size_t t = 0; t < n; ++t)
        best[t] = std::max(best[t], P.col(static_cast<Eigen::Index>(t + 1)).maxCoeff());
    }
  for (auto& b : best) b = std::log(b);
  return best;
}

/// Log-max attention per token, min-max scaled over all records, binned by
/// token distance. A degenerate (constant) score range scales to 0.5.
inline std::vector<BinRow> attention_vs_distance(std::span<const AttentionRecord> records, double bin_m = 100.0) {
  require(bin_m > 0.0, "attention_vs_distance: bin width must be positive");
  struct Item {
    double score;
    double distance;
    Modality modality;
  };
  std::vector<Item> items;
  for (const auto& rec : records) {
    const auto scores = attention_scores(rec);
    for (std::size_t t = 0; t < scores.size(); ++t)
      items.push_back({scores[t], rec.tokens[t].distance_m, rec.tokens[t].modality});
  }
  if (items.empty()) return {};
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& it : items) {
    lo = std::min(lo, it.score);
    hi = std::max(hi, it.score);
  }
  std::map<std::pair<std::string, long>, detail::BinAccumulator> acc;
  for (const auto& it : items) {
    const double scaled = hi > lo ? (it.score - lo) / (hi - lo) : 0.5;
    const long bin = static_cast<long>(std::floor(it.distance / bin_m));
    acc[{to_string(it.modality), bin}].add(scaled);
  }
  return detail::finish_bins(acc, bin_m);
}

/// Mean pairwise cosine similarity of per-sample embeddings per distance lag,
/// over pairs of `members` (same split) closer than max_m. Each unordered pair
/// counts once.
inline std::vector<BinRow> similarity_vs_distance(const SpatialIndex& index,
                                                  std::span<const std::size_t> members,
                                                  std::span<const Split> assignment,
                                                  const std::vector<Embedding>& per_sample,
                                                  const std::string& modality, double lag_m, double max_m,
                                                  std::size_t max_pairs_per_lag = 0) {
  require(lag_m > 0.0 && max_m > 0.0, "similarity_vs_distance: lag and range must be positive");
  require(per_sample.size() == index.size(), "similarity_vs_distance: one embedding per sample required");
  std::map<std::pair<std::string, long>, detail::BinAccumulator> acc;
  for (std::size_t i : members) {
    std::optional<SplitMask> mask;
    if (!assignment.empty()) mask = SplitMask{assignment, assignment[i]};
    for (const auto& nb : index.query_radius(i, max_m, mask)) {
      if (index.id_rank(nb.index) < index.id_rank(i)) continue;  // each pair once
      if (nb.distance_m >= max_m) continue;
      const long lag = static_cast<long>(std::floor(nb.distance_m / lag_m));
      auto& a = acc[{modality, lag}];
      if (max_pairs_per_lag && a.count >= max_pairs_per_lag) continue;
      a.add(cosine_similarity(per_sample[i], per_sample[nb.index]));
    }
  }
  return detail::finish_bins(acc, lag_m);
}

/// Smallest lag whose excess similarity over the far-field plateau (mean of
/// the last quarter of lags) falls below `threshold_fraction` of the first
/// lag's excess. Returns 0 when the first lag carries no excess.
inline double effective_range(std::span<const BinRow> table, double threshold_fraction = 0.1) {
  require(!table.empty(), "effective_range: empty table");
  std::vector<BinRow> rows(table.begin(), table.end());
  std::sort(rows.begin(), rows.end(), [](const BinRow& a, const BinRow& b) { return a.bin_start_m < b.bin_start_m; });
  const std::size_t tail = std::max<std::size_t>(1, rows.size() / 4);
  CompensatedSum plateau_sum;
  for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) plateau_sum.add(rows[i].mean);
  const double plateau = plateau_sum.value() / static_cast<double>(tail);
  const double excess0 = rows.front().mean - plateau;
  if (!(excess0 > 0.0)) return 0.0;
  for (const auto& r : rows)
    if (r.mean - plateau < threshold_fraction * excess0) return r.bin_start_m;
  return rows.back().bin_start_m;
}

}  // namespace geofuse
