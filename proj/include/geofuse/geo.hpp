#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "geofuse/core.hpp"

namespace geofuse {

/// Planar projected coordinates in meters.
struct GeoPoint {
  double east = 0.0;
  double north = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline double squared_distance(const GeoPoint& a, const GeoPoint& b) {
  const double de = a.east - b.east;
  const double dn = a.north - b.north;
  return de * de + dn * dn;
}

inline double distance(const GeoPoint& a, const GeoPoint& b) {
  return std::sqrt(squared_distance(a, b));
}

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "' (expected train, val or test)");
}

/// Restricts neighbour candidates to one split.
struct SplitMask {
  std::span<const Split> assignment;  // indexed by point index
  Split keep;
};

struct Neighbor {
  std::size_t index;
  double distance_m;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct NeighborList {
  std::size_t origin;
  std::vector<Neighbor> neighbors;
  /// Set when fewer than the requested k eligible neighbours exist.
  bool truncated = false;
};

/// Static 2-d tree answering exact k-nearest-neighbour queries.
///
/// Ordering is lexicographic on (squared distance, sample id), so results are
/// identical to sorting all candidates by that key. Immutable after
/// construction; concurrent queries are safe.
class SpatialIndex {
 public:
  static constexpr std::size_t kLeafSize = 8;

  explicit SpatialIndex(std::vector<std::pair<std::string, GeoPoint>> points) {
    require(!points.empty(), "build_index: empty point set");
    ids_.reserve(points.size());
    points_.reserve(points.size());
    for (auto& [id, p] : points) {
      require(std::isfinite(p.east) && std::isfinite(p.north),
              "build_index: non-finite coordinate for id '" + id + "'");
      if (!lookup_.emplace(id, ids_.size()).second)
        throw Error("build_index: duplicate id '" + id + "'");
      ids_.push_back(std::move(id));
      points_.push_back(p);
    }
    std::vector<std::size_t> by_id(ids_.size());
    std::iota(by_id.begin(), by_id.end(), std::size_t{0});
    std::sort(by_id.begin(), by_id.end(),
              [&](std::size_t a, std::size_t b) { return ids_[a] < ids_[b]; });
    id_rank_.resize(ids_.size());
    for (std::size_t r = 0; r < by_id.size(); ++r) id_rank_[by_id[r]] = r;

    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  const GeoPoint& point(std::size_t i) const { return points_.at(i); }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::size_t id_rank(std::size_t i) const { return id_rank_.at(i); }

  std::size_t index_of(const std::string& id) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw Error("unknown sample id '" + id + "'");
    return it->second;
  }

  /// Up to k nearest points other than `origin`, optionally restricted to the
  /// split given by `mask`.
  NeighborList query_knn(std::size_t origin, std::size_t k,
                         std::optional<SplitMask> mask = std::nullopt) const {
    require(origin < points_.size(), "query_knn: origin index out of range");
    NeighborList out{origin, {}, false};
    if (k > 0) {
      Search s{points_[origin], origin, k, mask, {}};
      s.heap.reserve(k + 1);
      search(0, s);
      std::sort(s.heap.begin(), s.heap.end());
      out.neighbors.reserve(s.heap.size());
      for (const auto& c : s.heap)
        out.neighbors.push_back({c.index, std::sqrt(c.d2)});
    }
    out.truncated = out.neighbors.size() < k;
    return out;
  }

  NeighborList query_knn(const std::string& origin_id, std::size_t k,
                         std::optional<SplitMask> mask = std::nullopt) const {
    return query_knn(index_of(origin_id), k, mask);
  }

  /// All points (other than `origin`) within `radius` meters, sorted like kNN.
  std::vector<Neighbor> query_radius(std::size_t origin, double radius,
                                     std::optional<SplitMask> mask = std::nullopt) const {
    require(origin < points_.size(), "query_radius: origin index out of range");
    std::vector<Candidate> found;
    radius_search(0, points_[origin], origin, radius * radius, mask, found);
    std::sort(found.begin(), found.end());
    std::vector<Neighbor> out;
    out.reserve(found.size());
    for (const auto& c : found) out.push_back({c.index, std::sqrt(c.d2)});
    return out;
  }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  struct Candidate {
    double d2;
    std::size_t rank;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return d2 < o.d2 || (d2 == o.d2 && rank < o.rank);
    }
  };

  struct Search {
    GeoPoint query;
    std::size_t origin;
    std::size_t k;
    std::optional<SplitMask> mask;
    std::vector<Candidate> heap;  // max-heap on Candidate ordering
  };

  static double coord(const GeoPoint& p, int axis) { return axis == 0 ? p.east : p.north; }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = points_[order_[i]];
      for (int a = 0; a < 2; ++a) {
        lo[a] = std::min(lo[a], coord(p, a));
        hi[a] = std::max(hi[a], coord(p, a));
      }
    }
    const int axis = (hi[0] - lo[0]) >= (hi[1] - lo[1]) ? 0 : 1;
    if (hi[axis] == lo[axis]) return id;  // all coincident: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       return coord(points_[a], axis) < coord(points_[b], axis);
                     });
    const double split = coord(points_[order_[mid]], axis);
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  bool eligible(std::size_t idx, std::size_t origin, const std::optional<SplitMask>& mask) const {
    if (idx == origin) return false;
    return !mask || mask->assignment[idx] == mask->keep;
  }

  void search(std::size_t node_id, Search& s) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (!eligible(idx, s.origin, s.mask)) continue;
        Candidate c{squared_distance(s.query, points_[idx]), id_rank_[idx], idx};
        if (s.heap.size() < s.k) {
          s.heap.push_back(c);
          std::push_heap(s.heap.begin(), s.heap.end());
        } else if (c < s.heap.front()) {
          std::pop_heap(s.heap.begin(), s.heap.end());
          s.heap.back() = c;
          std::push_heap(s.heap.begin(), s.heap.end());
        }
      }
      return;
    }
    // Left subtree holds coordinates <= split, right subtree >= split.
    const double diff = coord(s.query, node.axis) - node.split;
    const std::size_t near = diff < 0 ? node.left : node.right;
    const std::size_t far = diff < 0 ? node.right : node.left;
    search(near, s);
    // Equal bounds must still be visited: a tie may carry a smaller id.
    if (s.heap.size() < s.k || diff * diff <= s.heap.front().d2) search(far, s);
  }

  void radius_search(std::size_t node_id, const GeoPoint& q, std::size_t origin, double r2,
                     const std::optional<SplitMask>& mask, std::vector<Candidate>& out) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (!eligible(idx, origin, mask)) continue;
        const double d2 = squared_distance(q, points_[idx]);
        if (d2 <= r2) out.push_back({d2, id_rank_[idx], idx});
      }
      return;
    }
    const double diff = coord(q, node.axis) - node.split;
    if (diff <= 0 || diff * diff <= r2) radius_search(node.left, q, origin, r2, mask, out);
    if (diff >= 0 || diff * diff <= r2) radius_search(node.right, q, origin, r2, mask, out);
  }

  std::vector<std::string> ids_;
  std::vector<GeoPoint> points_;
  std::vector<std::size_t> id_rank_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline SpatialIndex build_index(std::vector<std::pair<std::string, GeoPoint>> points) {
  return SpatialIndex(std::move(points));
}

// ---------------------------------------------------------------------------
// Spatial block split

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct BlockKey {
  std::int64_t row;
  std::int64_t col;
  auto operator<=>(const BlockKey&) const = default;
};

struct BlockSplit {
  double block_size_m = 0.0;
  GeoPoint anchor;
  std::vector<Split> assignment;  // indexed like the input points
  std::map<BlockKey, Split> block_grid;

  std::vector<std::size_t> members(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == s) out.push_back(i);
    return out;
  }
};

/// Integer block counts per split by largest remainder, summing to `n`.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& f) {
  const double w[3] = {f.train, f.val, f.test};
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = w[i] * static_cast<double>(n);
    count[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(count[i]);
    used += count[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++count[best];
    rem[best] = -1.0;
    ++used;
  }
  return count;
}

inline BlockKey block_of(const GeoPoint& p, const GeoPoint& anchor, double block_size_m) {
  return {static_cast<std::int64_t>(std::floor((p.north - anchor.north) / block_size_m)),
          static_cast<std::int64_t>(std::floor((p.east - anchor.east) / block_size_m))};
}

/// Assigns whole axis-aligned square blocks (anchored at the bounding box's
/// minimum corner) to train/val/test by a seeded shuffle.
inline BlockSplit block_split(std::span<const GeoPoint> points, double block_size_m,
                              const SplitFractions& fractions, std::uint64_t seed) {
  require(!points.empty(), "block_split: zero samples");
  require(block_size_m > 0.0, "block_split: block size must be positive");
  require(fractions.train > 0 && fractions.val > 0 && fractions.test > 0,
          "block_split: fractions must be positive");
  require(std::abs(fractions.train + fractions.val + fractions.test - 1.0) < 1e-9,
          "block_split: fractions must sum to 1");

  BlockSplit out;
  out.block_size_m = block_size_m;
  out.anchor = {INFINITY, INFINITY};
  for (const auto& p : points) {
    out.anchor.east = std::min(out.anchor.east, p.east);
    out.anchor.north = std::min(out.anchor.north, p.north);
  }
  std::vector<BlockKey> keys;
  keys.reserve(points.size());
  for (const auto& p : points) {
    keys.push_back(block_of(p, out.anchor, block_size_m));
    out.block_grid.emplace(keys.back(), Split::train);
  }

  std::vector<BlockKey> blocks;
  blocks.reserve(out.block_grid.size());
  for (const auto& [key, _] : out.block_grid) blocks.push_back(key);
  Rng rng(derive_seed(seed, "block_split"));
  rng.shuffle(blocks.begin(), blocks.end());

  const auto counts = apportion(blocks.size(), fractions);
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t c = 0; c < counts[s]; ++c) out.block_grid[blocks[pos++]] = static_cast<Split>(s);

  out.assignment.reserve(points.size());
  for (const auto& key : keys) out.assignment.push_back(out.block_grid.at(key));
  return out;
}

// ---------------------------------------------------------------------------
// kNN distance statistics

/// Linear-interpolation percentile (q in [0, 100]) of already sorted data.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), "percentile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct KnnDistanceRow {
  std::size_t rank;
  std::size_t count;
  double mean;
  std::vector<double> percentiles;  // aligned with the requested list
};

inline std::vector<KnnDistanceRow> knn_distance_stats(const SpatialIndex& index,
                                                      std::span<const std::size_t> ids,
                                                      std::size_t k_max,
                                                      std::span<const double> percentiles,
                                                      std::optional<std::span<const Split>> splits = {}) {
  require(k_max >= 1, "knn_distance_stats: k_max must be >= 1");
  std::vector<std::vector<double>> per_rank(k_max);
  for (std::size_t id : ids) {
    std::optional<SplitMask> mask;
    if (splits) mask = SplitMask{*splits, (*splits)[id]};
    const auto nl = index.query_knn(id, k_max, mask);
    for (std::size_t r = 0; r < nl.neighbors.size(); ++r)
      per_rank[r].push_back(nl.neighbors[r].distance_m);
  }
  std::vector<KnnDistanceRow> rows;
  for (std::size_t r = 0; r < k_max; ++r) {
    auto& d = per_rank[r];
    if (d.empty()) continue;
    std::sort(d.begin(), d.end());
    KnnDistanceRow row{r + 1, d.size(), 0.0, {}};
    row.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    for (double q : percentiles) row.percentiles.push_back(percentile_sorted(d, q));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace geofuse
