#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "geofuse/core.hpp"

namespace geofuse {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Dense frozen-encoder output.
using Embedding = std::vector<double>;
using EmbeddingView = std::span<const double>;

/// Id-indexed embeddings of one dimension. Values are held at f32 precision
/// (widened to f64) so that the on-disk format round-trips exactly.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {
    require(dim > 0, "embedding store: dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  bool contains(const std::string& key) const { return lookup_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return keys_; }

  void add(std::string key, EmbeddingView values) {
    require(values.size() == dim_, "embedding store: dimension mismatch for key '" + key + "'");
    for (double v : values) require(std::isfinite(v), "embedding store: non-finite value in '" + key + "'");
    if (!lookup_.emplace(key, keys_.size()).second)
      throw Error("embedding store: duplicate key '" + key + "'");
    keys_.push_back(std::move(key));
    for (double v : values) data_.push_back(static_cast<double>(static_cast<float>(v)));
  }

  std::size_t index_of(const std::string& key) const {
    auto it = lookup_.find(key);
    if (it == lookup_.end()) throw Error("missing embedding for key '" + key + "'");
    return it->second;
  }

  EmbeddingView at(std::size_t index) const {
    return {data_.data() + index * dim_, dim_};
  }
  EmbeddingView get(const std::string& key) const { return at(index_of(key)); }

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    return a.dim_ == b.dim_ && a.keys_ == b.keys_ && a.data_ == b.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::vector<double> data_;
};

inline double cosine_similarity(EmbeddingView a, EmbeddingView b) {
  require(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, "cosine_similarity: zero vector has no direction");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

struct KeyedEmbedding {
  std::string key;
  EmbeddingView values;
};

/// Top-j sentences by cosine similarity to the co-located image, ties by
/// ascending key. Short lists are padded by seeded uniform draws with
/// replacement from the available sentences.
inline std::vector<std::string> select_top_j(EmbeddingView image,
                                             std::span<const KeyedEmbedding> sentences,
                                             std::size_t j, std::uint64_t seed) {
  require(j >= 1, "select_top_j: j must be >= 1");
  require(!sentences.empty(), "select_top_j: empty sentence list");
  std::vector<std::pair<double, const std::string*>> scored;
  scored.reserve(sentences.size());
  for (const auto& s : sentences) scored.emplace_back(cosine_similarity(image, s.values), &s.key);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && *a.second < *b.second);
  });
  std::vector<std::string> out;
  out.reserve(j);
  for (std::size_t i = 0; i < std::min(j, scored.size()); ++i) out.push_back(*scored[i].second);
  if (out.size() < j) {
    // Draw from the ranked list so the result does not depend on input order.
    Rng rng(derive_seed(seed, "select_top_j"));
    while (out.size() < j) out.push_back(*scored[rng.below(scored.size())].second);
  }
  return out;
}

/// Seeded uniform choice of j keys: without replacement while possible, then
/// with replacement.
inline std::vector<std::string> random_select(std::span<const std::string> sentences, std::size_t j,
                                              std::uint64_t seed) {
  if (j == 0) return {};
  require(!sentences.empty(), "random_select: empty sentence list");
  Rng rng(derive_seed(seed, "random_select"));
  std::vector<std::size_t> perm(sentences.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm.begin(), perm.end());
  std::vector<std::string> out;
  out.reserve(j);
  for (std::size_t i = 0; i < std::min(j, perm.size()); ++i) out.push_back(sentences[perm[i]]);
  while (out.size() < j) out.push_back(sentences[rng.below(sentences.size())]);
  return out;
}

// ---------------------------------------------------------------------------
// Binary store format (little-endian):
//   "GFEB" | version u16 = 1 | dtype u8 = 1 (f32) | reserved u8 | dim u32 | count u64
//   count x [key_len u16 | key bytes | dim x f32]

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error("unexpected end of file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace detail

inline std::string serialize_store(const EmbeddingStore& store) {
  std::string buf = "GFEB";
  detail::put<std::uint16_t>(buf, 1);
  detail::put<std::uint8_t>(buf, 1);
  detail::put<std::uint8_t>(buf, 0);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(store.dim()));
  detail::put<std::uint64_t>(buf, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& key = store.keys()[i];
    require(key.size() <= 0xFFFF, "embedding key too long: '" + key.substr(0, 32) + "...'");
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(key.size()));
    buf += key;
    for (double v : store.at(i)) detail::put<float>(buf, static_cast<float>(v));
  }
  return buf;
}

inline EmbeddingStore deserialize_store(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (r.bytes(4) != "GFEB") throw Error("embedding store: bad magic");
  if (r.get<std::uint16_t>() != 1) throw Error("embedding store: unsupported version");
  if (r.get<std::uint8_t>() != 1) throw Error("embedding store: unsupported dtype");
  r.get<std::uint8_t>();
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) throw Error("embedding store: dimension header is 0");
  const auto count = r.get<std::uint64_t>();
  EmbeddingStore store(dim);
  std::vector<double> values(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string key = r.bytes(len);
    for (auto& v : values) v = static_cast<double>(r.get<float>());
    store.add(std::move(key), values);
  }
  if (!r.done()) throw Error("embedding store: trailing bytes after last record");
  return store;
}

inline void save_store(const EmbeddingStore& store, const std::string& path) {
  detail::write_file(path, serialize_store(store));
}

inline EmbeddingStore load_store(const std::string& path) {
  return deserialize_store(detail::read_file(path));
}

}  // namespace geofuse
