#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geofuse/core.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/locenc.hpp"
#include "geofuse/params.hpp"

namespace geofuse {

enum class Modality : std::uint8_t { visual = 0, text = 1 };

inline const char* to_string(Modality m) { return m == Modality::visual ? "visual" : "text"; }

/// Which modalities enter the token sequence.
enum class InputMode { text_images, images, text, text_one_image };

inline const char* to_string(InputMode m) {
  switch (m) {
    case InputMode::text_images: return "text+images";
    case InputMode::images: return "images";
    case InputMode::text: return "text";
    case InputMode::text_one_image: return "text+1image";
  }
  return "?";
}

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "text+images") return InputMode::text_images;
  if (s == "images") return InputMode::images;
  if (s == "text") return InputMode::text;
  if (s == "text+1image") return InputMode::text_one_image;
  throw Error("unknown modality '" + s + "' (expected text+images, images, text or text+1image)");
}

inline bool uses_text(InputMode m) { return m != InputMode::images; }

struct TokenMeta {
  Modality modality;
  std::size_t rank;  // 0 = query location
  double distance_m;
};

/// Pre-fusion token sequence: one row per token.
struct TokenInputs {
  Mat features;  // n x d
  Mat loc;       // n x loc_width (0 columns for kinds without a fixed encoding)
  std::vector<TokenMeta> meta;

  std::size_t size() const { return meta.size(); }

  TokenInputs subset(std::span<const std::size_t> rows) const {
    TokenInputs out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.loc.resize(static_cast<Eigen::Index>(rows.size()), loc.cols());
    out.meta.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(rows[i]);
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
      if (loc.cols() > 0) out.loc.row(static_cast<Eigen::Index>(i)) = loc.row(r);
      out.meta.push_back(meta[rows[i]]);
    }
    return out;
  }
};

/// Fused token as seen by the transformer.
struct Token {
  std::vector<double> values;
  Modality modality;
  std::size_t rank;
  double distance_m;
};

/// Embedding rows per sample: the image row, and the selected sentence rows
/// (empty when the sample has no sentences).
struct EmbeddingRefs {
  std::vector<std::size_t> image;
  std::vector<std::vector<std::size_t>> text;
};

enum class TextSelection { top_j, random };

/// Picks j sentences per sample and resolves every reference to store rows.
inline EmbeddingRefs resolve_refs(const std::vector<Sample>& samples, const EmbeddingStore& images,
                                  const EmbeddingStore& texts, std::size_t j, TextSelection policy,
                                  std::uint64_t seed) {
  EmbeddingRefs refs;
  refs.image.reserve(samples.size());
  refs.text.reserve(samples.size());
  std::vector<KeyedEmbedding> keyed;
  for (const auto& s : samples) {
    refs.image.push_back(images.index_of(s.image_ref));
    std::vector<std::size_t> rows;
    if (j > 0 && !s.sentence_refs.empty()) {
      const std::uint64_t sseed = derive_seed(seed, s.id);
      std::vector<std::string> chosen;
      if (policy == TextSelection::top_j) {
        keyed.clear();
        for (const auto& key : s.sentence_refs) keyed.push_back({key, texts.get(key)});
        chosen = select_top_j(images.at(refs.image.back()), keyed, j, sseed);
      } else {
        chosen = random_select(s.sentence_refs, j, sseed);
      }
      for (const auto& key : chosen) rows.push_back(texts.index_of(key));
    }
    refs.text.push_back(std::move(rows));
  }
  return refs;
}

/// Token order: visual rank 0..k, then text rank 0..k with j slots each.
inline TokenInputs build_tokens(const ContextSample& ctx, const EmbeddingRefs& refs,
                                const EmbeddingStore& images, const EmbeddingStore& texts,
                                const LocEncConfig& loc_cfg, InputMode mode) {
  require(mode == InputMode::images || images.dim() == texts.dim(),
          "build_tokens: image and text stores must share the embedding dimension");
  struct Place {
    std::size_t index;
    TokenPlace place;
  };
  std::vector<Place> places;
  places.push_back({ctx.origin_index, {0, ctx.origin->location, 0.0, 0.0, 0.0}});
  for (std::size_t r = 0; r < ctx.neighbors.size(); ++r) {
    const auto& n = ctx.neighbors[r];
    places.push_back({n.index, {r + 1, n.sample->location, n.dx, n.dy, n.distance_m}});
  }

  std::vector<std::pair<std::size_t, std::size_t>> rows;  // (place, embedding row)
  std::vector<Modality> kinds;
  if (mode != InputMode::text) {
    const std::size_t last = mode == InputMode::text_one_image ? 1 : places.size();
    for (std::size_t p = 0; p < last; ++p) {
      rows.emplace_back(p, refs.image.at(places[p].index));
      kinds.push_back(Modality::visual);
    }
  }
  if (uses_text(mode)) {
    for (std::size_t p = 0; p < places.size(); ++p)
      for (std::size_t t : refs.text.at(places[p].index)) {
        rows.emplace_back(p, t);
        kinds.push_back(Modality::text);
      }
  }

  const std::size_t d = images.dim();
  const std::size_t lw = loc_cfg.encoding_width();
  std::vector<std::vector<double>> encodings(places.size());
  if (lw > 0)
    for (std::size_t p = 0; p < places.size(); ++p) encodings[p] = encode_location(places[p].place, loc_cfg);

  TokenInputs out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  out.loc.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(lw));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto [p, e] = rows[i];
    const auto emb = kinds[i] == Modality::visual ? images.at(e) : texts.at(e);
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t c = 0; c < d; ++c) out.features(r, static_cast<Eigen::Index>(c)) = emb[c];
    for (std::size_t c = 0; c < lw; ++c) out.loc(r, static_cast<Eigen::Index>(c)) = encodings[p][c];
    out.meta.push_back({kinds[i], places[p].place.rank, places[p].place.distance_m});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random token masking

/// Rows surviving independent removal with probability `mask_prob`. Eval mode
/// keeps everything. If every token drops, the lowest-rank visual token is
/// retained, or the lowest-rank text token when no visual token is present.
inline std::vector<std::size_t> mask_rows(std::span<const TokenMeta> meta, double mask_prob, Rng& rng,
                                          bool training) {
  std::vector<std::size_t> keep;
  keep.reserve(meta.size());
  if (!training || mask_prob <= 0.0) {
    for (std::size_t i = 0; i < meta.size(); ++i) keep.push_back(i);
    return keep;
  }
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (rng.uniform() >= mask_prob) keep.push_back(i);
  if (keep.empty() && !meta.empty()) {
    std::size_t best = 0;
    auto better = [&](const TokenMeta& a, const TokenMeta& b) {
      if (a.modality != b.modality) return a.modality == Modality::visual;
      return a.rank < b.rank;
    };
    for (std::size_t i = 1; i < meta.size(); ++i)
      if (better(meta[i], meta[best])) best = i;
    keep.push_back(best);
  }
  return keep;
}

template <typename T>
std::vector<T> mask_tokens(const std::vector<T>& tokens, double mask_prob, std::uint64_t seed,
                           bool training) {
  std::vector<TokenMeta> meta;
  meta.reserve(tokens.size());
  for (const auto& t : tokens) meta.push_back({t.modality, t.rank, t.distance_m});
  Rng rng(seed);
  std::vector<T> out;
  for (auto i : mask_rows(meta, mask_prob, rng, training)) out.push_back(tokens[i]);
  return out;
}

inline TokenInputs mask_tokens(const TokenInputs& tokens, double mask_prob, std::uint64_t seed,
                               bool training) {
  Rng rng(seed);
  const auto rows = mask_rows(tokens.meta, mask_prob, rng, training);
  return tokens.subset(rows);
}

}  // namespace geofuse
