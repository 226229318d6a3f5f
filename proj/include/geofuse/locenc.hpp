#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "geofuse/core.hpp"
#include "geofuse/geo.hpp"

namespace geofuse {

enum class LocEncKind { none, rank, learnable, coordinates, distance, polar };

inline constexpr std::array<LocEncKind, 6> kAllLocEncKinds = {
    LocEncKind::none,        LocEncKind::rank,     LocEncKind::learnable,
    LocEncKind::coordinates, LocEncKind::distance, LocEncKind::polar};

inline const char* to_string(LocEncKind k) {
  switch (k) {
    case LocEncKind::none: return "none";
    case LocEncKind::rank: return "rank";
    case LocEncKind::learnable: return "learnable";
    case LocEncKind::coordinates: return "coordinates";
    case LocEncKind::distance: return "distance";
    case LocEncKind::polar: return "polar";
  }
  return "?";
}

inline LocEncKind parse_locenc_kind(const std::string& s) {
  for (auto k : kAllLocEncKinds)
    if (s == to_string(k)) return k;
  throw Error("unknown location encoding '" + s +
              "' (expected one of: none, rank, learnable, coordinates, distance, polar)");
}

struct StudyBounds {
  double min_east = 0.0, min_north = 0.0, max_east = 1.0, max_north = 1.0;
};

struct LocEncConfig {
  LocEncKind kind = LocEncKind::polar;
  std::size_t loc_dim = 512;
  double max_distance_m = 10'000.0;
  double min_rel_wavelength = 1e-3;
  std::optional<StudyBounds> study_bounds;
  /// Angle frequencies for polar; 0 means loc_dim / 4.
  std::size_t num_angle_freqs = 0;
  bool shared_fusion = true;

  std::size_t angle_freqs() const { return num_angle_freqs ? num_angle_freqs : loc_dim / 4; }

  void validate() const {
    require(loc_dim >= 2 && loc_dim % 2 == 0, "locenc: loc_dim must be even and >= 2");
    require(max_distance_m > 0.0, "locenc: max_distance_m must be positive");
    if (kind == LocEncKind::coordinates) {
      require(study_bounds.has_value(), "locenc: coordinates encoding requires study bounds");
      require(loc_dim % 4 == 0, "locenc: coordinates encoding needs loc_dim divisible by 4");
      require(min_rel_wavelength > 0.0 && min_rel_wavelength <= 1.0,
              "locenc: min_rel_wavelength must be in (0, 1]");
      require(study_bounds->max_east > study_bounds->min_east &&
                  study_bounds->max_north > study_bounds->min_north,
              "locenc: degenerate study bounds");
    }
    if (kind == LocEncKind::polar)
      require(loc_dim % 4 == 0 && 2 * angle_freqs() == loc_dim / 2,
              "locenc: polar encoding needs loc_dim divisible by 4 and loc_dim/4 angle frequencies");
  }

  /// Width of the fixed (non-trainable) encoding vector attached to a token.
  std::size_t encoding_width() const {
    return (kind == LocEncKind::none || kind == LocEncKind::learnable) ? 0 : loc_dim;
  }
};

inline constexpr double kSinusoidBase = 10'000.0;

/// Transformer-style 1-d sinusoid: pairs (sin, cos) of pos / B^(2s/dims).
inline std::vector<double> sinusoid_1d(double pos, std::size_t dims) {
  require(dims % 2 == 0, "sinusoid_1d: dims must be even");
  std::vector<double> out(dims);
  for (std::size_t s = 0; s < dims / 2; ++s) {
    const double freq = std::pow(kSinusoidBase, -static_cast<double>(2 * s) / static_cast<double>(dims));
    out[2 * s] = std::sin(pos * freq);
    out[2 * s + 1] = std::cos(pos * freq);
  }
  return out;
}

inline std::vector<double> encode_rank(std::size_t rank, const LocEncConfig& cfg) {
  return sinusoid_1d(static_cast<double>(rank), cfg.loc_dim);
}

inline std::vector<double> encode_distance(double d_m, const LocEncConfig& cfg) {
  return sinusoid_1d(std::min(d_m, cfg.max_distance_m), cfg.loc_dim);
}

/// Counts points clamped into the study bounds by encode_coordinates.
inline std::atomic<std::size_t>& coordinates_clamp_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

/// Multi-scale sinusoids of the min-max scaled east and north coordinates,
/// east half first. Angular frequencies run geometrically from 2*pi (one
/// period over the study extent) to 2*pi / min_rel_wavelength.
inline std::vector<double> encode_coordinates(const GeoPoint& p, const LocEncConfig& cfg) {
  require(cfg.study_bounds.has_value(), "encode_coordinates: study bounds not configured");
  const auto& b = *cfg.study_bounds;
  double u[2] = {(p.east - b.min_east) / (b.max_east - b.min_east),
                 (p.north - b.min_north) / (b.max_north - b.min_north)};
  for (double& x : u) {
    if (x < 0.0 || x > 1.0) {
      ++coordinates_clamp_counter();
      x = std::clamp(x, 0.0, 1.0);
    }
  }
  const std::size_t half = cfg.loc_dim / 2;
  const std::size_t scales = half / 2;
  std::vector<double> out(cfg.loc_dim);
  for (std::size_t s = 0; s < scales; ++s) {
    const double t = scales > 1 ? static_cast<double>(s) / static_cast<double>(scales - 1) : 0.0;
    const double omega = 2.0 * kPi * std::pow(1.0 / cfg.min_rel_wavelength, t);
    for (int axis = 0; axis < 2; ++axis) {
      out[axis * half + 2 * s] = std::sin(u[axis] * omega);
      out[axis * half + 2 * s + 1] = std::cos(u[axis] * omega);
    }
  }
  return out;
}

/// Offset angle in [0, 2*pi); the zero offset maps to 0.
inline double offset_angle(double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return 0.0;
  double theta = std::atan2(dy, dx);
  if (theta < 0.0) theta += 2.0 * kPi;
  if (theta >= 2.0 * kPi) theta = 0.0;
  return theta;
}

/// Distance half (sinusoid of the capped distance over loc_dim/2 dims)
/// followed by the angle half (sin(n*theta), cos(n*theta), n = 1..loc_dim/4).
inline std::vector<double> encode_polar(double dx, double dy, const LocEncConfig& cfg) {
  const std::size_t half = cfg.loc_dim / 2;
  const double dist = std::sqrt(dx * dx + dy * dy);
  std::vector<double> out = sinusoid_1d(std::min(dist, cfg.max_distance_m), half);
  out.resize(cfg.loc_dim);
  const double theta = offset_angle(dx, dy);
  for (std::size_t n = 1; n <= cfg.angle_freqs(); ++n) {
    out[half + 2 * (n - 1)] = std::sin(static_cast<double>(n) * theta);
    out[half + 2 * (n - 1) + 1] = std::cos(static_cast<double>(n) * theta);
  }
  return out;
}

/// Where a token sits relative to the query location.
struct TokenPlace {
  std::size_t rank = 0;
  GeoPoint location;
  double dx = 0.0, dy = 0.0;
  double distance_m = 0.0;
};

/// Fixed encoding vector for a token; empty for kinds without one.
inline std::vector<double> encode_location(const TokenPlace& place, const LocEncConfig& cfg) {
  switch (cfg.kind) {
    case LocEncKind::none:
    case LocEncKind::learnable: return {};
    case LocEncKind::rank: return encode_rank(place.rank, cfg);
    case LocEncKind::coordinates: return encode_coordinates(place.location, cfg);
    case LocEncKind::distance: return encode_distance(place.distance_m, cfg);
    case LocEncKind::polar: return encode_polar(place.dx, place.dy, cfg);
  }
  return {};
}

}  // namespace geofuse
