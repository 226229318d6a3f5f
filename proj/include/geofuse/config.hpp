#pragma once

#include <string>

#include <json.hpp>

#include "geofuse/fusion.hpp"
#include "geofuse/locenc.hpp"
#include "geofuse/train.hpp"

namespace geofuse {

using Json = nlohmann::ordered_json;

namespace detail {
template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline Json to_json(const LocEncConfig& c) {
  Json j;
  j["kind"] = to_string(c.kind);
  j["loc_dim"] = c.loc_dim;
  j["max_distance_m"] = c.max_distance_m;
  j["min_rel_wavelength"] = c.min_rel_wavelength;
  j["num_angle_freqs"] = c.num_angle_freqs;
  j["shared_fusion"] = c.shared_fusion;
  if (c.study_bounds) {
    const auto& b = *c.study_bounds;
    j["study_bounds"] = {b.min_east, b.min_north, b.max_east, b.max_north};
  }
  return j;
}

inline LocEncConfig locenc_from_json(const Json& j) {
  LocEncConfig c;
  if (j.contains("kind")) c.kind = parse_locenc_kind(j.at("kind").get<std::string>());
  detail::read_opt(j, "loc_dim", c.loc_dim);
  detail::read_opt(j, "max_distance_m", c.max_distance_m);
  detail::read_opt(j, "min_rel_wavelength", c.min_rel_wavelength);
  detail::read_opt(j, "num_angle_freqs", c.num_angle_freqs);
  detail::read_opt(j, "shared_fusion", c.shared_fusion);
  if (j.contains("study_bounds")) {
    const auto b = j.at("study_bounds").get<std::vector<double>>();
    require(b.size() == 4, "locenc.study_bounds needs four numbers");
    c.study_bounds = StudyBounds{b[0], b[1], b[2], b[3]};
  }
  return c;
}

inline Json to_json(const FusionConfig& c) {
  Json j;
  j["token_dim"] = c.token_dim;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["ff_dim"] = c.ff_dim;
  j["dropout"] = c.dropout;
  j["mask_prob"] = c.mask_prob;
  j["m"] = c.m;
  j["j"] = c.j;
  j["k"] = c.k;
  j["pooling"] = c.pooling == Pooling::cls ? "cls" : "mean";
  return j;
}

inline FusionConfig fusion_from_json(const Json& j) {
  FusionConfig c;
  detail::read_opt(j, "token_dim", c.token_dim);
  detail::read_opt(j, "num_layers", c.num_layers);
  detail::read_opt(j, "num_heads", c.num_heads);
  detail::read_opt(j, "ff_dim", c.ff_dim);
  detail::read_opt(j, "dropout", c.dropout);
  detail::read_opt(j, "mask_prob", c.mask_prob);
  detail::read_opt(j, "m", c.m);
  detail::read_opt(j, "j", c.j);
  detail::read_opt(j, "k", c.k);
  if (j.contains("pooling")) {
    const auto p = j.at("pooling").get<std::string>();
    require(p == "cls" || p == "mean", "fusion.pooling must be 'cls' or 'mean'");
    c.pooling = p == "cls" ? Pooling::cls : Pooling::mean;
  }
  return c;
}

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["seed"] = c.seed;
  j["mask_prob"] = c.mask_prob;
  j["eval_every"] = c.eval_every;
  return j;
}

inline TrainConfig train_from_json(const Json& j) {
  TrainConfig c;
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "weight_decay", c.weight_decay);
  detail::read_opt(j, "beta1", c.beta1);
  detail::read_opt(j, "beta2", c.beta2);
  detail::read_opt(j, "eps", c.eps);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "mask_prob", c.mask_prob);
  detail::read_opt(j, "eval_every", c.eval_every);
  return c;
}

}  // namespace geofuse
