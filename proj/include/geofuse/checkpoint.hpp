#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "geofuse/config.hpp"
#include "geofuse/encoders.hpp"
#include "geofuse/fusion.hpp"
#include "geofuse/train.hpp"

namespace geofuse {

// Checkpoint layout (little-endian):
//   "GFCK" | version u16 = 1 | dtype u8 (1 = f32, 2 = f64) | reserved u8
//   config_len u32 | config JSON (locenc, fusion, feature_dim, optional run)
//   tensor_count u32 | tensor_count x [name_len u16 | name | rows u32 | cols u32 | data]
//   has_optimizer u8 | [step u64 | m data | v data]

enum class CheckpointDtype : std::uint8_t { f32 = 1, f64 = 2 };

struct Checkpoint {
  LocEncConfig locenc;
  FusionConfig fusion;
  std::size_t feature_dim = 0;
  std::vector<ParamTensor> tensors;
  std::vector<double> values;
  std::optional<AdamState> optimizer;
  Json run;  // free-form run settings (token assembly), echoed verbatim

  FusionModel make_model() const {
    FusionModel model(fusion, locenc, feature_dim, 0);
    const auto& mine = model.params().tensors();
    require(mine.size() == tensors.size(), "checkpoint: parameter count does not match its config");
    for (std::size_t i = 0; i < mine.size(); ++i)
      require(mine[i].name == tensors[i].name && mine[i].rows == tensors[i].rows && mine[i].cols == tensors[i].cols,
              "checkpoint: tensor '" + tensors[i].name + "' does not match the model layout");
    model.params().values() = values;
    return model;
  }
};

inline Checkpoint make_checkpoint(const FusionModel& model, std::optional<AdamState> optimizer = std::nullopt) {
  return {model.locenc(), model.config(), model.feature_dim(), model.params().tensors(), model.params().values(),
          std::move(optimizer), Json()};
}

namespace detail {
inline void put_values(std::string& buf, std::span<const double> v, CheckpointDtype dt) {
  for (double x : v) {
    if (dt == CheckpointDtype::f32)
      put<float>(buf, static_cast<float>(x));
    else
      put<double>(buf, x);
  }
}
inline void get_values(Reader& r, std::span<double> out, CheckpointDtype dt) {
  for (auto& x : out) x = dt == CheckpointDtype::f32 ? static_cast<double>(r.get<float>()) : r.get<double>();
}
}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck, CheckpointDtype dt = CheckpointDtype::f64) {
  std::string buf = "GFCK";
  detail::put<std::uint16_t>(buf, 1);
  detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(dt));
  detail::put<std::uint8_t>(buf, 0);
  Json cfg;
  cfg["feature_dim"] = ck.feature_dim;
  cfg["locenc"] = to_json(ck.locenc);
  cfg["fusion"] = to_json(ck.fusion);
  if (!ck.run.is_null()) cfg["run"] = ck.run;
  const std::string cfg_text = cfg.dump();
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg_text.size()));
  buf += cfg_text;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(t.name.size()));
    buf += t.name;
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rows));
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.cols));
    detail::put_values(buf, std::span<const double>(ck.values).subspan(t.offset, t.size()), dt);
  }
  detail::put<std::uint8_t>(buf, ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    require(ck.optimizer->m.size() == ck.values.size() && ck.optimizer->v.size() == ck.values.size(),
            "checkpoint: optimizer state does not match parameter count");
    detail::put<std::uint64_t>(buf, ck.optimizer->step);
    detail::put_values(buf, ck.optimizer->m, dt);
    detail::put_values(buf, ck.optimizer->v, dt);
  }
  return buf;
}

inline Checkpoint deserialize_checkpoint(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (r.bytes(4) != "GFCK") throw Error("checkpoint: bad magic");
  if (r.get<std::uint16_t>() != 1) throw Error("checkpoint: unsupported version");
  const auto dt = static_cast<CheckpointDtype>(r.get<std::uint8_t>());
  if (dt != CheckpointDtype::f32 && dt != CheckpointDtype::f64) throw Error("checkpoint: unsupported dtype");
  r.get<std::uint8_t>();
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint32_t>();
  try {
    const auto cfg = Json::parse(r.bytes(cfg_len));
    ck.feature_dim = cfg.at("feature_dim").get<std::size_t>();
    ck.locenc = locenc_from_json(cfg.at("locenc"));
    ck.fusion = fusion_from_json(cfg.at("fusion"));
    if (cfg.contains("run")) ck.run = cfg.at("run");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad config echo (") + e.what() + ")");
  }
  const auto count = r.get<std::uint32_t>();
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamTensor t;
    t.name = r.bytes(r.get<std::uint16_t>());
    t.rows = r.get<std::uint32_t>();
    t.cols = r.get<std::uint32_t>();
    t.offset = offset;
    offset += t.size();
    ck.values.resize(offset);
    detail::get_values(r, std::span<double>(ck.values).subspan(t.offset, t.size()), dt);
    ck.tensors.push_back(std::move(t));
  }
  if (r.get<std::uint8_t>() != 0) {
    AdamState st(ck.values.size());
    st.step = r.get<std::uint64_t>();
    detail::get_values(r, st.m, dt);
    detail::get_values(r, st.v, dt);
    ck.optimizer = std::move(st);
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path,
                            CheckpointDtype dt = CheckpointDtype::f64) {
  detail::write_file(path, serialize_checkpoint(ck, dt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace geofuse
