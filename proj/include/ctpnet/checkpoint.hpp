#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ctpnet/errors.hpp"
#include "ctpnet/json_io.hpp"
#include "ctpnet/nets.hpp"

namespace ctp {

/// How far along the training pipeline a checkpoint is.
enum class StageTag { source, feature_aligned, offset_aligned, finetune };

inline const char* to_string(StageTag t) {
  switch (t) {
    case StageTag::source: return "source";
    case StageTag::feature_aligned: return "feature_aligned";
    case StageTag::offset_aligned: return "offset_aligned";
    case StageTag::finetune: return "finetune";
  }
  return "?";
}

inline StageTag stage_tag_from_string(const std::string& s) {
  if (s == "source") return StageTag::source;
  if (s == "feature_aligned") return StageTag::feature_aligned;
  if (s == "offset_aligned") return StageTag::offset_aligned;
  if (s == "finetune") return StageTag::finetune;
  throw ConfigError("unknown stage tag '" + s + "'");
}

struct CheckpointInfo {
  StageTag stage = StageTag::source;
  std::string config_hash;
  std::string net_config_hash;
  NetConfig net_config;
};

namespace ckpt_detail {

constexpr const char* kFormat = "ctpnet-checkpoint/1";

template <typename S>
void write_tensor(const std::filesystem::path& file, const Mat<S>& m) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write '" + file.string() + "'");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      float v = float(m(i, j));
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  if (!out) throw IoError("checkpoint: write failed for '" + file.string() + "'");
}

template <typename S>
Mat<S> read_tensor(const std::filesystem::path& file, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read '" + file.string() + "'");
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(float));
      if (!in) throw IoError("checkpoint: '" + file.string() + "' truncated");
      m(i, j) = S(v);
    }
  char extra;
  if (in.read(&extra, 1))
    throw DataError("checkpoint: '" + file.string() + "' longer than manifest shape");
  return m;
}

}  // namespace ckpt_detail

/// Writes a checkpoint directory: manifest.json plus one raw little-endian
/// 32-bit float file per tensor, row-major. Round trips are bit-exact for
/// single-precision bundles.
template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle<S>& bundle, StageTag stage,
                     const std::string& config_hash, const std::string& net_config_hash) {
  std::filesystem::create_directories(dir);
  Json tensors = Json::array();
  for (const auto& [name, var] : bundle.named_params()) {
    std::string file = name + ".bin";
    tensors.push_back(Json{{"name", name},
                           {"rows", var.rows()},
                           {"cols", var.cols()},
                           {"dtype", "f32le"},
                           {"file", file}});
    ckpt_detail::write_tensor<S>(dir / file, var.value());
  }
  Json manifest{{"format", ckpt_detail::kFormat},
                {"stage", to_string(stage)},
                {"config_hash", config_hash},
                {"net_config_hash", net_config_hash},
                {"net_config", bundle.cfg},
                {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("checkpoint: cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(1) << "\n";
}

inline bool checkpoint_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "manifest.json");
}

/// Reads the manifest only (stage gating, hash checks).
inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint: cannot read manifest in '" + dir.string() + "'");
  Json manifest;
  try {
    in >> manifest;
  } catch (const Json::exception& e) {
    throw ParseError("checkpoint manifest '" + dir.string() + "': " + e.what());
  }
  if (manifest.value("format", "") != ckpt_detail::kFormat)
    throw DataError("checkpoint '" + dir.string() + "': unknown format");
  CheckpointInfo info;
  info.stage = stage_tag_from_string(manifest.at("stage"));
  info.config_hash = manifest.value("config_hash", "");
  info.net_config_hash = manifest.value("net_config_hash", "");
  info.net_config = manifest.at("net_config").get<NetConfig>();
  return info;
}

/// Rebuilds a bundle from a checkpoint directory. Every manifest tensor must
/// exist with the stated shape, and the manifest must cover every parameter
/// of the architecture it declares.
template <typename S>
std::pair<ModelBundle<S>, CheckpointInfo> load_checkpoint(const std::filesystem::path& dir) {
  CheckpointInfo info = read_checkpoint_info(dir);
  std::ifstream in(dir / "manifest.json");
  Json manifest;
  in >> manifest;

  ModelBundle<S> bundle = ModelBundle<S>::init(info.net_config, 0);
  auto named = bundle.named_params();
  std::size_t assigned = 0;
  for (const auto& t : manifest.at("tensors")) {
    std::string name = t.at("name");
    Eigen::Index rows = t.at("rows"), cols = t.at("cols");
    bool found = false;
    for (auto& [pname, var] : named) {
      if (pname != name) continue;
      if (var.rows() != rows || var.cols() != cols)
        throw DataError("checkpoint tensor '" + name + "': shape mismatch with architecture");
      var.assign(ckpt_detail::read_tensor<S>(dir / t.at("file").get<std::string>(), rows, cols));
      found = true;
      ++assigned;
      break;
    }
    if (!found) throw DataError("checkpoint tensor '" + name + "': not part of the architecture");
  }
  if (assigned != named.size())
    throw DataError("checkpoint '" + dir.string() + "': missing tensors (" +
                    std::to_string(assigned) + " of " + std::to_string(named.size()) + ")");
  return {std::move(bundle), std::move(info)};
}

}  // namespace ctp
