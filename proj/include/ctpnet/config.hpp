#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "ctpnet/errors.hpp"
#include "ctpnet/hash.hpp"
#include "ctpnet/json_io.hpp"

namespace ctp {

/// Where one domain's trajectories come from: an annotation file on disk or
/// the synthetic generator. A target-side shift spec maps the windows into a
/// different domain.
struct DataSourceConfig {
  enum class Kind { file, synthetic };
  Kind kind = Kind::synthetic;
  std::string path;  // file kind
  std::string column_order = "frame,ped,x,y";
  int downsample_stride = 1;
  SynthSpec synth;  // synthetic kind
  bool has_shift = false;
  SyntheticShiftSpec shift;
};

inline void to_json(Json& j, const DataSourceConfig& c) {
  j = Json{{"kind", c.kind == DataSourceConfig::Kind::file ? "file" : "synthetic"}};
  if (c.kind == DataSourceConfig::Kind::file) {
    j["path"] = c.path;
    j["column_order"] = c.column_order;
    j["downsample_stride"] = c.downsample_stride;
  } else {
    j["synth"] = c.synth;
  }
  if (c.has_shift) j["shift"] = c.shift;
}

inline void from_json(const Json& j, DataSourceConfig& c) {
  std::string kind = j.value("kind", std::string("synthetic"));
  if (kind == "file")
    c.kind = DataSourceConfig::Kind::file;
  else if (kind == "synthetic")
    c.kind = DataSourceConfig::Kind::synthetic;
  else
    throw ConfigError("data kind must be 'file' or 'synthetic', got '" + kind + "'");
  if (c.kind == DataSourceConfig::Kind::file) {
    if (!j.contains("path")) throw ConfigError("file data source needs a 'path'");
    c.path = j.at("path");
    c.column_order = j.value("column_order", c.column_order);
    c.downsample_stride = j.value("downsample_stride", c.downsample_stride);
  } else {
    if (j.contains("synth")) c.synth = j.at("synth").get<SynthSpec>();
  }
  c.has_shift = j.contains("shift");
  if (c.has_shift) c.shift = j.at("shift").get<SyntheticShiftSpec>();
}

/// Everything one reproducible run needs. The stage-1 and stage-2 blocks
/// start from the shared train block and override selectively, mirroring the
/// alignment loop's stage-local hyperparameters.
struct RunConfig {
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  int lo = 8, lf = 12, slide = 1;
  DataSourceConfig source, target;
  NetConfig net;
  TrainingConfig train;
  TrainingConfig stage1;
  TrainingConfig stage2;

  static RunConfig from_json_value(const Json& j) {
    RunConfig c;
    if (j.contains("run")) {
      const auto& r = j.at("run");
      c.out_dir = r.value("out_dir", c.out_dir);
      c.seed = r.value("seed", c.seed);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.lo = d.value("lo", c.lo);
      c.lf = d.value("lf", c.lf);
      c.slide = d.value("slide", c.slide);
      if (d.contains("source")) c.source = d.at("source").get<DataSourceConfig>();
      if (d.contains("target")) c.target = d.at("target").get<DataSourceConfig>();
    }
    if (j.contains("net")) from_json(j.at("net"), c.net);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (!j.contains("train") || !j.at("train").contains("seed")) c.train.seed = c.seed;
    c.stage1 = c.train;
    c.stage2 = c.train;
    if (j.contains("stage1")) from_json(j.at("stage1"), c.stage1);
    if (j.contains("stage2")) from_json(j.at("stage2"), c.stage2);
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    Json j;
    try {
      in >> j;
    } catch (const Json::exception& e) {
      throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    return from_json_value(j);
  }

  /// Canonical resolved form; hashing and echo both use it.
  Json to_json_value() const {
    return Json{{"run", {{"out_dir", out_dir}, {"seed", seed}}},
                {"data",
                 {{"lo", lo},
                  {"lf", lf},
                  {"slide", slide},
                  {"source", source},
                  {"target", target}}},
                {"net", net},
                {"train", train},
                {"stage1", stage1},
                {"stage2", stage2}};
  }

  void validate() const {
    if (lo < 2 || lf < 1 || slide < 1) throw ConfigError("data: lo >= 2, lf >= 1, slide >= 1");
    net.validate(lo, lf);
    train.validate();
    stage1.validate();
    stage2.validate();
  }

  /// Hash of the experiment itself; the output location does not participate,
  /// so re-running the same configuration elsewhere yields identical
  /// artifacts byte for byte.
  std::string config_hash() const {
    Json j = to_json_value();
    j["run"].erase("out_dir");
    return hex64(fnv1a(j.dump()));
  }
  std::string net_hash() const { return hex64(fnv1a(Json(net).dump())); }
};

}  // namespace ctp
