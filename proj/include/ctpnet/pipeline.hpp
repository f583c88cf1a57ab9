#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ctpnet/adapt.hpp"
#include "ctpnet/checkpoint.hpp"
#include "ctpnet/config.hpp"
#include "ctpnet/errors.hpp"
#include "ctpnet/json_io.hpp"
#include "ctpnet/metrics.hpp"

namespace ctp {

enum class Stage {
  synth_gen,
  ingest,
  train_source,
  adapt_feature,
  adapt_offset,
  baseline_finetune,
  baseline_source_only,
  eval,
  plot_offsets,
  all
};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::synth_gen: return "synth-gen";
    case Stage::ingest: return "ingest";
    case Stage::train_source: return "train-source";
    case Stage::adapt_feature: return "adapt-feature";
    case Stage::adapt_offset: return "adapt-offset";
    case Stage::baseline_finetune: return "baseline-finetune";
    case Stage::baseline_source_only: return "baseline-source-only";
    case Stage::eval: return "eval";
    case Stage::plot_offsets: return "plot-offsets";
    case Stage::all: return "all";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::synth_gen, Stage::ingest, Stage::train_source, Stage::adapt_feature,
                   Stage::adapt_offset, Stage::baseline_finetune, Stage::baseline_source_only,
                   Stage::eval, Stage::plot_offsets, Stage::all})
    if (s == to_string(st)) return st;
  throw ConfigError("unknown stage '" + s + "'");
}

namespace pipeline_detail {

namespace fs = std::filesystem;

inline std::string timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Paths {
  fs::path root;
  explicit Paths(const RunConfig& cfg) {
    fs::path out = cfg.out_dir;
    if (out.is_relative()) {
      if (const char* env_root = std::getenv("CTPNET_OUT_ROOT")) out = fs::path(env_root) / out;
    }
    root = out;
  }
  fs::path raw(const char* domain) const {
    return root / "data" / (std::string("raw_") + domain + ".txt");
  }
  fs::path windows(const char* name) const {
    return root / "data" / (std::string(name) + ".json");
  }
  fs::path ingest_manifest() const { return root / "data" / "ingest_manifest.json"; }
  fs::path checkpoint(StageTag tag) const { return root / "checkpoints" / to_string(tag); }
  fs::path report(const char* name) const { return root / "reports" / name; }
  fs::path plot(const char* name) const { return root / "plots" / name; }
};

/// Exclusive ownership of an output directory for the duration of a run.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw IoError("output directory '" + dir.string() +
                    "' is locked by another run (stale .lock file?)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

inline void write_raw_table(const fs::path& path, const RawAnnotationTable& table) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  char buf[128];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%ld %ld %.17g %.17g\n", r.frame, r.ped, r.x, r.y);
    out << buf;
  }
}

inline void append_stage_jsonl(const fs::path& path, const StageReport& report,
                               const char* stage_name, const std::string& config_hash) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  Json meta{{"stage", stage_name},
            {"config_hash", config_hash},
            {"epochs_run", report.epochs_run},
            {"critic_updates", report.critic_updates},
            {"generator_updates", report.generator_updates},
            {"burnin_critic_updates", report.burnin_critic_updates},
            {"wall_seconds", report.wall_seconds},
            {"timestamp", timestamp()}};
  out << meta.dump() << "\n";
  for (int e = 0; e < report.epochs_run; ++e) {
    Json line{{"epoch", e}, {"timestamp", timestamp()}};
    if (e < int(report.critic_loss.size())) line["critic_loss"] = report.critic_loss[e];
    if (e < int(report.generator_loss.size())) line["generator_loss"] = report.generator_loss[e];
    if (e < int(report.w_estimate.size())) line["w_estimate"] = report.w_estimate[e];
    if (e < int(report.train_loss.size())) line["train_loss"] = report.train_loss[e];
    if (e < int(report.val_ade.size())) line["val_ade"] = report.val_ade[e];
    out << line.dump() << "\n";
  }
}

inline RawAnnotationTable domain_table(const RunConfig& cfg, const DataSourceConfig& src,
                                       const Paths& paths, const char* domain,
                                       std::uint64_t synth_seed) {
  if (src.kind == DataSourceConfig::Kind::file)
    return parse_annotations(src.path, ColumnOrder::parse(src.column_order),
                             src.downsample_stride);
  fs::path raw = paths.raw(domain);
  if (!fs::exists(raw)) throw PrereqError("synth-gen", "missing synthetic data file '" +
                                                           raw.string() + "'; run synth-gen");
  (void)cfg;
  (void)synth_seed;
  return parse_annotations(raw.string(), ColumnOrder(), 1);
}

inline DomainSplit load_split(const Paths& paths) {
  if (!fs::exists(paths.ingest_manifest()))
    throw PrereqError("ingest", "missing ingest artifacts; run ingest first");
  DomainSplit split;
  split.source_train = load_windows(paths.windows("source_train").string());
  split.source_val = load_windows(paths.windows("source_val").string());
  split.target_train = load_windows(paths.windows("target_train").string());
  split.target_test = load_windows(paths.windows("target_test").string());
  return split;
}

/// Existence, stage-tag, and net-hash gate without loading tensors.
inline void require_checkpoint(const RunConfig& cfg, const Paths& paths, StageTag tag,
                               const char* producing_stage) {
  fs::path dir = paths.checkpoint(tag);
  if (!checkpoint_exists(dir))
    throw PrereqError(producing_stage, std::string("missing checkpoint '") + to_string(tag) +
                                           "'; run " + producing_stage);
  CheckpointInfo info = read_checkpoint_info(dir);
  if (info.stage != tag)
    throw PrereqError(producing_stage, std::string("checkpoint in '") + to_string(tag) +
                                           "' carries stage tag '" + to_string(info.stage) +
                                           "'; re-run " + producing_stage);
  if (info.net_config_hash != cfg.net_hash())
    throw ConfigError(std::string("checkpoint '") + to_string(tag) +
                      "' was trained with a different net config");
}

template <typename S>
std::pair<ModelBundle<S>, CheckpointInfo> load_stage_checkpoint(const RunConfig& cfg,
                                                                const Paths& paths, StageTag tag,
                                                                const char* producing_stage) {
  require_checkpoint(cfg, paths, tag, producing_stage);
  return load_checkpoint<S>(paths.checkpoint(tag));
}

inline std::uint64_t source_synth_seed(const RunConfig& cfg) { return cfg.seed + 1000003; }
inline std::uint64_t target_synth_seed(const RunConfig& cfg) { return cfg.seed + 2000003; }
inline std::uint64_t shift_seed(const RunConfig& cfg) { return cfg.seed + 3000003; }
inline std::uint64_t bundle_seed(const RunConfig& cfg) { return cfg.seed + 4000003; }

}  // namespace pipeline_detail

// ---- stage implementations ----

inline void run_synth_gen(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  bool any = false;
  if (cfg.source.kind == DataSourceConfig::Kind::synthetic) {
    write_raw_table(paths.raw("source"), synth_trajectories(cfg.source.synth, source_synth_seed(cfg)));
    any = true;
  }
  if (cfg.target.kind == DataSourceConfig::Kind::synthetic) {
    write_raw_table(paths.raw("target"), synth_trajectories(cfg.target.synth, target_synth_seed(cfg)));
    any = true;
  }
  if (!any) throw ConfigError("synth-gen: neither domain is synthetic in this config");
}

inline void run_ingest(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto source_table = domain_table(cfg, cfg.source, paths, "source", source_synth_seed(cfg));
  auto target_table = domain_table(cfg, cfg.target, paths, "target", target_synth_seed(cfg));

  auto source_windows = extract_windows(source_table, cfg.lo, cfg.lf, cfg.slide);
  auto target_windows = extract_windows(target_table, cfg.lo, cfg.lf, cfg.slide);
  if (cfg.source.has_shift)
    source_windows = apply_shift(source_windows, cfg.source.shift, shift_seed(cfg));
  if (cfg.target.has_shift)
    target_windows = apply_shift(target_windows, cfg.target.shift, shift_seed(cfg) + 1);

  auto [source_train, source_val] = make_split(source_windows, Domain::source, cfg.seed);
  auto [target_train, target_test] = make_split(target_windows, Domain::target, cfg.seed);

  std::filesystem::create_directories(paths.root / "data");
  save_windows(paths.windows("source_train").string(), source_train);
  save_windows(paths.windows("source_val").string(), source_val);
  save_windows(paths.windows("target_train").string(), target_train);
  save_windows(paths.windows("target_test").string(), target_test);

  Json manifest{{"config_hash", cfg.config_hash()},
                {"net_config_hash", cfg.net_hash()},
                {"lo", cfg.lo},
                {"lf", cfg.lf},
                {"slide", cfg.slide},
                {"counts",
                 {{"source_train", source_train.size()},
                  {"source_val", source_val.size()},
                  {"target_train", target_train.size()},
                  {"target_test", target_test.size()}}},
                {"timestamp", timestamp()}};
  std::ofstream out(paths.ingest_manifest());
  if (!out) throw IoError("cannot write ingest manifest");
  out << manifest.dump(1) << "\n";
}

inline void run_train_source(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  auto bundle = ModelBundle<float>::init(cfg.net, bundle_seed(cfg));
  auto report = train_source(split, bundle, cfg.train);
  save_checkpoint(paths.checkpoint(StageTag::source), bundle, StageTag::source, cfg.config_hash(),
                  cfg.net_hash());
  append_stage_jsonl(paths.report("train_source.jsonl"), report, "train-source", cfg.config_hash());
}

inline void run_adapt_feature(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::source, "train-source");
  bundle.copy_source_encoder_to_target();
  auto report = stage1_align(split, bundle, cfg.stage1);
  save_checkpoint(paths.checkpoint(StageTag::feature_aligned), bundle, StageTag::feature_aligned,
                  cfg.config_hash(), cfg.net_hash());
  append_stage_jsonl(paths.report("stage1.jsonl"), report, "adapt-feature", cfg.config_hash());
}

inline void run_adapt_offset(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::feature_aligned, "adapt-feature");
  auto report = stage2_align(split, bundle, cfg.stage2);
  save_checkpoint(paths.checkpoint(StageTag::offset_aligned), bundle, StageTag::offset_aligned,
                  cfg.config_hash(), cfg.net_hash());
  append_stage_jsonl(paths.report("stage2.jsonl"), report, "adapt-offset", cfg.config_hash());
}

inline void run_baseline_finetune(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::source, "train-source");
  auto result = finetune_baseline(split, bundle, cfg.train);
  save_checkpoint(paths.checkpoint(StageTag::finetune), bundle, StageTag::finetune,
                  cfg.config_hash(), cfg.net_hash());
  append_stage_jsonl(paths.report("finetune.jsonl"), result.report, "baseline-finetune",
                     cfg.config_hash());
}

inline void run_baseline_source_only(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::source, "train-source");
  Json report{{"config_hash", cfg.config_hash()},
              {"variant", "SO"},
              {"source_val", Json(evaluate(split.source_val, bundle, false, false))},
              {"target_test", Json(evaluate(split.target_test, bundle, false, false))}};
  std::filesystem::create_directories(paths.root / "reports");
  std::ofstream out(paths.report("eval_source_only.json"));
  if (!out) throw IoError("cannot write eval_source_only.json");
  out << report.dump(1) << "\n";
}

/// Writes the combined evaluation over every trained variant: SO and the
/// adapted variants from the stage-2 checkpoint, plus F-T when a fine-tuned
/// checkpoint exists.
inline void run_eval(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  // prerequisites named in pipeline order
  require_checkpoint(cfg, paths, StageTag::source, "train-source");
  require_checkpoint(cfg, paths, StageTag::feature_aligned, "adapt-feature");
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::offset_aligned, "adapt-offset");

  Json variants;
  variants["SO"] = Json{{"source_val", Json(evaluate(split.source_val, bundle, false, false))},
                        {"target_test", Json(evaluate(split.target_test, bundle, false, false))}};
  variants["TE"] = Json{{"target_test", Json(evaluate(split.target_test, bundle, true, false))}};
  variants["TO"] = Json{{"target_test", Json(evaluate(split.target_test, bundle, true, true))}};
  if (checkpoint_exists(paths.checkpoint(StageTag::finetune))) {
    auto [ft_bundle, ft_info] =
        load_stage_checkpoint<float>(cfg, paths, StageTag::finetune, "baseline-finetune");
    variants["F-T"] =
        Json{{"target_test", Json(evaluate(split.target_test, ft_bundle, false, false))}};
  }
  Json report{{"config_hash", cfg.config_hash()},
              {"net_config_hash", cfg.net_hash()},
              {"representation", to_string(cfg.net.representation)},
              {"n_target_test", split.target_test.size()},
              {"variants", variants}};
  std::filesystem::create_directories(paths.root / "reports");
  std::ofstream out(paths.report("eval_report.json"));
  if (!out) throw IoError("cannot write eval_report.json");
  out << report.dump(1) << "\n";
}

/// Kernel-density grids of cumulative offsets: ground truth vs source-only vs
/// adapted predictions on target test, plus the target-train observation and
/// future clouds the second alignment stage consumes.
inline void run_plot_offsets(const RunConfig& cfg) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  auto split = load_split(paths);
  require_checkpoint(cfg, paths, StageTag::source, "train-source");
  require_checkpoint(cfg, paths, StageTag::feature_aligned, "adapt-feature");
  auto [bundle, info] =
      load_stage_checkpoint<float>(cfg, paths, StageTag::offset_aligned, "adapt-offset");

  auto collect = [](const std::vector<std::vector<Vec2>>& trajs,
                    const std::vector<TrajectoryWindow>& ws) {
    std::vector<Vec2> cloud;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      auto rel = cumulative_offsets(trajs[i], ws[i].obs.back());
      cloud.insert(cloud.end(), rel.begin(), rel.end());
    }
    return cloud;
  };

  const auto& test = split.target_test;
  std::vector<std::vector<Vec2>> gt;
  for (const auto& w : test) gt.push_back(w.fut);
  auto so = predict_coords(test, bundle, cfg.lf, false, false);
  auto to = predict_coords(test, bundle, cfg.lf, true, true);

  struct Item {
    const char* file;
    std::vector<Vec2> cloud;
  };
  std::vector<Item> items;
  items.push_back({"kde_groundtruth.csv", collect(gt, test)});
  items.push_back({"kde_source_only.csv", collect(so, test)});
  items.push_back({"kde_ctpnet.csv", collect(to, test)});

  // target-train clouds: observations relative to their first point, futures
  // relative to the last observed point
  std::vector<Vec2> obs_cloud, fut_cloud;
  for (const auto& w : split.target_train) {
    auto rel_obs = cumulative_offsets(w.obs, w.obs.front());
    obs_cloud.insert(obs_cloud.end(), rel_obs.begin(), rel_obs.end());
    auto rel_fut = cumulative_offsets(w.fut, w.obs.back());
    fut_cloud.insert(fut_cloud.end(), rel_fut.begin(), rel_fut.end());
  }
  items.push_back({"kde_target_train_obs.csv", std::move(obs_cloud)});
  items.push_back({"kde_target_train_fut.csv", std::move(fut_cloud)});

  std::filesystem::create_directories(paths.root / "plots");
  for (const auto& item : items) {
    auto grid = kde_grid(item.cloud, std::nullopt, GridSpec{200, 200});
    std::ofstream out(paths.plot(item.file));
    if (!out) throw IoError(std::string("cannot write ") + item.file);
    kde_to_csv(grid, out, cfg.config_hash());
  }
}

/// Executes one stage (or the whole chain) under the output-directory lock.
inline void run_stage(const RunConfig& cfg, Stage stage) {
  using namespace pipeline_detail;
  Paths paths(cfg);
  DirLock lock(paths.root);
  switch (stage) {
    case Stage::synth_gen: run_synth_gen(cfg); break;
    case Stage::ingest: run_ingest(cfg); break;
    case Stage::train_source: run_train_source(cfg); break;
    case Stage::adapt_feature: run_adapt_feature(cfg); break;
    case Stage::adapt_offset: run_adapt_offset(cfg); break;
    case Stage::baseline_finetune: run_baseline_finetune(cfg); break;
    case Stage::baseline_source_only: run_baseline_source_only(cfg); break;
    case Stage::eval: run_eval(cfg); break;
    case Stage::plot_offsets: run_plot_offsets(cfg); break;
    case Stage::all:
      if (cfg.source.kind == DataSourceConfig::Kind::synthetic ||
          cfg.target.kind == DataSourceConfig::Kind::synthetic)
        run_synth_gen(cfg);
      run_ingest(cfg);
      run_train_source(cfg);
      run_adapt_feature(cfg);
      run_adapt_offset(cfg);
      run_baseline_finetune(cfg);
      run_baseline_source_only(cfg);
      run_eval(cfg);
      run_plot_offsets(cfg);
      break;
  }
}

}  // namespace ctp
