#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctpnet/adapt.hpp"
#include "ctpnet/errors.hpp"
#include "ctpnet/metrics.hpp"
#include "ctpnet/nets.hpp"
#include "ctpnet/traj_data.hpp"

namespace ctp {

using Json = nlohmann::json;

// ---- NetConfig ----

inline void to_json(Json& j, const NetConfig& c) {
  j = Json{{"embed_dim", c.embed_dim},
           {"hidden_dim", c.hidden_dim},
           {"decoder_mlp_layers", c.decoder_mlp_layers},
           {"adaptor_layers", c.adaptor_layers},
           {"offset_critic_layers", c.offset_critic_layers},
           {"feature_critic_layers", c.feature_critic_layers},
           {"ca_window", c.ca_window},
           {"decoder_mlp_hidden", c.decoder_mlp_hidden},
           {"feature_critic_hidden", c.feature_critic_hidden},
           {"offset_critic_hidden", c.offset_critic_hidden},
           {"adaptor_hidden", c.adaptor_hidden},
           {"representation", to_string(c.representation)}};
}

inline void from_json(const Json& j, NetConfig& c) {
  NetConfig defaults;
  c.embed_dim = j.value("embed_dim", defaults.embed_dim);
  c.hidden_dim = j.value("hidden_dim", defaults.hidden_dim);
  c.decoder_mlp_layers = j.value("decoder_mlp_layers", defaults.decoder_mlp_layers);
  c.adaptor_layers = j.value("adaptor_layers", defaults.adaptor_layers);
  c.offset_critic_layers = j.value("offset_critic_layers", defaults.offset_critic_layers);
  c.feature_critic_layers = j.value("feature_critic_layers", defaults.feature_critic_layers);
  c.ca_window = j.value("ca_window", defaults.ca_window);
  c.decoder_mlp_hidden = j.value("decoder_mlp_hidden", defaults.decoder_mlp_hidden);
  c.feature_critic_hidden = j.value("feature_critic_hidden", defaults.feature_critic_hidden);
  c.offset_critic_hidden = j.value("offset_critic_hidden", defaults.offset_critic_hidden);
  c.adaptor_hidden = j.value("adaptor_hidden", defaults.adaptor_hidden);
  std::string rep = j.value("representation", std::string("offset"));
  if (rep == "offset")
    c.representation = PredSpace::offset;
  else if (rep == "coordinate")
    c.representation = PredSpace::coordinate;
  else
    throw ConfigError("representation must be 'offset' or 'coordinate', got '" + rep + "'");
}

// ---- TrainingConfig ----

inline void to_json(Json& j, const TrainingConfig& c) {
  j = Json{{"critic_lr", c.critic_lr},
           {"generator_lr", c.generator_lr},
           {"source_lr", c.source_lr},
           {"gp_coeff", c.gp_coeff},
           {"batch_size", c.batch_size},
           {"source_batch_size", c.source_batch_size},
           {"epochs", c.epochs},
           {"critic_iters", c.critic_iters},
           {"source_epochs", c.source_epochs},
           {"teacher_epochs", c.teacher_epochs},
           {"patience", c.patience},
           {"augment_rotations", c.augment_rotations},
           {"critic_burnin", c.critic_burnin},
           {"w_tolerance", c.w_tolerance},
           {"seed", c.seed}};
}

/// Overlay semantics: keys present in `j` replace the current field values,
/// so staged configs start from the shared block and override selectively.
inline void from_json(const Json& j, TrainingConfig& c) {
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.generator_lr = j.value("generator_lr", c.generator_lr);
  c.source_lr = j.value("source_lr", c.source_lr);
  c.gp_coeff = j.value("gp_coeff", c.gp_coeff);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.source_batch_size = j.value("source_batch_size", c.source_batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.critic_iters = j.value("critic_iters", c.critic_iters);
  c.source_epochs = j.value("source_epochs", c.source_epochs);
  c.teacher_epochs = j.value("teacher_epochs", c.teacher_epochs);
  c.patience = j.value("patience", c.patience);
  c.augment_rotations = j.value("augment_rotations", c.augment_rotations);
  c.critic_burnin = j.value("critic_burnin", c.critic_burnin);
  c.w_tolerance = j.value("w_tolerance", c.w_tolerance);
  c.seed = j.value("seed", c.seed);
}

// ---- synthetic data specs ----

inline void to_json(Json& j, const SyntheticShiftSpec& s) {
  j = Json{{"linear", {{s.linear[0][0], s.linear[0][1]}, {s.linear[1][0], s.linear[1][1]}}},
           {"translation", {s.translation[0], s.translation[1]}},
           {"speed_scale", s.speed_scale},
           {"noise_std", s.noise_std}};
}

inline void from_json(const Json& j, SyntheticShiftSpec& s) {
  SyntheticShiftSpec d;
  if (j.contains("linear")) {
    const auto& l = j.at("linear");
    s.linear[0][0] = l.at(0).at(0);
    s.linear[0][1] = l.at(0).at(1);
    s.linear[1][0] = l.at(1).at(0);
    s.linear[1][1] = l.at(1).at(1);
  } else {
    s.linear = d.linear;
  }
  if (j.contains("translation")) {
    s.translation[0] = j.at("translation").at(0);
    s.translation[1] = j.at("translation").at(1);
  } else {
    s.translation = d.translation;
  }
  s.speed_scale = j.value("speed_scale", d.speed_scale);
  s.noise_std = j.value("noise_std", d.noise_std);
}

inline void to_json(Json& j, const SynthSpec& s) {
  j = Json{{"n_peds", s.n_peds},
           {"samples_per_ped", s.samples_per_ped},
           {"speed_min", s.speed_min},
           {"speed_max", s.speed_max},
           {"turn_rate_std", s.turn_rate_std},
           {"noise_std", s.noise_std},
           {"box_half", s.box_half},
           {"frame_step", s.frame_step}};
}

inline void from_json(const Json& j, SynthSpec& s) {
  SynthSpec d;
  s.n_peds = j.value("n_peds", d.n_peds);
  s.samples_per_ped = j.value("samples_per_ped", d.samples_per_ped);
  s.speed_min = j.value("speed_min", d.speed_min);
  s.speed_max = j.value("speed_max", d.speed_max);
  s.turn_rate_std = j.value("turn_rate_std", d.turn_rate_std);
  s.noise_std = j.value("noise_std", d.noise_std);
  s.box_half = j.value("box_half", d.box_half);
  s.frame_step = j.value("frame_step", d.frame_step);
}

// ---- trajectory windows ----

inline void to_json(Json& j, const TrajectoryWindow& w) {
  Json obs = Json::array(), fut = Json::array();
  for (const auto& p : w.obs) obs.push_back({p[0], p[1]});
  for (const auto& p : w.fut) fut.push_back({p[0], p[1]});
  j = Json{{"ped_id", w.ped_id}, {"start_frame", w.start_frame}, {"obs", obs}, {"fut", fut}};
}

inline void from_json(const Json& j, TrajectoryWindow& w) {
  w.ped_id = j.at("ped_id");
  w.start_frame = j.at("start_frame");
  w.obs.clear();
  w.fut.clear();
  for (const auto& p : j.at("obs")) w.obs.push_back({p.at(0), p.at(1)});
  for (const auto& p : j.at("fut")) w.fut.push_back({p.at(0), p.at(1)});
}

/// Windows files are plain JSON arrays of {ped_id, start_frame, obs, fut}.
inline void save_windows(const std::string& path, const std::vector<TrajectoryWindow>& ws) {
  std::ofstream out(path);
  if (!out) throw IoError("save_windows: cannot write '" + path + "'");
  out << Json(ws).dump(1) << "\n";
}

inline std::vector<TrajectoryWindow> load_windows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_windows: cannot read '" + path + "'");
  Json j;
  try {
    in >> j;
    return j.get<std::vector<TrajectoryWindow>>();
  } catch (const Json::exception& e) {
    throw ParseError("load_windows: '" + path + "': " + e.what());
  }
}

// ---- reports ----

inline void to_json(Json& j, const EvalReport& r) {
  Json per = Json::array();
  for (const auto& [a, f] : r.per_window) per.push_back({a, f});
  Json samples = Json::array();
  for (const auto& traj : r.cumulative_offset_samples) {
    Json t = Json::array();
    for (const auto& p : traj) t.push_back({p[0], p[1]});
    samples.push_back(t);
  }
  j = Json{{"ade", r.ade},
           {"fde", r.fde},
           {"n_windows", r.n_windows},
           {"per_window", per},
           {"cumulative_offset_samples", samples}};
}

inline void from_json(const Json& j, EvalReport& r) {
  r.ade = j.at("ade");
  r.fde = j.at("fde");
  r.n_windows = j.at("n_windows");
  r.per_window.clear();
  for (const auto& p : j.at("per_window")) r.per_window.push_back({p.at(0), p.at(1)});
  r.cumulative_offset_samples.clear();
  for (const auto& t : j.at("cumulative_offset_samples")) {
    std::vector<Vec2> traj;
    for (const auto& p : t) traj.push_back({p.at(0), p.at(1)});
    r.cumulative_offset_samples.push_back(std::move(traj));
  }
}

}  // namespace ctp
