#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctpnet/autodiff.hpp"
#include "ctpnet/errors.hpp"
#include "ctpnet/hash.hpp"
#include "ctpnet/metrics.hpp"
#include "ctpnet/nets.hpp"
#include "ctpnet/rmsprop.hpp"
#include "ctpnet/traj_data.hpp"

namespace ctp {

struct TrainingConfig {
  double critic_lr = 5e-5;     // alpha: critic step size
  double generator_lr = 5e-5;  // beta: target-encoder / adaptor step size
  double source_lr = 1e-3;     // supervised pre-training step size
  double gp_coeff = 10.0;      // lambda
  int batch_size = 64;         // m, adversarial stages
  int source_batch_size = 0;   // supervised stages; 0 = batch_size
  int epochs = 500;            // N, adversarial epochs per stage
  int critic_iters = 5;        // n, critic updates per epoch
  int source_epochs = 200;
  int teacher_epochs = 30;  // teacher-forced warmup; later epochs decode autoregressively
  int patience = 20;        // early-stopping patience on validation ADE
  bool augment_rotations = true;  // random rotation per supervised batch
  // Critic-only iterations before the epoch loop starts (n per burn-in
  // round). Zero keeps the literal alternating loop; nonzero starts the
  // W-distance trace from a converged critic.
  int critic_burnin = 0;
  // Generator updates run only while the epoch's W estimate exceeds this.
  // Zero disables the gate (one generator step per epoch, unconditionally).
  // Near-identity domain pairs use a small tolerance so the aligned networks
  // are not dragged around by critic noise.
  double w_tolerance = 0.0;
  std::uint64_t seed = 1;

  int effective_source_batch() const {
    return source_batch_size > 0 ? source_batch_size : batch_size;
  }

  void validate() const {
    if (critic_lr <= 0 || generator_lr <= 0 || source_lr <= 0)
      throw ConfigError("TrainingConfig: learning rates must be positive");
    if (gp_coeff <= 0) throw ConfigError("TrainingConfig: gp_coeff must be positive");
    if (batch_size < 1 || epochs < 1 || critic_iters < 1 || source_epochs < 1)
      throw ConfigError("TrainingConfig: counts must be positive");
    if (teacher_epochs < 0 || source_batch_size < 0 || critic_burnin < 0)
      throw ConfigError("TrainingConfig: counts must be non-negative");
  }
};

/// Per-epoch traces and update accounting for one training stage. Traces not
/// applicable to a stage stay empty.
struct StageReport {
  std::vector<double> critic_loss;
  std::vector<double> generator_loss;
  std::vector<double> w_estimate;  // E[D(real)] - E[D(fake)]
  std::vector<double> train_loss;
  std::vector<double> val_ade;
  long critic_updates = 0;    // updates inside the epoch loop
  long generator_updates = 0;
  long burnin_critic_updates = 0;   // warmup updates before the epoch loop
  long skipped_generator_updates = 0;  // epochs gated off by w_tolerance
  int epochs_run = 0;
  double wall_seconds = 0.0;
};

namespace adapt_detail {

template <typename S>
Mat<S> gather_rows(const Mat<S>& m, std::span<const std::size_t> idx) {
  Mat<S> out(Eigen::Index(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(Eigen::Index(idx[i]));
  return out;
}

/// Windows lowered to the matrices the networks consume. Batches gather rows.
template <typename S>
struct PreparedSet {
  int lo = 0, lf = 0;
  std::size_t n = 0;
  std::vector<Mat<S>> obs_steps;  // lo matrices, n x 2 (coordinates)
  Mat<S> seeds;                   // n x 2 decoder seed (last offset / last coord)
  std::vector<Mat<S>> targets;    // lf matrices, n x 2 (offsets / coords)
  std::vector<Vec2> last_obs;     // n
};

template <typename S>
PreparedSet<S> prepare(const std::vector<TrajectoryWindow>& ws, PredSpace space, int lf_expected) {
  if (ws.empty()) throw TrainingError("prepare: empty window set");
  PreparedSet<S> p;
  p.n = ws.size();
  p.lo = int(ws[0].obs.size());
  p.lf = int(ws[0].fut.size());
  if (p.lf == 0) p.lf = lf_expected;  // observation-only sets (inference)
  p.obs_steps.assign(p.lo, Mat<S>(Eigen::Index(p.n), 2));
  p.seeds.resize(Eigen::Index(p.n), 2);
  p.last_obs.resize(p.n);
  bool have_futures = !ws[0].fut.empty();
  if (have_futures) p.targets.assign(p.lf, Mat<S>(Eigen::Index(p.n), 2));
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const auto& w = ws[i];
    if (int(w.obs.size()) != p.lo || (have_futures && int(w.fut.size()) != p.lf))
      throw ShapeError("prepare: ragged window lengths");
    for (int k = 0; k < p.lo; ++k) {
      p.obs_steps[k](Eigen::Index(i), 0) = S(w.obs[k][0]);
      p.obs_steps[k](Eigen::Index(i), 1) = S(w.obs[k][1]);
    }
    Vec2 seed = space == PredSpace::offset ? window_seed_offset(w) : w.obs.back();
    p.seeds(Eigen::Index(i), 0) = S(seed[0]);
    p.seeds(Eigen::Index(i), 1) = S(seed[1]);
    p.last_obs[i] = w.obs.back();
    if (have_futures) {
      std::vector<Vec2> tgt =
          space == PredSpace::offset ? window_fut_offsets(w) : w.fut;
      for (int k = 0; k < p.lf; ++k) {
        p.targets[k](Eigen::Index(i), 0) = S(tgt[k][0]);
        p.targets[k](Eigen::Index(i), 1) = S(tgt[k][1]);
      }
    }
  }
  return p;
}

template <typename S>
std::vector<Var<S>> obs_batch(const PreparedSet<S>& p, std::span<const std::size_t> idx) {
  std::vector<Var<S>> steps;
  steps.reserve(p.obs_steps.size());
  for (const auto& m : p.obs_steps) steps.push_back(Var<S>::constant(gather_rows(m, idx)));
  return steps;
}

template <typename S>
std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

template <typename S>
std::vector<std::size_t> sample_indices(std::size_t n, int m, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(m));
  for (auto& i : idx) i = dist(rng);
  return idx;
}

template <typename S>
std::vector<Mat<S>> snapshot(const std::vector<Var<S>>& ps) {
  std::vector<Mat<S>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.value());
  return out;
}

template <typename S>
void restore(std::vector<Var<S>>& ps, const std::vector<Mat<S>>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].assign(snap[i]);
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Median of the trailing `window` entries. The generator gate uses it so a
/// single noisy W spike cannot trigger an update.
inline double trailing_median(const std::vector<double>& values, std::size_t window = 7) {
  std::size_t n = std::min(window, values.size());
  std::vector<double> tail(values.end() - n, values.end());
  std::sort(tail.begin(), tail.end());
  return tail[tail.size() / 2];
}

}  // namespace adapt_detail

// ---- inference ----

/// Autoregressive predictions in world coordinates for a set of windows.
/// Encoder choice and adaptor use select the model variant: SO / F-T use the
/// source encoder without the adaptor, TE the target encoder without it, TO
/// the full path.
template <typename S>
std::vector<std::vector<Vec2>> predict_coords(const std::vector<TrajectoryWindow>& ws,
                                              const ModelBundle<S>& bundle, int lf,
                                              bool use_target_encoder, bool use_adaptor) {
  ad::NoGrad guard;
  using namespace adapt_detail;
  auto p = prepare<S>(ws, bundle.cfg.representation, lf);
  auto idx = all_indices<S>(p.n);
  auto steps = obs_batch(p, idx);
  const auto& enc = use_target_encoder ? bundle.target_encoder : bundle.source_encoder;
  Var<S> feature = enc.encode(steps);
  auto outs = bundle.source_decoder.decode(feature, Var<S>::constant(p.seeds), lf, nullptr);
  Var<S> flat = ad::concat_cols(outs);  // n x (2*lf), step-major pairs
  if (use_adaptor) flat = bundle.offset_adaptor.adapt(flat);

  std::vector<std::vector<Vec2>> coords(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    std::vector<Vec2> pts;
    pts.reserve(std::size_t(lf));
    if (bundle.cfg.representation == PredSpace::offset) {
      Vec2 cur = p.last_obs[i];
      for (int k = 0; k < lf; ++k) {
        cur[0] += double(flat.value()(Eigen::Index(i), 2 * k));
        cur[1] += double(flat.value()(Eigen::Index(i), 2 * k + 1));
        pts.push_back(cur);
      }
    } else {
      for (int k = 0; k < lf; ++k)
        pts.push_back({double(flat.value()(Eigen::Index(i), 2 * k)),
                       double(flat.value()(Eigen::Index(i), 2 * k + 1))});
    }
    coords[i] = std::move(pts);
  }
  return coords;
}

/// Full trained pipeline on one observation: target encoder -> source
/// decoder -> coordinate offset adaptor -> coordinates.
template <typename S>
std::vector<Vec2> infer_target(const std::vector<Vec2>& obs, const ModelBundle<S>& bundle, int lf) {
  TrajectoryWindow w;
  w.obs = obs;
  return predict_coords(std::vector<TrajectoryWindow>{w}, bundle, lf, true, true)[0];
}

template <typename S>
EvalReport evaluate(const std::vector<TrajectoryWindow>& ws, const ModelBundle<S>& bundle,
                    bool use_target_encoder, bool use_adaptor) {
  if (ws.empty()) throw TrainingError("evaluate: empty window set");
  int lf = int(ws[0].fut.size());
  auto preds = predict_coords(ws, bundle, lf, use_target_encoder, use_adaptor);
  std::vector<std::vector<Vec2>> gts;
  std::vector<Vec2> last_obs;
  gts.reserve(ws.size());
  last_obs.reserve(ws.size());
  for (const auto& w : ws) {
    gts.push_back(w.fut);
    last_obs.push_back(w.obs.back());
  }
  return build_eval_report(preds, gts, last_obs);
}

// ---- adversarial building blocks ----

/// Eq.-style gradient penalty: interpolates each real/fake pair at a fresh
/// uniform coefficient, evaluates the critic's input-gradient norm there and
/// returns mean (norm - 1)^2 as a recorded scalar, differentiable in the
/// critic parameters.
template <typename S>
Var<S> gradient_penalty(const nets::Critic<S>& critic, const Mat<S>& real, const Mat<S>& fake,
                        std::mt19937_64& rng) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols())
    throw ShapeError("gradient_penalty: batch shapes differ");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Mat<S> mix(real.rows(), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    S gamma = S(u01(rng));
    mix.row(i) = gamma * real.row(i) + (S(1) - gamma) * fake.row(i);
  }
  Var<S> x = Var<S>::leaf(std::move(mix));
  Var<S> score_sum = ad::sum_all(critic.score(x));
  Var<S> g = ad::grad_single(score_sum, x);
  if (!g.value().allFinite()) throw NumericError("gradient_penalty: non-finite input gradient");
  return ad::mean_all(ad::square(ad::add_scalar(ad::row_norm(g), S(-1))));
}

/// The critic's minimized objective, the inner accumulator of the alignment
/// loop divided by the batch size:
///   mean D(fake) - mean D(real) + lambda * gradient penalty.
/// Minimizing drives real scores up and fake scores down.
template <typename S>
Var<S> critic_loss(const nets::Critic<S>& critic, const Mat<S>& real, const Mat<S>& fake, S lambda,
                   std::mt19937_64& rng) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols())
    throw ShapeError("critic_loss: batch shapes differ");
  Var<S> d_real = ad::mean_all(critic.score(Var<S>::constant(real)));
  Var<S> d_fake = ad::mean_all(critic.score(Var<S>::constant(fake)));
  Var<S> gp = gradient_penalty(critic, real, fake, rng);
  return ad::add(ad::sub(d_fake, d_real), ad::scale(gp, lambda));
}

// ---- stage: supervised source training ----

namespace adapt_detail {

/// Supervised fit of one encoder-decoder pair, shared by source pre-training
/// and the fine-tuning baseline. The first `teacher_epochs` epochs teacher-
/// force the decoder; the rest decode autoregressively so the model is
/// optimized under its inference-time feedback. The step size decays at 50%
/// and 80% of the budget. Each batch may be rotated by one random angle,
/// which stretches the heading coverage of small synthetic sets.
template <typename S>
StageReport supervised_fit(const std::vector<TrajectoryWindow>& train,
                           const std::vector<TrajectoryWindow>& val, nets::Encoder<S>& encoder,
                           nets::Decoder<S>& decoder, const ModelBundle<S>& bundle,
                           const TrainingConfig& cfg, int epochs, bool early_stop,
                           const char* stage_name) {
  if (train.empty()) throw TrainingError(std::string(stage_name) + ": empty training set");
  auto p = prepare<S>(train, bundle.cfg.representation, 0);

  std::vector<Var<S>> params;
  {
    std::vector<std::pair<std::string, Var<S>>> named;
    encoder.collect("enc", named);
    decoder.collect("dec", named);
    for (auto& [name, var] : named) params.push_back(var);
  }
  RmsProp<S> opt{S(cfg.source_lr)};
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  const std::size_t batch_size = std::size_t(cfg.effective_source_batch());

  StageReport report;
  StageTimer timer;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<Mat<S>> best_params;

  auto idx = all_indices<S>(p.n);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (epoch == epochs / 2) opt.set_lr(S(cfg.source_lr * 0.25));
    if (epoch == epochs * 4 / 5) opt.set_lr(S(cfg.source_lr * 0.05));
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < p.n; at += batch_size) {
      std::size_t len = std::min<std::size_t>(batch_size, p.n - at);
      std::span<const std::size_t> b(idx.data() + at, len);
      auto steps = obs_batch(p, b);
      Var<S> seeds = Var<S>::constant(gather_rows(p.seeds, b));
      std::vector<Var<S>> teacher;
      teacher.reserve(p.targets.size());
      for (const auto& t : p.targets) teacher.push_back(Var<S>::constant(gather_rows(t, b)));
      if (cfg.augment_rotations) {
        double a = angle(rng);
        Mat<S> rot(2, 2);
        rot << S(std::cos(a)), S(std::sin(a)), S(-std::sin(a)), S(std::cos(a));
        for (auto& s : steps) s = Var<S>::constant(s.value() * rot);
        seeds = Var<S>::constant(seeds.value() * rot);
        for (auto& t : teacher) t = Var<S>::constant(t.value() * rot);
      }
      Var<S> feature = encoder.encode(steps);
      bool forced = epoch < cfg.teacher_epochs;
      auto outs =
          decoder.decode(feature, seeds, int(p.targets.size()), forced ? &teacher : nullptr);
      Var<S> loss = ad::mse(ad::concat_cols(outs), ad::concat_cols(teacher));
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw TrainingError(std::string(stage_name) + ": loss diverged (non-finite) at epoch " +
                            std::to_string(epoch));
      opt.step(params, grad_values(loss, params));
      epoch_loss += lv;
      ++batches;
      ++report.generator_updates;
    }
    report.train_loss.push_back(epoch_loss / std::max(batches, 1));
    report.epochs_run = epoch + 1;

    if (!val.empty()) {
      ModelBundle<S> probe = bundle;
      probe.source_encoder = encoder;
      probe.source_decoder = decoder;
      EvalReport ev = evaluate(val, probe, false, false);
      report.val_ade.push_back(ev.ade);
      if (ev.ade < best_val) {
        best_val = ev.ade;
        best_epoch = epoch;
        best_params = snapshot(params);
      } else if (early_stop && epoch - best_epoch >= cfg.patience) {
        break;
      }
    }
  }
  if (!best_params.empty()) restore(params, best_params);
  report.wall_seconds = timer.seconds();
  return report;
}

}  // namespace adapt_detail

/// Pre-trains the source encoder-decoder with teacher forcing, early-stopping
/// on validation ADE and keeping the best parameters. The trained pair is
/// frozen by the later stages.
template <typename S>
StageReport train_source(const DomainSplit& split, ModelBundle<S>& bundle,
                         const TrainingConfig& cfg) {
  cfg.validate();
  return adapt_detail::supervised_fit(split.source_train, split.source_val, bundle.source_encoder,
                                      bundle.source_decoder, bundle, cfg, cfg.source_epochs, true,
                                      "train_source");
}

// ---- stage 1: cross-domain feature alignment ----

/// Adversarial feature alignment: per epoch, `critic_iters` critic updates on
/// the objective above, then one target-encoder update minimizing
/// -mean D(TE(obs_t)). Source encoder-decoder parameters never change here.
template <typename S>
StageReport stage1_align(const DomainSplit& split, ModelBundle<S>& bundle,
                         const TrainingConfig& cfg) {
  cfg.validate();
  using namespace adapt_detail;
  if (split.source_train.empty()) throw TrainingError("stage1_align: empty source_train");
  if (split.target_train.empty()) throw TrainingError("stage1_align: empty target_train");

  auto src = prepare<S>(split.source_train, bundle.cfg.representation, 0);
  auto tgt = prepare<S>(split.target_train, bundle.cfg.representation, 0);

  auto critic_params = bundle.params_of("feature_critic");
  auto te_params = bundle.params_of("target_encoder");
  RmsProp<S> critic_opt{S(cfg.critic_lr)};
  RmsProp<S> te_opt{S(cfg.generator_lr)};
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 2);

  // Fixed evaluation subsets for the per-epoch W-distance estimate.
  auto eval_src = all_indices<S>(std::min<std::size_t>(src.n, 512));
  auto eval_tgt = all_indices<S>(std::min<std::size_t>(tgt.n, 512));

  StageReport report;
  StageTimer timer;

  auto critic_iteration = [&](int epoch) {
    Mat<S> ms, mt;
    {
      ad::NoGrad guard;
      auto bs = sample_indices<S>(src.n, cfg.batch_size, rng);
      auto bt = sample_indices<S>(tgt.n, cfg.batch_size, rng);
      ms = bundle.source_encoder.encode(obs_batch(src, bs)).value();
      mt = bundle.target_encoder.encode(obs_batch(tgt, bt)).value();
    }
    Var<S> loss = critic_loss(bundle.feature_critic, ms, mt, S(cfg.gp_coeff), rng);
    double lv = double(loss.item());
    if (!std::isfinite(lv))
      throw TrainingError("stage1_align: critic loss diverged at epoch " + std::to_string(epoch));
    critic_opt.step(critic_params, grad_values(loss, critic_params));
    return lv;
  };

  for (int round = 0; round < cfg.critic_burnin; ++round)
    for (int it = 0; it < cfg.critic_iters; ++it) {
      critic_iteration(-1);
      ++report.burnin_critic_updates;
    }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double critic_loss_sum = 0.0;
    for (int it = 0; it < cfg.critic_iters; ++it) {
      critic_loss_sum += critic_iteration(epoch);
      ++report.critic_updates;
    }

    // W estimate from the freshly trained critic; gates the encoder update.
    double w;
    {
      ad::NoGrad guard;
      Var<S> ds = ad::mean_all(
          bundle.feature_critic.score(bundle.source_encoder.encode(obs_batch(src, eval_src))));
      Var<S> dt = ad::mean_all(
          bundle.feature_critic.score(bundle.target_encoder.encode(obs_batch(tgt, eval_tgt))));
      w = double(ds.item() - dt.item());
    }

    auto bt = sample_indices<S>(tgt.n, cfg.batch_size, rng);
    Var<S> feature = bundle.target_encoder.encode(obs_batch(tgt, bt));
    Var<S> gen_loss = ad::neg(ad::mean_all(bundle.feature_critic.score(feature)));
    double gv = double(gen_loss.item());
    if (!std::isfinite(gv))
      throw TrainingError("stage1_align: encoder loss diverged at epoch " + std::to_string(epoch));
    report.w_estimate.push_back(w);
    if (cfg.w_tolerance > 0.0 && trailing_median(report.w_estimate) <= cfg.w_tolerance) {
      ++report.skipped_generator_updates;
    } else {
      te_opt.step(te_params, grad_values(gen_loss, te_params));
      ++report.generator_updates;
    }

    report.critic_loss.push_back(critic_loss_sum / cfg.critic_iters);
    report.generator_loss.push_back(gv);
    report.epochs_run = epoch + 1;
  }
  report.wall_seconds = timer.seconds();
  return report;
}

// ---- stage 2: coordinate offset alignment ----

namespace adapt_detail {

/// Sliding windows of `ca_window` consecutive steps (stride 1) from each
/// row of flattened step pairs, stacked into one matrix.
template <typename S>
Mat<S> sliding_windows(const Mat<S>& flat, int ca_window) {
  int steps = int(flat.cols() / 2);
  int count = steps - ca_window + 1;
  if (count < 1) throw ShapeError("sliding_windows: sequence shorter than window");
  Mat<S> out(flat.rows() * count, 2 * ca_window);
  for (Eigen::Index i = 0; i < flat.rows(); ++i)
    for (int j = 0; j < count; ++j)
      out.row(i * count + j) = flat.block(i, 2 * j, 1, 2 * ca_window);
  return out;
}

/// Observed step windows (the critic's real samples): sliding windows over
/// observed offsets (or coordinates, in coordinate mode).
template <typename S>
Mat<S> observed_window_pool(const std::vector<TrajectoryWindow>& ws, PredSpace space,
                            int ca_window) {
  std::vector<Mat<S>> rows;
  rows.reserve(ws.size());
  for (const auto& w : ws) {
    std::vector<Vec2> seq = space == PredSpace::offset
                                ? window_obs_offsets(w)
                                : w.obs;
    Mat<S> flat(1, Eigen::Index(2 * seq.size()));
    for (std::size_t k = 0; k < seq.size(); ++k) {
      flat(0, Eigen::Index(2 * k)) = S(seq[k][0]);
      flat(0, Eigen::Index(2 * k + 1)) = S(seq[k][1]);
    }
    rows.push_back(sliding_windows(flat, ca_window));
  }
  Eigen::Index total = 0;
  for (const auto& r : rows) total += r.rows();
  Mat<S> out(total, 2 * ca_window);
  Eigen::Index at = 0;
  for (const auto& r : rows) {
    out.middleRows(at, r.rows()) = r;
    at += r.rows();
  }
  return out;
}

}  // namespace adapt_detail

/// Adversarial offset alignment: the offset critic scores 6-frame windows of
/// observed target steps (real) against windows of adaptor-mapped predictions
/// (fake); the adaptor updates once per epoch to minimize -mean D(fake).
/// Predictions come from the frozen target encoder and source decoder, so
/// they are computed once up front.
template <typename S>
StageReport stage2_align(const DomainSplit& split, ModelBundle<S>& bundle,
                         const TrainingConfig& cfg) {
  cfg.validate();
  using namespace adapt_detail;
  if (split.target_train.empty()) throw TrainingError("stage2_align: empty target_train");

  const int ca = bundle.cfg.ca_window;
  const auto& ws = split.target_train;
  auto tgt = prepare<S>(ws, bundle.cfg.representation, 0);
  int lf = tgt.lf;
  if (lf % ca != 0) throw ConfigError("stage2_align: lf not divisible by ca_window");

  Mat<S> real_pool = observed_window_pool<S>(ws, bundle.cfg.representation, ca);

  // Frozen TE -> SD predictions for every target-train window, flattened.
  Mat<S> pred_flat;
  {
    ad::NoGrad guard;
    auto idx = all_indices<S>(tgt.n);
    Var<S> feature = bundle.target_encoder.encode(obs_batch(tgt, idx));
    auto outs = bundle.source_decoder.decode(feature, Var<S>::constant(tgt.seeds), lf, nullptr);
    pred_flat = ad::concat_cols(outs).value();
  }

  auto critic_params = bundle.params_of("offset_critic");
  auto ca_params = bundle.params_of("offset_adaptor");
  RmsProp<S> critic_opt{S(cfg.critic_lr)};
  RmsProp<S> ca_opt{S(cfg.generator_lr)};
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 3);

  const int windows_per_traj = lf - ca + 1;
  auto fake_windows_nograd = [&](std::span<const std::size_t> traj_idx) {
    ad::NoGrad guard;
    Mat<S> flat = gather_rows(pred_flat, traj_idx);
    Var<S> adapted = bundle.offset_adaptor.adapt(Var<S>::constant(flat));
    return sliding_windows(adapted.value(), ca);
  };

  std::size_t eval_n = std::min<std::size_t>(tgt.n, 512);
  auto eval_idx = all_indices<S>(eval_n);

  StageReport report;
  StageTimer timer;

  auto critic_iteration = [&](int epoch) {
    std::uniform_int_distribution<Eigen::Index> real_dist(0, real_pool.rows() - 1);
    Mat<S> real(cfg.batch_size, 2 * ca);
    for (int i = 0; i < cfg.batch_size; ++i) real.row(i) = real_pool.row(real_dist(rng));
    auto traj = sample_indices<S>(tgt.n, cfg.batch_size, rng);
    Mat<S> fake_all = fake_windows_nograd(traj);
    std::uniform_int_distribution<int> win_dist(0, windows_per_traj - 1);
    Mat<S> fake(cfg.batch_size, 2 * ca);
    for (int i = 0; i < cfg.batch_size; ++i)
      fake.row(i) = fake_all.row(Eigen::Index(i) * windows_per_traj + win_dist(rng));
    Var<S> loss = critic_loss(bundle.offset_critic, real, fake, S(cfg.gp_coeff), rng);
    double lv = double(loss.item());
    if (!std::isfinite(lv))
      throw TrainingError("stage2_align: critic loss diverged at epoch " + std::to_string(epoch));
    critic_opt.step(critic_params, grad_values(loss, critic_params));
    return lv;
  };

  for (int round = 0; round < cfg.critic_burnin; ++round)
    for (int it = 0; it < cfg.critic_iters; ++it) {
      critic_iteration(-1);
      ++report.burnin_critic_updates;
    }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double critic_loss_sum = 0.0;
    for (int it = 0; it < cfg.critic_iters; ++it) {
      critic_loss_sum += critic_iteration(epoch);
      ++report.critic_updates;
    }

    double w;
    {
      ad::NoGrad guard;
      Eigen::Index nr = std::min<Eigen::Index>(real_pool.rows(), 1024);
      Var<S> d_real =
          ad::mean_all(bundle.offset_critic.score(Var<S>::constant(real_pool.topRows(nr))));
      Mat<S> fake_eval = fake_windows_nograd(eval_idx);
      Var<S> d_fake = ad::mean_all(bundle.offset_critic.score(Var<S>::constant(fake_eval)));
      w = double(d_real.item() - d_fake.item());
    }

    // Adaptor update: all sliding windows of the sampled trajectories.
    auto traj = sample_indices<S>(tgt.n, cfg.batch_size, rng);
    Var<S> flat = Var<S>::constant(gather_rows(pred_flat, traj));
    Var<S> adapted = bundle.offset_adaptor.adapt(flat);
    std::vector<Var<S>> parts;
    parts.reserve(std::size_t(windows_per_traj));
    for (int j = 0; j < windows_per_traj; ++j)
      parts.push_back(ad::slice_cols(adapted, 2 * j, 2 * ca));
    Var<S> fake_stack = ad::concat_rows(parts);
    Var<S> gen_loss = ad::neg(ad::mean_all(bundle.offset_critic.score(fake_stack)));
    double gv = double(gen_loss.item());
    if (!std::isfinite(gv))
      throw TrainingError("stage2_align: adaptor loss diverged at epoch " + std::to_string(epoch));
    report.w_estimate.push_back(w);
    if (cfg.w_tolerance > 0.0 && trailing_median(report.w_estimate) <= cfg.w_tolerance) {
      ++report.skipped_generator_updates;
    } else {
      ca_opt.step(ca_params, grad_values(gen_loss, ca_params));
      ++report.generator_updates;
    }

    report.critic_loss.push_back(critic_loss_sum / cfg.critic_iters);
    report.generator_loss.push_back(gv);
    report.epochs_run = epoch + 1;
  }
  report.wall_seconds = timer.seconds();
  return report;
}

// ---- fine-tuning baseline ----

/// Halves each observation: the front half becomes the input window, the back
/// half the pseudo-label future. No annotated futures are touched.
inline std::vector<TrajectoryWindow> make_finetune_windows(
    const std::vector<TrajectoryWindow>& ws) {
  std::vector<TrajectoryWindow> out;
  out.reserve(ws.size());
  for (const auto& w : ws) {
    if (w.obs.size() < 4)
      throw TrainingError("make_finetune_windows: need at least 4 observed frames");
    std::size_t half = w.obs.size() / 2;
    TrajectoryWindow f;
    f.ped_id = w.ped_id;
    f.start_frame = w.start_frame;
    f.obs.assign(w.obs.begin(), w.obs.begin() + half);
    f.fut.assign(w.obs.begin() + half, w.obs.end());
    out.push_back(std::move(f));
  }
  return out;
}

struct FinetuneResult {
  StageReport report;
  EvalReport eval;
};

/// Continues supervised training of the (already source-trained) encoder and
/// decoder on target observations only, then evaluates on target test like
/// any other variant. Mutates the encoder/decoder of `bundle`; callers wanting
/// to keep the source model pass a copy.
template <typename S>
FinetuneResult finetune_baseline(const DomainSplit& split, ModelBundle<S>& bundle,
                                 const TrainingConfig& cfg) {
  cfg.validate();
  if (split.target_train.empty()) throw TrainingError("finetune_baseline: empty target_train");
  auto pseudo = make_finetune_windows(split.target_train);
  FinetuneResult result;
  result.report =
      adapt_detail::supervised_fit(pseudo, {}, bundle.source_encoder, bundle.source_decoder,
                                   bundle, cfg, cfg.source_epochs, false, "finetune_baseline");
  result.eval = evaluate(split.target_test, bundle, false, false);
  return result;
}

}  // namespace ctp
