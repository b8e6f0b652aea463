#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msknet/checkpoint.hpp"
#include "msknet/common.hpp"
#include "msknet/data.hpp"
#include "msknet/loss.hpp"
#include "msknet/network.hpp"
#include "msknet/optim.hpp"

// Training orchestration: dataset assembly from trajectories, the
// physics-informed and supervised loops, checkpoint/resume, evaluation
// against reference labels, and the ablation harness. Every random choice is
// derived from (seed, logical index), so a run is a pure function of its
// config and data; resuming from a checkpoint reproduces the uninterrupted
// run bit for bit because the lr schedule and shuffles are step- and
// epoch-indexed rather than stateful.

namespace msknet {

enum class TrainMode { physics, supervised };

inline const char* train_mode_name(TrainMode m) {
  return m == TrainMode::physics ? "physics" : "supervised";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "physics") return TrainMode::physics;
  if (s == "supervised") return TrainMode::supervised;
  throw Error("unknown training mode: " + s);
}

struct TrainConfig {
  TrainMode mode = TrainMode::physics;
  NetConfig net;
  int epochs = 500;
  int batch = 8;
  int window = 20;
  int stride = 2;
  double lr = 5e-4;
  LossWeights weights;
  AdamConfig adam;
  std::uint64_t seed = 1;
  SplitMode split = SplitMode::intra;
  std::string holdout;            // held-out condition tag (loso_condition mode)
  double train_fraction = 0.8;
  bool normalize = true;          // z-score inputs with training-split statistics
  double force_mse_weight = 0.0;  // supervised mode: extra MSE on forces / f_max
  int checkpoint_every = 50;      // epochs
  int max_epochs_this_run = 0;    // 0 = to completion; schedule still spans `epochs`
  std::string out_dir;            // empty: no files written
  std::string run_tag = "run";
  std::string resume_path;

  void validate() const {
    require(epochs >= 1 && batch >= 1 && window >= 1 && stride >= 1,
            "train config: epochs, batch, window, stride must be >= 1");
    require(lr > 0.0, "train config: lr must be positive");
    require(checkpoint_every >= 1, "train config: checkpoint cadence must be >= 1");
    require(force_mse_weight >= 0.0, "train config: force_mse_weight must be >= 0");
    weights.validate();
    net.validate();
  }
};

// ---------------------------------------------------------------------------
// Dataset: per-trial features, window index, and whatever the selected loss
// needs, precomputed once. Features stay raw here; normalization is applied
// at batch assembly so one dataset serves normalized and raw runs.

struct Dataset {
  int window = 20, stride = 2;
  std::vector<MatrixXd> features;                  // per trial, T x 9
  std::vector<VectorXd> times;                     // per trial, T
  std::vector<std::vector<int>> window_ends;       // per trial
  std::vector<std::string> conditions;             // per trial
  std::vector<MatrixXd> vbars;                     // per trial, T x M
  std::vector<MatrixXd> force_gain, force_offset;  // per trial, T x M; F = gain.*a + offset
  std::vector<std::vector<FramePhysics>> physics;  // physics mode, per trial per frame
  std::vector<MatrixXd> labels;                    // activations, per trial T x M
  std::vector<MatrixXd> label_forces;              // N, per trial T x M

  int trials() const { return static_cast<int>(features.size()); }
  bool has_physics() const { return !physics.empty(); }
  bool has_labels() const { return !labels.empty(); }

  Vector3d frame_q(int trial, int frame) const {
    const MatrixXd& f = features[trial];
    return {f(frame, 0), f(frame, 3), f(frame, 6)};
  }
};

// Per-muscle affine force map at one frame: F = gain .* a + offset, in N.
inline void force_affine(const std::vector<MuscleParams>& params, const MuscleGeometry& geom,
                         const Vector3d& q, const VectorXd& vbar, VectorXd* gain,
                         VectorXd* offset) {
  VectorXd lmt = musculotendon_lengths(geom, q);
  int m = geom.count();
  gain->resize(m);
  offset->resize(m);
  for (int n = 0; n < m; ++n) {
    FiberGeometry fg = fiber_geometry(params[n], lmt(n));
    double lbar = fg.fiber_length / params[n].l_opt;
    double cp = std::cos(fg.pennation);
    (*gain)(n) = params[n].f_max * active_force_length(lbar) * force_velocity(vbar(n)) * cp;
    (*offset)(n) = params[n].f_max * passive_force_length(lbar) * cp;
  }
}

inline Dataset build_dataset(const LimbModel& model, const std::vector<MuscleParams>& params,
                             const MuscleGeometry& geom, std::vector<JointTrajectory> trials,
                             int window, int stride, bool with_physics,
                             const std::vector<LabelSet>* labels = nullptr) {
  require(!trials.empty(), "dataset: no trials");
  Dataset ds;
  ds.window = window;
  ds.stride = stride;
  for (auto& tr : trials) {
    tr.validate();
    differentiate(tr);
    ds.features.push_back(feature_matrix(tr));
    ds.times.push_back(tr.time);
    ds.window_ends.push_back(window_end_frames(tr.frames(), window, stride));
    ds.conditions.push_back(tr.condition);
    MatrixXd vb = trajectory_vbars(params, geom, tr.q, tr.dt());
    MatrixXd fg(tr.frames(), geom.count()), fo(tr.frames(), geom.count());
    for (int t = 0; t < tr.frames(); ++t) {
      VectorXd gain, off;
      force_affine(params, geom, tr.q.row(t), vb.row(t).transpose(), &gain, &off);
      fg.row(t) = gain;
      fo.row(t) = off;
    }
    ds.vbars.push_back(std::move(vb));
    ds.force_gain.push_back(std::move(fg));
    ds.force_offset.push_back(std::move(fo));
    if (with_physics) ds.physics.push_back(precompute_frame_physics(model, params, geom, tr));
  }
  if (labels) {
    require(labels->size() == trials.size(), "dataset: one label set per trial required");
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const LabelSet& ls = (*labels)[i];
      ls.validate();
      require(ls.frames() == trials[i].frames(),
              "dataset: label frames do not match trial " + std::to_string(i));
      require(ls.muscle_names == geom.names, "dataset: label muscle order differs from geometry");
      ds.labels.push_back(ls.activations);
      ds.label_forces.push_back(ls.forces);
    }
  }
  return ds;
}

// Statistics over exactly the frames covered by training windows, each frame
// counted once however many windows overlap it.
inline NormStats training_norm_stats(const Dataset& ds, const std::vector<WindowRef>& train) {
  require(!train.empty(), "norm stats: no training windows");
  std::vector<std::vector<char>> mask(ds.features.size());
  for (std::size_t t = 0; t < mask.size(); ++t) mask[t].assign(ds.features[t].rows(), 0);
  for (const auto& w : train)
    for (int f = w.end_frame - ds.window + 1; f <= w.end_frame; ++f) mask[w.trial][f] = 1;
  long total = 0;
  for (const auto& m : mask)
    for (char c : m) total += c;
  MatrixXd rows(total, ds.features[0].cols());
  long r = 0;
  for (std::size_t t = 0; t < mask.size(); ++t)
    for (std::size_t f = 0; f < mask[t].size(); ++f)
      if (mask[t][f]) rows.row(r++) = ds.features[t].row(static_cast<int>(f));
  return compute_norm_stats(rows);
}

inline MatrixXd assemble_windows(const Dataset& ds, const NormStats* stats,
                                 const std::vector<WindowRef>& refs) {
  require(!refs.empty(), "assemble: empty batch");
  int b = static_cast<int>(refs.size());
  MatrixXd x(b * ds.window, ds.features[0].cols());
  for (int i = 0; i < b; ++i) {
    const WindowRef& w = refs[static_cast<std::size_t>(i)];
    x.middleRows(i * ds.window, ds.window) =
        ds.features[w.trial].middleRows(w.end_frame - ds.window + 1, ds.window);
  }
  if (stats) x = normalize(*stats, x);
  return x;
}

// ---------------------------------------------------------------------------
// Checkpoint layout: config echo in meta, "param.<name>" tensors in network
// order, optimizer moments as "adam.m/.v.<name>", stats under "norm.*".

namespace detail {

inline nlohmann::ordered_json net_meta(const NetConfig& c) {
  nlohmann::ordered_json j;
  j["backbone"] = backbone_name(c.backbone);
  j["n_joints"] = c.n_joints;
  j["n_muscles"] = c.n_muscles;
  j["d_joint"] = c.d_joint;
  j["n_heads"] = c.n_heads;
  j["d_integrated"] = c.d_integrated;
  j["d_gru"] = c.d_gru;
  j["gru_layers"] = c.gru_layers;
  j["dropout"] = c.dropout;
  j["head_dims"] = c.head_dims;
  j["cnn_channels"] = c.cnn_channels;
  j["cnn_dropout"] = c.cnn_dropout;
  return j;
}

inline NetConfig net_from_meta(const nlohmann::ordered_json& j) {
  NetConfig c;
  c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.n_joints = j.at("n_joints").get<int>();
  c.n_muscles = j.at("n_muscles").get<int>();
  c.d_joint = j.at("d_joint").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_integrated = j.at("d_integrated").get<int>();
  c.d_gru = j.at("d_gru").get<int>();
  c.gru_layers = j.at("gru_layers").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.head_dims = j.at("head_dims").get<std::vector<int>>();
  c.cnn_channels = j.at("cnn_channels").get<std::vector<int>>();
  c.cnn_dropout = j.at("cnn_dropout").get<double>();
  return c;
}

}  // namespace detail

inline Checkpoint make_train_checkpoint(const TrainConfig& cfg, const Network& net, Adam& adam,
                                        const NormStats* stats, int epoch, long step) {
  Checkpoint ck;
  ck.meta["format"] = "msknet-train";
  ck.meta["mode"] = train_mode_name(cfg.mode);
  ck.meta["epoch"] = epoch;
  ck.meta["step"] = step;
  ck.meta["adam_t"] = adam.t();
  ck.meta["epochs"] = cfg.epochs;
  ck.meta["batch"] = cfg.batch;
  ck.meta["window"] = cfg.window;
  ck.meta["stride"] = cfg.stride;
  ck.meta["lr"] = cfg.lr;
  ck.meta["seed"] = cfg.seed;
  ck.meta["weights"] = {cfg.weights.w_d, cfg.weights.w_p, cfg.weights.w_b};
  ck.meta["normalize"] = cfg.normalize;
  ck.meta["net"] = detail::net_meta(net.config());
  for (std::size_t i = 0; i < net.names().size(); ++i)
    ck.add("param." + net.names()[i], net.weights()[i]);
  if (!adam.first_moments().empty()) {
    for (std::size_t i = 0; i < net.names().size(); ++i) {
      ck.add("adam.m." + net.names()[i], adam.first_moments()[i]);
      ck.add("adam.v." + net.names()[i], adam.second_moments()[i]);
    }
  }
  if (stats) {
    ck.add("norm.mean", stats->mean);
    ck.add("norm.std", stats->stddev);
  }
  return ck;
}

inline Network network_from_checkpoint(const Checkpoint& ck) {
  NetConfig nc = detail::net_from_meta(ck.meta.at("net"));
  Network net(nc, ck.meta.value("seed", std::uint64_t{0}));
  for (std::size_t i = 0; i < net.names().size(); ++i)
    net.weights()[i] = ck.tensor("param." + net.names()[i]);
  return net;
}

inline std::optional<NormStats> norm_stats_from_checkpoint(const Checkpoint& ck) {
  if (!ck.has("norm.mean")) return std::nullopt;
  NormStats s;
  s.mean = ck.tensor("norm.mean").row(0);
  s.stddev = ck.tensor("norm.std").row(0);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Training loop.

struct LogRecord {
  long step = 0;
  double lr = 0.0, l_d = 0.0, l_p = 0.0, l_b = 0.0, l_total = 0.0, wall_ms = 0.0;
};

inline void write_train_log(std::ostream& out, const std::vector<LogRecord>& log) {
  out.precision(17);
  out << "step,lr,l_d,l_p,l_b,l_total,wall_ms\n";
  for (const auto& r : log)
    out << r.step << "," << r.lr << "," << r.l_d << "," << r.l_p << "," << r.l_b << ","
        << r.l_total << "," << r.wall_ms << "\n";
}

struct TrainResult {
  std::optional<Network> net;
  NormStats stats;  // meaningful only when cfg.normalize
  SplitResult split;
  std::vector<LogRecord> log;  // records of the epochs this call ran
  std::string last_checkpoint;
  long steps_per_epoch = 0, total_steps = 0;
  int start_epoch = 0;
};

inline TrainResult train_run(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  require(ds.window == cfg.window && ds.stride == cfg.stride,
          "train: dataset was built with a different window/stride");
  if (cfg.mode == TrainMode::physics)
    require(ds.has_physics(), "train: physics mode needs frame physics in the dataset");
  else
    require(ds.has_labels(), "train: supervised mode needs labels in the dataset");
  if (ds.has_physics())
    require(static_cast<int>(ds.physics[0][0].gains.cols()) == cfg.net.n_muscles,
            "train: muscle count differs between dataset and network");
  if (ds.has_labels())
    require(static_cast<int>(ds.labels[0].cols()) == cfg.net.n_muscles,
            "train: label muscle count differs from network");

  TrainResult res;
  res.split = split_windows(cfg.split, ds.window_ends, ds.conditions, cfg.holdout, cfg.seed,
                            cfg.train_fraction);
  res.steps_per_epoch = static_cast<long>(res.split.train.size()) / cfg.batch;
  require(res.steps_per_epoch >= 1, "train: fewer training windows than one batch");
  res.total_steps = res.steps_per_epoch * cfg.epochs;

  Network net(cfg.net, cfg.seed);
  Adam adam(cfg.adam);
  if (cfg.normalize) res.stats = training_norm_stats(ds, res.split.train);
  int start_epoch = 0;
  long step = 0;

  if (!cfg.resume_path.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume_path);
    require(ck.meta.value("format", "") == "msknet-train", "resume: not a training checkpoint");
    require(ck.meta.value("mode", "") == train_mode_name(cfg.mode), "resume: mode differs");
    require(ck.meta.value("batch", -1) == cfg.batch && ck.meta.value("window", -1) == cfg.window &&
                ck.meta.value("stride", -1) == cfg.stride,
            "resume: batch/window/stride differ from the checkpoint");
    require(ck.meta.value("seed", std::uint64_t{0}) == cfg.seed, "resume: seed differs");
    require(ck.meta.value("epochs", -1) == cfg.epochs,
            "resume: target epoch count differs; the lr schedule is fixed by it");
    net = network_from_checkpoint(ck);
    require(net.config().n_muscles == cfg.net.n_muscles &&
                std::string(backbone_name(net.config().backbone)) ==
                    backbone_name(cfg.net.backbone),
            "resume: network architecture differs");
    start_epoch = ck.meta.at("epoch").get<int>();
    step = ck.meta.at("step").get<long>();
    if (ck.has("adam.m." + net.names()[0])) {
      std::vector<MatrixXd> m, v;
      for (const auto& name : net.names()) {
        m.push_back(ck.tensor("adam.m." + name));
        v.push_back(ck.tensor("adam.v." + name));
      }
      adam.restore(ck.meta.at("adam_t").get<long>(), std::move(m), std::move(v));
    }
    if (cfg.normalize) {
      auto s = norm_stats_from_checkpoint(ck);
      require(s.has_value(), "resume: checkpoint lacks normalization stats");
      res.stats = *s;
    }
    res.last_checkpoint = cfg.resume_path;
  }
  res.start_epoch = start_epoch;
  require(start_epoch <= cfg.epochs, "resume: checkpoint is past the requested epoch count");

  const NormStats* stats = cfg.normalize ? &res.stats : nullptr;
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  auto diverged = [&](const std::string& what, long at) -> Error {
    std::string ckpt = res.last_checkpoint.empty() ? "none" : res.last_checkpoint;
    return Error("train: " + what + " at step " + std::to_string(at) +
                 "; last good checkpoint: " + ckpt);
  };

  int limit = cfg.epochs;
  if (cfg.max_epochs_this_run > 0)
    limit = std::min(cfg.epochs, start_epoch + cfg.max_epochs_this_run);

  for (int epoch = start_epoch; epoch < limit; ++epoch) {
    std::vector<WindowRef> order = res.split.train;
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5481ff1e, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (long b = 0; b < res.steps_per_epoch; ++b) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<WindowRef> refs(order.begin() + b * cfg.batch,
                                  order.begin() + (b + 1) * cfg.batch);
      MatrixXd x = assemble_windows(ds, stats, refs);

      Tape tape;
      std::vector<Var> pv;
      std::uint64_t drop_seed = derive_seed(cfg.seed, 0xd2090ac7, static_cast<std::uint64_t>(step));
      Var out = net.forward(tape, x, cfg.batch, cfg.window, true, drop_seed, &pv);

      LogRecord rec;
      rec.step = step;
      Var root;
      if (cfg.mode == TrainMode::physics) {
        std::vector<FramePhysics> frames(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i)
          frames[i] = ds.physics[refs[i].trial][refs[i].end_frame];
        PhysicsLossVars lv = physics_loss_on_tape(tape, out, frames, cfg.weights);
        root = lv.total;
        LossBreakdown bd = breakdown_from_tape(tape, lv);
        rec.l_d = bd.l_d;
        rec.l_p = bd.l_p;
        rec.l_b = bd.l_b;
        rec.l_total = bd.l_total;
      } else {
        int m = cfg.net.n_muscles;
        MatrixXd lab(refs.size(), m);
        for (std::size_t i = 0; i < refs.size(); ++i)
          lab.row(i) = ds.labels[refs[i].trial].row(refs[i].end_frame);
        root = supervised_loss_on_tape(tape, out, lab);
        if (cfg.force_mse_weight > 0.0) {
          // forces enter through the frame's affine map, so this is a
          // reweighted activation error; the weight also absorbs the N^2 scale
          MatrixXd g(refs.size(), m), o(refs.size(), m), fl(refs.size(), m);
          for (std::size_t i = 0; i < refs.size(); ++i) {
            int tr = refs[i].trial, e = refs[i].end_frame;
            g.row(i) = ds.force_gain[tr].row(e);
            o.row(i) = ds.force_offset[tr].row(e);
            fl.row(i) = ds.label_forces[tr].row(e);
          }
          Var fpred = tape.add(tape.mul(out, tape.input(g)), tape.input(o));
          Var fterm = tape.reduce_mean(tape.square(tape.sub(fpred, tape.input(fl))));
          root = tape.add(root, tape.scale(fterm, cfg.force_mse_weight));
        }
        rec.l_total = tape.value(root)(0, 0);
      }

      if (!std::isfinite(tape.value(root)(0, 0))) throw diverged("non-finite loss", step);
      tape.backward(root);
      std::vector<MatrixXd> grads;
      grads.reserve(pv.size());
      for (Var p : pv) grads.push_back(tape.grad(p));
      double lr_t = cosine_lr(step, res.total_steps, cfg.lr);
      rec.lr = lr_t;
      try {
        adam.step(net.weights(), grads, lr_t, &net.names());
      } catch (const Error& e) {
        throw diverged(e.what(), step);
      }
      ++step;
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      res.log.push_back(rec);
    }

    bool cadence = (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == limit;
    if (cadence && !cfg.out_dir.empty()) {
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_epoch%05d.ckpt", epoch + 1);
      std::string path = cfg.out_dir + "/" + cfg.run_tag + suffix;
      save_checkpoint(path, make_train_checkpoint(cfg, net, adam, stats, epoch + 1, step));
      res.last_checkpoint = path;
    }
  }

  if (!cfg.out_dir.empty()) {
    std::ofstream f(cfg.out_dir + "/" + cfg.run_tag + "_log.csv");
    require(f.good(), "train: cannot write log csv");
    write_train_log(f, res.log);
  }
  res.net.emplace(std::move(net));
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation: window-end predictions vs reference labels; forces derived by
// passing predicted activations through the muscle model at the reference
// kinematics. Latency is the wall time of a single-window forward pass.

struct MuscleEval {
  std::string name;
  Aggregate r2_activation, nrmse_activation, r2_force, nrmse_force;  // across trials
};

// Metrics are computed per muscle per trial over that trial's rows, then
// summarized mean/sd/n across trials. Per-trial values that come back
// undefined (constant reference) are dropped from the summary.
inline std::vector<MuscleEval> per_muscle_metrics(const std::vector<std::string>& names,
                                                  const std::vector<int>& trial_of_row,
                                                  const MatrixXd& ref_a, const MatrixXd& pred_a,
                                                  const MatrixXd& ref_f, const MatrixXd& pred_f) {
  int n = static_cast<int>(trial_of_row.size());
  require(ref_a.rows() == n && pred_a.rows() == n && ref_f.rows() == n && pred_f.rows() == n,
          "metrics: row count mismatch");
  std::map<int, std::vector<int>> by_trial;
  for (int i = 0; i < n; ++i) by_trial[trial_of_row[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<MuscleEval> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    MuscleEval me;
    me.name = names[k];
    std::vector<double> r2a, nra, r2f, nrf;
    for (const auto& [trial, rows] : by_trial) {
      (void)trial;
      int c = static_cast<int>(rows.size());
      VectorXd ra(c), pa(c), rf(c), pf(c);
      for (int i = 0; i < c; ++i) {
        int r = rows[static_cast<std::size_t>(i)];
        ra(i) = ref_a(r, static_cast<int>(k));
        pa(i) = pred_a(r, static_cast<int>(k));
        rf(i) = ref_f(r, static_cast<int>(k));
        pf(i) = pred_f(r, static_cast<int>(k));
      }
      MetricValue v = r_squared(ra, pa);
      if (v.defined) r2a.push_back(v.value);
      v = nrmse(ra, pa);
      if (v.defined) nra.push_back(v.value);
      v = r_squared(rf, pf);
      if (v.defined) r2f.push_back(v.value);
      v = nrmse(rf, pf);
      if (v.defined) nrf.push_back(v.value);
    }
    me.r2_activation = aggregate(r2a);
    me.nrmse_activation = aggregate(nra);
    me.r2_force = aggregate(r2f);
    me.nrmse_force = aggregate(nrf);
    out.push_back(me);
  }
  return out;
}

struct EvalReport {
  std::vector<MuscleEval> muscles;
  Aggregate r2_activation, nrmse_activation, r2_force, nrmse_force;  // across muscles
  double latency_ms_mean = 0.0, latency_ms_sd = 0.0, latency_ms_max = 0.0;
  int latency_reps = 0;
  int n_windows = 0;
  std::vector<WindowRef> refs;
  VectorXd times;                  // window-end times, s
  MatrixXd predictions;            // n x M activations
  MatrixXd predicted_forces;       // n x M, N
  MatrixXd reference_activations;  // n x M
  MatrixXd reference_forces;       // n x M
};

inline EvalReport evaluate(const std::vector<MuscleParams>& params, const MuscleGeometry& geom,
                           const Dataset& ds, const Network& net, const NormStats* stats,
                           const std::vector<WindowRef>& refs) {
  require(ds.has_labels(), "evaluate: dataset has no reference labels");
  require(!refs.empty(), "evaluate: no windows to evaluate");
  int m = geom.count();
  require(net.config().n_muscles == m, "evaluate: muscle count mismatch");
  int n = static_cast<int>(refs.size());

  EvalReport rep;
  rep.refs = refs;
  rep.n_windows = n;
  rep.times.resize(n);
  rep.predictions.resize(n, m);
  rep.predicted_forces.resize(n, m);
  rep.reference_activations.resize(n, m);
  rep.reference_forces.resize(n, m);

  const int chunk = 64;
  for (int at = 0; at < n; at += chunk) {
    int b = std::min(chunk, n - at);
    std::vector<WindowRef> part(refs.begin() + at, refs.begin() + at + b);
    MatrixXd x = assemble_windows(ds, stats, part);
    rep.predictions.middleRows(at, b) = net.predict(x, b, ds.window);
  }
  for (int i = 0; i < n; ++i) {
    int tr = refs[static_cast<std::size_t>(i)].trial;
    int e = refs[static_cast<std::size_t>(i)].end_frame;
    rep.times(i) = ds.times[tr](e);
    rep.reference_activations.row(i) = ds.labels[tr].row(e);
    rep.reference_forces.row(i) = ds.label_forces[tr].row(e);
    VectorXd lmt = musculotendon_lengths(geom, ds.frame_q(tr, e));
    for (int k = 0; k < m; ++k)
      rep.predicted_forces(i, k) =
          muscle_force(params[k], rep.predictions(i, k), lmt(k), ds.vbars[tr](e, k));
  }

  std::vector<int> trial_of_row(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) trial_of_row[static_cast<std::size_t>(i)] = refs[static_cast<std::size_t>(i)].trial;
  rep.muscles = per_muscle_metrics(geom.names, trial_of_row, rep.reference_activations,
                                   rep.predictions, rep.reference_forces, rep.predicted_forces);
  std::vector<double> r2a, nra, r2f, nrf;
  for (const auto& me : rep.muscles) {
    if (me.r2_activation.n > 0) r2a.push_back(me.r2_activation.mean);
    if (me.nrmse_activation.n > 0) nra.push_back(me.nrmse_activation.mean);
    if (me.r2_force.n > 0) r2f.push_back(me.r2_force.mean);
    if (me.nrmse_force.n > 0) nrf.push_back(me.nrmse_force.mean);
  }
  rep.r2_activation = aggregate(r2a);
  rep.nrmse_activation = aggregate(nra);
  rep.r2_force = aggregate(r2f);
  rep.nrmse_force = aggregate(nrf);

  // single-window latency, a few warmups then timed repeats
  std::vector<WindowRef> one{refs.front()};
  MatrixXd x1 = assemble_windows(ds, stats, one);
  for (int i = 0; i < 3; ++i) net.predict(x1, 1, ds.window);
  const int reps = 20;
  std::vector<double> samples;
  for (int i = 0; i < reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    net.predict(x1, 1, ds.window);
    double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    samples.push_back(ms);
    rep.latency_ms_max = std::max(rep.latency_ms_max, ms);
  }
  Aggregate lat = aggregate(samples);
  rep.latency_ms_mean = lat.mean;
  rep.latency_ms_sd = lat.sd;
  rep.latency_reps = lat.n;
  return rep;
}

inline void write_metrics_csv(std::ostream& out, const EvalReport& rep) {
  out.precision(17);
  out << "muscle,metric,mean,sd,n\n";
  auto row = [&](const std::string& muscle, const char* metric, const Aggregate& a) {
    out << muscle << "," << metric << ",";
    if (a.n > 0)
      out << a.mean;
    else
      out << "nan";
    out << "," << a.sd << "," << a.n << "\n";
  };
  for (const auto& me : rep.muscles) {
    row(me.name, "r2_activation", me.r2_activation);
    row(me.name, "nrmse_activation", me.nrmse_activation);
    row(me.name, "r2_force", me.r2_force);
    row(me.name, "nrmse_force", me.nrmse_force);
  }
  row("ALL", "r2_activation", rep.r2_activation);
  row("ALL", "nrmse_activation", rep.nrmse_activation);
  row("ALL", "r2_force", rep.r2_force);
  row("ALL", "nrmse_force", rep.nrmse_force);
  out << "ALL,latency_ms," << rep.latency_ms_mean << "," << rep.latency_ms_sd << ","
      << rep.latency_reps << "\n";
  out << "ALL,latency_ms_max," << rep.latency_ms_max << ",0," << rep.latency_reps << "\n";
}

// Predictions in the labels-CSV schema, so the same reader loads them back.
inline LabelSet predictions_as_labels(const MuscleGeometry& geom, const EvalReport& rep) {
  LabelSet ls;
  ls.time = rep.times;
  ls.activations = rep.predictions;
  ls.forces = rep.predicted_forces;
  ls.muscle_names = geom.names;
  ls.validate();
  return ls;
}

// ---------------------------------------------------------------------------
// Ablations: loss-term removals on the reference backbone plus backbone
// swaps, all trained and evaluated on the identical split.

struct AblationRow {
  std::string tag;
  double r2_mean = std::numeric_limits<double>::quiet_NaN();
  double r2_sd = 0.0;
  double nrmse_mean = std::numeric_limits<double>::quiet_NaN();
  double mean_activation = 0.0;  // over held-out predictions
};

inline std::vector<std::string> standard_ablation_tags() {
  return {"full", "no_lb", "no_lp", "no_ld", "bigru_only", "cnn"};
}

inline TrainConfig ablation_variant(TrainConfig base, const std::string& tag) {
  if (tag == "full") {
  } else if (tag == "no_ld") {
    base.weights.w_d = 0.0;
  } else if (tag == "no_lp") {
    base.weights.w_p = 0.0;
  } else if (tag == "no_lb") {
    base.weights.w_b = 0.0;
  } else if (tag == "bigru_only") {
    base.net.backbone = Backbone::bigru_only;
  } else if (tag == "cnn") {
    base.net.backbone = Backbone::cnn;
  } else {
    throw Error("unknown ablation tag: " + tag);
  }
  base.run_tag += "_" + tag;
  return base;
}

inline std::vector<AblationRow> ablation_suite(const TrainConfig& base, const Dataset& ds,
                                               const std::vector<MuscleParams>& params,
                                               const MuscleGeometry& geom,
                                               const std::vector<std::string>& tags) {
  require(!tags.empty(), "ablation: no variants requested");
  std::vector<AblationRow> rows;
  for (const auto& tag : tags) {
    TrainConfig cfg = ablation_variant(base, tag);
    TrainResult res = train_run(cfg, ds);
    EvalReport rep = evaluate(params, geom, ds, *res.net, cfg.normalize ? &res.stats : nullptr,
                              res.split.test);
    AblationRow row;
    row.tag = tag;
    row.r2_mean = rep.r2_activation.mean;
    row.r2_sd = rep.r2_activation.sd;
    row.nrmse_mean = rep.nrmse_activation.mean;
    row.mean_activation = rep.predictions.mean();
    rows.push_back(row);
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out.precision(17);
  out << "tag,r2_mean,r2_sd,nrmse_mean,mean_activation\n";
  for (const auto& r : rows)
    out << r.tag << "," << r.r2_mean << "," << r.r2_sd << "," << r.nrmse_mean << ","
        << r.mean_activation << "\n";
}

}  // namespace msknet
