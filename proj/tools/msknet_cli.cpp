#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "msknet/data.hpp"
#include "msknet/default_model.hpp"
#include "msknet/dynamics.hpp"
#include "msknet/muscle.hpp"
#include "msknet/report.hpp"
#include "msknet/so_solver.hpp"
#include "msknet/synth.hpp"
#include "msknet/train.hpp"

// Command-line front end. Every subcommand works from plain files: trajectory
// and label CSVs, the limb/muscle/geometry configs, binary checkpoints, and
// CSV/SVG outputs. When no model files are given the built-in synthetic limb
// is used. Flags may come from one INI-style file via --config, with one
// section per subcommand; environment variables are never consulted.

namespace {

using namespace msknet;
namespace fs = std::filesystem;

struct ModelOptions {
  std::string limb, muscles, geometry;
};

void add_model_options(CLI::App* cmd, ModelOptions& mo) {
  cmd->add_option("--limb", mo.limb, "limb config file (default: built-in model)");
  cmd->add_option("--muscles", mo.muscles, "muscle parameter CSV (default: built-in)");
  cmd->add_option("--geometry", mo.geometry, "muscle geometry file (default: built-in)");
}

struct LoadedModel {
  LimbModel model;
  std::vector<MuscleParams> params;
  MuscleGeometry geom;
};

LoadedModel load_model(const ModelOptions& mo) {
  LoadedModel lm;
  lm.model = mo.limb.empty() ? default_limb() : load_limb_config(mo.limb);
  lm.params = mo.muscles.empty() ? default_muscles() : load_muscle_params(mo.muscles);
  lm.geom = mo.geometry.empty() ? default_geometry() : load_muscle_geometry(mo.geometry);
  require(lm.geom.count() == static_cast<int>(lm.params.size()),
          "model: muscle parameter and geometry counts differ");
  return lm;
}

std::vector<JointTrajectory> load_trajectories(const std::vector<std::string>& paths) {
  std::vector<JointTrajectory> out;
  for (const auto& p : paths) out.push_back(load_trajectory_csv(p));
  return out;
}

std::vector<LabelSet> load_labels(const std::vector<std::string>& paths) {
  std::vector<LabelSet> out;
  for (const auto& p : paths) out.push_back(load_labels_csv(p));
  return out;
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream f(path);
  require(f.good(), "cannot write " + path);
  body(f);
  require(f.good(), "write failed: " + path);
}

std::vector<WindowRef> all_windows(const Dataset& ds) {
  std::vector<WindowRef> refs;
  for (std::size_t t = 0; t < ds.window_ends.size(); ++t)
    for (int e : ds.window_ends[t]) refs.push_back({static_cast<int>(t), e});
  return refs;
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  ModelOptions mo;
  std::string out;
  int trials = 1;
  double seconds = 12.0;
  double rate = 200.0;
  double cycle_hz = 1.0;
  double substep = 1e-3;
  std::uint64_t seed = 1;
  std::string subject = "synthetic";
  std::string condition = "default";
  bool write_generator = false;
  std::string write_model;
};

void run_synth(const SynthArgs& a) {
  LoadedModel lm = load_model(a.mo);
  fs::create_directories(a.out);
  if (!a.write_model.empty()) {
    fs::create_directories(a.write_model);
    write_file(a.write_model + "/limb.cfg",
               [&](std::ostream& o) { write_limb_config(o, lm.model); });
    write_file(a.write_model + "/muscles.csv",
               [&](std::ostream& o) { write_muscle_params(o, lm.params); });
    write_file(a.write_model + "/geometry.txt",
               [&](std::ostream& o) { write_muscle_geometry(o, lm.geom); });
    std::cout << "wrote model files to " << a.write_model << "\n";
  }
  for (int k = 0; k < a.trials; ++k) {
    std::uint64_t trial_seed = derive_seed(a.seed, 0x57a17, static_cast<std::uint64_t>(k));
    ExcitationSpec spec = default_excitations(lm.model, lm.params, lm.geom, a.cycle_hz, trial_seed);
    SynthConfig cfg;
    cfg.duration = a.seconds;
    cfg.rate = a.rate;
    cfg.substep_dt = a.substep;
    cfg.gait.cycle_hz = a.cycle_hz;
    if (spec.reflex.active()) {
      cfg.q0 = spec.reflex.reference(0.0);
      cfg.qd0 = spec.reflex.reference_rate(0.0);
    }
    cfg.subject = a.subject;
    cfg.condition = a.trials == 1 ? a.condition : a.condition + "_" + std::to_string(k);
    SynthResult res = synth_gait(lm.model, lm.params, lm.geom, spec, cfg);

    std::string stem = a.out + "/trial_" + std::to_string(k);
    write_file(stem + ".csv", [&](std::ostream& o) { write_trajectory_csv(o, res.traj); });
    std::cout << "wrote " << stem << ".csv (" << res.traj.frames() << " frames, condition "
              << cfg.condition << ")\n";
    if (a.write_generator) {
      LabelSet gen;
      gen.time = res.traj.time;
      gen.activations = res.activations;
      gen.forces = res.forces;
      gen.muscle_names = lm.geom.names;
      write_file(stem + "_generator.csv", [&](std::ostream& o) { write_labels_csv(o, gen); });
      std::cout << "wrote " << stem << "_generator.csv\n";
    }
  }
}

// --- so ---------------------------------------------------------------------

struct SoArgs {
  ModelOptions mo;
  std::vector<std::string> traj;
  std::string out;
  double lo = 0.01, hi = 1.0;
};

void run_so(const SoArgs& a) {
  LoadedModel lm = load_model(a.mo);
  fs::create_directories(a.out);
  for (const auto& path : a.traj) {
    JointTrajectory traj = load_trajectory_csv(path);
    differentiate(traj);
    SoTrajectoryResult res = so_trajectory(lm.model, lm.params, lm.geom, traj, a.lo, a.hi);
    LabelSet ls;
    ls.time = traj.time;
    ls.activations = res.activations;
    ls.forces = res.forces;
    ls.muscle_names = lm.geom.names;
    std::string out = a.out + "/" + fs::path(path).stem().string() + "_labels.csv";
    write_file(out, [&](std::ostream& o) { write_labels_csv(o, ls); });
    std::cout << "wrote " << out << " (" << traj.frames() << " frames, "
              << res.infeasible_count << " infeasible)\n";
  }
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  ModelOptions mo;
  std::vector<std::string> traj, labels;
  std::string mode = "physics";
  std::string backbone = "mjca";
  std::string split = "intra";
  TrainConfig cfg;
  bool raw_inputs = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a, bool with_mode) {
  add_model_options(cmd, a.mo);
  cmd->add_option("--traj", a.traj, "trajectory CSV (repeatable)")->required();
  cmd->add_option("--labels", a.labels,
                  "reference label CSV per trajectory, same order (repeatable)");
  if (with_mode)
    cmd->add_option("--mode", a.mode, "physics | supervised")->capture_default_str();
  cmd->add_option("--epochs", a.cfg.epochs, "training epochs (also the lr schedule horizon)")
      ->capture_default_str();
  cmd->add_option("--batch", a.cfg.batch, "windows per step")->capture_default_str();
  cmd->add_option("--window", a.cfg.window, "frames per window")->capture_default_str();
  cmd->add_option("--stride", a.cfg.stride, "frames between window ends")->capture_default_str();
  cmd->add_option("--lr", a.cfg.lr, "peak learning rate")->capture_default_str();
  cmd->add_option("--w-d", a.cfg.weights.w_d, "dynamics residual weight")->capture_default_str();
  cmd->add_option("--w-p", a.cfg.weights.w_p, "effort weight")->capture_default_str();
  cmd->add_option("--w-b", a.cfg.weights.w_b, "activation range weight")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "run seed")->capture_default_str();
  cmd->add_option("--split", a.split, "intra | loso_condition")->capture_default_str();
  cmd->add_option("--holdout", a.cfg.holdout, "held-out condition (loso_condition split)");
  cmd->add_option("--train-fraction", a.cfg.train_fraction, "intra split train share")
      ->capture_default_str();
  cmd->add_flag("--raw-inputs", a.raw_inputs, "skip input normalization");
  cmd->add_option("--force-mse-weight", a.cfg.force_mse_weight,
                  "supervised mode: extra force MSE weight")
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", a.cfg.checkpoint_every, "checkpoint cadence, epochs")
      ->capture_default_str();
  cmd->add_option("--max-epochs", a.cfg.max_epochs_this_run,
                  "stop this run after N epochs (0 = run to completion)")
      ->capture_default_str();
  cmd->add_option("--out", a.cfg.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--tag", a.cfg.run_tag, "file name prefix for this run")->capture_default_str();
  cmd->add_option("--resume", a.cfg.resume_path, "checkpoint to resume from");
  cmd->add_option("--backbone", a.backbone, "mjca | bigru_only | cnn")->capture_default_str();
  cmd->add_option("--d-joint", a.cfg.net.d_joint, "per-joint embedding width")
      ->capture_default_str();
  cmd->add_option("--n-heads", a.cfg.net.n_heads, "attention heads")->capture_default_str();
  cmd->add_option("--d-integrated", a.cfg.net.d_integrated, "post-attention width")
      ->capture_default_str();
  cmd->add_option("--d-gru", a.cfg.net.d_gru, "GRU hidden size per direction")
      ->capture_default_str();
  cmd->add_option("--gru-layers", a.cfg.net.gru_layers, "stacked GRU layers")
      ->capture_default_str();
  cmd->add_option("--dropout", a.cfg.net.dropout, "dropout between GRU layers")
      ->capture_default_str();
  cmd->add_option("--cnn-dropout", a.cfg.net.cnn_dropout, "dropout in the cnn backbone")
      ->capture_default_str();
  cmd->add_option("--head-dims", a.cfg.net.head_dims, "dense head sizes")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--cnn-channels", a.cfg.net.cnn_channels, "cnn backbone channels")
      ->delimiter(',')
      ->capture_default_str();
}

TrainConfig finish_train_config(TrainArgs& a) {
  a.cfg.mode = parse_train_mode(a.mode);
  a.cfg.net.backbone = parse_backbone(a.backbone);
  a.cfg.split = parse_split_mode(a.split);
  a.cfg.normalize = !a.raw_inputs;
  return a.cfg;
}

Dataset dataset_from_args(const LoadedModel& lm, const TrainArgs& a, bool with_physics) {
  std::vector<JointTrajectory> trials = load_trajectories(a.traj);
  std::vector<LabelSet> labels;
  const std::vector<LabelSet>* lp = nullptr;
  if (!a.labels.empty()) {
    require(a.labels.size() == a.traj.size(), "need one --labels per --traj, same order");
    labels = load_labels(a.labels);
    lp = &labels;
  }
  return build_dataset(lm.model, lm.params, lm.geom, std::move(trials), a.cfg.window,
                       a.cfg.stride, with_physics, lp);
}

void run_train(TrainArgs& a) {
  TrainConfig cfg = finish_train_config(a);
  if (cfg.out_dir.empty()) cfg.out_dir = "runs";
  LoadedModel lm = load_model(a.mo);
  if (cfg.mode == TrainMode::supervised)
    require(!a.labels.empty(), "supervised mode needs --labels");
  Dataset ds = dataset_from_args(lm, a, cfg.mode == TrainMode::physics);
  fs::create_directories(cfg.out_dir);

  TrainResult res = train_run(cfg, ds);
  std::cout << "train " << train_mode_name(cfg.mode) << ": " << res.split.train.size()
            << " train / " << res.split.test.size() << " held-out windows, "
            << res.steps_per_epoch << " steps/epoch\n";
  if (!res.log.empty()) {
    const LogRecord& r = res.log.back();
    std::cout << "final step " << r.step << ": l_total " << r.l_total << " (l_d " << r.l_d
              << ", l_p " << r.l_p << ", l_b " << r.l_b << ")\n";
  }
  std::cout << "checkpoint " << res.last_checkpoint << "\n";
  std::cout << "log " << cfg.out_dir << "/" << cfg.run_tag << "_log.csv\n";
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  ModelOptions mo;
  std::string ckpt, out = ".";
  std::vector<std::string> traj, labels;
  std::string subset = "all";
  std::string split = "intra";
  std::string holdout;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void run_eval(const EvalArgs& a) {
  LoadedModel lm = load_model(a.mo);
  Checkpoint ck = load_checkpoint(a.ckpt);
  Network net = network_from_checkpoint(ck);
  std::optional<NormStats> stats = norm_stats_from_checkpoint(ck);
  int window = ck.meta.at("window").get<int>();
  int stride = ck.meta.at("stride").get<int>();
  std::uint64_t seed = a.seed_given ? a.seed : ck.meta.at("seed").get<std::uint64_t>();

  require(a.labels.size() == a.traj.size(), "need one --labels per --traj, same order");
  std::vector<LabelSet> labels = load_labels(a.labels);
  Dataset ds = build_dataset(lm.model, lm.params, lm.geom, load_trajectories(a.traj), window,
                             stride, false, &labels);

  std::vector<WindowRef> refs;
  if (a.subset == "all") {
    refs = all_windows(ds);
  } else {
    SplitResult split = split_windows(parse_split_mode(a.split), ds.window_ends, ds.conditions,
                                      a.holdout, seed, a.train_fraction);
    require(a.subset == "train" || a.subset == "test", "subset must be all, train, or test");
    refs = a.subset == "train" ? split.train : split.test;
  }

  EvalReport rep = evaluate(lm.params, lm.geom, ds, net, stats ? &*stats : nullptr, refs);
  fs::create_directories(a.out);
  write_file(a.out + "/metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, rep); });
  LabelSet pred = predictions_as_labels(lm.geom, rep);
  write_file(a.out + "/predictions.csv", [&](std::ostream& o) { write_labels_csv(o, pred); });
  if (ds.trials() > 1) {
    // trials share one clock, so pooled rows are ambiguous for `report`;
    // also write one predictions file per trial
    for (int t = 0; t < ds.trials(); ++t) {
      std::vector<int> rows;
      for (int i = 0; i < rep.n_windows; ++i)
        if (rep.refs[static_cast<std::size_t>(i)].trial == t) rows.push_back(i);
      if (rows.empty()) continue;
      LabelSet part;
      part.muscle_names = lm.geom.names;
      int c = static_cast<int>(rows.size());
      part.time.resize(c);
      part.activations.resize(c, rep.predictions.cols());
      part.forces.resize(c, rep.predictions.cols());
      for (int i = 0; i < c; ++i) {
        part.time(i) = rep.times(rows[static_cast<std::size_t>(i)]);
        part.activations.row(i) = rep.predictions.row(rows[static_cast<std::size_t>(i)]);
        part.forces.row(i) = rep.predicted_forces.row(rows[static_cast<std::size_t>(i)]);
      }
      std::string path = a.out + "/predictions_trial" + std::to_string(t) + ".csv";
      write_file(path, [&](std::ostream& o) { write_labels_csv(o, part); });
    }
  }

  auto agg = [](const char* name, const Aggregate& v) {
    std::cout << name << " mean " << v.mean << " sd " << v.sd << " (n " << v.n << ")\n";
  };
  std::cout << "evaluated " << rep.n_windows << " windows (" << a.subset << ")\n";
  agg("r2_activation", rep.r2_activation);
  agg("nrmse_activation", rep.nrmse_activation);
  agg("r2_force", rep.r2_force);
  agg("nrmse_force", rep.nrmse_force);
  std::cout << "latency_ms mean " << rep.latency_ms_mean << " sd " << rep.latency_ms_sd
            << " max " << rep.latency_ms_max << " over " << rep.latency_reps
            << " single-window passes (real-time bound 75 ms)\n";
  std::cout << "wrote " << a.out << "/metrics.csv and " << a.out << "/predictions.csv\n";
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  TrainArgs train;
  std::vector<std::string> tags;
};

void run_ablate(AblateArgs& a) {
  TrainConfig base = finish_train_config(a.train);
  if (base.out_dir.empty()) base.out_dir = "runs";
  LoadedModel lm = load_model(a.train.mo);
  require(!a.train.labels.empty(), "ablate needs --labels for held-out scoring");
  Dataset ds = dataset_from_args(lm, a.train, true);
  fs::create_directories(base.out_dir);

  std::vector<std::string> tags = a.tags.empty() ? standard_ablation_tags() : a.tags;
  std::vector<AblationRow> rows = ablation_suite(base, ds, lm.params, lm.geom, tags);
  write_file(base.out_dir + "/ablation.csv",
             [&](std::ostream& o) { write_ablation_csv(o, rows); });
  std::cout << "tag          r2_mean    r2_sd      nrmse_mean mean_activation\n";
  for (const auto& r : rows) {
    std::cout.width(12);
    std::cout << std::left << r.tag << " ";
    std::cout.width(10);
    std::cout << r.r2_mean << " ";
    std::cout.width(10);
    std::cout << r.r2_sd << " ";
    std::cout.width(10);
    std::cout << r.nrmse_mean << " " << r.mean_activation << "\n";
  }
  std::cout << "wrote " << base.out_dir << "/ablation.csv\n";
}

// --- report -----------------------------------------------------------------

struct ReportArgs {
  std::string metrics, predictions, references, out = ".";
};

void run_report(const ReportArgs& a) {
  require(!a.metrics.empty() || (!a.predictions.empty() && !a.references.empty()),
          "report needs --metrics and/or --predictions with --references");
  fs::create_directories(a.out);

  if (!a.predictions.empty()) {
    require(!a.references.empty(), "trace plots need --references");
    LabelSet pred = load_labels_csv(a.predictions);
    LabelSet ref = load_labels_csv(a.references);
    require(pred.muscle_names == ref.muscle_names,
            "predictions and references list different muscles");
    {
      std::vector<double> ts(pred.time.data(), pred.time.data() + pred.frames());
      std::sort(ts.begin(), ts.end());
      for (std::size_t i = 1; i < ts.size(); ++i)
        require(ts[i] - ts[i - 1] > 1e-9,
                "predictions repeat a time stamp (pooled multi-trajectory eval); plot one "
                "trajectory at a time, e.g. predictions_trial0.csv");
    }
    // references usually cover every frame; pick the rows matching the
    // prediction times
    int n = pred.frames();
    MatrixXd ref_a(n, pred.activations.cols()), ref_f(n, pred.forces.cols());
    for (int i = 0; i < n; ++i) {
      int best = -1;
      double best_d = 1e-6;
      for (int j = 0; j < ref.frames(); ++j) {
        double d = std::abs(ref.time(j) - pred.time(i));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      require(best >= 0, "no reference row within 1 us of prediction time " +
                             std::to_string(pred.time(i)));
      ref_a.row(i) = ref.activations.row(best);
      ref_f.row(i) = ref.forces.row(best);
    }
    write_file(a.out + "/activations.svg", [&](std::ostream& o) {
      write_trace_grid_svg(o, "Muscle activations", pred.muscle_names, pred.time, ref_a,
                           pred.activations, "activation [-]");
    });
    write_file(a.out + "/forces.svg", [&](std::ostream& o) {
      write_trace_grid_svg(o, "Muscle forces", pred.muscle_names, pred.time, ref_f, pred.forces,
                           "force [N]");
    });
    std::cout << "wrote " << a.out << "/activations.svg and " << a.out << "/forces.svg\n";
  }

  if (!a.metrics.empty()) {
    std::vector<MetricRow> rows = load_metrics_csv(a.metrics);
    const char* metrics[4] = {"r2_activation", "nrmse_activation", "r2_force", "nrmse_force"};
    const char* titles[4] = {"Activation R2 by muscle", "Activation NRMSE by muscle",
                             "Force R2 by muscle", "Force NRMSE by muscle"};
    for (int i = 0; i < 4; ++i) {
      std::string path = a.out + "/" + metrics[i] + ".svg";
      write_file(path,
                 [&](std::ostream& o) { metric_bars_from_rows(o, rows, metrics[i], titles[i]); });
      std::cout << "wrote " << path << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"label-free muscle state estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "INI-style file with one section per subcommand; sets any flag");

  SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate forward-dynamics gait data")->configurable();
  add_model_options(synth_cmd, synth.mo);
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--trials", synth.trials, "number of trials")->capture_default_str();
  synth_cmd->add_option("--seconds", synth.seconds, "trial duration")->capture_default_str();
  synth_cmd->add_option("--rate", synth.rate, "capture rate, Hz")->capture_default_str();
  synth_cmd->add_option("--cycle-hz", synth.cycle_hz, "gait cycle rate")->capture_default_str();
  synth_cmd->add_option("--substep", synth.substep, "integration substep, s")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "excitation seed")->capture_default_str();
  synth_cmd->add_option("--subject", synth.subject, "subject tag")->capture_default_str();
  synth_cmd->add_option("--condition", synth.condition, "condition tag")->capture_default_str();
  synth_cmd->add_flag("--write-generator", synth.write_generator,
                      "also write the generator's applied activations/forces");
  synth_cmd->add_option("--write-model", synth.write_model,
                        "dump the model files (limb.cfg, muscles.csv, geometry.txt) here");

  SoArgs so;
  auto* so_cmd =
      app.add_subcommand("so", "static optimization reference labels")->configurable();
  add_model_options(so_cmd, so.mo);
  so_cmd->add_option("--traj", so.traj, "trajectory CSV (repeatable)")->required();
  so_cmd->add_option("--out", so.out, "output directory")->required();
  so_cmd->add_option("--lo", so.lo, "activation lower bound")->capture_default_str();
  so_cmd->add_option("--hi", so.hi, "activation upper bound")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train an estimator")->configurable();
  add_train_options(train_cmd, train, true);

  EvalArgs eval;
  auto* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint against reference labels")->configurable();
  add_model_options(eval_cmd, eval.mo);
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--traj", eval.traj, "trajectory CSV (repeatable)")->required();
  eval_cmd->add_option("--labels", eval.labels, "reference label CSV per trajectory")
      ->required();
  eval_cmd->add_option("--out", eval.out, "output directory")->capture_default_str();
  eval_cmd->add_option("--subset", eval.subset, "all | train | test")->capture_default_str();
  eval_cmd->add_option("--split", eval.split, "split mode for train/test subsets")
      ->capture_default_str();
  eval_cmd->add_option("--holdout", eval.holdout, "held-out condition (loso_condition)");
  eval_cmd->add_option("--train-fraction", eval.train_fraction, "intra split train share")
      ->capture_default_str();
  auto* seed_opt = eval_cmd->add_option("--seed", eval.seed,
                                        "split seed (default: the checkpoint's run seed)");

  AblateArgs ablate;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train and score loss/backbone variants")->configurable();
  add_train_options(ablate_cmd, ablate.train, false);
  ablate_cmd->add_option("--tags", ablate.tags,
                         "variants to run (default: full no_lb no_lp no_ld bigru_only cnn)")
      ->delimiter(',');

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "SVG plots from eval outputs")->configurable();
  report_cmd->add_option("--metrics", report.metrics, "metrics.csv from eval");
  report_cmd->add_option("--predictions", report.predictions, "predictions.csv from eval");
  report_cmd->add_option("--references", report.references, "reference labels CSV");
  report_cmd->add_option("--out", report.out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  // dispatch after parsing: a config-file section and the command line may
  // both trigger a subcommand, and the work must run exactly once
  try {
    if (app.got_subcommand(synth_cmd)) {
      run_synth(synth);
    } else if (app.got_subcommand(so_cmd)) {
      run_so(so);
    } else if (app.got_subcommand(train_cmd)) {
      run_train(train);
    } else if (app.got_subcommand(eval_cmd)) {
      eval.seed_given = seed_opt->count() > 0;
      run_eval(eval);
    } else if (app.got_subcommand(ablate_cmd)) {
      run_ablate(ablate);
    } else if (app.got_subcommand(report_cmd)) {
      run_report(report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
