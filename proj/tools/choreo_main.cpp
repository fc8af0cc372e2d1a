// command line surface: synth-data | train | generate | evaluate | plot
//
// exit codes: 0 success, 2 usage/config error, 3 io error, 4 model/data error

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "choreo/checkpoint.hpp"
#include "choreo/container.hpp"
#include "choreo/contrastive.hpp"
#include "choreo/errors.hpp"
#include "choreo/longform.hpp"
#include "choreo/metrics.hpp"
#include "choreo/model.hpp"
#include "choreo/motion.hpp"
#include "choreo/plots.hpp"
#include "choreo/rng.hpp"
#include "choreo/sampler.hpp"
#include "choreo/synth.hpp"
#include "choreo/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw choreo::IoFailure("cannot create " + dir + ": " + ec.message());
}

choreo::Skeleton load_skeleton(const std::string& path) {
  if (path.empty()) return choreo::Skeleton::default_smpl24();
  return choreo::Skeleton::load(path);
}

// first n_frames rows of an audio track, beats clipped to the window
choreo::AudioFeatureSequence audio_head(const choreo::AudioFeatureSequence& a,
                                        int n_frames) {
  if (n_frames > a.n_frames())
    throw choreo::AudioTooShort("track has " + std::to_string(a.n_frames()) +
                                " frames, need " + std::to_string(n_frames));
  choreo::AudioFeatureSequence out;
  out.fps = a.fps;
  out.features = a.features.topRows(n_frames);
  for (int b : a.beat_frames)
    if (b < n_frames) out.beat_frames.push_back(b);
  return out;
}

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
  choreo::SynthDatasetSpec spec;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  ensure_out_dir(a.out);
  const std::string manifest = choreo::build_dataset(a.spec, a.out);
  std::cout << "manifest: " << manifest << "\n";
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  choreo::TrainConfig cfg;
  std::string manifest;
  std::string out;
  std::string resume;
};

void run_train(const TrainArgs& a) {
  const choreo::TrainResult res =
      choreo::train(a.manifest, a.cfg, a.out, a.resume);
  std::cout << "checkpoint: " << res.checkpoint_path << "\n"
            << "loss-history: " << res.loss_history_path << "\n";
  if (!res.history.empty())
    std::cout << "final-loss: " << g6(res.history.back().total) << "\n";
}

// ------------------------------------------------------------------ generate

struct GenerateArgs {
  std::string checkpoint;
  std::string out;
  std::string music;        // audio json; empty means synthesize a track
  double synthetic_bpm = 0.0;
  double duration_s = 0.0;  // 0 = full music track
  double fps = 30.0;        // synthetic track only; files carry their own
  int dancers = 2;
  double gamma = 0.0;
  std::string sampler = "ddim";
  int ddim_steps = 50;
  int samples = 1;
  uint64_t seed = 0;
};

void run_generate(const GenerateArgs& a) {
  if (!fs::exists(a.checkpoint))
    throw choreo::UntrainedModel("no checkpoint at " + a.checkpoint +
                                 "; train first");
  choreo::Checkpoint ck = choreo::load_checkpoint(a.checkpoint);
  const choreo::ModelConfig& mc = ck.train.model;

  if (a.music.empty() && a.synthetic_bpm <= 0.0)
    throw choreo::BadConfig("need --music or --synthetic-bpm");
  if (a.music.empty() && a.duration_s <= 0.0)
    throw choreo::BadConfig("--synthetic-bpm requires --duration");

  choreo::AudioFeatureSequence track =
      a.music.empty()
          ? choreo::generate_music_track(a.synthetic_bpm, a.duration_s, a.fps,
                                         a.seed, mc.d_audio)
          : choreo::read_audio_json(a.music);
  const int n_frames = a.duration_s > 0.0
                           ? static_cast<int>(std::lround(a.duration_s * track.fps))
                           : track.n_frames();
  const choreo::AudioFeatureSequence audio = audio_head(track, n_frames);

  const choreo::GroupDenoiser den(ck.params, mc);
  const choreo::ContrastiveEncoder enc(ck.params, mc);

  choreo::SamplerConfig sampler;
  sampler.kind = a.sampler == "ddpm" ? choreo::SamplerKind::kDdpm
                                     : choreo::SamplerKind::kDdim;
  sampler.n_ddim_steps = a.ddim_steps;

  ensure_out_dir(a.out);
  for (int k = 0; k < a.samples; ++k) {
    const uint64_t seed_k = k == 0 ? a.seed : choreo::Rng::mix(a.seed, k);

    // the guidance target w is the group embedding the first window's
    // denoiser pass will use: same z (the sampler's documented first draws)
    // and the first chunk's music context
    choreo::GuidanceConfig guidance;
    choreo::ContrastiveGuidance guide = [&] {
      choreo::Rng rng(seed_k);
      Eigen::RowVectorXd z(mc.d);
      for (int i = 0; i < mc.d; ++i) z[i] = rng.normal();
      int window = static_cast<int>(std::lround(5.0 * audio.fps));
      window -= window % 2;
      const auto ctx = audio_head(audio, std::min(n_frames, window));
      return choreo::ContrastiveGuidance(
          enc, den.group_embedding(ctx, a.dancers, z), a.dancers);
    }();
    guidance.gamma = a.gamma;
    if (a.gamma != 0.0) guidance.encoder = &guide;

    const choreo::GroupSequence g = choreo::generate_long(
        den, audio, a.dancers, sampler, guidance, seed_k);

    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d.gcdm", k);
    const std::string path = (fs::path(a.out) / name).string();
    choreo::write_motion_binary(path, choreo::pack_group(g));
    std::cout << "wrote: " << path << "\n";
  }
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string generated;
  std::string reference;
  std::string audio;
  std::string out;
  std::string skeleton;
  int mc_window = 30;
};

std::vector<choreo::GroupSequence> load_motion_dir(const std::string& dir) {
  std::vector<std::string> files;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec))
    if (e.path().extension() == ".gcdm") files.push_back(e.path().string());
  if (ec) throw choreo::IoFailure("cannot read " + dir + ": " + ec.message());
  if (files.empty())
    throw choreo::IoFailure("no .gcdm motion containers in " + dir);
  std::sort(files.begin(), files.end());
  std::vector<choreo::GroupSequence> out;
  out.reserve(files.size());
  for (const auto& f : files)
    out.push_back(choreo::unpack_group(choreo::read_motion_binary(f)));
  return out;
}

std::vector<choreo::MotionSequence> pool_dancers(
    const std::vector<choreo::GroupSequence>& groups) {
  std::vector<choreo::MotionSequence> out;
  for (const auto& g : groups)
    for (const auto& d : g.dancers) out.push_back(d);
  return out;
}

Eigen::MatrixXd kinetic_matrix(const std::vector<choreo::MotionSequence>& ds,
                               const choreo::Skeleton& sk) {
  Eigen::MatrixXd f(static_cast<int>(ds.size()), choreo::kNumJoints);
  for (size_t i = 0; i < ds.size(); ++i)
    f.row(static_cast<int>(i)) = choreo::kinetic_features(ds[i], sk).transpose();
  return f;
}

void run_evaluate(const EvaluateArgs& a) {
  const choreo::Skeleton sk = load_skeleton(a.skeleton);
  const auto gen = load_motion_dir(a.generated);
  const auto ref = load_motion_dir(a.reference);
  const auto gen_dancers = pool_dancers(gen);
  const auto ref_dancers = pool_dancers(ref);

  choreo::MetricReport r;
  const auto compute = [&r](const char* name, auto fn) {
    try {
      fn();
    } catch (const choreo::Error& e) {
      r.omitted[name] = e.what();
    }
  };

  compute("fid", [&] {
    r.fid = choreo::frechet_distance(kinetic_matrix(gen_dancers, sk),
                                     kinetic_matrix(ref_dancers, sk));
  });
  compute("gendiv", [&] { r.gendiv = choreo::generation_diversity(gen_dancers, sk); });
  compute("pfc", [&] {
    double acc = 0.0;
    for (const auto& d : gen_dancers) acc += choreo::pfc(d, sk);
    r.pfc = acc / gen_dancers.size();
  });
  compute("gmr", [&] { r.gmr = choreo::gmr(gen, ref, sk); });

  // group metrics need at least two dancers; skip lone-dancer containers
  std::vector<const choreo::GroupSequence*> multi;
  for (const auto& g : gen)
    if (g.n_dancers() >= 2) multi.push_back(&g);
  if (multi.empty()) {
    r.omitted["gmc"] = "n_dancers < 2";
    r.omitted["tif"] = "n_dancers < 2";
  } else {
    compute("gmc", [&] {
      double acc = 0.0;
      for (const auto* g : multi) acc += choreo::gmc(*g, sk);
      r.gmc = acc / multi.size();
    });
    compute("tif", [&] {
      double acc = 0.0;
      for (const auto* g : multi) acc += choreo::tif(*g);
      r.tif = acc / multi.size();
    });
  }

  if (a.audio.empty()) {
    r.omitted["mmc"] = "no audio supplied";
  } else {
    const auto audio = choreo::read_audio_json(a.audio);
    const auto beats = choreo::extract_music_beats(audio);
    compute("mmc", [&] {
      double acc = 0.0;
      for (const auto& d : gen_dancers)
        acc += choreo::mmc_beat_alignment(d, sk, beats);
      r.mmc = acc / gen_dancers.size();
    });
  }

  compute("motion_change", [&] {
    r.motion_change = choreo::motion_change_curve(gen[0], a.mc_window, sk);
  });

  ensure_out_dir(a.out);
  const std::string report_path = (fs::path(a.out) / "report.json").string();
  {
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw choreo::IoFailure("cannot write " + report_path);
    out << r.to_json_string() << "\n";
  }
  if (!r.is_omitted("motion_change"))
    choreo::write_motion_change_csv(
        (fs::path(a.out) / "motion_change.csv").string(), r.motion_change);

  const auto cell = [&r](const char* name, double v) {
    return std::string(name) + "=" + (r.is_omitted(name) ? "n/a" : g6(v));
  };
  std::cout << cell("fid", r.fid) << " " << cell("mmc", r.mmc) << " "
            << cell("gendiv", r.gendiv) << " " << cell("pfc", r.pfc) << " "
            << cell("gmr", r.gmr) << " " << cell("gmc", r.gmc) << " "
            << cell("tif", r.tif) << "\n"
            << "report: " << report_path << "\n";
}

// ---------------------------------------------------------------------- plot

struct PlotArgs {
  std::string motion;
  std::string audio;
  std::string out;
  std::string skeleton;
  int mc_window = 30;
};

void run_plot(const PlotArgs& a) {
  const choreo::Skeleton sk = load_skeleton(a.skeleton);
  const choreo::GroupSequence g =
      choreo::unpack_group(choreo::read_motion_binary(a.motion));
  const auto audio = choreo::read_audio_json(a.audio);
  const std::vector<int> beats = choreo::extract_music_beats(audio);

  std::vector<choreo::PlotSeries> vel;
  for (int i = 0; i < g.n_dancers(); ++i) {
    const Eigen::VectorXd v = choreo::kinetic_velocity(g.dancers[i], sk);
    vel.push_back({"dancer" + std::to_string(i),
                   std::vector<double>(v.data(), v.data() + v.size())});
  }

  ensure_out_dir(a.out);
  const fs::path out(a.out);
  choreo::write_series_csv((out / "velocity.csv").string(), vel, beats);
  choreo::write_line_chart_svg((out / "velocity.svg").string(),
                               "kinetic velocity", vel, beats);

  const std::vector<double> curve =
      choreo::motion_change_curve(g, a.mc_window, sk);
  choreo::write_motion_change_csv((out / "motion_change.csv").string(), curve);
  choreo::write_line_chart_svg((out / "motion_change.svg").string(),
                               "motion change",
                               {{"motion_change", curve}}, {});

  for (const char* f :
       {"velocity.csv", "velocity.svg", "motion_change.csv", "motion_change.svg"})
    std::cout << "wrote: " << (out / f).string() << "\n";
}

int dispatch(const std::function<void()>& fn) {
  try {
    fn();
    return 0;
  } catch (const choreo::BadConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const choreo::BadDuration& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const choreo::IoFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const choreo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group choreography toolkit: synthetic data, training, guided "
               "sampling, evaluation, plots"};
  app.require_subcommand(1);
  app.footer("exit codes: 0 ok, 2 usage/config, 3 io, 4 model/data\n"
             "config: --config FILE (or env GCD_CONFIG as the default path) "
             "reads key=value lines\n"
             "grouped in [subcommand] sections, e.g.\n"
             "  [train]\n"
             "  iterations = 500\n"
             "command-line flags override config values; explicit --config "
             "overrides GCD_CONFIG");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data",
                                   "write a synthetic paired dataset");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--n", sa.spec.n_sequences, "number of sequences")
      ->capture_default_str();
  synth->add_option("--seed", sa.spec.seed, "rng seed")->capture_default_str();
  synth->add_option("--dancers-min", sa.spec.n_dancers_min, "min dancers per group")
      ->capture_default_str();
  synth->add_option("--dancers-max", sa.spec.n_dancers_max, "max dancers per group")
      ->capture_default_str();
  synth->add_option("--bpm-min", sa.spec.bpm_min, "min tempo (beats/minute)")
      ->capture_default_str();
  synth->add_option("--bpm-max", sa.spec.bpm_max, "max tempo (beats/minute)")
      ->capture_default_str();
  synth->add_option("--duration", sa.spec.duration_s, "sequence length (seconds)")
      ->capture_default_str();
  synth->add_option("--consistency-min", sa.spec.consistency_min,
                    "min group consistency (0..1)")
      ->capture_default_str();
  synth->add_option("--consistency-max", sa.spec.consistency_max,
                    "max group consistency (0..1)")
      ->capture_default_str();
  synth->add_option("--fps", sa.spec.fps, "frames per second")
      ->capture_default_str();
  synth->add_option("--d-audio", sa.spec.d_a, "audio feature channels")
      ->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train denoiser + contrastive encoder");
  train->add_option("--manifest", ta.manifest, "dataset manifest json")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--resume", ta.resume, "checkpoint to resume from");
  train->add_option("--iterations", ta.cfg.iterations, "training iterations")
      ->capture_default_str();
  train->add_option("--batch-size", ta.cfg.batch_size, "sequences per iteration")
      ->capture_default_str();
  train->add_option("--lr", ta.cfg.learning_rate, "Adam learning rate")
      ->capture_default_str();
  train->add_option("--seed", ta.cfg.seed, "rng seed")->capture_default_str();
  train->add_option("--train-frames", ta.cfg.train_frames,
                    "temporal crop length (frames)")
      ->capture_default_str();
  train->add_option("--checkpoint-every", ta.cfg.checkpoint_every,
                    "periodic checkpoint interval (iterations)")
      ->capture_default_str();
  train->add_option("--clip-norm", ta.cfg.clip_norm,
                    "global gradient norm clip (0 disables)")
      ->capture_default_str();
  train->add_option("--n-negatives", ta.cfg.n_negatives,
                    "negatives per contrastive anchor")
      ->capture_default_str();
  train->add_option("--replace-prob", ta.cfg.replace_prob,
                    "dancer replacement probability for negatives (0..1]")
      ->capture_default_str();
  train->add_option("--lambda-pos", ta.cfg.weights.lambda_pos,
                    "joint position loss weight")
      ->capture_default_str();
  train->add_option("--lambda-vel", ta.cfg.weights.lambda_vel,
                    "velocity loss weight")
      ->capture_default_str();
  train->add_option("--lambda-foot", ta.cfg.weights.lambda_foot,
                    "foot contact loss weight")
      ->capture_default_str();
  train->add_option("--lambda-nce", ta.cfg.weights.lambda_nce,
                    "contrastive loss weight")
      ->capture_default_str();
  train->add_flag("--disable-geo", ta.cfg.disable_geo, "drop geometric losses");
  train->add_flag("--disable-nce", ta.cfg.disable_nce, "drop contrastive loss");
  train->add_flag("--ablate-group-block", ta.cfg.ablate_group_block,
                  "skip global attention + group modulation");
  train->add_option("--d-model", ta.cfg.model.d, "attention width")
      ->capture_default_str();
  train->add_option("--heads", ta.cfg.model.n_heads, "attention heads")
      ->capture_default_str();
  train->add_option("--blocks", ta.cfg.model.n_blocks, "transformer blocks")
      ->capture_default_str();
  train->add_option("--ff-size", ta.cfg.model.ff_size, "feed-forward width")
      ->capture_default_str();
  train->add_option("--music-layers", ta.cfg.model.music_encoder_layers,
                    "music encoder layers")
      ->capture_default_str();
  train->add_option("--max-dancers", ta.cfg.model.n_max, "largest group size")
      ->capture_default_str();
  train->add_option("--d-audio", ta.cfg.model.d_audio, "audio feature channels")
      ->capture_default_str();
  train->add_option("--diffusion-steps", ta.cfg.model.diffusion_steps,
                    "diffusion steps M")
      ->capture_default_str();

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "sample group dances from a checkpoint");
  gen->add_option("--checkpoint", ga.checkpoint, "trained checkpoint")->required();
  gen->add_option("--out", ga.out, "output directory")->required();
  auto* music_opt = gen->add_option("--music", ga.music, "audio feature json");
  gen->add_option("--synthetic-bpm", ga.synthetic_bpm,
                  "synthesize a track at this tempo (beats/minute)")
      ->excludes(music_opt);
  gen->add_option("--duration", ga.duration_s,
                  "output length (seconds; 0 = full music track)")
      ->capture_default_str();
  gen->add_option("--fps", ga.fps, "frame rate for synthetic music")
      ->capture_default_str();
  gen->add_option("--dancers", ga.dancers, "number of dancers")
      ->capture_default_str();
  gen->add_option("--gamma", ga.gamma,
                  "guidance scale (+consistency / -diversity)")
      ->capture_default_str();
  gen->add_option("--sampler", ga.sampler, "sampler kind")
      ->check(CLI::IsMember({"ddim", "ddpm"}))
      ->capture_default_str();
  gen->add_option("--ddim-steps", ga.ddim_steps, "DDIM step count")
      ->capture_default_str();
  gen->add_option("--samples", ga.samples, "number of containers to write")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--seed", ga.seed, "rng seed")->capture_default_str();

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "score generated against reference");
  eval->add_option("--generated", ea.generated, "directory of .gcdm containers")
      ->required();
  eval->add_option("--reference", ea.reference, "directory of .gcdm containers")
      ->required();
  eval->add_option("--audio", ea.audio, "audio feature json (enables mmc)");
  eval->add_option("--out", ea.out, "output directory")->required();
  eval->add_option("--mc-window", ea.mc_window,
                   "motion-change window (frames)")
      ->capture_default_str();
  eval->add_option("--skeleton", ea.skeleton, "skeleton json (default SMPL-24)");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "kinetic velocity + motion change plots");
  plot->add_option("--motion", pa.motion, "motion container")->required();
  plot->add_option("--audio", pa.audio, "audio feature json")->required();
  plot->add_option("--out", pa.out, "output directory")->required();
  plot->add_option("--mc-window", pa.mc_window, "motion-change window (frames)")
      ->capture_default_str();
  plot->add_option("--skeleton", pa.skeleton, "skeleton json (default SMPL-24)");

  // config files live on the top-level app: CLI11 2.4 never processes a
  // set_config attached to a subcommand. Values land in [subcommand]
  // sections and only fill options the command line left unset.
  app.set_config("--config", "",
                 "config file with [subcommand] sections; flags override")
      ->envname("GCD_CONFIG");
  app.allow_config_extras(false);

  // users reasonably write --config after the subcommand, where the
  // subcommand would reject it as unknown; hoist it to the front.
  std::vector<std::string> args;
  std::vector<std::string> head;
  for (int i = 1; i < argc; ++i) {
    const std::string tok = argv[i];
    if (tok == "--config" && i + 1 < argc) {
      head.push_back(tok);
      head.emplace_back(argv[++i]);
    } else if (tok.rfind("--config=", 0) == 0) {
      head.push_back(tok);
    } else {
      args.push_back(tok);
    }
  }
  args.insert(args.begin(), head.begin(), head.end());

  std::vector<const char*> cargv{argv[0]};
  for (const auto& s : args) cargv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(cargv.size()),
              const_cast<char**>(cargv.data()));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (*synth) return dispatch([&] { run_synth(sa); });
  if (*train) return dispatch([&] { run_train(ta); });
  if (*gen) return dispatch([&] { run_generate(ga); });
  if (*eval) return dispatch([&] { run_evaluate(ea); });
  return dispatch([&] { run_plot(pa); });
}
