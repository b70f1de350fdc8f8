#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tactiforce/calib_dataset.hpp"
#include "tactiforce/cli.hpp"
#include "tactiforce/errors.hpp"
#include "tactiforce/field_io.hpp"
#include "tactiforce/fingerprint.hpp"
#include "tactiforce/force.hpp"
#include "tactiforce/poisson.hpp"
#include "tactiforce/teleop.hpp"

namespace tactiforce::cli {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  return std::filesystem::path(p.string() + suffix);
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CommandError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw CommandError("write failed: " + path.string());
}

Json train_config_json(const TrainConfig& c) {
  return {{"lr", c.lr},           {"dropout_rate", c.dropout_rate}, {"dropout_free_epochs", c.dropout_free_epochs},
          {"epochs", c.epochs},   {"batch_size", c.batch_size},     {"hidden1", c.hidden1},
          {"hidden2", c.hidden2}, {"seed", c.seed}};
}

Json region_json(const RegionMetrics& m) {
  return {{"mean_desired", m.mean_desired},
          {"mean_actual", m.mean_actual},
          {"mean_error", m.mean_error},
          {"max_force", m.max_force},
          {"samples", m.samples}};
}

Json stage_json(const std::vector<double>& ms) {
  double sum = 0.0;
  for (double v : ms) sum += v;
  return {{"p50_ms", percentile(ms, 0.5)},
          {"p95_ms", percentile(ms, 0.95)},
          {"mean_ms", ms.empty() ? 0.0 : sum / static_cast<double>(ms.size())}};
}

TactileFrame ball_press_frame(const Config& config, double depth_mm) {
  Indenter ball;
  ball.shape = Sphere{config.dataset.ball_diameter_mm / 2.0};
  ball.center_mm = config.gel.center_mm();
  ball.press_depth_mm = depth_mm;
  return render(normals_from_depth(indent_depth(config.gel, ball)), config.lighting.model());
}

}  // namespace

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Json cmd_train(const Config& config, const TrainOptions& options, std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const LightingModel lighting = config.lighting.model();
  const CalibDataset data = make_calib_dataset(config.gel, lighting, config.dataset);
  const int n = config.dataset.n_images;
  const int holdout = config.holdout_images;
  log << "dataset: " << n << " images, " << data.samples.size() << " samples, holdout " << holdout << "\n";

  TrainResult result;
  try {
    result = train(data.images(0, static_cast<std::size_t>(n - holdout)), config.mlp);
  } catch (const TrainingDiverged& e) {
    throw CommandError(std::string("training diverged: ") + e.what());
  }

  Json holdout_error = nullptr;
  if (holdout > 0) {
    BallPressOptions analytic = config.dataset;
    analytic.labels = LabelSource::Analytic;
    const CalibDataset truth = make_calib_dataset(config.gel, lighting, analytic);
    holdout_error = median_angular_error_deg(result.params, truth.images(static_cast<std::size_t>(n - holdout),
                                                                          static_cast<std::size_t>(n)));
  }

  const std::string fingerprint = config_fingerprint(config);
  write_checkpoint(options.out, result.params);

  Json sidecar;
  sidecar["format"] = "MLP1";
  sidecar["checkpoint_sha256"] = file_sha256(options.out);
  sidecar["train_config"] = train_config_json(config.mlp);
  sidecar["dataset_fingerprint"] = dataset_fingerprint(data);
  sidecar["config_fingerprint"] = fingerprint;
  write_text(with_suffix(options.out, ".json"), sidecar.dump(2) + "\n");

  Json metrics;
  metrics["final_loss"] = result.loss_history.back();
  metrics["holdout_angular_error_deg"] = holdout_error;
  metrics["loss_history"] = result.loss_history;
  metrics["train_images"] = n - holdout;
  metrics["holdout_images"] = holdout;
  metrics["config_fingerprint"] = fingerprint;
  write_text(with_suffix(options.out, ".metrics.json"), metrics.dump(2) + "\n");

  log << "final_loss " << result.loss_history.back() << ", wall " << ms_between(start, Clock::now()) / 1000.0
      << " s\n";
  return metrics;
}

Json cmd_calibrate(const Config& config, const CalibrateOptions& options, std::ostream& log) {
  config.validate();
  const CalibrationRig rig = config.calibration.rig(config.gel, config.lighting.model());
  std::optional<MlpParams> params;
  if (options.mode == CalibrateMode::Full) {
    if (!options.checkpoint) throw CommandError("full calibration needs --checkpoint");
    if (!std::filesystem::exists(*options.checkpoint)) {
      throw CommandError("checkpoint not found: " + options.checkpoint->string());
    }
    params = read_checkpoint(*options.checkpoint);
  }
  const auto samples = run_calibration(rig, options.mode == CalibrateMode::Full ? CalibPipeline::Full : CalibPipeline::Oracle,
                                       params ? &*params : nullptr);
  const PolyCurve curve = fit_poly3(samples);
  const std::string fingerprint = config_fingerprint(config);
  write_curve(options.out, curve, fingerprint);
  const auto csv = options.samples_csv.value_or(std::filesystem::path(options.out).replace_extension(".csv"));
  write_samples_csv(csv, samples);

  Json j;
  j["mode"] = options.mode == CalibrateMode::Full ? "full" : "oracle";
  j["r_squared"] = curve.r_squared;
  j["p1"] = curve.p1;
  j["p2"] = curve.p2;
  j["p3"] = curve.p3;
  j["p4"] = curve.p4;
  j["d_min"] = curve.d_min;
  j["d_max"] = curve.d_max;
  j["samples"] = samples.size();
  j["config_fingerprint"] = fingerprint;
  log << "r_squared " << curve.r_squared << "\n";
  return j;
}

Json cmd_reconstruct(const Config& config, const ReconstructOptions& options) {
  config.validate();
  if (options.frame.has_value() == options.press_depth_mm.has_value()) {
    throw CommandError("give exactly one of --frame and --press-depth");
  }
  const MlpParams params = read_checkpoint(options.checkpoint);
  TactileFrame frame;
  if (options.frame) {
    frame.pixels = vector_field(read_tfr(*options.frame));
  } else {
    frame = ball_press_frame(config, *options.press_depth_mm);
    if (options.frame_out) write_tfr(*options.frame_out, to_tfr(frame));
  }
  frame.frame_id = options.frame_id;

  MlpInference mlp(params);
  DepthReconstructor reconstructor(config.gel.pixel_pitch_mm, config.solver.backend);
  const auto start = Clock::now();
  const DepthMap depth = reconstructor.reconstruct(mlp.predict(frame));
  const double peak = max_depth(depth, config.solver.median_filter);
  const double wall = ms_between(start, Clock::now());
  if (options.depth_out) write_tfr(*options.depth_out, to_tfr(depth));

  Json j;
  j["frame_id"] = frame.frame_id;
  j["max_depth_mm"] = peak;
  j["t_wall_ms"] = wall;
  return j;
}

Json cmd_simulate(const Config& config, const SimulateOptions& options) {
  config.validate();
  Scenario sc = load_scenario(options.scenario, config.teleop);
  if (options.feedback) sc.feedback = {{0.0, *options.feedback}};
  if (options.sensor) sc.sensor_mode = *options.sensor;
  sc.validate();

  std::optional<MlpParams> params;
  if (options.checkpoint) params = read_checkpoint(*options.checkpoint);
  std::optional<PolyCurve> curve;
  if (options.curve) curve = read_curve(*options.curve);
  const auto sensor = make_sensor(sc, config.gel, curve, params ? &*params : nullptr);

  const TelemetryLog log = run_scenario(sc, *sensor);
  write_telemetry(options.out_log, log);

  Json metrics;
  metrics["config_fingerprint"] = config_fingerprint(config);
  metrics["scenario_fingerprint"] = short_fingerprint(scenario_to_json(sc));
  metrics["log"] = options.out_log.filename().string();
  metrics["log_sha256"] = file_sha256(options.out_log);
  metrics["steps"] = log.size();
  metrics["sensor"] = to_string(sc.sensor_mode);
  Json regions = Json::object();
  for (const auto& r : sc.regions) regions[r.label] = region_json(region_metrics(log, r));
  metrics["regions"] = regions;
  write_text(options.metrics_out.value_or(with_suffix(options.out_log, ".metrics.json")), metrics.dump(2) + "\n");
  return metrics;
}

Json cmd_bench(const Config& config, const BenchOptions& options) {
  config.validate();
  const bool trained = options.checkpoint.has_value();
  const MlpParams params = trained ? read_checkpoint(*options.checkpoint)
                                   : MlpParams::he_uniform(config.mlp.hidden1, config.mlp.hidden2, config.mlp.seed);

  // Closed-form Hertz samples over the calibration range; timing does not
  // depend on the curve values.
  std::vector<CalibSample> samples;
  for (int k = 1; k <= config.calibration.steps; ++k) {
    const double d = k * config.calibration.step_depth_mm;
    samples.push_back({d, config.calibration.hertz_k * std::pow(d, 1.5)});
  }
  const PolyCurve curve = fit_poly3(samples);

  const double press = std::min(config.bench.press_depth_mm, config.gel.max_indent_mm);
  std::vector<TactileFrame> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(ball_press_frame(config, press * (0.5 + 0.5 * (i + 1) / 8.0)));

  ForcePipeline pipeline(params, curve, config.gel.pixel_pitch_mm, Exec::Parallel, config.solver.backend,
                         config.solver.median_filter);
  for (int i = 0; i < config.bench.warmup; ++i) pipeline.process(frames[static_cast<std::size_t>(i) % frames.size()]);

  std::vector<double> mlp, solver, regression, total;
  const auto start = Clock::now();
  for (int i = 0; i < config.bench.frames; ++i) {
    TactileFrame& f = frames[static_cast<std::size_t>(i) % frames.size()];
    f.frame_id = i;
    const auto t0 = Clock::now();
    pipeline.process(f);
    total.push_back(ms_between(t0, Clock::now()));
    const StageTimings& st = pipeline.last_timings();
    mlp.push_back(st.mlp_ms);
    solver.push_back(st.solver_ms);
    regression.push_back(st.regression_ms);
  }
  const double seconds = ms_between(start, Clock::now()) / 1000.0;

  Json report;
  report["config_fingerprint"] = config_fingerprint(config);
  report["width"] = config.gel.width_px;
  report["height"] = config.gel.height_px;
  report["frames"] = config.bench.frames;
  report["warmup"] = config.bench.warmup;
  report["backend"] = to_string(config.solver.backend);
  report["weights"] = trained ? "checkpoint" : "random";
  report["fps"] = static_cast<double>(config.bench.frames) / seconds;
  report["stages"] = {{"mlp", stage_json(mlp)},
                      {"solver", stage_json(solver)},
                      {"regression", stage_json(regression)},
                      {"total", stage_json(total)}};
  if (options.out) write_text(*options.out, report.dump(2) + "\n");
  return report;
}

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

SensorMode parse_sensor(const std::string& s) {
  try {
    return sensor_mode_from_string(s);
  } catch (const FormatError& e) {
    throw CLI::ValidationError("--sensor", e.what());
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tactile force estimation and bilateral teleoperation simulator", "tactiforce"};
  app.require_subcommand(1);
  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "Print every subcommand and flag, then exit");
  std::string config_path;
  app.add_option("--config", config_path, "TOML configuration file")->check(CLI::ExistingFile);

  // Flag values live here until the config is loaded; unset flags leave the config alone.
  std::optional<int> epochs, batch, hidden1, hidden2, images, holdout, frames, warmup, width, height;
  std::optional<double> lr, press_depth, duration;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend, sensor, address, feedback;
  std::string out_path, mode = "oracle", scenario, metrics_path, samples_path;
  std::string checkpoint, curve_path, frame_path, depth_out, frame_out;
  std::int64_t frame_id = 0;

  auto* train = app.add_subcommand("train", "Generate the ball-press dataset and train the normal MLP");
  train->add_option("--out", out_path, "Checkpoint path (sidecar <out>.json, metrics <out>.metrics.json)")->required();
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--batch-size", batch, "Minibatch size");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--seed", seed, "Training seed");
  train->add_option("--hidden1", hidden1, "First hidden layer width");
  train->add_option("--hidden2", hidden2, "Second hidden layer width");
  train->add_option("--images", images, "Number of ball-press images");
  train->add_option("--holdout", holdout, "Images held out for the angular-error metric");

  auto* calibrate = app.add_subcommand("calibrate", "Press the probe, fit the cubic depth-to-force curve");
  calibrate->add_option("--mode", mode, "oracle (simulated depth) or full (MLP + Poisson)")
      ->check(CLI::IsMember({"oracle", "full"}));
  calibrate->add_option("--checkpoint", checkpoint, "MLP checkpoint, required in full mode");
  calibrate->add_option("--out", out_path, "Curve JSON path")->required();
  calibrate->add_option("--samples", samples_path, "Samples CSV path (default: <out> with .csv)");
  calibrate->add_option("--backend", backend, "DST backend: auto, direct, matrix, fftw");

  auto* reconstruct = app.add_subcommand("reconstruct", "Frame to depth map and peak depth");
  reconstruct->add_option("--checkpoint", checkpoint, "MLP checkpoint")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--frame", frame_path, "Input frame, TFR1 RGB")->check(CLI::ExistingFile);
  reconstruct->add_option("--press-depth", press_depth, "Render a centred ball press of this depth (mm) instead");
  reconstruct->add_option("--depth-out", depth_out, "Write the depth map, TFR1");
  reconstruct->add_option("--frame-out", frame_out, "Write the rendered frame, TFR1");
  reconstruct->add_option("--frame-id", frame_id, "Frame id for the output record");
  reconstruct->add_option("--backend", backend, "DST backend: auto, direct, matrix, fftw");

  auto* simulate = app.add_subcommand("simulate", "Run a teleoperation scenario");
  simulate->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", out_path, "Telemetry log, JSON lines")->required();
  simulate->add_option("--metrics", metrics_path, "Metrics JSON (default: <out>.metrics.json)");
  simulate->add_option("--feedback", feedback, "on or off for the whole run")->check(CLI::IsMember({"on", "off"}));
  simulate->add_option("--sensor", sensor, "hertz, oracle or pipeline");
  simulate->add_option("--checkpoint", checkpoint, "MLP checkpoint for the pipeline sensor");
  simulate->add_option("--curve", curve_path, "Calibration curve JSON");

  auto* serve = app.add_subcommand("serve", "Live mode: bus server, force stage and teleop loop");
  serve->add_option("--address", address, "Bind address host:port (also TACTIFORCE_BUS_ADDR)");
  serve->add_option("--duration", duration, "Stop after this many seconds (default: until SIGINT)");
  serve->add_option("--sensor", sensor, "hertz, oracle or pipeline");
  serve->add_option("--checkpoint", checkpoint, "MLP checkpoint for the pipeline sensor");
  serve->add_option("--curve", curve_path, "Calibration curve JSON");
  serve->add_option("--feedback", feedback, "Initial feedback mode, on or off")->check(CLI::IsMember({"on", "off"}));

  auto* bench = app.add_subcommand("bench", "Force pipeline throughput and per-stage latency");
  bench->add_option("--frames", frames, "Timed frames");
  bench->add_option("--warmup", warmup, "Untimed frames before timing");
  bench->add_option("--width", width, "Frame width in pixels (pixel pitch scales to keep the gel size)");
  bench->add_option("--height", height, "Frame height in pixels (pixel pitch scales to keep the gel size)");
  bench->add_option("--checkpoint", checkpoint, "MLP checkpoint (default: random weights)");
  bench->add_option("--backend", backend, "DST backend: auto, direct, matrix, fftw");
  bench->add_option("--out", out_path, "Report JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Config config;
  try {
    config = config_path.empty() ? default_config() : load_config(config_path);
    apply_environment(config);
    if (epochs) config.mlp.epochs = *epochs;
    if (batch) config.mlp.batch_size = *batch;
    if (lr) config.mlp.lr = *lr;
    if (seed) config.mlp.seed = *seed;
    if (hidden1) config.mlp.hidden1 = *hidden1;
    if (hidden2) config.mlp.hidden2 = *hidden2;
    if (images) config.dataset.n_images = *images;
    if (holdout) config.holdout_images = *holdout;
    if (frames) config.bench.frames = *frames;
    if (warmup) config.bench.warmup = *warmup;
    if (width || height) {
      // Same physical gel at a different camera resolution.
      const double scale = std::max(static_cast<double>(config.gel.width_px) / width.value_or(config.gel.width_px),
                                    static_cast<double>(config.gel.height_px) / height.value_or(config.gel.height_px));
      config.gel.pixel_pitch_mm *= scale;
      config.gel.width_px = width.value_or(config.gel.width_px);
      config.gel.height_px = height.value_or(config.gel.height_px);
    }
    if (address) config.bus.address = *address;
    if (backend) {
      try {
        config.solver.backend = dst_backend_from_string(*backend);
      } catch (const FormatError& e) {
        throw ConfigError(std::string("--backend: ") + e.what());
      }
    }
    config.validate();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::optional<SensorMode> sensor_mode;
    if (sensor) sensor_mode = parse_sensor(*sensor);
    auto opt_path = [](const std::string& s) {
      return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
    };

    if (*train) {
      out << cmd_train(config, {out_path}, err).dump(2) << "\n";
    } else if (*calibrate) {
      CalibrateOptions o;
      o.mode = mode == "full" ? CalibrateMode::Full : CalibrateMode::Oracle;
      o.checkpoint = opt_path(checkpoint);
      o.out = out_path;
      o.samples_csv = opt_path(samples_path);
      out << cmd_calibrate(config, o, err).dump(2) << "\n";
    } else if (*reconstruct) {
      ReconstructOptions o;
      o.checkpoint = checkpoint;
      o.frame = opt_path(frame_path);
      o.press_depth_mm = press_depth;
      o.depth_out = opt_path(depth_out);
      o.frame_out = opt_path(frame_out);
      o.frame_id = frame_id;
      out << cmd_reconstruct(config, o).dump() << "\n";
    } else if (*simulate) {
      SimulateOptions o;
      o.scenario = scenario;
      o.out_log = out_path;
      o.metrics_out = opt_path(metrics_path);
      if (feedback) o.feedback = *feedback == "on";
      o.sensor = sensor_mode;
      o.checkpoint = opt_path(checkpoint);
      o.curve = opt_path(curve_path);
      out << cmd_simulate(config, o).dump(2) << "\n";
    } else if (*serve) {
      ServeOptions o;
      o.duration_s = duration.value_or(0.0);
      o.sensor = sensor_mode;
      o.checkpoint = opt_path(checkpoint);
      o.curve = opt_path(curve_path);
      o.feedback = feedback.value_or("on") == "on";
      g_stop.store(false);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      cmd_serve(config, o, g_stop, err);
      std::signal(SIGINT, SIG_DFL);
      std::signal(SIGTERM, SIG_DFL);
    } else if (*bench) {
      BenchOptions o;
      o.checkpoint = opt_path(checkpoint);
      o.out = opt_path(out_path);
      out << cmd_bench(config, o).dump(2) << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tactiforce::cli
