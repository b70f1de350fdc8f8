#pragma once

// The tactiforce command-line tool. Each subcommand is also callable as a
// function so tests can drive it without a process boundary.

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tactiforce/config.hpp"

namespace tactiforce::cli {

using Json = nlohmann::ordered_json;

/// Runtime failure reported with exit code 1.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path out;  // checkpoint; sidecar and metrics are written next to it
};

/// Writes <out> (MLP1 checkpoint), <out>.json (sidecar with the training
/// config, dataset and config fingerprints) and <out>.metrics.json
/// {final_loss, holdout_angular_error_deg, ...}. Returns the metrics.
Json cmd_train(const Config& config, const TrainOptions& options, std::ostream& log);

enum class CalibrateMode { Oracle, Full };

struct CalibrateOptions {
  CalibrateMode mode = CalibrateMode::Oracle;
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path out;  // curve JSON
  std::optional<std::filesystem::path> samples_csv;  // default: <out> with .csv
};

Json cmd_calibrate(const Config& config, const CalibrateOptions& options, std::ostream& log);

struct ReconstructOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> frame;  // TFR1 RGB image
  std::optional<double> press_depth_mm;        // render a centred ball press instead
  std::optional<std::filesystem::path> depth_out;
  std::optional<std::filesystem::path> frame_out;  // the synthesized frame, TFR1
  std::int64_t frame_id = 0;
};

/// Returns {frame_id, max_depth_mm, t_wall_ms}.
Json cmd_reconstruct(const Config& config, const ReconstructOptions& options);

struct SimulateOptions {
  std::filesystem::path scenario;
  std::filesystem::path out_log;
  std::optional<std::filesystem::path> metrics_out;  // default: <out_log>.metrics.json
  std::optional<bool> feedback;                      // replaces the scenario schedule
  std::optional<SensorMode> sensor;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> curve;
};

/// Runs the scenario, writes the telemetry log and returns the metrics.
Json cmd_simulate(const Config& config, const SimulateOptions& options);

struct ServeOptions {
  double duration_s = 0.0;  // 0: until stop is set
  std::optional<SensorMode> sensor;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> curve;
  bool feedback = true;
};

/// Bus server, force stage and real-time teleop loop until `stop` or the
/// duration. Clients receive CLOSE on the way out.
void cmd_serve(const Config& config, const ServeOptions& options, const std::atomic<bool>& stop, std::ostream& log);

struct BenchOptions {
  std::optional<std::filesystem::path> checkpoint;  // random weights when absent
  std::optional<std::filesystem::path> out;
};

/// Times the full force pipeline per frame. Returns {fps, stages: {mlp,
/// solver, regression, total: {p50_ms, p95_ms, mean_ms}}, ...}.
Json cmd_bench(const Config& config, const BenchOptions& options);

/// Percentile by linear interpolation between order statistics, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Parses argv and dispatches. Exit code 0 on success, 2 on usage errors,
/// 1 on runtime errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tactiforce::cli
