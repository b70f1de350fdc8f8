#pragma once

// Whole-program configuration: one TOML file, every key optional, unknown
// keys rejected.

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "tactiforce/calib_dataset.hpp"
#include "tactiforce/dst.hpp"
#include "tactiforce/mlp.hpp"
#include "tactiforce/teleop.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LightingConfig {
  double elevation_deg = 45.0;
  std::array<double, 3> azimuth_deg{0.0, 120.0, 240.0};
  double gain = 0.6;
  double ambient = 0.25;

  LightingModel model() const { return LightingModel::ring(elevation_deg, azimuth_deg, gain, ambient); }
};

struct SolverConfig {
  DstBackend backend = DstBackend::Auto;
  bool median_filter = true;
};

struct CalibrationConfig {
  int steps = 25;
  double step_depth_mm = 0.04;
  double probe_radius_mm = 5.0;
  double probe_cap_radius_mm = 5.0;
  double hertz_k = 8.0;

  CalibrationRig rig(const GelConfig& gel, const LightingModel& lighting) const;
};

struct BusConfig {
  std::string address = "127.0.0.1:8765";
  int frame_queue_depth = 64;
  int lossless_queue_limit = 65536;
  double state_rate_hz = 100.0;  // leader and follower state in live mode; force follows the sensor rate
};

struct BenchConfig {
  int frames = 300;
  int warmup = 10;
  double press_depth_mm = 0.5;
};

struct Config {
  GelConfig gel;
  LightingConfig lighting;
  BallPressOptions dataset;
  int holdout_images = 4;
  TrainConfig mlp;
  SolverConfig solver;
  CalibrationConfig calibration;
  Scenario teleop;  // defaults for scenario files and live mode
  BusConfig bus;
  BenchConfig bench;

  void validate() const;
};

/// Built-in defaults (teleop object half-width 12.5 mm).
Config default_config();

/// TACTIFORCE_BUS_ADDR, when set, replaces bus.address.
void apply_environment(Config& config);

/// Applies the TOML text on top of `base`. Throws ConfigError on syntax
/// errors (with line and column), unknown keys, wrong types and invalid values.
Config parse_config(const std::string& text, const Config& base = default_config(),
                    const std::string& source = "config");
Config load_config(const std::filesystem::path& path, const Config& base = default_config());

/// Canonical JSON rendering, stable across runs.
std::string config_to_json(const Config& config);
/// First 16 hex digits of the SHA-256 of config_to_json.
std::string config_fingerprint(const Config& config);

const char* to_string(DstBackend backend);
DstBackend dst_backend_from_string(const std::string& name);

}  // namespace tactiforce
