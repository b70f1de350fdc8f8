#pragma once

// Position-force bilateral teleoperation of a parallel gripper: the follower
// tracks the leader position, the leader renders the force measured by the
// tactile sensor. One scalar coordinate, the aperture half-width in metres.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tactiforce/force.hpp"
#include "tactiforce/random.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

struct TeleopState {
  double t = 0.0;     // s
  double x_h = 0.0;   // operator command, m
  double x_l = 0.0;   // leader position, m
  double x_fd = 0.0;  // follower set point, m
  double x_f = 0.0;   // follower position, m
  double v_f = 0.0;   // m/s
  double f_l = 0.0;   // force rendered to the operator, N
  double f_ld = 0.0;  // leader force set point, N
  double f_s = 0.0;   // sensed contact force, N

  bool operator==(const TeleopState&) const = default;
};

struct FollowerModel {
  double mass_kg = 0.1;
  double kp = 2000.0;  // N/m
  double kd = 20.0;    // N s/m
  double x_min_m = 0.0;
  double x_max_m = 0.05;

  void validate() const;
};

/// Rigid object between the fingers. Contact when the aperture half-width
/// drops below the object half-width; the reaction is Hertzian in the
/// penetration, which is also the press depth seen by the gel.
struct ContactModel {
  std::optional<double> object_half_width_m;  // none: free space
  HertzParams hertz;

  double penetration_mm(double x_f) const;
  /// Opening force on the follower, N.
  double reaction_n(double x_f) const;
};

struct OperatorModel {
  double hand_stiffness = 500.0;        // N/m
  double perception_threshold_n = 0.2;  // force at which the operator stops closing
};

struct TeleopModels {
  FollowerModel follower;
  ContactModel contact;
  OperatorModel op;
};

/// Operator reaction to rendered force: once the felt force reaches the
/// perception threshold the command is held at the current aperture; the
/// hold releases when the script opens past it or feedback goes off.
struct OperatorHold {
  bool active = false;
  double x_m = 0.0;
};

/// Source of f_s at sensor ticks.
class ForceSensor {
 public:
  virtual ~ForceSensor() = default;
  virtual double measure(double penetration_mm, double t, std::int64_t tick) = 0;
};

/// Closed-form Hertz force plus optional Gaussian noise; the noisy reading is
/// floored at 0.
class HertzSensor final : public ForceSensor {
 public:
  HertzSensor(HertzParams hertz, double noise_n = 0.0, std::uint64_t seed = 0);
  double measure(double penetration_mm, double t, std::int64_t tick) override;

 private:
  HertzParams hertz_;
  double noise_n_;
  Rng rng_;
};

/// Presses the calibration probe into the simulated gel and estimates force
/// from the peak depth through a calibration curve. Without MLP parameters the
/// peak is read from the simulated depth map; with them every tick renders a
/// frame and runs the full image pipeline.
class TactileSensor final : public ForceSensor {
 public:
  TactileSensor(const CalibrationRig& rig, PolyCurve curve, const MlpParams* params = nullptr);
  double measure(double penetration_mm, double t, std::int64_t tick) override;

 private:
  CalibrationRig rig_;
  PolyCurve curve_;
  std::unique_ptr<ForcePipeline> pipeline_;
};

struct StepInput {
  double x_cmd = 0.0;  // scripted or live operator intent, m
  bool feedback = false;
  bool sensor_tick = false;
};

/// One control tick:
///   operator: x_h = x_cmd, or the held aperture while feedback is felt
///   leader:   f_l = f_ld if feedback else 0; x_l = x_h + f_l / k_h
///   follower: x_fd = x_l; semi-implicit Euler on m a = kp (x_fd - x_f) - kd v + reaction
///   sensor:   on a tick f_s = measure(penetration), else held; f_ld = f_s
/// Throws DomainError on dt <= 0 or a non-finite state or input.
TeleopState step(const TeleopState& state, const TeleopModels& models, const StepInput& input,
                 double dt, OperatorHold& hold, ForceSensor& sensor);

enum class SensorMode { Hertz, Oracle, Pipeline };

struct Waypoint {
  double t = 0.0;
  double x_m = 0.0;
};

struct Region {
  std::string label;
  double t0 = 0.0;
  double t1 = 0.0;
};

struct FeedbackSwitch {
  double from_s = 0.0;
  bool enabled = false;
};

struct Scenario {
  double duration_s = 10.0;
  double control_rate_hz = 1000.0;
  double sensor_rate_hz = 30.0;
  std::uint64_t seed = 1;
  TeleopModels models;
  SensorMode sensor_mode = SensorMode::Hertz;
  double sensor_noise_n = 0.0;
  std::vector<Waypoint> trajectory;         // piecewise linear, held past both ends
  std::vector<FeedbackSwitch> feedback;     // step schedule; off before the first entry
  std::vector<Region> regions;

  void validate() const;
  double command_at(double t) const;
  bool feedback_at(double t) const;
  /// Label of the first region containing t, or empty.
  std::string region_at(double t) const;
  long long steps() const;
};

/// Parses the scenario JSON. Keys absent from the file take their values from
/// `defaults`; unknown keys, type errors and syntax errors throw FormatError
/// (syntax errors carry line and column).
Scenario parse_scenario(const std::string& text, const Scenario& defaults = {});
Scenario load_scenario(const std::filesystem::path& path, const Scenario& defaults = {});
std::string scenario_to_json(const Scenario& scenario);

const char* to_string(SensorMode mode);
SensorMode sensor_mode_from_string(const std::string& name);

struct TelemetryRecord {
  TeleopState state;
  std::string region;
};

using TelemetryLog = std::vector<TelemetryRecord>;

/// Fixed-step run, one record per control tick (t = dt, 2 dt, ..., duration).
TelemetryLog run_scenario(const Scenario& scenario, ForceSensor& sensor);

/// Builds the sensor the scenario asks for. Oracle and pipeline modes use the
/// default calibration rig on `gel`; a missing curve is calibrated on the fly
/// (oracle depths, or the full pipeline when params are given). Pipeline mode
/// requires params.
std::unique_ptr<ForceSensor> make_sensor(const Scenario& scenario, const GelConfig& gel,
                                         const std::optional<PolyCurve>& curve,
                                         const MlpParams* params);

struct RegionMetrics {
  double mean_desired = 0.0;  // mean x_h, m
  double mean_actual = 0.0;   // mean x_f, m
  double mean_error = 0.0;    // mean |x_h - x_f|, m
  double max_force = 0.0;     // max f_s, N
  std::size_t samples = 0;
};

/// Metrics over records with t0 <= t <= t1. Throws DomainError when empty.
RegionMetrics region_metrics(const TelemetryLog& log, double t0, double t1);
RegionMetrics region_metrics(const TelemetryLog& log, const Region& region);

/// JSON-lines, one {t, x_h, x_l, x_fd, x_f, f_l, f_ld, f_s, region} object per tick.
std::string telemetry_line(const TelemetryRecord& record);
void write_telemetry(const std::filesystem::path& path, const TelemetryLog& log);
TelemetryLog read_telemetry(const std::filesystem::path& path);

}  // namespace tactiforce
