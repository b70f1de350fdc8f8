#pragma once

// Depth -> force calibration (cubic least squares) and the per-frame force
// estimation pipeline.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tactiforce/mlp.hpp"
#include "tactiforce/poisson.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

struct CalibSample {
  double depth_mm = 0.0;
  double force_n = 0.0;

  bool operator==(const CalibSample&) const = default;
};

/// p(x) = p1 x^3 + p2 x^2 + p3 x + p4 with x the maximum gel depth in mm.
struct PolyCurve {
  double p1 = 0.0;  // N/mm^3
  double p2 = 0.0;  // N/mm^2
  double p3 = 0.0;  // N/mm
  double p4 = 0.0;  // N
  double r_squared = 0.0;
  double d_min = 0.0;
  double d_max = 0.0;
  double depth_scale = 1.0;  // fitting used x / depth_scale

  double value(double depth_mm) const { return ((p1 * depth_mm + p2) * depth_mm + p3) * depth_mm + p4; }
  double slope(double depth_mm) const { return (3.0 * p1 * depth_mm + 2.0 * p2) * depth_mm + p3; }
};

enum class CalibPipeline {
  Oracle,  // peak of the simulated depth map
  Full,    // render -> MLP normals -> Poisson depth -> median-filtered peak
};

struct CalibrationRig {
  GelConfig gel;
  LightingModel lighting = LightingModel::default_rig();
  Indenter probe;  // press_depth is overwritten per step
  HertzParams hertz;
  int steps = 25;
  double step_depth_mm = 0.04;

  /// 5 mm radius cylinder with a 5 mm spherical cap, centred on the gel.
  static CalibrationRig with_defaults(const GelConfig& gel);
};

/// Presses k * step_depth for k = 1..steps and pairs the estimated peak depth
/// with the simulated contact force. params is required for CalibPipeline::Full.
std::vector<CalibSample> run_calibration(const CalibrationRig& rig, CalibPipeline pipeline,
                                         const MlpParams* params = nullptr);

/// Least-squares cubic via Householder QR on depth scaled to [0, 1].
/// Throws DegenerateFitError with fewer than 4 distinct depths.
PolyCurve fit_poly3(std::span<const CalibSample> samples);

double sum_squared_residuals(const PolyCurve& curve, std::span<const CalibSample> samples);

struct ForceEstimate {
  double force_n = 0.0;
  bool clamped = false;  // depth was outside [d_min, d_max]
};

/// p(depth) with depth clamped to the calibrated range and the result floored at 0.
ForceEstimate eval_force(const PolyCurve& curve, double depth_mm);

struct ForceRecord {
  std::int64_t frame_id = 0;
  double timestamp_s = 0.0;
  double force_n = 0.0;
  double max_depth_mm = 0.0;
  bool clamped = false;
};

struct StageTimings {
  double mlp_ms = 0.0;
  double solver_ms = 0.0;
  double regression_ms = 0.0;
};

/// Frame -> force. Owns its inference weights and cached DST plans; one
/// instance per consumer thread.
class ForcePipeline {
 public:
  ForcePipeline(const MlpParams& params, PolyCurve curve, double pixel_pitch_mm,
                Exec exec = Exec::Parallel, DstBackend backend = DstBackend::Auto,
                bool median_filter = true);

  ForceRecord process(const TactileFrame& frame);
  const StageTimings& last_timings() const { return timings_; }
  const PolyCurve& curve() const { return curve_; }

 private:
  MlpInference mlp_;
  DepthReconstructor reconstructor_;
  PolyCurve curve_;
  Exec exec_;
  bool median_filter_;
  StageTimings timings_;
};

struct FrameError {
  std::int64_t frame_id = 0;
  std::string message;
};

struct ForceStream {
  std::vector<ForceRecord> records;
  std::vector<FrameError> errors;
};

/// One record per frame in order; a frame whose processing throws is reported
/// in errors and skipped.
ForceStream force_stream(ForcePipeline& pipeline, std::span<const TactileFrame> frames);

// CSV: header "depth_mm,force_n", one sample per row.
void write_samples_csv(const std::filesystem::path& path, std::span<const CalibSample> samples);
std::vector<CalibSample> read_samples_csv(const std::filesystem::path& path);

// JSON object {p1,p2,p3,p4,r_squared,d_min,d_max,depth_scale}; an optional
// "fingerprint" string is written when non-empty and ignored on read.
std::string curve_to_json(const PolyCurve& curve, const std::string& fingerprint = {});
PolyCurve curve_from_json(const std::string& text);
void write_curve(const std::filesystem::path& path, const PolyCurve& curve, const std::string& fingerprint = {});
PolyCurve read_curve(const std::filesystem::path& path);

}  // namespace tactiforce
