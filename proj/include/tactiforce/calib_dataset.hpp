#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tactiforce/mlp.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

enum class LabelSource {
  // Closed-form sphere normal inside the contact disc, (0,0,1) outside.
  Analytic,
  // Normals of the smoothed gel surface that was rendered. Matches the
  // image pixel for pixel, so the rim band carries no contradictory labels.
  GelSurface,
};

struct BallPressOptions {
  int n_images = 40;
  double ball_diameter_mm = 6.0;
  double min_press_mm = 0.1;
  double max_press_mm = 1.2;
  std::uint64_t seed = 42;
  /// Overrides the random press depth of every image when set.
  std::optional<double> fixed_press_mm;
  LabelSource labels = LabelSource::GelSurface;
};

/// Flattened per-pixel samples, image-major: image i occupies
/// [i * rows * cols, (i + 1) * rows * cols).
struct CalibDataset {
  int rows = 0;
  int cols = 0;
  std::vector<Indenter> presses;
  std::vector<TrainSample> samples;

  std::size_t pixels_per_image() const { return static_cast<std::size_t>(rows) * cols; }
  std::span<const TrainSample> image(std::size_t i) const;
  /// Samples of images [first, last).
  std::span<const TrainSample> images(std::size_t first, std::size_t last) const;
};

/// Analytic label of a ball press at gel position (x, y): the sphere normal
/// (dx, dy, sqrt(R^2 - r^2)) / R inside the contact disc, (0, 0, 1) outside.
Vec3 ball_press_normal(const Indenter& ball, double x_mm, double y_mm);

CalibDataset make_calib_dataset(const GelConfig& gel, const LightingModel& lighting,
                                const BallPressOptions& options);

/// SHA-256 over the raw sample bytes.
std::string dataset_fingerprint(const CalibDataset& dataset);

/// Median per-pixel angle (degrees) between predicted normals and sample targets.
double median_angular_error_deg(const MlpParams& params, std::span<const TrainSample> samples);

}  // namespace tactiforce
