#pragma once

// Synthetic stand-in for the gel-camera tactile sensor: indentation geometry,
// photometric rendering and ground-truth contact force.

#include <array>
#include <cstdint>
#include <variant>

#include "tactiforce/exec.hpp"
#include "tactiforce/grid.hpp"

namespace tactiforce {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct GelConfig {
  int width_px = 320;
  int height_px = 240;
  double pixel_pitch_mm = 0.05;
  double max_indent_mm = 2.0;
  double smoothing_sigma_px = 2.0;

  void validate() const;
  /// Gel-plane position of the centre of pixel (0,0) is the origin; x grows with column.
  Point2 center_mm() const;
};

struct Sphere {
  double radius_mm = 3.0;
};
struct CylinderFlat {
  double radius_mm = 5.0;
};
/// Cylinder whose lower face is a spherical cap of cap_radius_mm.
struct CylinderCurved {
  double radius_mm = 5.0;
  double cap_radius_mm = 5.0;
};

using IndenterShape = std::variant<Sphere, CylinderFlat, CylinderCurved>;

struct Indenter {
  IndenterShape shape = Sphere{};
  Point2 center_mm;
  double press_depth_mm = 0.0;

  /// Planform radius of the indenter, used for the fit-inside-the-gel check.
  double footprint_radius_mm() const;
  /// Height of the indenter's lower surface above its lowest point at radial
  /// distance r; +inf where the indenter has no surface below the gel plane.
  double profile_mm(double r) const;
  void validate() const;
};

struct Light {
  Vec3 direction{0.0, 0.0, -1.0};  // unit, pointing from the light into the gel
  std::array<double, 3> gain{0.0, 0.0, 0.0};
};

struct LightingModel {
  std::array<Light, 3> lights{};
  std::array<double, 3> ambient{0.0, 0.0, 0.0};

  /// Three lights on a ring at the given elevation, each driving one colour channel.
  static LightingModel ring(double elevation_deg, std::array<double, 3> azimuth_deg, double gain,
                            double ambient);
  /// 45 deg elevation, azimuths 0/120/240, gains 0.6, ambient 0.25.
  static LightingModel default_rig();
  void validate() const;
};

struct DepthMap {
  Grid<double> values;  // mm, >= 0, zero boundary ring
  double pixel_pitch_mm = 0.05;
};

struct NormalMap {
  Grid<Vec3> vectors;  // unit, n_z > 0
};

using Rgb = std::array<double, 3>;

struct TactileFrame {
  Grid<Rgb> pixels;  // channels in [0,1]
  double timestamp_s = 0.0;
  std::int64_t frame_id = 0;
};

struct HertzParams {
  double k = 8.0;  // N / mm^1.5
};

DepthMap indent_depth(const GelConfig& gel, const Indenter& indenter, Exec exec = Exec::Parallel);

/// Separable Gaussian blur with zero padding outside the grid.
Grid<double> gaussian_blur(const Grid<double>& field, double sigma_px, Exec exec = Exec::Parallel);

/// n is proportional to (-dz/dx, -dz/dy, 1) where z is the depth field.
NormalMap normals_from_depth(const DepthMap& depth, Exec exec = Exec::Parallel);

TactileFrame render(const NormalMap& normals, const LightingModel& lighting,
                    Exec exec = Exec::Parallel);

/// Hertzian ground truth k * max(depth)^1.5.
double truth_force(const DepthMap& depth, const HertzParams& material);

}  // namespace tactiforce
