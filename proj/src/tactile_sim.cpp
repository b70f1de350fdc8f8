#include "tactiforce/tactile_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tactiforce/errors.hpp"

namespace tactiforce {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

void GelConfig::validate() const {
  if (width_px < 8 || height_px < 8) throw DomainError("gel must be at least 8x8 pixels");
  if (!(pixel_pitch_mm > 0.0)) throw DomainError("pixel_pitch must be positive");
  if (!(max_indent_mm > 0.0)) throw DomainError("max_indent must be positive");
  if (!(smoothing_sigma_px >= 0.0)) throw DomainError("smoothing_sigma must be non-negative");
}

Point2 GelConfig::center_mm() const {
  return {0.5 * (width_px - 1) * pixel_pitch_mm, 0.5 * (height_px - 1) * pixel_pitch_mm};
}

double Indenter::footprint_radius_mm() const {
  return std::visit([](const auto& s) { return s.radius_mm; }, shape);
}

double Indenter::profile_mm(double r) const {
  return std::visit(
      [r](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Sphere>) {
          if (r >= s.radius_mm) return kInf;
          return s.radius_mm - std::sqrt(s.radius_mm * s.radius_mm - r * r);
        } else if constexpr (std::is_same_v<S, CylinderFlat>) {
          return r <= s.radius_mm ? 0.0 : kInf;
        } else {
          if (r > s.radius_mm || r >= s.cap_radius_mm) return kInf;
          return s.cap_radius_mm - std::sqrt(s.cap_radius_mm * s.cap_radius_mm - r * r);
        }
      },
      shape);
}

void Indenter::validate() const {
  const bool radii_ok = std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, CylinderCurved>) {
          return s.radius_mm > 0.0 && s.cap_radius_mm > 0.0;
        } else {
          return s.radius_mm > 0.0;
        }
      },
      shape);
  if (!radii_ok) throw DomainError("indenter radii must be positive");
  if (!(press_depth_mm >= 0.0)) throw DomainError("press_depth must be non-negative");
}

LightingModel LightingModel::ring(double elevation_deg, std::array<double, 3> azimuth_deg,
                                  double gain, double ambient) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  LightingModel lm;
  const double el = elevation_deg * kDeg;
  for (int l = 0; l < 3; ++l) {
    const double az = azimuth_deg[l] * kDeg;
    lm.lights[l].direction = {-std::cos(el) * std::cos(az), -std::cos(el) * std::sin(az),
                              -std::sin(el)};
    lm.lights[l].gain = {0.0, 0.0, 0.0};
    lm.lights[l].gain[l] = gain;
  }
  lm.ambient = {ambient, ambient, ambient};
  return lm;
}

LightingModel LightingModel::default_rig() { return ring(45.0, {0.0, 120.0, 240.0}, 0.6, 0.25); }

void LightingModel::validate() const {
  std::array<double, 3> total = ambient;
  for (const auto& light : lights) {
    if (std::abs(norm3(light.direction) - 1.0) > 1e-9) throw DomainError("light direction must be unit");
    if (!(light.direction[2] < 0.0)) throw DomainError("light direction must have negative z");
    for (int c = 0; c < 3; ++c) {
      if (light.gain[c] < 0.0 || light.gain[c] > 1.0) throw DomainError("light gain outside [0,1]");
      total[c] += light.gain[c];
    }
  }
  for (int c = 0; c < 3; ++c) {
    if (ambient[c] < 0.0 || ambient[c] > 1.0) throw DomainError("ambient outside [0,1]");
    if (total[c] > 1.0 + 1e-12) throw DomainError("ambient plus gains exceeds 1 in a channel");
  }
}

DepthMap indent_depth(const GelConfig& gel, const Indenter& indenter, Exec exec) {
  gel.validate();
  indenter.validate();
  if (indenter.press_depth_mm > gel.max_indent_mm) {
    throw DomainError("press_depth " + std::to_string(indenter.press_depth_mm) +
                      " mm exceeds max_indent " + std::to_string(gel.max_indent_mm) + " mm");
  }
  const double h = gel.pixel_pitch_mm;
  const double margin = 2.0 * h;
  const double a = indenter.footprint_radius_mm();
  const Point2 c = indenter.center_mm;
  if (c.x - a < margin || c.x + a > (gel.width_px - 3) * h || c.y - a < margin ||
      c.y + a > (gel.height_px - 3) * h) {
    throw DomainError("indenter footprint does not fit inside the gel with a 2-pixel margin");
  }

  Grid<double> raw(gel.height_px, gel.width_px, 0.0);
  const double press = indenter.press_depth_mm;
  const bool parallel = exec == Exec::Parallel;
  if (press > 0.0) {
#pragma omp parallel for if (parallel)
    for (int r = 0; r < gel.height_px; ++r) {
      const double dy = r * h - c.y;
      for (int col = 0; col < gel.width_px; ++col) {
        const double dx = col * h - c.x;
        const double p = indenter.profile_mm(std::sqrt(dx * dx + dy * dy));
        raw(r, col) = std::max(0.0, press - p);
      }
    }
  }

  DepthMap out{gaussian_blur(raw, gel.smoothing_sigma_px, exec), h};
  auto& v = out.values;
  for (int col = 0; col < v.cols(); ++col) {
    v(0, col) = 0.0;
    v(v.rows() - 1, col) = 0.0;
  }
  for (int r = 0; r < v.rows(); ++r) {
    v(r, 0) = 0.0;
    v(r, v.cols() - 1) = 0.0;
  }
  return out;
}

Grid<double> gaussian_blur(const Grid<double>& field, double sigma_px, Exec exec) {
  if (sigma_px <= 0.0) return field;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_px));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma_px * sigma_px));
    sum += kernel[k + radius];
  }
  for (double& w : kernel) w /= sum;

  const int rows = field.rows();
  const int cols = field.cols();
  const bool parallel = exec == Exec::Parallel;
  Grid<double> tmp(rows, cols, 0.0);
#pragma omp parallel for if (parallel)
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      const int k0 = std::max(-radius, -c);
      const int k1 = std::min(radius, cols - 1 - c);
      for (int k = k0; k <= k1; ++k) acc += kernel[k + radius] * field(r, c + k);
      tmp(r, c) = acc;
    }
  }
  Grid<double> out(rows, cols, 0.0);
#pragma omp parallel for if (parallel)
  for (int r = 0; r < rows; ++r) {
    const int k0 = std::max(-radius, -r);
    const int k1 = std::min(radius, rows - 1 - r);
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = k0; k <= k1; ++k) acc += kernel[k + radius] * tmp(r + k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

NormalMap normals_from_depth(const DepthMap& depth, Exec exec) {
  const auto& z = depth.values;
  const int rows = z.rows();
  const int cols = z.cols();
  const double h = depth.pixel_pitch_mm;
  NormalMap out{Grid<Vec3>(rows, cols, Vec3{0.0, 0.0, 1.0})};
  const bool parallel = exec == Exec::Parallel;
#pragma omp parallel for if (parallel)
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double dzdx = 0.0;
      double dzdy = 0.0;
      if (cols > 1) {
        if (c == 0) {
          dzdx = (z(r, 1) - z(r, 0)) / h;
        } else if (c == cols - 1) {
          dzdx = (z(r, c) - z(r, c - 1)) / h;
        } else {
          dzdx = (z(r, c + 1) - z(r, c - 1)) / (2.0 * h);
        }
      }
      if (rows > 1) {
        if (r == 0) {
          dzdy = (z(1, c) - z(0, c)) / h;
        } else if (r == rows - 1) {
          dzdy = (z(r, c) - z(r - 1, c)) / h;
        } else {
          dzdy = (z(r + 1, c) - z(r - 1, c)) / (2.0 * h);
        }
      }
      const double inv = 1.0 / std::sqrt(dzdx * dzdx + dzdy * dzdy + 1.0);
      out.vectors(r, c) = {-dzdx * inv, -dzdy * inv, inv};
    }
  }
  return out;
}

TactileFrame render(const NormalMap& normals, const LightingModel& lighting, Exec exec) {
  const auto& n = normals.vectors;
  TactileFrame frame{Grid<Rgb>(n.rows(), n.cols())};
  const bool parallel = exec == Exec::Parallel;
#pragma omp parallel for if (parallel)
  for (int r = 0; r < n.rows(); ++r) {
    for (int c = 0; c < n.cols(); ++c) {
      const Vec3& v = n(r, c);
      Rgb px = lighting.ambient;
      for (const auto& light : lighting.lights) {
        const double shade = std::max(
            0.0, -(v[0] * light.direction[0] + v[1] * light.direction[1] + v[2] * light.direction[2]));
        for (int ch = 0; ch < 3; ++ch) px[ch] += light.gain[ch] * shade;
      }
      for (double& ch : px) ch = std::clamp(ch, 0.0, 1.0);
      frame.pixels(r, c) = px;
    }
  }
  return frame;
}

double truth_force(const DepthMap& depth, const HertzParams& material) {
  double peak = 0.0;
  for (double d : depth.values.values()) peak = std::max(peak, d);
  return material.k * std::pow(peak, 1.5);
}

}  // namespace tactiforce
