#pragma once

// Depth reconstruction from a normal map: normals -> gradients -> divergence
// -> Dirichlet Poisson solve -> non-negative depth.

#include <map>
#include <memory>
#include <utility>

#include "tactiforce/dst.hpp"
#include "tactiforce/exec.hpp"
#include "tactiforce/grid.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

struct GradientField {
  Grid<double> gx;  // mm per mm
  Grid<double> gy;
  double pixel_pitch_mm = 0.05;
};

/// gx = n_x / n_z, gy = n_y / n_z with n_z floored at 0.05.
GradientField gradients_from_normals(const NormalMap& normals, double pixel_pitch_mm);

/// d(gx)/dx + d(gy)/dy by central differences (one-sided at the border), spacing = pitch.
Grid<double> divergence(const GradientField& gradients, Exec exec = Exec::Parallel);

/// Interior M x N block of a full H x W field (the outer ring dropped).
Grid<double> interior(const Grid<double>& field);

/// Signed surface height z with lap(z) = rhs on the interior and z = 0 on the
/// surrounding ring; output is (M + 2) x (N + 2). Indentation is negative.
Grid<double> solve_poisson(const Grid<double>& rhs, double spacing_mm, Exec exec = Exec::Parallel);
Grid<double> solve_poisson(const Grid<double>& rhs, const DstPlan& plan, Exec exec = Exec::Parallel);

/// depth = max(0, -z).
DepthMap depth_from_height(const Grid<double>& height, double pixel_pitch_mm);

DepthMap depth_from_normals(const NormalMap& normals, double pixel_pitch_mm, Exec exec = Exec::Parallel);

/// 3x3 median with edge replication.
Grid<double> median3x3(const Grid<double>& field);

/// Peak depth, optionally after a 3x3 median filter that rejects single-pixel spikes.
double max_depth(const DepthMap& depth, bool median_filter = true);

/// depth_from_normals with DstPlans cached per grid size. Not thread-safe;
/// use one instance per pipeline stage.
class DepthReconstructor {
 public:
  explicit DepthReconstructor(double pixel_pitch_mm, DstBackend backend = DstBackend::Auto)
      : pitch_(pixel_pitch_mm), backend_(backend) {}

  DepthMap reconstruct(const NormalMap& normals, Exec exec = Exec::Parallel);
  double pixel_pitch_mm() const { return pitch_; }

 private:
  const DstPlan& plan_for(int rows, int cols);

  double pitch_;
  DstBackend backend_;
  std::map<std::pair<int, int>, std::unique_ptr<DstPlan>> plans_;
};

}  // namespace tactiforce
