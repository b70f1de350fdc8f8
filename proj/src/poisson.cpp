#include "tactiforce/poisson.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tactiforce/errors.hpp"

namespace tactiforce {

namespace {

constexpr double kMinNormalZ = 0.05;

double d_dx(const Grid<double>& f, int r, int c, double h) {
  const int cols = f.cols();
  if (cols == 1) return 0.0;
  if (c == 0) return (f(r, 1) - f(r, 0)) / h;
  if (c == cols - 1) return (f(r, c) - f(r, c - 1)) / h;
  return (f(r, c + 1) - f(r, c - 1)) / (2.0 * h);
}

double d_dy(const Grid<double>& f, int r, int c, double h) {
  const int rows = f.rows();
  if (rows == 1) return 0.0;
  if (r == 0) return (f(1, c) - f(0, c)) / h;
  if (r == rows - 1) return (f(r, c) - f(r - 1, c)) / h;
  return (f(r + 1, c) - f(r - 1, c)) / (2.0 * h);
}

// Branch-free 19-exchange median-of-9 network.
double median9(std::array<double, 9>& p) {
  auto sort2 = [&p](int a, int b) {
    const double lo = std::min(p[a], p[b]);
    p[b] = std::max(p[a], p[b]);
    p[a] = lo;
  };
  sort2(1, 2); sort2(4, 5); sort2(7, 8);
  sort2(0, 1); sort2(3, 4); sort2(6, 7);
  sort2(1, 2); sort2(4, 5); sort2(7, 8);
  sort2(0, 3); sort2(5, 8); sort2(4, 7);
  sort2(3, 6); sort2(1, 4); sort2(2, 5);
  sort2(4, 7); sort2(4, 2); sort2(6, 4);
  sort2(4, 2);
  return p[4];
}

}  // namespace

GradientField gradients_from_normals(const NormalMap& normals, double pixel_pitch_mm) {
  const auto& n = normals.vectors;
  GradientField g{Grid<double>(n.rows(), n.cols()), Grid<double>(n.rows(), n.cols()), pixel_pitch_mm};
  for (int r = 0; r < n.rows(); ++r) {
    for (int c = 0; c < n.cols(); ++c) {
      const Vec3& v = n(r, c);
      const double nz = std::max(v[2], kMinNormalZ);
      g.gx(r, c) = v[0] / nz;
      g.gy(r, c) = v[1] / nz;
    }
  }
  return g;
}

Grid<double> divergence(const GradientField& g, Exec exec) {
  if (!g.gx.same_shape(g.gy)) throw DomainError("divergence: gx and gy shapes differ");
  const double h = g.pixel_pitch_mm;
  Grid<double> out(g.gx.rows(), g.gx.cols());
  const bool parallel = exec == Exec::Parallel;
#pragma omp parallel for if (parallel)
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) out(r, c) = d_dx(g.gx, r, c, h) + d_dy(g.gy, r, c, h);
  }
  return out;
}

Grid<double> interior(const Grid<double>& field) {
  if (field.rows() < 3 || field.cols() < 3) throw DomainError("grid must be at least 3x3");
  Grid<double> out(field.rows() - 2, field.cols() - 2);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) out(r, c) = field(r + 1, c + 1);
  }
  return out;
}

Grid<double> solve_poisson(const Grid<double>& rhs, double spacing_mm, Exec exec) {
  if (rhs.rows() < 1 || rhs.cols() < 1) throw DomainError("solve_poisson: grid must be at least 3x3");
  const DstPlan plan(rhs.rows(), rhs.cols(), spacing_mm);
  return solve_poisson(rhs, plan, exec);
}

Grid<double> solve_poisson(const Grid<double>& rhs, const DstPlan& plan, Exec exec) {
  for (double v : rhs.values()) {
    if (!std::isfinite(v)) throw DomainError("solve_poisson: non-finite right-hand side");
  }
  return plan.solve(rhs, exec);
}

DepthMap depth_from_height(const Grid<double>& height, double pixel_pitch_mm) {
  DepthMap d{Grid<double>(height.rows(), height.cols(), 0.0), pixel_pitch_mm};
  auto out = d.values.values();
  auto in = height.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, -in[i]);
  return d;
}

DepthMap depth_from_normals(const NormalMap& normals, double pixel_pitch_mm, Exec exec) {
  DepthReconstructor reconstructor(pixel_pitch_mm);
  return reconstructor.reconstruct(normals, exec);
}

Grid<double> median3x3(const Grid<double>& field) {
  const int rows = field.rows();
  const int cols = field.cols();
  Grid<double> out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const int up = std::max(r - 1, 0);
    const int down = std::min(r + 1, rows - 1);
    for (int c = 0; c < cols; ++c) {
      const int left = std::max(c - 1, 0);
      const int right = std::min(c + 1, cols - 1);
      std::array<double, 9> w{field(up, left),   field(up, c),   field(up, right),
                              field(r, left),    field(r, c),    field(r, right),
                              field(down, left), field(down, c), field(down, right)};
      out(r, c) = median9(w);
    }
  }
  return out;
}

double max_depth(const DepthMap& depth, bool median_filter) {
  if (depth.values.empty()) return 0.0;
  const Grid<double> filtered = median_filter ? median3x3(depth.values) : depth.values;
  double peak = 0.0;
  for (double v : filtered.values()) peak = std::max(peak, v);
  return peak;
}

const DstPlan& DepthReconstructor::plan_for(int rows, int cols) {
  auto& slot = plans_[{rows, cols}];
  if (!slot) slot = std::make_unique<DstPlan>(rows, cols, pitch_, backend_);
  return *slot;
}

DepthMap DepthReconstructor::reconstruct(const NormalMap& normals, Exec exec) {
  const auto& n = normals.vectors;
  if (n.rows() < 3 || n.cols() < 3) throw DomainError("depth_from_normals: grid must be at least 3x3");
  const Grid<double> rhs = interior(divergence(gradients_from_normals(normals, pitch_), exec));
  const Grid<double> height = solve_poisson(rhs, plan_for(rhs.rows(), rhs.cols()), exec);
  return depth_from_height(height, pitch_);
}

}  // namespace tactiforce
