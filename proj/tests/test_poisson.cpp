#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "doctest.h"
#include "tactiforce/errors.hpp"
#include "tactiforce/poisson.hpp"
#include "tactiforce/random.hpp"
#include "tactiforce/vec3.hpp"

using namespace tactiforce;

namespace {

constexpr double kPi = std::numbers::pi;

Grid<double> random_grid(int rows, int cols, Rng& rng) {
  Grid<double> g(rows, cols);
  for (double& v : g.values()) v = uniform(rng, -1.0, 1.0);
  return g;
}

// Dense LU solve of the 5-point Dirichlet system, independent of any sine transform.
Grid<double> dense_solve(const Grid<double>& rhs, double h) {
  const int m = rhs.rows(), n = rhs.cols();
  const int size = m * n;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(size, size);
  Eigen::VectorXd b(size);
  auto idx = [n](int r, int c) { return r * n + c; };
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      const int i = idx(r, c);
      a(i, i) = -4.0 / (h * h);
      if (r > 0) a(i, idx(r - 1, c)) = 1.0 / (h * h);
      if (r < m - 1) a(i, idx(r + 1, c)) = 1.0 / (h * h);
      if (c > 0) a(i, idx(r, c - 1)) = 1.0 / (h * h);
      if (c < n - 1) a(i, idx(r, c + 1)) = 1.0 / (h * h);
      b(i) = rhs(r, c);
    }
  }
  const Eigen::VectorXd z = a.partialPivLu().solve(b);
  Grid<double> out(m + 2, n + 2, 0.0);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out(r + 1, c + 1) = z(idx(r, c));
  return out;
}

double max_abs_diff(const Grid<double>& a, const Grid<double>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double worst = 0.0;
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) worst = std::max(worst, std::abs(a(r, c) - b(r, c)));
  return worst;
}

double max_abs(const Grid<double>& a) {
  double worst = 0.0;
  for (double v : a.values()) worst = std::max(worst, std::abs(v));
  return worst;
}

GelConfig round_trip_gel() {
  GelConfig gel;
  gel.height_px = 120;
  gel.width_px = 160;
  gel.pixel_pitch_mm = 0.1;
  return gel;
}

DepthMap ball_press(const GelConfig& gel, double depth, Point2 at) {
  Indenter ball;
  ball.shape = Sphere{3.0};
  ball.center_mm = at;
  ball.press_depth_mm = depth;
  return indent_depth(gel, ball);
}

}  // namespace

TEST_SUITE("poisson-depth") {

TEST_CASE("spectral solve matches a dense 5-point solve") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 8 + static_cast<int>(rng() % 25);
    const int n = 8 + static_cast<int>(rng() % 25);
    const double h = uniform(rng, 0.05, 1.0);
    const Grid<double> rhs = random_grid(m, n, rng);
    const Grid<double> want = dense_solve(rhs, h);
    const Grid<double> got = solve_poisson(rhs, h);
    CHECK(max_abs_diff(got, want) <= 1e-9 * std::max(1.0, max_abs(want)));
  }
}

TEST_CASE("discrete eigenfunctions are recovered exactly") {
  for (auto [m, n, p, q] : {std::array{9, 13, 1, 1}, std::array{16, 16, 3, 7}, std::array{31, 12, 30, 11}}) {
    const double h = 0.2;
    Grid<double> rhs(m, n);
    for (int i = 1; i <= m; ++i)
      for (int j = 1; j <= n; ++j) rhs(i - 1, j - 1) = std::sin(kPi * p * i / (m + 1)) * std::sin(kPi * q * j / (n + 1));
    const double lambda = (2.0 * (std::cos(kPi * p / (m + 1)) - 1.0) + 2.0 * (std::cos(kPi * q / (n + 1)) - 1.0)) / (h * h);
    const Grid<double> z = solve_poisson(rhs, h);
    double worst = 0.0;
    for (int i = 1; i <= m; ++i)
      for (int j = 1; j <= n; ++j) worst = std::max(worst, std::abs(z(i, j) - rhs(i - 1, j - 1) / lambda));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("plan eigenvalues follow the cosine formula") {
  const DstPlan plan(10, 20, 0.5, DstBackend::Direct);
  CHECK(plan.row_eigenvalue(1) == doctest::Approx(2.0 * (std::cos(kPi / 11.0) - 1.0) / 0.25));
  CHECK(plan.col_eigenvalue(20) == doctest::Approx(2.0 * (std::cos(20.0 * kPi / 21.0) - 1.0) / 0.25));
}

TEST_CASE("one-dimensional DST-I by direct sums") {
  std::vector<double> out(1);
  dst1_direct(std::vector<double>{2.5}, out);
  CHECK(out[0] == doctest::Approx(2.5));
  // n = 3: sin(pi j k / 4) table.
  const double s = std::sqrt(0.5);
  const std::vector<double> x{1.0, 2.0, 3.0};
  out.assign(3, 0.0);
  dst1_direct(x, out);
  CHECK(out[0] == doctest::Approx(s + 2.0 + 3.0 * s));
  CHECK(out[1] == doctest::Approx(1.0 + 0.0 - 3.0));
  CHECK(out[2] == doctest::Approx(s - 2.0 + 3.0 * s));
}

TEST_CASE("direct, matrix and fftw backends agree") {
  Rng rng(5);
  for (auto [m, n] : {std::pair{8, 8}, std::pair{13, 29}, std::pair{40, 17}}) {
    const Grid<double> rhs = random_grid(m, n, rng);
    const DstPlan direct(m, n, 0.3, DstBackend::Direct);
    const DstPlan matrix(m, n, 0.3, DstBackend::Matrix);
    const DstPlan fftw(m, n, 0.3, DstBackend::Fftw);
    const Grid<double> ref = solve_poisson(rhs, direct);
    CHECK(max_abs_diff(solve_poisson(rhs, matrix), ref) <= 1e-10 * max_abs(ref));
    CHECK(max_abs_diff(solve_poisson(rhs, fftw), ref) <= 1e-10 * max_abs(ref));
    CHECK(max_abs_diff(solve_poisson(rhs, fftw, Exec::Serial), solve_poisson(rhs, fftw, Exec::Parallel)) == 0.0);
  }
}

TEST_CASE("auto backend picks matrix for small grids") {
  CHECK(DstPlan(240, 320, 1.0).backend() == DstBackend::Matrix);
  CHECK(DstPlan(8, 600, 1.0).backend() == DstBackend::Fftw);
}

TEST_CASE("inverse undoes forward for every backend") {
  Rng rng(6);
  for (DstBackend b : {DstBackend::Direct, DstBackend::Matrix, DstBackend::Fftw}) {
    const Grid<double> x = random_grid(11, 19, rng);
    const DstPlan plan(11, 19, 1.0, b);
    Grid<double> y = x;
    plan.forward(y);
    plan.inverse(y);
    CHECK(max_abs_diff(x, y) < 1e-12);
  }
}

TEST_CASE("solve is linear in the right-hand side") {
  Rng rng(7);
  const Grid<double> a = random_grid(20, 14, rng);
  const Grid<double> b = random_grid(20, 14, rng);
  Grid<double> combo(20, 14);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 14; ++c) combo(r, c) = 2.0 * a(r, c) - 0.5 * b(r, c);
  const Grid<double> za = solve_poisson(a, 0.1);
  const Grid<double> zb = solve_poisson(b, 0.1);
  const Grid<double> zc = solve_poisson(combo, 0.1);
  double worst = 0.0;
  for (int r = 0; r < 22; ++r)
    for (int c = 0; c < 16; ++c) worst = std::max(worst, std::abs(zc(r, c) - (2.0 * za(r, c) - 0.5 * zb(r, c))));
  CHECK(worst < 1e-12 * max_abs(zc) + 1e-15);
}

TEST_CASE("solution satisfies the stencil and the zero boundary") {
  Rng rng(8);
  const double h = 0.25;
  const Grid<double> rhs = random_grid(24, 31, rng);
  const Grid<double> z = solve_poisson(rhs, h);
  REQUIRE(z.rows() == 26);
  REQUIRE(z.cols() == 33);
  for (int c = 0; c < 33; ++c) CHECK((z(0, c) == 0.0 && z(25, c) == 0.0));
  for (int r = 0; r < 26; ++r) CHECK((z(r, 0) == 0.0 && z(r, 32) == 0.0));
  double worst = 0.0;
  for (int r = 1; r <= 24; ++r) {
    for (int c = 1; c <= 31; ++c) {
      const double lap = (z(r - 1, c) + z(r + 1, c) + z(r, c - 1) + z(r, c + 1) - 4.0 * z(r, c)) / (h * h);
      worst = std::max(worst, std::abs(lap - rhs(r - 1, c - 1)));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("zero right-hand side gives zero height") {
  CHECK(max_abs(solve_poisson(Grid<double>(9, 12, 0.0), 0.1)) == 0.0);
}

TEST_CASE("mismatched plan and rhs shapes are rejected") {
  const DstPlan plan(8, 9, 1.0);
  CHECK_THROWS_AS(solve_poisson(Grid<double>(9, 8, 0.0), plan), DomainError);
}

TEST_CASE("gradients from tilted normals") {
  const double a = 0.4, b = -0.2;
  const Vec3 n = normalized({a, b, 1.0});
  const NormalMap map{Grid<Vec3>(5, 6, n)};
  const GradientField g = gradients_from_normals(map, 0.1);
  for (double v : g.gx.values()) CHECK(v == doctest::Approx(a).epsilon(1e-12));
  for (double v : g.gy.values()) CHECK(v == doctest::Approx(b).epsilon(1e-12));
  const NormalMap flat_on_side{Grid<Vec3>(3, 3, Vec3{1.0, 0.0, 0.0})};
  CHECK(gradients_from_normals(flat_on_side, 0.1).gx(1, 1) == doctest::Approx(20.0));
}

TEST_CASE("divergence of polynomial fields") {
  const double h = 0.1;
  GradientField g{Grid<double>(8, 10), Grid<double>(8, 10), h};
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 10; ++c) {
      g.gx(r, c) = 3.0 * c * h;
      g.gy(r, c) = -1.0 * r * h;
    }
  }
  const Grid<double> linear = divergence(g);
  for (double v : linear.values()) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
  // Central differences are exact on quadratics in the interior.
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 10; ++c) {
      const double x = c * h;
      g.gx(r, c) = x * x;
      g.gy(r, c) = 0.0;
    }
  const Grid<double> d = divergence(g);
  for (int r = 0; r < 8; ++r)
    for (int c = 1; c < 9; ++c) CHECK(d(r, c) == doctest::Approx(2.0 * c * h).epsilon(1e-12));
  CHECK(divergence(g, Exec::Serial) == divergence(g, Exec::Parallel));
}

TEST_CASE("interior drops the outer ring") {
  Grid<double> f(4, 5);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) f(r, c) = 10 * r + c;
  const Grid<double> in = interior(f);
  REQUIRE(in.rows() == 2);
  REQUIRE(in.cols() == 3);
  CHECK(in(0, 0) == 11.0);
  CHECK(in(1, 2) == 23.0);
}

TEST_CASE("depth is the clipped negative height") {
  Grid<double> z(2, 2);
  z(0, 0) = -0.5;
  z(0, 1) = 0.25;
  z(1, 0) = 0.0;
  z(1, 1) = -1e-3;
  const DepthMap d = depth_from_height(z, 0.1);
  CHECK(d.values(0, 0) == 0.5);
  CHECK(d.values(0, 1) == 0.0);
  CHECK(d.values(1, 1) == 1e-3);
  CHECK(d.pixel_pitch_mm == 0.1);
}

TEST_CASE("3x3 median matches a brute-force oracle with edge replication") {
  Rng rng(12);
  const Grid<double> f = random_grid(9, 13, rng);
  const Grid<double> m = median3x3(f);
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 13; ++c) {
      std::vector<double> window;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) window.push_back(f(std::clamp(r + dr, 0, 8), std::clamp(c + dc, 0, 12)));
      std::nth_element(window.begin(), window.begin() + 4, window.end());
      CHECK(m(r, c) == window[4]);
    }
  }
}

TEST_CASE("median filter rejects a single-pixel spike") {
  DepthMap d{Grid<double>(10, 10, 0.0), 0.1};
  for (int r = 3; r < 7; ++r)
    for (int c = 3; c < 7; ++c) d.values(r, c) = 0.4;
  d.values(1, 8) = 5.0;
  CHECK(max_depth(d, false) == 5.0);
  CHECK(max_depth(d, true) == 0.4);
}

TEST_CASE("ground-truth sphere normals integrate back to the press depth") {
  const GelConfig gel = round_trip_gel();
  DepthReconstructor rec(gel.pixel_pitch_mm);
  int within = 0, total = 0;
  for (double depth = 0.2; depth <= 1.2 + 1e-9; depth += 0.1) {
    for (Point2 at : {gel.center_mm(), Point2{6.0, 5.0}, Point2{10.0, 7.0}}) {
      const DepthMap truth = ball_press(gel, depth, at);
      const DepthMap got = rec.reconstruct(normals_from_depth(truth));
      const double err = std::abs(max_depth(got) - max_depth(truth)) / max_depth(truth);
      within += err < 0.05;
      ++total;
    }
  }
  CHECK(within == total);
}

TEST_CASE("flat normals reconstruct to zero depth") {
  const NormalMap flat{Grid<Vec3>(40, 50, Vec3{0.0, 0.0, 1.0})};
  CHECK(max_depth(depth_from_normals(flat, 0.1)) == 0.0);
}

TEST_CASE("reconstructor caches plans and matches the free function") {
  const GelConfig gel = round_trip_gel();
  const NormalMap n = normals_from_depth(ball_press(gel, 0.7, gel.center_mm()));
  DepthReconstructor rec(gel.pixel_pitch_mm, DstBackend::Fftw);
  const DepthMap a = rec.reconstruct(n);
  const DepthMap b = rec.reconstruct(n);
  CHECK(a.values == b.values);
  const DepthMap c = depth_from_normals(n, gel.pixel_pitch_mm);
  CHECK(max_abs_diff(a.values, c.values) < 1e-10);
  CHECK(rec.reconstruct(n, Exec::Serial).values == rec.reconstruct(n, Exec::Parallel).values);
}

}  // TEST_SUITE
