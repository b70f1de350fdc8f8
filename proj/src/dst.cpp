#include "tactiforce/dst.hpp"

#include <fftw3.h>

#include <Eigen/Core>

#include <cmath>
#include <mutex>
#include <numbers>

#include "tactiforce/errors.hpp"

namespace tactiforce {

namespace {

constexpr int kMatrixLimit = 512;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// The FFTW planner is not re-entrant; execution with fftw_execute_r2r is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<double> sine_table(int n) {
  std::vector<double> table(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      // Reduce (i+1)(k+1) mod 2(n+1) so the argument stays in [0, 2 pi).
      const long long m = (static_cast<long long>(i + 1) * (k + 1)) % (2LL * (n + 1));
      table[static_cast<std::size_t>(i) * n + k] = std::sin(std::numbers::pi * static_cast<double>(m) / (n + 1));
    }
  }
  return table;
}

std::vector<double> laplacian_eigenvalues(int n, double h) {
  std::vector<double> eig(n);
  for (int i = 1; i <= n; ++i) eig[i - 1] = 2.0 * (std::cos(std::numbers::pi * i / (n + 1)) - 1.0) / (h * h);
  return eig;
}

}  // namespace

void dst1_direct(std::span<const double> in, std::span<double> out) {
  const std::size_t n = in.size();
  if (out.size() != n) throw DomainError("dst1_direct: size mismatch");
  if (in.data() == out.data()) throw DomainError("dst1_direct: in and out must not alias");
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto m = ((j + 1) * (k + 1)) % (2 * (n + 1));
      acc += in[j] * std::sin(std::numbers::pi * static_cast<double>(m) / static_cast<double>(n + 1));
    }
    out[k] = acc;
  }
}

struct DstPlan::FftwPlan {
  fftw_plan plan = nullptr;
  ~FftwPlan() {
    if (plan) {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
  }
};

DstPlan::DstPlan(int rows, int cols, double spacing, DstBackend backend)
    : rows_(rows), cols_(cols), spacing_(spacing) {
  if (rows < 1 || cols < 1) throw DomainError("DstPlan: interior grid must be at least 1x1");
  if (!(spacing > 0.0)) throw DomainError("DstPlan: spacing must be positive");
  if (backend == DstBackend::Auto) {
    backend = (rows <= kMatrixLimit && cols <= kMatrixLimit) ? DstBackend::Matrix : DstBackend::Fftw;
  }
  backend_ = backend;
  row_eig_ = laplacian_eigenvalues(rows, spacing);
  col_eig_ = laplacian_eigenvalues(cols, spacing);
  if (backend_ == DstBackend::Direct || backend_ == DstBackend::Matrix) {
    row_sines_ = sine_table(rows);
    col_sines_ = sine_table(cols);
  } else {
    std::vector<double> scratch(static_cast<std::size_t>(rows) * cols);
    fftw_ = std::make_unique<FftwPlan>();
    std::lock_guard lock(planner_mutex());
    fftw_->plan = fftw_plan_r2r_2d(rows, cols, scratch.data(), scratch.data(), FFTW_RODFT00, FFTW_RODFT00,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!fftw_->plan) throw std::runtime_error("FFTW failed to create a DST-I plan");
  }
}

DstPlan::~DstPlan() = default;
DstPlan::DstPlan(DstPlan&&) noexcept = default;
DstPlan& DstPlan::operator=(DstPlan&&) noexcept = default;

void DstPlan::direct_2d(Grid<double>& grid, Exec exec) const {
  const int m = rows_;
  const int n = cols_;
  const bool parallel = exec == Exec::Parallel;
  Grid<double> tmp(m, n, 0.0);
  // Rows: tmp(r, k) = sum_j grid(r, j) S_n(j, k)
#pragma omp parallel for if (parallel)
  for (int r = 0; r < m; ++r) {
    double* out = &tmp(r, 0);
    for (int j = 0; j < n; ++j) {
      const double g = grid(r, j);
      const double* s = &col_sines_[static_cast<std::size_t>(j) * n];
      for (int k = 0; k < n; ++k) out[k] += g * s[k];
    }
  }
  // Columns: grid(k, c) = sum_j S_m(k, j) tmp(j, c)
#pragma omp parallel for if (parallel)
  for (int k = 0; k < m; ++k) {
    double* out = &grid(k, 0);
    for (int c = 0; c < n; ++c) out[c] = 0.0;
    const double* s = &row_sines_[static_cast<std::size_t>(k) * m];
    for (int j = 0; j < m; ++j) {
      const double w = s[j];
      const double* in = &tmp(j, 0);
      for (int c = 0; c < n; ++c) out[c] += w * in[c];
    }
  }
}

void DstPlan::matrix_2d(Grid<double>& grid) const {
  // The sine matrices are symmetric, so the 2-D transform is S_m X S_n.
  Eigen::Map<RowMajor> x(grid.values().data(), rows_, cols_);
  const Eigen::Map<const RowMajor> sm(row_sines_.data(), rows_, rows_);
  const Eigen::Map<const RowMajor> sn(col_sines_.data(), cols_, cols_);
  RowMajor tmp(rows_, cols_);
  tmp.noalias() = x * sn;
  x.noalias() = sm * tmp;
}

void DstPlan::transform(Grid<double>& grid, Exec exec) const {
  if (grid.rows() != rows_ || grid.cols() != cols_) throw DomainError("DstPlan: grid shape mismatch");
  if (backend_ == DstBackend::Direct) {
    direct_2d(grid, exec);
  } else if (backend_ == DstBackend::Matrix) {
    matrix_2d(grid);
  } else {
    double* data = grid.values().data();
    fftw_execute_r2r(fftw_->plan, data, data);
    // RODFT00 carries a factor 2 per axis.
    for (double& v : grid.values()) v *= 0.25;
  }
}

void DstPlan::forward(Grid<double>& grid, Exec exec) const { transform(grid, exec); }

void DstPlan::inverse(Grid<double>& grid, Exec exec) const {
  transform(grid, exec);
  const double scale = 4.0 / (static_cast<double>(rows_ + 1) * (cols_ + 1));
  for (double& v : grid.values()) v *= scale;
}

Grid<double> DstPlan::solve(const Grid<double>& rhs, Exec exec) const {
  Grid<double> work = rhs;
  forward(work, exec);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) work(i, j) /= row_eig_[i] + col_eig_[j];
  }
  inverse(work, exec);
  Grid<double> z(rows_ + 2, cols_ + 2, 0.0);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) z(i + 1, j + 1) = work(i, j);
  }
  return z;
}

}  // namespace tactiforce
