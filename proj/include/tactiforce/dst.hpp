#pragma once

// Type-I discrete sine transform and the spectral Dirichlet Poisson solver
// built on it.
//
// Convention: forward X_k = sum_{j=1..n} x_j sin(pi j k / (n + 1)); the
// inverse is (2 / (n + 1)) times the same sum. In 2-D both axes are
// transformed and the inverse scale is 4 / ((M + 1)(N + 1)).

#include <memory>
#include <span>
#include <vector>

#include "tactiforce/exec.hpp"
#include "tactiforce/grid.hpp"

namespace tactiforce {

enum class DstBackend {
  Auto,    // Matrix when both dimensions are <= 512, otherwise Fftw
  Direct,  // explicit O(n^2) sine sums per row and column (reference kernel)
  Matrix,  // the same sums as two dense GEMMs against the sine matrices
  Fftw,    // FFTW RODFT00
};

/// 1-D forward DST-I by direct summation.
void dst1_direct(std::span<const double> in, std::span<double> out);

/// Precomputed transforms and Laplacian eigenvalues for an M x N interior grid
/// with spacing h. Immutable after construction and shareable across threads.
class DstPlan {
 public:
  DstPlan(int rows, int cols, double spacing, DstBackend backend = DstBackend::Auto);
  ~DstPlan();
  DstPlan(const DstPlan&) = delete;
  DstPlan& operator=(const DstPlan&) = delete;
  DstPlan(DstPlan&&) noexcept;
  DstPlan& operator=(DstPlan&&) noexcept;

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double spacing() const { return spacing_; }
  DstBackend backend() const { return backend_; }

  /// lambda_i = 2 (cos(pi i / (M + 1)) - 1) / h^2, i = 1..M.
  double row_eigenvalue(int i) const { return row_eig_[i - 1]; }
  double col_eigenvalue(int j) const { return col_eig_[j - 1]; }

  /// In-place 2-D transforms of a rows x cols grid.
  void forward(Grid<double>& grid, Exec exec = Exec::Parallel) const;
  void inverse(Grid<double>& grid, Exec exec = Exec::Parallel) const;

  /// Solves the 5-point discrete Poisson equation lap(z) = rhs on the
  /// interior with z = 0 on the surrounding ring. rhs is rows x cols; the
  /// result is (rows + 2) x (cols + 2).
  Grid<double> solve(const Grid<double>& rhs, Exec exec = Exec::Parallel) const;

 private:
  void transform(Grid<double>& grid, Exec exec) const;
  void direct_2d(Grid<double>& grid, Exec exec) const;
  void matrix_2d(Grid<double>& grid) const;

  int rows_ = 0;
  int cols_ = 0;
  double spacing_ = 1.0;
  DstBackend backend_ = DstBackend::Direct;
  std::vector<double> row_eig_;
  std::vector<double> col_eig_;
  std::vector<double> row_sines_;  // rows x rows table sin(pi (i+1)(k+1) / (rows+1))
  std::vector<double> col_sines_;
  struct FftwPlan;
  std::unique_ptr<FftwPlan> fftw_;
};

}  // namespace tactiforce
