#pragma once

namespace tactiforce {

/// Selects between the serial reference loop and the OpenMP-parallel loop of a kernel.
/// Both produce identical results for per-pixel kernels.
enum class Exec { Serial, Parallel };

}  // namespace tactiforce
