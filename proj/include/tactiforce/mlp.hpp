#pragma once

// Per-pixel (R,G,B,X,Y) -> surface normal regressor: a 5-h1-h2-3 perceptron
// with ReLU hidden layers, inverted dropout, MSE loss and Adam.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "tactiforce/exec.hpp"
#include "tactiforce/grid.hpp"
#include "tactiforce/random.hpp"
#include "tactiforce/tactile_sim.hpp"

namespace tactiforce {

using Input5 = std::array<double, 5>;

/// Weights are stored fan_in x fan_out so a batch propagates as X * W + b.
struct MlpParams {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::RowVectorXd b1, b2, b3;

  static MlpParams zeros(int hidden1, int hidden2);
  /// U(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
  static MlpParams he_uniform(int hidden1, int hidden2, std::uint64_t seed);

  int hidden1() const { return static_cast<int>(w1.cols()); }
  int hidden2() const { return static_cast<int>(w2.cols()); }
  bool all_finite() const;
  bool same_shape(const MlpParams& other) const;

  bool operator==(const MlpParams& other) const;
};

/// Calls f(a_tensor, b_tensor) for each of the six tensors of a and b in layer order.
template <typename A, typename B, typename F>
void zip_tensors(A& a, B& b, F&& f) {
  f(a.w1, b.w1);
  f(a.b1, b.b1);
  f(a.w2, b.w2);
  f(a.b2, b.b2);
  f(a.w3, b.w3);
  f(a.b3, b.b3);
}

struct TrainSample {
  Input5 input{};   // r, g, b, x_norm, y_norm
  Vec3 target{};    // unit normal
};

struct TrainConfig {
  double lr = 0.001;
  double dropout_rate = 0.05;
  // Trailing epochs trained without dropout. Dropout shrinks regression
  // outputs toward zero; a short dropout-free finish removes that bias.
  int dropout_free_epochs = 1;
  int epochs = 5;
  int batch_size = 256;
  int hidden1 = 64;
  int hidden2 = 64;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Keep masks (entries 0 or 1) for both hidden layers, one row per batch sample.
struct DropoutMasks {
  double rate = 0.0;
  Eigen::MatrixXd keep1;
  Eigen::MatrixXd keep2;
};

DropoutMasks sample_dropout_masks(int batch, int hidden1, int hidden2, double rate, Rng& rng);

/// Batch forward pass. masks == nullptr is inference mode (no dropout, no
/// rescaling); otherwise kept activations are scaled by 1/(1 - rate).
Eigen::MatrixXd forward(const MlpParams& params, const Eigen::MatrixXd& inputs,
                        const DropoutMasks* masks = nullptr);

/// Single-sample forward; uses row `mask_row` of the masks in train mode.
Vec3 forward(const MlpParams& params, const Input5& input, const DropoutMasks* masks = nullptr,
             int mask_row = 0);

/// Mean over all elements of the squared difference.
double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

/// Exact gradient of mse_loss(forward(params, inputs, masks), targets).
MlpParams backward(const MlpParams& params, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets, const DropoutMasks* masks = nullptr,
                   double* loss = nullptr);

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::int64_t t = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState fresh(const MlpParams& like, double lr = 0.001);
};

/// One bias-corrected Adam update of params in place; increments state.t.
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  MlpParams params;
  std::vector<double> loss_history;  // mean minibatch loss per epoch
};

/// Deterministic given cfg.seed. Throws TrainingDiverged on a non-finite loss.
TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg);

/// Network input for pixel (r, c) of a rows x cols frame.
Input5 pixel_input(const Rgb& rgb, int r, int c, int rows, int cols);

/// Clamps n_z to >= 0.05 and projects onto the unit sphere.
Vec3 finalize_normal(const Vec3& raw);

/// Single-precision batched evaluator for whole frames. Immutable once built;
/// predict() may be called concurrently.
class MlpInference {
 public:
  explicit MlpInference(const MlpParams& params);
  NormalMap predict(const TactileFrame& frame, Exec exec = Exec::Parallel) const;

 private:
  Eigen::MatrixXf w1_, w2_, w3_;
  Eigen::RowVectorXf b1_, b2_, b3_;
};

NormalMap predict_normal_map(const MlpParams& params, const TactileFrame& frame,
                             Exec exec = Exec::Parallel);

/// Serial double-precision per-pixel reference for predict_normal_map.
NormalMap predict_normal_map_reference(const MlpParams& params, const TactileFrame& frame);

// Checkpoint: "MLP1", u32 LE layer count, per layer u32 rows, u32 cols, then
// float64 LE row-major weights followed by the float64 LE bias vector.
std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params);
MlpParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const MlpParams& params);
MlpParams read_checkpoint(const std::filesystem::path& path);

}  // namespace tactiforce
