#include "tactiforce/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "tactiforce/errors.hpp"
#include "tactiforce/vec3.hpp"

namespace tactiforce {

namespace {

constexpr int kInputs = 5;
constexpr int kOutputs = 3;
constexpr double kMinNormalZ = 0.05;
constexpr int kInferenceChunk = 1024;

// Intermediate activations of one batch. Reused across minibatches so large
// batches do not allocate per step.
struct Workspace {
  Eigen::MatrixXd z1, a1, z2, a2, y;
  Eigen::MatrixXd dy, da2, dz2, da1, dz1;
};

void propagate(const MlpParams& p, const Eigen::MatrixXd& x, const DropoutMasks* masks, Workspace& ws) {
  ws.z1.noalias() = x * p.w1;
  ws.z1.rowwise() += p.b1;
  ws.a1 = ws.z1.cwiseMax(0.0);
  if (masks) ws.a1 = ws.a1.cwiseProduct(masks->keep1) / (1.0 - masks->rate);
  ws.z2.noalias() = ws.a1 * p.w2;
  ws.z2.rowwise() += p.b2;
  ws.a2 = ws.z2.cwiseMax(0.0);
  if (masks) ws.a2 = ws.a2.cwiseProduct(masks->keep2) / (1.0 - masks->rate);
  ws.y.noalias() = ws.a2 * p.w3;
  ws.y.rowwise() += p.b3;
}

// Gradient of mean((y - t)^2) into g, which must already have the parameter shapes.
void backpropagate(const MlpParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t,
                   const DropoutMasks* masks, Workspace& ws, MlpParams& g) {
  const double scale = masks ? 1.0 / (1.0 - masks->rate) : 1.0;
  ws.dy = (2.0 / static_cast<double>(ws.y.size())) * (ws.y - t);
  g.w3.noalias() = ws.a2.transpose() * ws.dy;
  g.b3 = ws.dy.colwise().sum();

  ws.da2.noalias() = ws.dy * p.w3.transpose();
  if (masks) ws.da2 = ws.da2.cwiseProduct(masks->keep2) * scale;
  ws.dz2 = (ws.z2.array() > 0.0).select(ws.da2.array(), 0.0).matrix();
  g.w2.noalias() = ws.a1.transpose() * ws.dz2;
  g.b2 = ws.dz2.colwise().sum();

  ws.da1.noalias() = ws.dz2 * p.w2.transpose();
  if (masks) ws.da1 = ws.da1.cwiseProduct(masks->keep1) * scale;
  ws.dz1 = (ws.z1.array() > 0.0).select(ws.da1.array(), 0.0).matrix();
  g.w1.noalias() = x.transpose() * ws.dz1;
  g.b1 = ws.dz1.colwise().sum();
}

void check_masks(const DropoutMasks* masks, Eigen::Index batch, const MlpParams& p) {
  if (!masks) return;
  if (masks->keep1.rows() != batch || masks->keep1.cols() != p.hidden1() ||
      masks->keep2.rows() != batch || masks->keep2.cols() != p.hidden2()) {
    throw DomainError("dropout mask shape does not match batch and hidden sizes");
  }
  if (!(masks->rate >= 0.0 && masks->rate < 1.0)) throw DomainError("dropout rate outside [0,1)");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
    return std::bit_cast<double>(v);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("MLP1: truncated checkpoint");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

MlpParams MlpParams::zeros(int hidden1, int hidden2) {
  if (hidden1 < 1 || hidden2 < 1) throw DomainError("hidden sizes must be >= 1");
  MlpParams p;
  p.w1 = Eigen::MatrixXd::Zero(kInputs, hidden1);
  p.b1 = Eigen::RowVectorXd::Zero(hidden1);
  p.w2 = Eigen::MatrixXd::Zero(hidden1, hidden2);
  p.b2 = Eigen::RowVectorXd::Zero(hidden2);
  p.w3 = Eigen::MatrixXd::Zero(hidden2, kOutputs);
  p.b3 = Eigen::RowVectorXd::Zero(kOutputs);
  return p;
}

MlpParams MlpParams::he_uniform(int hidden1, int hidden2, std::uint64_t seed) {
  MlpParams p = zeros(hidden1, hidden2);
  Rng rng(seed);
  auto fill = [&rng](Eigen::MatrixXd& w) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows()));
    // Row-major fill order so the draw sequence matches the checkpoint layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform(rng, -limit, limit);
    }
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w3);
  return p;
}

bool MlpParams::all_finite() const {
  return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() && b2.allFinite() &&
         b3.allFinite();
}

bool MlpParams::same_shape(const MlpParams& o) const {
  bool same = true;
  zip_tensors(*this, o, [&same](const auto& a, const auto& b) {
    same = same && a.rows() == b.rows() && a.cols() == b.cols();
  });
  return same;
}

bool MlpParams::operator==(const MlpParams& o) const {
  if (!same_shape(o)) return false;
  bool equal = true;
  zip_tensors(*this, o, [&equal](const auto& a, const auto& b) { equal = equal && a == b; });
  return equal;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("lr must be finite and >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must be in [0,1)");
  if (epochs < 1) throw DomainError("epochs must be ≥ 1");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (dropout_free_epochs < 0) throw DomainError("dropout_free_epochs must be >= 0");
  if (hidden1 < 1 || hidden2 < 1) throw DomainError("hidden sizes must be >= 1");
}

namespace {

void fill_dropout_masks(DropoutMasks& masks, int batch, int hidden1, int hidden2, double rate, Rng& rng) {
  masks.rate = rate;
  masks.keep1.resize(batch, hidden1);
  masks.keep2.resize(batch, hidden2);
  for (Eigen::Index r = 0; r < batch; ++r) {
    for (Eigen::Index c = 0; c < hidden1; ++c) masks.keep1(r, c) = uniform01(rng) >= rate ? 1.0 : 0.0;
    for (Eigen::Index c = 0; c < hidden2; ++c) masks.keep2(r, c) = uniform01(rng) >= rate ? 1.0 : 0.0;
  }
}

}  // namespace

DropoutMasks sample_dropout_masks(int batch, int hidden1, int hidden2, double rate, Rng& rng) {
  DropoutMasks masks;
  fill_dropout_masks(masks, batch, hidden1, hidden2, rate, rng);
  return masks;
}

Eigen::MatrixXd forward(const MlpParams& params, const Eigen::MatrixXd& inputs,
                        const DropoutMasks* masks) {
  if (inputs.cols() != kInputs) throw DomainError("forward expects 5 input columns");
  check_masks(masks, inputs.rows(), params);
  Workspace ws;
  propagate(params, inputs, masks, ws);
  return ws.y;
}

Vec3 forward(const MlpParams& params, const Input5& input, const DropoutMasks* masks, int mask_row) {
  Eigen::MatrixXd x(1, kInputs);
  for (int i = 0; i < kInputs; ++i) x(0, i) = input[i];
  Eigen::MatrixXd y;
  if (masks) {
    if (mask_row < 0 || mask_row >= masks->keep1.rows()) throw DomainError("mask row out of range");
    DropoutMasks row{masks->rate, masks->keep1.row(mask_row), masks->keep2.row(mask_row)};
    y = forward(params, x, &row);
  } else {
    y = forward(params, x, nullptr);
  }
  return {y(0, 0), y(0, 1), y(0, 2)};
}

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DomainError("mse_loss: prediction and target shapes differ");
  }
  if (pred.size() == 0) throw DomainError("mse_loss: empty batch");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

MlpParams backward(const MlpParams& params, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets, const DropoutMasks* masks, double* loss) {
  if (inputs.rows() == 0) throw DomainError("backward: empty batch");
  if (inputs.cols() != kInputs || targets.cols() != kOutputs || targets.rows() != inputs.rows()) {
    throw DomainError("backward: batch shapes inconsistent");
  }
  check_masks(masks, inputs.rows(), params);
  Workspace ws;
  propagate(params, inputs, masks, ws);
  if (loss) *loss = mse_loss(ws.y, targets);
  MlpParams g = MlpParams::zeros(params.hidden1(), params.hidden2());
  backpropagate(params, inputs, targets, masks, ws, g);
  return g;
}

AdamState AdamState::fresh(const MlpParams& like, double lr) {
  AdamState s;
  s.m = MlpParams::zeros(like.hidden1(), like.hidden2());
  s.v = s.m;
  s.lr = lr;
  return s;
}

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw DomainError("adam_step: shape mismatch");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double lr = state.lr;
  const double eps = state.epsilon;

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / correction1;
    const auto v_hat = v.array() / correction2;
    p.array() -= lr * m_hat / (v_hat.sqrt() + eps);
  };
  update(params.w1, grads.w1, state.m.w1, state.v.w1);
  update(params.b1, grads.b1, state.m.b1, state.v.b1);
  update(params.w2, grads.w2, state.m.w2, state.v.w2);
  update(params.b2, grads.b2, state.m.b2, state.v.b2);
  update(params.w3, grads.w3, state.m.w3, state.v.w3);
  update(params.b3, grads.b3, state.m.b3, state.v.b3);
}

TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DomainError("train: empty dataset");

  TrainResult result{MlpParams::he_uniform(cfg.hidden1, cfg.hidden2, cfg.seed), {}};
  AdamState adam = AdamState::fresh(result.params, cfg.lr);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = dataset.size();
  Eigen::MatrixXd x;
  Eigen::MatrixXd t;
  Workspace ws;
  MlpParams grads = MlpParams::zeros(cfg.hidden1, cfg.hidden2);
  DropoutMasks masks;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    seeded_shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto batch = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, n - start));
      x.resize(batch, kInputs);
      t.resize(batch, kOutputs);
      for (Eigen::Index i = 0; i < batch; ++i) {
        const TrainSample& s = dataset[order[start + static_cast<std::size_t>(i)]];
        for (int k = 0; k < kInputs; ++k) x(i, k) = s.input[k];
        for (int k = 0; k < kOutputs; ++k) t(i, k) = s.target[k];
      }
      const DropoutMasks* active = nullptr;
      const bool dropout_on = epoch < cfg.epochs - cfg.dropout_free_epochs;
      if (cfg.dropout_rate > 0.0 && dropout_on) {
        fill_dropout_masks(masks, static_cast<int>(batch), cfg.hidden1, cfg.hidden2, cfg.dropout_rate, rng);
        active = &masks;
      }
      propagate(result.params, x, active, ws);
      const double loss = mse_loss(ws.y, t);
      backpropagate(result.params, x, t, active, ws, grads);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      adam_step(result.params, grads, adam);
      epoch_loss += loss * static_cast<double>(batch);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  if (!result.params.all_finite()) throw TrainingDiverged("training diverged: non-finite parameters");
  return result;
}

Input5 pixel_input(const Rgb& rgb, int r, int c, int rows, int cols) {
  const double xn = cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0;
  const double yn = rows > 1 ? static_cast<double>(r) / (rows - 1) : 0.0;
  return {rgb[0], rgb[1], rgb[2], xn, yn};
}

Vec3 finalize_normal(const Vec3& raw) {
  Vec3 v{raw[0], raw[1], std::max(raw[2], kMinNormalZ)};
  return normalized(v);
}

MlpInference::MlpInference(const MlpParams& params)
    : w1_(params.w1.cast<float>()),
      w2_(params.w2.cast<float>()),
      w3_(params.w3.cast<float>()),
      b1_(params.b1.cast<float>()),
      b2_(params.b2.cast<float>()),
      b3_(params.b3.cast<float>()) {}

NormalMap MlpInference::predict(const TactileFrame& frame, Exec exec) const {
  const auto& px = frame.pixels;
  const int rows = px.rows();
  const int cols = px.cols();
  const int total = rows * cols;
  NormalMap out{Grid<Vec3>(rows, cols)};
  const int chunks = (total + kInferenceChunk - 1) / kInferenceChunk;
  const bool parallel = exec == Exec::Parallel;
  const float xs = cols > 1 ? 1.0f / static_cast<float>(cols - 1) : 0.0f;
  const float ys = rows > 1 ? 1.0f / static_cast<float>(rows - 1) : 0.0f;

#pragma omp parallel if (parallel)
  {
    Eigen::MatrixXf x(kInferenceChunk, kInputs);
    Eigen::MatrixXf h1, h2, y;
#pragma omp for schedule(static)
    for (int chunk = 0; chunk < chunks; ++chunk) {
      const int begin = chunk * kInferenceChunk;
      const int count = std::min(kInferenceChunk, total - begin);
      x.resize(count, kInputs);
      for (int i = 0; i < count; ++i) {
        const int r = (begin + i) / cols;
        const int c = (begin + i) % cols;
        const Rgb& rgb = px(r, c);
        x(i, 0) = static_cast<float>(rgb[0]);
        x(i, 1) = static_cast<float>(rgb[1]);
        x(i, 2) = static_cast<float>(rgb[2]);
        x(i, 3) = static_cast<float>(c) * xs;
        x(i, 4) = static_cast<float>(r) * ys;
      }
      h1.noalias() = x * w1_;
      h1 = (h1.rowwise() + b1_).cwiseMax(0.0f);
      h2.noalias() = h1 * w2_;
      h2 = (h2.rowwise() + b2_).cwiseMax(0.0f);
      y.noalias() = h2 * w3_;
      y.rowwise() += b3_;
      for (int i = 0; i < count; ++i) {
        const int r = (begin + i) / cols;
        const int c = (begin + i) % cols;
        out.vectors(r, c) = finalize_normal({y(i, 0), y(i, 1), y(i, 2)});
      }
    }
  }
  return out;
}

NormalMap predict_normal_map(const MlpParams& params, const TactileFrame& frame, Exec exec) {
  return MlpInference(params).predict(frame, exec);
}

NormalMap predict_normal_map_reference(const MlpParams& params, const TactileFrame& frame) {
  const auto& px = frame.pixels;
  NormalMap out{Grid<Vec3>(px.rows(), px.cols())};
  for (int r = 0; r < px.rows(); ++r) {
    for (int c = 0; c < px.cols(); ++c) {
      out.vectors(r, c) = finalize_normal(forward(params, pixel_input(px(r, c), r, c, px.rows(), px.cols())));
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params) {
  std::vector<std::uint8_t> out{'M', 'L', 'P', '1'};
  put_u32(out, 3);
  auto layer = [&out](const Eigen::MatrixXd& w, const Eigen::RowVectorXd& b) {
    put_u32(out, static_cast<std::uint32_t>(w.rows()));
    put_u32(out, static_cast<std::uint32_t>(w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) put_f64(out, w(r, c));
    }
    for (Eigen::Index c = 0; c < b.size(); ++c) put_f64(out, b(c));
  };
  layer(params.w1, params.b1);
  layer(params.w2, params.b2);
  layer(params.w3, params.b3);
  return out;
}

MlpParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MLP1", 4) != 0) {
    throw FormatError("MLP1: bad magic");
  }
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  ByteReader in(body);
  if (in.u32() != 3) throw FormatError("MLP1: expected 3 layers");
  auto layer = [&in](Eigen::MatrixXd& w, Eigen::RowVectorXd& b) {
    const auto rows = in.u32();
    const auto cols = in.u32();
    if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16) {
      throw FormatError("MLP1: implausible layer shape");
    }
    w.resize(rows, cols);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = in.f64();
    }
    b.resize(cols);
    for (Eigen::Index c = 0; c < b.size(); ++c) b(c) = in.f64();
  };
  MlpParams p;
  layer(p.w1, p.b1);
  layer(p.w2, p.b2);
  layer(p.w3, p.b3);
  if (!in.at_end()) throw FormatError("MLP1: trailing bytes");
  if (p.w1.rows() != kInputs || p.w2.rows() != p.w1.cols() || p.w3.rows() != p.w2.cols() ||
      p.w3.cols() != kOutputs) {
    throw FormatError("MLP1: layer shapes do not chain 5 -> h1 -> h2 -> 3");
  }
  return p;
}

void write_checkpoint(const std::filesystem::path& path, const MlpParams& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MlpParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tactiforce
