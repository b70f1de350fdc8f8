#include "tactiforce/calib_dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "tactiforce/errors.hpp"
#include "tactiforce/fingerprint.hpp"
#include "tactiforce/random.hpp"
#include "tactiforce/vec3.hpp"

namespace tactiforce {

std::span<const TrainSample> CalibDataset::image(std::size_t i) const { return images(i, i + 1); }

std::span<const TrainSample> CalibDataset::images(std::size_t first, std::size_t last) const {
  const std::size_t n = pixels_per_image();
  if (first > last || last * n > samples.size()) throw DomainError("image range out of bounds");
  return std::span<const TrainSample>(samples).subspan(first * n, (last - first) * n);
}

Vec3 ball_press_normal(const Indenter& ball, double x_mm, double y_mm) {
  const double radius = std::get<Sphere>(ball.shape).radius_mm;
  const double d = ball.press_depth_mm;
  const double dx = x_mm - ball.center_mm.x;
  const double dy = y_mm - ball.center_mm.y;
  const double r2 = dx * dx + dy * dy;
  if (d <= 0.0 || r2 >= d * (2.0 * radius - d)) return {0.0, 0.0, 1.0};
  return {dx / radius, dy / radius, std::sqrt(radius * radius - r2) / radius};
}

CalibDataset make_calib_dataset(const GelConfig& gel, const LightingModel& lighting,
                                const BallPressOptions& options) {
  gel.validate();
  lighting.validate();
  if (options.n_images < 1) throw DomainError("n_images must be >= 1");
  const double radius = 0.5 * options.ball_diameter_mm;
  const double h = gel.pixel_pitch_mm;
  const double x_lo = radius + 2.0 * h;
  const double x_hi = (gel.width_px - 3) * h - radius;
  const double y_lo = radius + 2.0 * h;
  const double y_hi = (gel.height_px - 3) * h - radius;
  if (!(radius > 0.0) || x_lo > x_hi || y_lo > y_hi) throw DomainError("ball does not fit the gel");

  CalibDataset out;
  out.rows = gel.height_px;
  out.cols = gel.width_px;
  out.samples.reserve(static_cast<std::size_t>(options.n_images) * out.pixels_per_image());
  Rng rng(options.seed);
  for (int i = 0; i < options.n_images; ++i) {
    Indenter ball{Sphere{radius}, {uniform(rng, x_lo, x_hi), uniform(rng, y_lo, y_hi)}, 0.0};
    const double depth = uniform(rng, options.min_press_mm, options.max_press_mm);
    ball.press_depth_mm = options.fixed_press_mm.value_or(depth);
    out.presses.push_back(ball);

    const NormalMap surface = normals_from_depth(indent_depth(gel, ball));
    const TactileFrame frame = render(surface, lighting);
    for (int r = 0; r < out.rows; ++r) {
      for (int c = 0; c < out.cols; ++c) {
        const Vec3 label = options.labels == LabelSource::Analytic ? ball_press_normal(ball, c * h, r * h)
                                                                   : surface.vectors(r, c);
        out.samples.push_back({pixel_input(frame.pixels(r, c), r, c, out.rows, out.cols), label});
      }
    }
  }
  return out;
}

std::string dataset_fingerprint(const CalibDataset& dataset) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(dataset.samples.size() * 8 * 8);
  auto put = [&bytes](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  };
  for (const auto& s : dataset.samples) {
    for (double v : s.input) put(v);
    for (double v : s.target) put(v);
  }
  return sha256_hex(bytes);
}

double median_angular_error_deg(const MlpParams& params, std::span<const TrainSample> samples) {
  if (samples.empty()) throw DomainError("no samples");
  constexpr std::size_t kChunk = 8192;
  std::vector<double> errors;
  errors.reserve(samples.size());
  Eigen::MatrixXd x;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, samples.size() - begin);
    x.resize(static_cast<Eigen::Index>(count), 5);
    for (std::size_t i = 0; i < count; ++i) {
      for (int k = 0; k < 5; ++k) x(static_cast<Eigen::Index>(i), k) = samples[begin + i].input[k];
    }
    const Eigen::MatrixXd y = forward(params, x);
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      errors.push_back(angle_deg(finalize_normal({y(row, 0), y(row, 1), y(row, 2)}), samples[begin + i].target));
    }
  }
  auto mid = errors.begin() + static_cast<std::ptrdiff_t>(errors.size() / 2);
  std::nth_element(errors.begin(), mid, errors.end());
  return *mid;
}

}  // namespace tactiforce
