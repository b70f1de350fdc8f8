#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "tactiforce/calib_dataset.hpp"
#include "tactiforce/errors.hpp"
#include "tactiforce/force.hpp"
#include "tactiforce/random.hpp"
#include "test_util.hpp"

using namespace tactiforce;

namespace {

std::vector<CalibSample> cubic_samples(double p1, double p2, double p3, double p4, int n, double lo, double hi) {
  std::vector<CalibSample> out;
  for (int i = 0; i < n; ++i) {
    const double d = lo + (hi - lo) * i / (n - 1);
    out.push_back({d, ((p1 * d + p2) * d + p3) * d + p4});
  }
  return out;
}

GelConfig calib_gel() {
  GelConfig gel;
  gel.height_px = 60;
  gel.width_px = 80;
  gel.pixel_pitch_mm = 0.2;
  return gel;
}

// Small net trained on ball presses of the calibration gel; shared by the
// full-pipeline cases.
const MlpParams& trained_params() {
  static const MlpParams params = [] {
    BallPressOptions opt;
    opt.n_images = 24;
    const CalibDataset data = make_calib_dataset(calib_gel(), LightingModel::default_rig(), opt);
    TrainConfig cfg;
    cfg.hidden1 = 32;
    cfg.hidden2 = 32;
    cfg.epochs = 8;
    return train(data.samples, cfg).params;
  }();
  return params;
}

TactileFrame press_frame(const CalibrationRig& rig, double depth, std::int64_t id) {
  Indenter probe = rig.probe;
  probe.press_depth_mm = depth;
  TactileFrame f = render(normals_from_depth(indent_depth(rig.gel, probe)), rig.lighting);
  f.frame_id = id;
  f.timestamp_s = id / 30.0;
  return f;
}

}  // namespace

TEST_SUITE("force-regress") {

TEST_CASE("an exact cubic is recovered") {
  const auto samples = cubic_samples(2.0, -1.0, 0.5, 0.1, 25, 0.04, 1.0);
  const PolyCurve c = fit_poly3(samples);
  CHECK(std::abs(c.p1 - 2.0) <= 1e-9 * 2.0);
  CHECK(std::abs(c.p2 + 1.0) <= 1e-9);
  CHECK(std::abs(c.p3 - 0.5) <= 1e-9 * 0.5);
  CHECK(std::abs(c.p4 - 0.1) <= 1e-9 * 0.1);
  CHECK(std::abs(c.r_squared - 1.0) <= 1e-12);
  CHECK(c.d_min == 0.04);
  CHECK(c.d_max == 1.0);
  CHECK(c.depth_scale == 1.0);
  CHECK(eval_force(c, 1.0).force_n == doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("constant forces give a constant curve with r squared one") {
  std::vector<CalibSample> s;
  for (int i = 1; i <= 6; ++i) s.push_back({0.1 * i, 3.5});
  const PolyCurve c = fit_poly3(s);
  CHECK(std::abs(c.p1) < 1e-9);
  CHECK(std::abs(c.p2) < 1e-9);
  CHECK(std::abs(c.p3) < 1e-9);
  CHECK(c.p4 == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(c.r_squared == 1.0);
}

TEST_CASE("fewer than four distinct depths is a degenerate fit") {
  std::vector<CalibSample> s{{0.1, 1.0}, {0.2, 2.0}, {0.3, 3.0}, {0.3, 3.1}, {0.1, 0.9}};
  CHECK_THROWS_AS(fit_poly3(s), DegenerateFitError);
  CHECK_THROWS_AS(fit_poly3(std::vector<CalibSample>{}), DegenerateFitError);
}

TEST_CASE("four samples are interpolated exactly") {
  const std::vector<CalibSample> s{{0.1, 0.3}, {0.2, 0.1}, {0.5, 0.9}, {0.7, 0.4}};
  const PolyCurve c = fit_poly3(s);
  for (const auto& x : s) CHECK(c.value(x.depth_mm) == doctest::Approx(x.force_n).epsilon(1e-9));
  CHECK(c.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a cubic fits the three-halves power law closely") {
  std::vector<CalibSample> s;
  for (int i = 0; i < 25; ++i) {
    const double d = 0.1 + 0.9 * i / 24.0;
    s.push_back({d, 8.0 * std::pow(d, 1.5)});
  }
  CHECK(fit_poly3(s).r_squared >= 0.999);
}

TEST_CASE("least-squares coefficients are locally optimal") {
  Rng rng(3);
  std::vector<CalibSample> s;
  for (int i = 0; i < 30; ++i) {
    const double d = uniform(rng, 0.05, 1.2);
    s.push_back({d, 8.0 * std::pow(d, 1.5) + uniform(rng, -0.05, 0.05)});
  }
  const PolyCurve c = fit_poly3(s);
  const double best = sum_squared_residuals(c, s);
  const double scale = c.depth_scale;
  // Steps of 1e-6 in the scaled coordinates.
  const std::array<double, 4> steps{1e-6 / (scale * scale * scale), 1e-6 / (scale * scale), 1e-6 / scale, 1e-6};
  for (int k = 0; k < 4; ++k) {
    for (double sign : {-1.0, 1.0}) {
      PolyCurve p = c;
      double* coef[] = {&p.p1, &p.p2, &p.p3, &p.p4};
      *coef[k] += sign * steps[static_cast<std::size_t>(k)];
      CHECK(sum_squared_residuals(p, s) >= best);
    }
  }
}

TEST_CASE("fit is invariant to sample order") {
  Rng rng(4);
  std::vector<CalibSample> s;
  for (int i = 0; i < 20; ++i) s.push_back({uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 5.0)});
  const PolyCurve a = fit_poly3(s);
  std::reverse(s.begin(), s.end());
  std::swap(s[3], s[11]);
  const PolyCurve b = fit_poly3(s);
  CHECK(a.p1 == doctest::Approx(b.p1).epsilon(1e-9));
  CHECK(a.p2 == doctest::Approx(b.p2).epsilon(1e-9));
  CHECK(a.p3 == doctest::Approx(b.p3).epsilon(1e-9));
  CHECK(a.p4 == doctest::Approx(b.p4).epsilon(1e-9));
  CHECK(a.r_squared == doctest::Approx(b.r_squared).epsilon(1e-12));
}

TEST_CASE("eval clamps to the calibrated range and floors at zero") {
  PolyCurve c;
  c.p3 = 2.0;
  c.p4 = -0.5;
  c.d_min = 0.1;
  c.d_max = 1.0;
  const ForceEstimate low = eval_force(c, 0.0);
  CHECK(low.clamped);
  CHECK(low.force_n == 0.0);
  const ForceEstimate top = eval_force(c, 1.0);
  CHECK_FALSE(top.clamped);
  CHECK(top.force_n == doctest::Approx(1.5));
  const ForceEstimate above = eval_force(c, 3.0);
  CHECK(above.clamped);
  CHECK(above.force_n == top.force_n);
  // Continuity at both clamp edges.
  CHECK(std::abs(eval_force(c, 1.0 + 1e-9).force_n - eval_force(c, 1.0 - 1e-9).force_n) < 1e-8);
  c.p4 = 0.5;
  CHECK(std::abs(eval_force(c, 0.1 - 1e-9).force_n - eval_force(c, 0.1 + 1e-9).force_n) < 1e-8);
  CHECK(eval_force(c, 0.0).force_n == doctest::Approx(0.7));
}

TEST_CASE("oracle calibration samples lie on the hertz law") {
  CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  rig.steps = 10;
  const auto samples = run_calibration(rig, CalibPipeline::Oracle);
  REQUIRE(samples.size() == 10);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].force_n == doctest::Approx(8.0 * std::pow(samples[i].depth_mm, 1.5)).epsilon(1e-12));
    if (i > 0) CHECK(samples[i].depth_mm > samples[i - 1].depth_mm);
  }
  CHECK(samples == run_calibration(rig, CalibPipeline::Oracle));
}

TEST_CASE("default oracle calibration fits with r squared above 0.999") {
  const CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  CHECK(rig.steps == 25);
  CHECK(rig.step_depth_mm == 0.04);
  const auto samples = run_calibration(rig, CalibPipeline::Oracle);
  CHECK(samples.size() == 25);
  CHECK(fit_poly3(samples).r_squared >= 0.999);
}

TEST_CASE("calibration preconditions") {
  CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  rig.steps = 3;
  CHECK_THROWS_AS(run_calibration(rig, CalibPipeline::Oracle), DomainError);
  rig.steps = 4;
  CHECK_THROWS_AS(run_calibration(rig, CalibPipeline::Full), DomainError);
  rig.step_depth_mm = 1.0;
  CHECK_THROWS_AS(run_calibration(rig, CalibPipeline::Oracle), DomainError);
}

TEST_CASE("full-pipeline calibration fits well and is nondecreasing") {
  const CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  const auto samples = run_calibration(rig, CalibPipeline::Full, &trained_params());
  const PolyCurve c = fit_poly3(samples);
  CHECK(c.r_squared >= 0.99);
  for (int i = 0; i < 100; ++i) {
    const double d = c.d_min + (c.d_max - c.d_min) * i / 99.0;
    CHECK(c.slope(d) >= 0.0);
  }
}

TEST_CASE("force stream over a monotone press sequence") {
  const CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  const PolyCurve curve = fit_poly3(run_calibration(rig, CalibPipeline::Full, &trained_params()));
  ForcePipeline pipeline(trained_params(), curve, rig.gel.pixel_pitch_mm);
  std::vector<TactileFrame> frames;
  for (int k = 0; k < 10; ++k) frames.push_back(press_frame(rig, 0.1 + 0.09 * k, k));
  const ForceStream out = force_stream(pipeline, frames);
  REQUIRE(out.records.size() == frames.size());
  CHECK(out.errors.empty());
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    CHECK(out.records[i].frame_id == static_cast<std::int64_t>(i));
    CHECK(out.records[i].timestamp_s == frames[i].timestamp_s);
    if (i > 0) CHECK(out.records[i].force_n >= 0.95 * out.records[i - 1].force_n);
  }
  const StageTimings& t = pipeline.last_timings();
  CHECK(t.mlp_ms >= 0.0);
  CHECK(t.solver_ms >= 0.0);
}

TEST_CASE("flat frames map to near-zero force") {
  const CalibrationRig rig = CalibrationRig::with_defaults(calib_gel());
  const PolyCurve curve = fit_poly3(run_calibration(rig, CalibPipeline::Full, &trained_params()));
  ForcePipeline pipeline(trained_params(), curve, rig.gel.pixel_pitch_mm);
  std::vector<TactileFrame> frames(3, press_frame(rig, 0.0, 0));
  for (const ForceRecord& r : force_stream(pipeline, frames).records) CHECK(r.force_n < 0.05);
}

TEST_CASE("empty stream gives empty output") {
  ForcePipeline pipeline(MlpParams::zeros(2, 2), PolyCurve{}, 0.1);
  const ForceStream out = force_stream(pipeline, {});
  CHECK(out.records.empty());
  CHECK(out.errors.empty());
}

TEST_CASE("a failing frame is reported and the stream continues") {
  ForcePipeline pipeline(MlpParams::zeros(2, 2), PolyCurve{}, 0.1);
  std::vector<TactileFrame> frames;
  frames.push_back(TactileFrame{Grid<Rgb>(10, 10, Rgb{0.5, 0.5, 0.5})});
  frames.push_back(TactileFrame{Grid<Rgb>(2, 1, Rgb{0.5, 0.5, 0.5})});
  frames.back().frame_id = 1;
  frames.push_back(TactileFrame{Grid<Rgb>(10, 10, Rgb{0.5, 0.5, 0.5})});
  frames.back().frame_id = 2;
  const ForceStream out = force_stream(pipeline, frames);
  CHECK(out.records.size() == 2);
  REQUIRE(out.errors.size() == 1);
  CHECK(out.errors[0].frame_id == 1);
  CHECK(out.records[1].frame_id == 2);
}

TEST_CASE("samples CSV round trip and errors") {
  const std::vector<CalibSample> s{{0.04, 0.064}, {0.08, 0.18101933598375616}, {1.0 / 3.0, 1.5396}};
  const auto path = scratch_path("samples.csv");
  write_samples_csv(path, s);
  CHECK(read_samples_csv(path) == s);
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "depth_mm,force_n");
  }
  const auto bad = scratch_path("bad.csv");
  std::ofstream(bad) << "depth_mm,force_n\n0.1,0.2\n0.3;0.4\n";
  try {
    read_samples_csv(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  std::ofstream(bad) << "depth,force\n";
  CHECK_THROWS_AS(read_samples_csv(bad), FormatError);
}

TEST_CASE("curve JSON round trip and validation") {
  PolyCurve c{1.5, -0.25, 3.0, 0.01, 0.9993, 0.04, 1.0, 1.0};
  const auto parsed = curve_from_json(curve_to_json(c, "abc"));
  CHECK(parsed.p1 == c.p1);
  CHECK(parsed.p4 == c.p4);
  CHECK(parsed.r_squared == c.r_squared);
  CHECK(parsed.d_max == c.d_max);
  const auto path = scratch_path("curve.json");
  write_curve(path, c);
  CHECK(read_curve(path).p3 == c.p3);
  CHECK(curve_to_json(c, "abc").find("\"fingerprint\"") != std::string::npos);
  CHECK_THROWS_AS(curve_from_json("{\"p1\": 1}"), FormatError);
  CHECK_THROWS_AS(curve_from_json("not json"), FormatError);
  c.d_min = 2.0;
  CHECK_THROWS_AS(curve_from_json(curve_to_json(c)), FormatError);
}

}  // TEST_SUITE
