#include "tactiforce/force.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tactiforce/errors.hpp"

namespace tactiforce {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

CalibrationRig CalibrationRig::with_defaults(const GelConfig& gel) {
  CalibrationRig rig;
  rig.gel = gel;
  rig.probe = Indenter{CylinderCurved{5.0, 5.0}, gel.center_mm(), 0.0};
  return rig;
}

std::vector<CalibSample> run_calibration(const CalibrationRig& rig, CalibPipeline pipeline,
                                         const MlpParams* params) {
  if (rig.steps < 4) throw DomainError("calibration needs at least 4 presses");
  if (!(rig.step_depth_mm > 0.0)) throw DomainError("step_depth must be positive");
  if (pipeline == CalibPipeline::Full && params == nullptr) {
    throw DomainError("full calibration pipeline needs trained MLP parameters");
  }
  std::optional<MlpInference> mlp;
  std::optional<DepthReconstructor> reconstructor;
  if (pipeline == CalibPipeline::Full) {
    mlp.emplace(*params);
    reconstructor.emplace(rig.gel.pixel_pitch_mm);
  }

  std::vector<CalibSample> samples;
  samples.reserve(static_cast<std::size_t>(rig.steps));
  for (int k = 1; k <= rig.steps; ++k) {
    Indenter probe = rig.probe;
    probe.press_depth_mm = k * rig.step_depth_mm;
    const DepthMap truth = indent_depth(rig.gel, probe);
    const double force = truth_force(truth, rig.hertz);
    double depth = 0.0;
    if (pipeline == CalibPipeline::Oracle) {
      depth = max_depth(truth, false);
    } else {
      const TactileFrame frame = render(normals_from_depth(truth), rig.lighting);
      depth = max_depth(reconstructor->reconstruct(mlp->predict(frame)));
    }
    samples.push_back({depth, force});
  }
  return samples;
}

PolyCurve fit_poly3(std::span<const CalibSample> samples) {
  std::set<double> distinct;
  double scale = 0.0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.depth_mm) || !std::isfinite(s.force_n)) throw DomainError("non-finite calibration sample");
    distinct.insert(s.depth_mm);
    scale = std::max(scale, std::abs(s.depth_mm));
  }
  if (distinct.size() < 4) {
    throw DegenerateFitError("cubic fit needs at least 4 distinct depths, got " + std::to_string(distinct.size()));
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd design(n, 4);
  Eigen::VectorXd forces(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = samples[static_cast<std::size_t>(i)].depth_mm / scale;
    design(i, 0) = u * u * u;
    design(i, 1) = u * u;
    design(i, 2) = u;
    design(i, 3) = 1.0;
    forces(i) = samples[static_cast<std::size_t>(i)].force_n;
  }
  const Eigen::Vector4d q = design.colPivHouseholderQr().solve(forces);

  PolyCurve curve;
  curve.depth_scale = scale;
  curve.p1 = q(0) / (scale * scale * scale);
  curve.p2 = q(1) / (scale * scale);
  curve.p3 = q(2) / scale;
  curve.p4 = q(3);
  curve.d_min = *distinct.begin();
  curve.d_max = *distinct.rbegin();

  const double mean = forces.mean();
  const double ss_tot = (forces.array() - mean).square().sum();
  const double ss_res = (design * q - forces).squaredNorm();
  if (ss_tot > 0.0) {
    curve.r_squared = 1.0 - ss_res / ss_tot;
  } else {
    // Constant targets: a perfect constant fit counts as r^2 = 1, anything else 0.
    const double tol = 1e-24 * std::max(1.0, mean * mean) * static_cast<double>(n);
    curve.r_squared = ss_res <= tol ? 1.0 : 0.0;
  }
  return curve;
}

double sum_squared_residuals(const PolyCurve& curve, std::span<const CalibSample> samples) {
  double ss = 0.0;
  for (const auto& s : samples) {
    const double r = s.force_n - curve.value(s.depth_mm);
    ss += r * r;
  }
  return ss;
}

ForceEstimate eval_force(const PolyCurve& curve, double depth_mm) {
  ForceEstimate out;
  double d = depth_mm;
  if (d < curve.d_min) {
    d = curve.d_min;
    out.clamped = true;
  } else if (d > curve.d_max) {
    d = curve.d_max;
    out.clamped = true;
  }
  out.force_n = std::max(0.0, curve.value(d));
  return out;
}

ForcePipeline::ForcePipeline(const MlpParams& params, PolyCurve curve, double pixel_pitch_mm, Exec exec,
                             DstBackend backend, bool median_filter)
    : mlp_(params), reconstructor_(pixel_pitch_mm, backend), curve_(curve), exec_(exec), median_filter_(median_filter) {}

ForceRecord ForcePipeline::process(const TactileFrame& frame) {
  auto t0 = Clock::now();
  const NormalMap normals = mlp_.predict(frame, exec_);
  timings_.mlp_ms = ms_since(t0);

  t0 = Clock::now();
  const double depth = max_depth(reconstructor_.reconstruct(normals, exec_), median_filter_);
  timings_.solver_ms = ms_since(t0);

  t0 = Clock::now();
  const ForceEstimate estimate = eval_force(curve_, depth);
  timings_.regression_ms = ms_since(t0);

  return {frame.frame_id, frame.timestamp_s, estimate.force_n, depth, estimate.clamped};
}

ForceStream force_stream(ForcePipeline& pipeline, std::span<const TactileFrame> frames) {
  ForceStream out;
  out.records.reserve(frames.size());
  for (const auto& frame : frames) {
    try {
      out.records.push_back(pipeline.process(frame));
    } catch (const std::exception& e) {
      out.errors.push_back({frame.frame_id, e.what()});
    }
  }
  return out;
}

void write_samples_csv(const std::filesystem::path& path, std::span<const CalibSample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.imbue(std::locale::classic());
  out.precision(17);
  out << "depth_mm,force_n\n";
  for (const auto& s : samples) out << s.depth_mm << ',' << s.force_n << '\n';
}

std::vector<CalibSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "depth_mm,force_n") {
    throw FormatError(path.string() + ": expected header 'depth_mm,force_n'");
  }
  std::vector<CalibSample> samples;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    row.imbue(std::locale::classic());
    CalibSample s;
    char comma = 0;
    if (!(row >> s.depth_mm >> comma >> s.force_n) || comma != ',') {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    samples.push_back(s);
  }
  return samples;
}

std::string curve_to_json(const PolyCurve& c, const std::string& fingerprint) {
  nlohmann::ordered_json j{{"p1", c.p1},           {"p2", c.p2},       {"p3", c.p3},
                           {"p4", c.p4},           {"r_squared", c.r_squared},
                           {"d_min", c.d_min},     {"d_max", c.d_max}, {"depth_scale", c.depth_scale}};
  if (!fingerprint.empty()) j["fingerprint"] = fingerprint;
  return j.dump(2);
}

PolyCurve curve_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PolyCurve c;
    c.p1 = j.at("p1").get<double>();
    c.p2 = j.at("p2").get<double>();
    c.p3 = j.at("p3").get<double>();
    c.p4 = j.at("p4").get<double>();
    c.r_squared = j.at("r_squared").get<double>();
    c.d_min = j.at("d_min").get<double>();
    c.d_max = j.at("d_max").get<double>();
    c.depth_scale = j.at("depth_scale").get<double>();
    if (!(c.d_min <= c.d_max)) throw FormatError("curve: d_min > d_max");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("curve JSON: ") + e.what());
  }
}

void write_curve(const std::filesystem::path& path, const PolyCurve& curve, const std::string& fingerprint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << curve_to_json(curve, fingerprint) << '\n';
}

PolyCurve read_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open curve " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return curve_from_json(buf.str());
}

}  // namespace tactiforce
