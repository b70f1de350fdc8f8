#include "tactiforce/teleop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tactiforce/errors.hpp"

namespace tactiforce {

using nlohmann::json;

void FollowerModel::validate() const {
  if (!(mass_kg > 0.0)) throw DomainError("follower mass must be > 0");
  if (!(kp >= 0.0) || !(kd >= 0.0)) throw DomainError("follower gains must be >= 0");
  if (!(x_min_m < x_max_m)) throw DomainError("follower limits must satisfy x_min < x_max");
}

double ContactModel::penetration_mm(double x_f) const {
  if (!object_half_width_m) return 0.0;
  return std::max(0.0, (*object_half_width_m - x_f) * 1000.0);
}

double ContactModel::reaction_n(double x_f) const {
  const double p = penetration_mm(x_f);
  return p > 0.0 ? hertz.k * std::pow(p, 1.5) : 0.0;
}

HertzSensor::HertzSensor(HertzParams hertz, double noise_n, std::uint64_t seed)
    : hertz_(hertz), noise_n_(noise_n), rng_(seed) {
  if (!(noise_n >= 0.0)) throw DomainError("sensor noise must be >= 0");
}

double HertzSensor::measure(double penetration_mm, double, std::int64_t) {
  double f = penetration_mm > 0.0 ? hertz_.k * std::pow(penetration_mm, 1.5) : 0.0;
  if (noise_n_ > 0.0) f = std::max(0.0, f + noise_n_ * standard_normal(rng_));
  return f;
}

TactileSensor::TactileSensor(const CalibrationRig& rig, PolyCurve curve, const MlpParams* params)
    : rig_(rig), curve_(curve) {
  if (params) pipeline_ = std::make_unique<ForcePipeline>(*params, curve, rig.gel.pixel_pitch_mm, Exec::Serial);
}

double TactileSensor::measure(double penetration_mm, double t, std::int64_t tick) {
  Indenter probe = rig_.probe;
  probe.press_depth_mm = std::min(penetration_mm, rig_.gel.max_indent_mm);
  const DepthMap depth = indent_depth(rig_.gel, probe, Exec::Serial);
  if (!pipeline_) return eval_force(curve_, max_depth(depth, false)).force_n;
  TactileFrame frame = render(normals_from_depth(depth, Exec::Serial), rig_.lighting, Exec::Serial);
  frame.timestamp_s = t;
  frame.frame_id = tick;
  return pipeline_->process(frame).force_n;
}

TeleopState step(const TeleopState& s, const TeleopModels& m, const StepInput& in, double dt,
                 OperatorHold& hold, ForceSensor& sensor) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("step: dt must be finite and > 0");
  for (double v : {s.t, s.x_h, s.x_l, s.x_fd, s.x_f, s.v_f, s.f_l, s.f_ld, s.f_s, in.x_cmd}) {
    if (!std::isfinite(v)) throw DomainError("step: non-finite state or input");
  }
  const FollowerModel& fm = m.follower;
  auto clamp = [&fm](double x) { return std::clamp(x, fm.x_min_m, fm.x_max_m); };

  TeleopState n = s;
  n.t = s.t + dt;

  const double cmd = clamp(in.x_cmd);
  if (!in.feedback) {
    hold.active = false;
  } else if (hold.active && cmd >= hold.x_m) {
    hold.active = false;
  } else if (!hold.active && s.f_l >= m.op.perception_threshold_n && cmd <= s.x_h) {
    hold = {true, s.x_h};
  }
  n.x_h = hold.active ? hold.x_m : cmd;

  n.f_l = in.feedback ? s.f_ld : 0.0;
  n.x_l = clamp(n.x_h + n.f_l / m.op.hand_stiffness);
  n.x_fd = n.x_l;

  const double drive = fm.kp * (n.x_fd - s.x_f) - fm.kd * s.v_f;
  const double accel = (drive + m.contact.reaction_n(s.x_f)) / fm.mass_kg;
  n.v_f = s.v_f + accel * dt;
  n.x_f = s.x_f + n.v_f * dt;
  if (n.x_f < fm.x_min_m || n.x_f > fm.x_max_m) {
    n.x_f = clamp(n.x_f);
    n.v_f = 0.0;
  }

  if (in.sensor_tick) {
    const auto tick = static_cast<std::int64_t>(std::llround(n.t * 1e6));
    n.f_s = sensor.measure(m.contact.penetration_mm(n.x_f), n.t, tick);
  }
  n.f_ld = n.f_s;
  return n;
}

void Scenario::validate() const {
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) throw DomainError("duration must be >= 0");
  if (!(control_rate_hz > 0.0)) throw DomainError("control_rate must be > 0");
  if (!(sensor_rate_hz > 0.0) || sensor_rate_hz > control_rate_hz) {
    throw DomainError("sensor_rate must be in (0, control_rate]");
  }
  models.follower.validate();
  if (!(models.op.hand_stiffness > 0.0)) throw DomainError("hand_stiffness must be > 0");
  if (!(models.contact.hertz.k > 0.0)) throw DomainError("hertz k must be > 0");
  if (models.contact.object_half_width_m && !(*models.contact.object_half_width_m > 0.0)) {
    throw DomainError("object half width must be > 0");
  }
  if (trajectory.empty()) throw DomainError("trajectory needs at least one waypoint");
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    if (!(trajectory[i].t > trajectory[i - 1].t)) throw DomainError("trajectory times must increase");
  }
  for (std::size_t i = 1; i < feedback.size(); ++i) {
    if (!(feedback[i].from_s >= feedback[i - 1].from_s)) throw DomainError("feedback schedule must be sorted");
  }
  for (const auto& r : regions) {
    if (r.label.empty()) throw DomainError("region label must be nonempty");
    if (!(r.t0 <= r.t1)) throw DomainError("region " + r.label + ": t0 > t1");
  }
}

double Scenario::command_at(double t) const {
  if (trajectory.empty()) return 0.0;
  if (t <= trajectory.front().t) return trajectory.front().x_m;
  if (t >= trajectory.back().t) return trajectory.back().x_m;
  const auto hi = std::upper_bound(trajectory.begin(), trajectory.end(), t,
                                   [](double v, const Waypoint& w) { return v < w.t; });
  const auto lo = hi - 1;
  const double u = (t - lo->t) / (hi->t - lo->t);
  return lo->x_m + u * (hi->x_m - lo->x_m);
}

bool Scenario::feedback_at(double t) const {
  bool on = false;
  for (const auto& f : feedback) {
    if (f.from_s <= t) on = f.enabled;
  }
  return on;
}

std::string Scenario::region_at(double t) const {
  for (const auto& r : regions) {
    if (r.t0 <= t && t <= r.t1) return r.label;
  }
  return {};
}

long long Scenario::steps() const { return std::llround(duration_s * control_rate_hz); }

const char* to_string(SensorMode mode) {
  switch (mode) {
    case SensorMode::Hertz: return "hertz";
    case SensorMode::Oracle: return "oracle";
    case SensorMode::Pipeline: return "pipeline";
  }
  return "hertz";
}

SensorMode sensor_mode_from_string(const std::string& name) {
  if (name == "hertz") return SensorMode::Hertz;
  if (name == "oracle") return SensorMode::Oracle;
  if (name == "pipeline") return SensorMode::Pipeline;
  throw FormatError("unknown sensor mode '" + name + "' (expected hertz, oracle or pipeline)");
}

namespace {

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw FormatError(where + ": expected an object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!known.contains(key)) throw FormatError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

Scenario parse_scenario(const std::string& text, const Scenario& defaults) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw FormatError("scenario parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
  Scenario sc = defaults;
  try {
    check_keys(j, "scenario",
               {"duration_s", "control_rate_hz", "sensor_rate_hz", "seed", "follower", "object", "operator",
                "sensor", "feedback", "trajectory", "regions"});
    read_opt(j, "duration_s", sc.duration_s);
    read_opt(j, "control_rate_hz", sc.control_rate_hz);
    read_opt(j, "sensor_rate_hz", sc.sensor_rate_hz);
    read_opt(j, "seed", sc.seed);
    if (j.contains("follower")) {
      const auto& f = j.at("follower");
      check_keys(f, "follower", {"mass_kg", "kp", "kd", "x_min_m", "x_max_m"});
      auto& fm = sc.models.follower;
      read_opt(f, "mass_kg", fm.mass_kg);
      read_opt(f, "kp", fm.kp);
      read_opt(f, "kd", fm.kd);
      read_opt(f, "x_min_m", fm.x_min_m);
      read_opt(f, "x_max_m", fm.x_max_m);
    }
    if (j.contains("object")) {
      const auto& o = j.at("object");
      if (o.is_null()) {
        sc.models.contact.object_half_width_m.reset();
      } else {
        check_keys(o, "object", {"half_width_m", "hertz_k"});
        sc.models.contact.object_half_width_m = o.at("half_width_m").get<double>();
        read_opt(o, "hertz_k", sc.models.contact.hertz.k);
      }
    }
    if (j.contains("operator")) {
      const auto& o = j.at("operator");
      check_keys(o, "operator", {"hand_stiffness", "perception_threshold_n"});
      read_opt(o, "hand_stiffness", sc.models.op.hand_stiffness);
      read_opt(o, "perception_threshold_n", sc.models.op.perception_threshold_n);
    }
    if (j.contains("sensor")) {
      const auto& s = j.at("sensor");
      check_keys(s, "sensor", {"mode", "noise_n"});
      if (s.contains("mode")) sc.sensor_mode = sensor_mode_from_string(s.at("mode").get<std::string>());
      read_opt(s, "noise_n", sc.sensor_noise_n);
    }
    if (j.contains("feedback")) {
      const auto& f = j.at("feedback");
      sc.feedback.clear();
      if (f.is_boolean()) {
        sc.feedback.push_back({0.0, f.get<bool>()});
      } else {
        if (!f.is_array()) throw FormatError("feedback: expected a boolean or an array");
        for (const auto& e : f) {
          check_keys(e, "feedback entry", {"from_s", "enabled"});
          sc.feedback.push_back({e.at("from_s").get<double>(), e.at("enabled").get<bool>()});
        }
      }
    }
    if (j.contains("trajectory")) {
      sc.trajectory.clear();
      for (const auto& w : j.at("trajectory")) {
        if (!w.is_array() || w.size() != 2) throw FormatError("trajectory: each waypoint is [t_s, x_m]");
        sc.trajectory.push_back({w[0].get<double>(), w[1].get<double>()});
      }
    }
    if (j.contains("regions")) {
      sc.regions.clear();
      for (const auto& r : j.at("regions")) {
        check_keys(r, "region", {"label", "t0", "t1"});
        sc.regions.push_back({r.at("label").get<std::string>(), r.at("t0").get<double>(), r.at("t1").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("scenario: ") + e.what());
  }
  try {
    sc.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("scenario: ") + e.what());
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path, const Scenario& defaults) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), defaults);
}

std::string scenario_to_json(const Scenario& sc) {
  nlohmann::ordered_json j;
  j["duration_s"] = sc.duration_s;
  j["control_rate_hz"] = sc.control_rate_hz;
  j["sensor_rate_hz"] = sc.sensor_rate_hz;
  j["seed"] = sc.seed;
  const auto& fm = sc.models.follower;
  j["follower"] = {{"mass_kg", fm.mass_kg}, {"kp", fm.kp}, {"kd", fm.kd}, {"x_min_m", fm.x_min_m}, {"x_max_m", fm.x_max_m}};
  if (sc.models.contact.object_half_width_m) {
    j["object"] = {{"half_width_m", *sc.models.contact.object_half_width_m}, {"hertz_k", sc.models.contact.hertz.k}};
  } else {
    j["object"] = nullptr;
  }
  j["operator"] = {{"hand_stiffness", sc.models.op.hand_stiffness},
                   {"perception_threshold_n", sc.models.op.perception_threshold_n}};
  j["sensor"] = {{"mode", to_string(sc.sensor_mode)}, {"noise_n", sc.sensor_noise_n}};
  j["feedback"] = nlohmann::ordered_json::array();
  for (const auto& f : sc.feedback) j["feedback"].push_back({{"from_s", f.from_s}, {"enabled", f.enabled}});
  j["trajectory"] = nlohmann::ordered_json::array();
  for (const auto& w : sc.trajectory) j["trajectory"].push_back({w.t, w.x_m});
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& r : sc.regions) j["regions"].push_back({{"label", r.label}, {"t0", r.t0}, {"t1", r.t1}});
  return j.dump(2);
}

TelemetryLog run_scenario(const Scenario& sc, ForceSensor& sensor) {
  sc.validate();
  const long long n = sc.steps();
  TelemetryLog log;
  log.reserve(static_cast<std::size_t>(std::max(0LL, n)));
  if (n <= 0) return log;

  const double dt = 1.0 / sc.control_rate_hz;
  TeleopState s;
  const double x0 = std::clamp(sc.command_at(0.0), sc.models.follower.x_min_m, sc.models.follower.x_max_m);
  s.x_h = s.x_l = s.x_fd = s.x_f = x0;
  OperatorHold hold;
  // Sensor tick k fires on the first control step at or after k / sensor_rate.
  long long next_tick = 1;
  for (long long k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) * dt;
    StepInput in;
    in.x_cmd = sc.command_at(t);
    in.feedback = sc.feedback_at(t);
    const double tick_time = static_cast<double>(next_tick) / sc.sensor_rate_hz;
    if (t + 1e-9 * dt >= tick_time) {
      in.sensor_tick = true;
      ++next_tick;
    }
    s = step(s, sc.models, in, dt, hold, sensor);
    s.t = t;  // avoid accumulated rounding in the timeline
    log.push_back({s, sc.region_at(t)});
  }
  return log;
}

std::unique_ptr<ForceSensor> make_sensor(const Scenario& sc, const GelConfig& gel,
                                         const std::optional<PolyCurve>& curve, const MlpParams* params) {
  if (sc.sensor_mode == SensorMode::Hertz) {
    return std::make_unique<HertzSensor>(sc.models.contact.hertz, sc.sensor_noise_n, sc.seed);
  }
  CalibrationRig rig = CalibrationRig::with_defaults(gel);
  rig.hertz = sc.models.contact.hertz;
  if (sc.sensor_mode == SensorMode::Oracle) {
    const PolyCurve c = curve ? *curve : fit_poly3(run_calibration(rig, CalibPipeline::Oracle));
    return std::make_unique<TactileSensor>(rig, c, nullptr);
  }
  if (!params) throw DomainError("pipeline sensor mode needs MLP parameters (--checkpoint)");
  const PolyCurve c = curve ? *curve : fit_poly3(run_calibration(rig, CalibPipeline::Full, params));
  return std::make_unique<TactileSensor>(rig, c, params);
}

RegionMetrics region_metrics(const TelemetryLog& log, double t0, double t1) {
  RegionMetrics m;
  double sum_d = 0.0, sum_a = 0.0, sum_e = 0.0;
  for (const auto& r : log) {
    const auto& s = r.state;
    if (s.t < t0 || s.t > t1) continue;
    sum_d += s.x_h;
    sum_a += s.x_f;
    sum_e += std::abs(s.x_h - s.x_f);
    m.max_force = m.samples == 0 ? s.f_s : std::max(m.max_force, s.f_s);
    ++m.samples;
  }
  if (m.samples == 0) throw DomainError("region [" + std::to_string(t0) + ", " + std::to_string(t1) + "] is empty");
  const auto n = static_cast<double>(m.samples);
  m.mean_desired = sum_d / n;
  m.mean_actual = sum_a / n;
  m.mean_error = sum_e / n;
  return m;
}

RegionMetrics region_metrics(const TelemetryLog& log, const Region& region) {
  return region_metrics(log, region.t0, region.t1);
}

std::string telemetry_line(const TelemetryRecord& r) {
  const auto& s = r.state;
  nlohmann::ordered_json j{{"t", s.t},       {"x_h", s.x_h},   {"x_l", s.x_l}, {"x_fd", s.x_fd}, {"x_f", s.x_f},
                           {"f_l", s.f_l},   {"f_ld", s.f_ld}, {"f_s", s.f_s}};
  if (r.region.empty()) {
    j["region"] = nullptr;
  } else {
    j["region"] = r.region;
  }
  return j.dump();
}

void write_telemetry(const std::filesystem::path& path, const TelemetryLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : log) out << telemetry_line(r) << '\n';
}

TelemetryLog read_telemetry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  TelemetryLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      TelemetryRecord r;
      auto& s = r.state;
      s.t = j.at("t").get<double>();
      s.x_h = j.at("x_h").get<double>();
      s.x_l = j.at("x_l").get<double>();
      s.x_fd = j.at("x_fd").get<double>();
      s.x_f = j.at("x_f").get<double>();
      s.f_l = j.at("f_l").get<double>();
      s.f_ld = j.at("f_ld").get<double>();
      s.f_s = j.at("f_s").get<double>();
      if (!j.at("region").is_null()) r.region = j.at("region").get<std::string>();
      log.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace tactiforce
