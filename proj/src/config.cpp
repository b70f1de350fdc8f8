#include "tactiforce/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tactiforce/errors.hpp"
#include "tactiforce/fingerprint.hpp"
#include "toml.hpp"

namespace tactiforce {

namespace {

class Section {
 public:
  Section(const toml::table& table, std::string name) : table_(table), name_(std::move(name)) {}

  /// Rejects keys that no read() asked for.
  void finish() const {
    for (const auto& [key, _] : table_) {
      if (!seen_.contains(std::string(key.str()))) {
        throw ConfigError(where(std::string(key.str())) + ": unknown key");
      }
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const toml::node* node = table_.get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) throw type_error(key, "a boolean");
      out = *node->value<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) throw type_error(key, "an integer");
      const auto v = *node->value<std::int64_t>();
      if (std::is_unsigned_v<T> && v < 0) throw ConfigError(where(key) + ": must be >= 0");
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node->is_number()) throw type_error(key, "a number");
      out = *node->value<double>();
    } else {
      if (!node->is_string()) throw type_error(key, "a string");
      out = *node->value<std::string>();
    }
  }

  void read(const char* key, std::array<double, 3>& out) {
    seen_.insert(key);
    const toml::node* node = table_.get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr || arr->size() != 3) throw type_error(key, "an array of 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*arr)[i].is_number()) throw type_error(key, "an array of 3 numbers");
      out[i] = *(*arr)[i].value<double>();
    }
  }

  /// Nested table, or nullptr when absent.
  const toml::table* table(const char* key) {
    seen_.insert(key);
    const toml::node* node = table_.get(key);
    if (!node) return nullptr;
    if (!node->is_table()) throw type_error(key, "a table");
    return node->as_table();
  }

  std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  ConfigError type_error(const char* key, const char* expected) const {
    return ConfigError(where(key) + ": expected " + expected);
  }

  const toml::table& table_;
  std::string name_;
  std::set<std::string> seen_;
};

void apply(const toml::table& root, Config& c) {
  Section top(root, "");
  if (const auto* t = top.table("gel")) {
    Section s(*t, "gel");
    s.read("width_px", c.gel.width_px);
    s.read("height_px", c.gel.height_px);
    s.read("pixel_pitch_mm", c.gel.pixel_pitch_mm);
    s.read("max_indent_mm", c.gel.max_indent_mm);
    s.read("smoothing_sigma_px", c.gel.smoothing_sigma_px);
    s.finish();
  }
  if (const auto* t = top.table("lighting")) {
    Section s(*t, "lighting");
    s.read("elevation_deg", c.lighting.elevation_deg);
    s.read("azimuth_deg", c.lighting.azimuth_deg);
    s.read("gain", c.lighting.gain);
    s.read("ambient", c.lighting.ambient);
    s.finish();
  }
  if (const auto* t = top.table("dataset")) {
    Section s(*t, "dataset");
    s.read("n_images", c.dataset.n_images);
    s.read("ball_diameter_mm", c.dataset.ball_diameter_mm);
    s.read("min_press_mm", c.dataset.min_press_mm);
    s.read("max_press_mm", c.dataset.max_press_mm);
    s.read("seed", c.dataset.seed);
    s.read("holdout_images", c.holdout_images);
    std::string labels = c.dataset.labels == LabelSource::Analytic ? "analytic" : "gel_surface";
    s.read("labels", labels);
    if (labels == "analytic") {
      c.dataset.labels = LabelSource::Analytic;
    } else if (labels == "gel_surface") {
      c.dataset.labels = LabelSource::GelSurface;
    } else {
      throw ConfigError("dataset.labels: expected \"analytic\" or \"gel_surface\"");
    }
    s.finish();
  }
  if (const auto* t = top.table("mlp")) {
    Section s(*t, "mlp");
    s.read("lr", c.mlp.lr);
    s.read("dropout_rate", c.mlp.dropout_rate);
    s.read("dropout_free_epochs", c.mlp.dropout_free_epochs);
    s.read("epochs", c.mlp.epochs);
    s.read("batch_size", c.mlp.batch_size);
    s.read("hidden1", c.mlp.hidden1);
    s.read("hidden2", c.mlp.hidden2);
    s.read("seed", c.mlp.seed);
    s.finish();
  }
  if (const auto* t = top.table("solver")) {
    Section s(*t, "solver");
    std::string backend = to_string(c.solver.backend);
    s.read("backend", backend);
    try {
      c.solver.backend = dst_backend_from_string(backend);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("solver.backend: ") + e.what());
    }
    s.read("median_filter", c.solver.median_filter);
    s.finish();
  }
  if (const auto* t = top.table("calibration")) {
    Section s(*t, "calibration");
    s.read("steps", c.calibration.steps);
    s.read("step_depth_mm", c.calibration.step_depth_mm);
    s.read("probe_radius_mm", c.calibration.probe_radius_mm);
    s.read("probe_cap_radius_mm", c.calibration.probe_cap_radius_mm);
    s.read("hertz_k", c.calibration.hertz_k);
    s.finish();
  }
  if (const auto* t = top.table("teleop")) {
    Section s(*t, "teleop");
    auto& sc = c.teleop;
    s.read("control_rate_hz", sc.control_rate_hz);
    s.read("sensor_rate_hz", sc.sensor_rate_hz);
    s.read("seed", sc.seed);
    s.read("mass_kg", sc.models.follower.mass_kg);
    s.read("kp", sc.models.follower.kp);
    s.read("kd", sc.models.follower.kd);
    s.read("x_min_m", sc.models.follower.x_min_m);
    s.read("x_max_m", sc.models.follower.x_max_m);
    s.read("hand_stiffness", sc.models.op.hand_stiffness);
    s.read("perception_threshold_n", sc.models.op.perception_threshold_n);
    s.read("hertz_k", sc.models.contact.hertz.k);
    double half_width = sc.models.contact.object_half_width_m.value_or(0.0);
    s.read("object_half_width_m", half_width);
    if (half_width > 0.0) sc.models.contact.object_half_width_m = half_width;
    std::string mode = to_string(sc.sensor_mode);
    s.read("sensor_mode", mode);
    try {
      sc.sensor_mode = sensor_mode_from_string(mode);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("teleop.sensor_mode: ") + e.what());
    }
    s.read("sensor_noise_n", sc.sensor_noise_n);
    s.finish();
  }
  if (const auto* t = top.table("bus")) {
    Section s(*t, "bus");
    s.read("address", c.bus.address);
    s.read("frame_queue_depth", c.bus.frame_queue_depth);
    s.read("lossless_queue_limit", c.bus.lossless_queue_limit);
    s.read("state_rate_hz", c.bus.state_rate_hz);
    s.finish();
  }
  if (const auto* t = top.table("bench")) {
    Section s(*t, "bench");
    s.read("frames", c.bench.frames);
    s.read("warmup", c.bench.warmup);
    s.read("press_depth_mm", c.bench.press_depth_mm);
    s.finish();
  }
  top.finish();
}

}  // namespace

CalibrationRig CalibrationConfig::rig(const GelConfig& gel, const LightingModel& lighting) const {
  CalibrationRig r = CalibrationRig::with_defaults(gel);
  r.lighting = lighting;
  r.probe.shape = CylinderCurved{probe_radius_mm, probe_cap_radius_mm};
  r.hertz.k = hertz_k;
  r.steps = steps;
  r.step_depth_mm = step_depth_mm;
  return r;
}

void Config::validate() const {
  try {
    gel.validate();
    lighting.model().validate();
    if (dataset.n_images < 1) throw DomainError("dataset.n_images must be >= 1");
    if (!(dataset.min_press_mm > 0.0 && dataset.min_press_mm <= dataset.max_press_mm)) {
      throw DomainError("dataset press range must satisfy 0 < min_press_mm <= max_press_mm");
    }
    if (holdout_images < 0 || holdout_images >= dataset.n_images) {
      throw DomainError("dataset.holdout_images must be in [0, n_images)");
    }
    mlp.validate();
    if (calibration.steps < 4) throw DomainError("calibration.steps must be >= 4");
    if (!(calibration.step_depth_mm > 0.0)) throw DomainError("calibration.step_depth_mm must be > 0");
    if (!(calibration.hertz_k > 0.0)) throw DomainError("calibration.hertz_k must be > 0");
    if (bus.frame_queue_depth < 1 || bus.lossless_queue_limit < 1) throw DomainError("bus queue sizes must be >= 1");
    if (!(bus.state_rate_hz > 0.0)) throw DomainError("bus.state_rate_hz must be > 0");
    if (bench.frames < 1 || bench.warmup < 0) throw DomainError("bench.frames must be >= 1, bench.warmup >= 0");
    Scenario probe = teleop;
    if (probe.trajectory.empty()) probe.trajectory.push_back({0.0, probe.models.follower.x_max_m});
    probe.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

Config default_config() {
  Config c;
  c.teleop.models.contact.object_half_width_m = 0.0125;
  return c;
}

void apply_environment(Config& c) {
  if (const char* addr = std::getenv("TACTIFORCE_BUS_ADDR"); addr && *addr) c.bus.address = addr;
}

Config parse_config(const std::string& text, const Config& base, const std::string& source) {
  Config c = base;
  try {
    const toml::table root = toml::parse(text, source);
    apply(root, c);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    std::ostringstream msg;
    msg << source << ": line " << where.line << ", column " << where.column << ": " << e.description();
    throw ConfigError(msg.str());
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path, const Config& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base, path.string());
}

std::string config_to_json(const Config& c) {
  using J = nlohmann::ordered_json;
  J j;
  j["gel"] = {{"width_px", c.gel.width_px},
              {"height_px", c.gel.height_px},
              {"pixel_pitch_mm", c.gel.pixel_pitch_mm},
              {"max_indent_mm", c.gel.max_indent_mm},
              {"smoothing_sigma_px", c.gel.smoothing_sigma_px}};
  j["lighting"] = {{"elevation_deg", c.lighting.elevation_deg},
                   {"azimuth_deg", c.lighting.azimuth_deg},
                   {"gain", c.lighting.gain},
                   {"ambient", c.lighting.ambient}};
  j["dataset"] = {{"n_images", c.dataset.n_images},
                  {"ball_diameter_mm", c.dataset.ball_diameter_mm},
                  {"min_press_mm", c.dataset.min_press_mm},
                  {"max_press_mm", c.dataset.max_press_mm},
                  {"seed", c.dataset.seed},
                  {"holdout_images", c.holdout_images},
                  {"labels", c.dataset.labels == LabelSource::Analytic ? "analytic" : "gel_surface"}};
  j["mlp"] = {{"lr", c.mlp.lr},
              {"dropout_rate", c.mlp.dropout_rate},
              {"dropout_free_epochs", c.mlp.dropout_free_epochs},
              {"epochs", c.mlp.epochs},
              {"batch_size", c.mlp.batch_size},
              {"hidden1", c.mlp.hidden1},
              {"hidden2", c.mlp.hidden2},
              {"seed", c.mlp.seed}};
  j["solver"] = {{"backend", to_string(c.solver.backend)}, {"median_filter", c.solver.median_filter}};
  j["calibration"] = {{"steps", c.calibration.steps},
                      {"step_depth_mm", c.calibration.step_depth_mm},
                      {"probe_radius_mm", c.calibration.probe_radius_mm},
                      {"probe_cap_radius_mm", c.calibration.probe_cap_radius_mm},
                      {"hertz_k", c.calibration.hertz_k}};
  const auto& sc = c.teleop;
  j["teleop"] = {{"control_rate_hz", sc.control_rate_hz},
                 {"sensor_rate_hz", sc.sensor_rate_hz},
                 {"seed", sc.seed},
                 {"mass_kg", sc.models.follower.mass_kg},
                 {"kp", sc.models.follower.kp},
                 {"kd", sc.models.follower.kd},
                 {"x_min_m", sc.models.follower.x_min_m},
                 {"x_max_m", sc.models.follower.x_max_m},
                 {"hand_stiffness", sc.models.op.hand_stiffness},
                 {"perception_threshold_n", sc.models.op.perception_threshold_n},
                 {"hertz_k", sc.models.contact.hertz.k},
                 {"object_half_width_m", sc.models.contact.object_half_width_m.value_or(0.0)},
                 {"sensor_mode", to_string(sc.sensor_mode)},
                 {"sensor_noise_n", sc.sensor_noise_n}};
  j["bus"] = {{"address", c.bus.address},
              {"frame_queue_depth", c.bus.frame_queue_depth},
              {"lossless_queue_limit", c.bus.lossless_queue_limit},
              {"state_rate_hz", c.bus.state_rate_hz}};
  j["bench"] = {{"frames", c.bench.frames}, {"warmup", c.bench.warmup}, {"press_depth_mm", c.bench.press_depth_mm}};
  return j.dump(2);
}

std::string config_fingerprint(const Config& c) { return short_fingerprint(config_to_json(c)); }

const char* to_string(DstBackend backend) {
  switch (backend) {
    case DstBackend::Auto: return "auto";
    case DstBackend::Direct: return "direct";
    case DstBackend::Matrix: return "matrix";
    case DstBackend::Fftw: return "fftw";
  }
  return "auto";
}

DstBackend dst_backend_from_string(const std::string& name) {
  if (name == "auto") return DstBackend::Auto;
  if (name == "direct") return DstBackend::Direct;
  if (name == "matrix") return DstBackend::Matrix;
  if (name == "fftw") return DstBackend::Fftw;
  throw FormatError("unknown DST backend '" + name + "' (expected auto, direct, matrix or fftw)");
}

}  // namespace tactiforce
