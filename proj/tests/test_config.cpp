#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "tactiforce/config.hpp"
#include "test_util.hpp"

using namespace tactiforce;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty text keeps the defaults") {
  const Config c = parse_config("");
  CHECK(config_to_json(c) == config_to_json(default_config()));
  CHECK(c.gel.width_px == 320);
  CHECK(c.gel.height_px == 240);
  CHECK(c.mlp.hidden1 == 64);
  CHECK(c.teleop.sensor_rate_hz == 30.0);
  CHECK(c.teleop.models.contact.object_half_width_m == 0.0125);
}

TEST_CASE("the shipped default file matches the built-in defaults") {
  const Config c = load_config(std::filesystem::path(TACTIFORCE_SOURCE_DIR) / "configs" / "default.toml");
  CHECK(config_to_json(c) == config_to_json(default_config()));
  CHECK(config_fingerprint(c) == config_fingerprint(default_config()));
}

TEST_CASE("overrides apply per key") {
  const Config c = parse_config(R"(
[gel]
width_px = 64
height_px = 48
[mlp]
epochs = 2
lr = 1e-2
[solver]
backend = "fftw"
median_filter = false
[teleop]
sensor_mode = "oracle"
)");
  CHECK(c.gel.width_px == 64);
  CHECK(c.gel.height_px == 48);
  CHECK(c.gel.pixel_pitch_mm == 0.05);
  CHECK(c.mlp.epochs == 2);
  CHECK(c.mlp.lr == 0.01);
  CHECK(c.mlp.batch_size == 256);
  CHECK(c.solver.backend == DstBackend::Fftw);
  CHECK_FALSE(c.solver.median_filter);
  CHECK(c.teleop.sensor_mode == SensorMode::Oracle);
}

TEST_CASE("integers are accepted where floats are expected") {
  CHECK(parse_config("[gel]\npixel_pitch_mm = 1\n").gel.pixel_pitch_mm == 1.0);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_of("[gel]\nwidth = 3\n").find("gel.width: unknown key") != std::string::npos);
  CHECK(error_of("colour = 1\n").find("colour: unknown key") != std::string::npos);
  CHECK(error_of("[mystery]\n").find("mystery") != std::string::npos);
}

TEST_CASE("wrong types are rejected") {
  CHECK(error_of("[mlp]\nepochs = \"five\"\n").find("mlp.epochs: expected an integer") != std::string::npos);
  CHECK(error_of("[mlp]\nepochs = 2.5\n").find("mlp.epochs") != std::string::npos);
  CHECK(error_of("[solver]\nmedian_filter = 1\n").find("expected a boolean") != std::string::npos);
  CHECK(error_of("[lighting]\nazimuth_deg = [1, 2]\n").find("array of 3") != std::string::npos);
  CHECK(error_of("gel = 3\n").find("expected a table") != std::string::npos);
  CHECK(error_of("[mlp]\nseed = -1\n").find(">= 0") != std::string::npos);
}

TEST_CASE("syntax errors carry line and column") {
  const std::string e = error_of("[gel]\nwidth_px = 64\nheight_px = = 2\n");
  CHECK(e.find("line 3") != std::string::npos);
  CHECK(e.find("column") != std::string::npos);
}

TEST_CASE("invalid values are rejected after parsing") {
  CHECK_FALSE(error_of("[mlp]\nepochs = 0\n").empty());
  CHECK_FALSE(error_of("[gel]\nwidth_px = 4\n").empty());
  CHECK_FALSE(error_of("[dataset]\nholdout_images = 40\n").empty());
  CHECK_FALSE(error_of("[teleop]\nsensor_rate_hz = 5000.0\n").empty());
  CHECK_FALSE(error_of("[solver]\nbackend = \"gpu\"\n").empty());
  CHECK_FALSE(error_of("[dataset]\nlabels = \"guess\"\n").empty());
  CHECK_FALSE(error_of("[calibration]\nsteps = 3\n").empty());
}

TEST_CASE("environment overrides the bus address") {
  Config c = default_config();
  ::setenv("TACTIFORCE_BUS_ADDR", "127.0.0.1:9999", 1);
  apply_environment(c);
  ::unsetenv("TACTIFORCE_BUS_ADDR");
  CHECK(c.bus.address == "127.0.0.1:9999");
  Config d = default_config();
  apply_environment(d);
  CHECK(d.bus.address == "127.0.0.1:8765");
}

TEST_CASE("fingerprints are stable and sensitive") {
  const std::string a = config_fingerprint(default_config());
  CHECK(a.size() == 16);
  CHECK(a == config_fingerprint(default_config()));
  Config c = default_config();
  c.mlp.seed = 43;
  CHECK(config_fingerprint(c) != a);
}

TEST_CASE("missing config file") {
  CHECK_THROWS_AS(load_config(scratch_path("does-not-exist.toml")), ConfigError);
}

TEST_CASE("file errors name the file") {
  const auto path = scratch_path("bad.toml");
  std::ofstream(path) << "[gel]\nwidth_px = \"wide\"\n";
  try {
    load_config(path);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.toml") != std::string::npos);
  }
}

}  // TEST_SUITE
