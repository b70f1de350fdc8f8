#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "tactiforce/bus/client.hpp"
#include "tactiforce/bus/server.hpp"
#include "tactiforce/cli.hpp"
#include "tactiforce/mlp.hpp"
#include "test_util.hpp"

using namespace tactiforce;
using namespace std::chrono_literals;
using cli::Json;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"tactiforce"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(TACTIFORCE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small gel and short training so the commands finish in seconds.
Config small_config() {
  Config c = default_config();
  c.gel.width_px = 80;
  c.gel.height_px = 60;
  c.gel.pixel_pitch_mm = 0.2;
  c.dataset.n_images = 8;
  c.holdout_images = 2;
  c.mlp.epochs = 2;
  c.mlp.hidden1 = 16;
  c.mlp.hidden2 = 16;
  c.bench.frames = 20;
  c.bench.warmup = 2;
  return c;
}

std::filesystem::path small_config_file() {
  const auto path = scratch_path("small.toml");
  std::ofstream(path) << "[gel]\nwidth_px = 80\nheight_px = 60\npixel_pitch_mm = 0.2\n"
                         "[dataset]\nn_images = 8\nholdout_images = 2\n"
                         "[mlp]\nepochs = 2\nhidden1 = 16\nhidden2 = 16\n";
  return path;
}

std::string grasp_scenario() { return (std::filesystem::path(TACTIFORCE_SOURCE_DIR) / "scenarios" / "grasp.scenario.json").string(); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"bogus"}).code == 2);
  CHECK(run_cli({"train"}).code == 2);
  CHECK(run_cli({"calibrate", "--mode", "sideways", "--out", "x"}).code == 2);
  CHECK(run_cli({"simulate", "--scenario", grasp_scenario(), "--out", "x", "--sensor", "psychic"}).code == 2);
  CHECK(run_cli({"bench", "--backend", "gpu"}).code == 2);
  CHECK(run_cli({"--config", "missing.toml", "bench"}).code == 2);
}

TEST_CASE("invalid values name the offending setting") {
  const Outcome o = run_cli({"train", "--out", scratch_path("never.mlp").string(), "--epochs", "0"});
  CHECK(o.code == 2);
  CHECK(o.err.find("epochs") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(scratch_path("never.mlp")));
}

TEST_CASE("help lists every subcommand and exits with 0") {
  const Outcome o = run_cli({"--help"});
  CHECK(o.code == 0);
  for (const char* word : {"train", "calibrate", "reconstruct", "simulate", "serve", "bench", "--epochs", "--feedback",
                           "--address", "--press-depth"}) {
    CHECK_MESSAGE(o.out.find(word) != std::string::npos, word);
  }
}

TEST_CASE("runtime failures exit with 1") {
  const Outcome o = run_cli({"calibrate", "--mode", "full", "--out", scratch_path("c.json").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("--checkpoint") != std::string::npos);
  CHECK(run_cli({"calibrate", "--mode", "full", "--checkpoint", "nope.mlp", "--out", scratch_path("c.json").string()})
            .code == 1);
}

TEST_CASE("the installed binary uses the same exit codes") {
  CHECK(run_binary("--help") == 0);
  CHECK(run_binary("bogus") == 2);
  CHECK(run_binary("calibrate --mode full --out " + scratch_path("bin.json").string()) == 1);
}

TEST_CASE("train writes checkpoint, sidecar and metrics deterministically") {
  const auto a = scratch_path("a.mlp");
  const auto b = scratch_path("b.mlp");
  const std::string cfg = small_config_file().string();
  const Outcome first = run_cli({"--config", cfg, "train", "--out", a.string()});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  REQUIRE(run_cli({"--config", cfg, "train", "--out", b.string()}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a.string() + ".metrics.json") == slurp(b.string() + ".metrics.json"));

  const MlpParams params = read_checkpoint(a);
  CHECK(params.hidden1() == 16);
  const Json sidecar = Json::parse(slurp(a.string() + ".json"));
  CHECK(sidecar.at("format") == "MLP1");
  CHECK(sidecar.at("checkpoint_sha256").get<std::string>().size() == 64);
  CHECK(sidecar.at("train_config").at("epochs") == 2);
  const Json metrics = Json::parse(first.out);
  CHECK(metrics.at("loss_history").size() == 2);
  CHECK(metrics.at("holdout_images") == 2);
  CHECK(metrics.at("holdout_angular_error_deg").is_number());
  CHECK(metrics.at("config_fingerprint") == config_fingerprint(load_config(cfg)));
}

TEST_CASE("changing the seed changes the checkpoint") {
  const Config c = small_config();
  Config d = c;
  d.mlp.seed = c.mlp.seed + 1;
  std::ostringstream log;
  cli::cmd_train(c, {scratch_path("s1.mlp")}, log);
  cli::cmd_train(d, {scratch_path("s2.mlp")}, log);
  CHECK(slurp(scratch_path("s1.mlp")) != slurp(scratch_path("s2.mlp")));
}

TEST_CASE("oracle calibration fits the Hertz law") {
  const auto out = scratch_path("curve.json");
  std::ostringstream log;
  const Json j = cli::cmd_calibrate(small_config(), {cli::CalibrateMode::Oracle, std::nullopt, out, std::nullopt}, log);
  CHECK(j.at("r_squared").get<double>() >= 0.999);
  CHECK(j.at("samples") == 25);
  CHECK(std::filesystem::exists(out));
  CHECK(std::filesystem::exists(scratch_path("curve.csv")));
  CHECK(read_curve(out).r_squared == j.at("r_squared").get<double>());
}

TEST_CASE("reconstruct reports a deeper peak for a deeper press") {
  const Config c = small_config();
  const auto ckpt = scratch_path("rec.mlp");
  std::ostringstream log;
  Config trained = c;
  trained.mlp.epochs = 6;
  trained.dataset.n_images = 16;
  cli::cmd_train(trained, {ckpt}, log);
  cli::ReconstructOptions o;
  o.checkpoint = ckpt;
  o.press_depth_mm = 0.4;
  o.frame_out = scratch_path("press.tfr");
  o.depth_out = scratch_path("depth.tfr");
  o.frame_id = 9;
  const Json shallow = cli::cmd_reconstruct(c, o);
  CHECK(shallow.at("frame_id") == 9);
  CHECK(std::filesystem::exists(*o.depth_out));

  cli::ReconstructOptions from_file;
  from_file.checkpoint = ckpt;
  from_file.frame = scratch_path("press.tfr");
  const Json again = cli::cmd_reconstruct(c, from_file);
  CHECK(again.at("max_depth_mm").get<double>() == doctest::Approx(shallow.at("max_depth_mm").get<double>()).epsilon(1e-5));

  o.press_depth_mm = 1.0;
  o.frame_out.reset();
  const Json deep = cli::cmd_reconstruct(c, o);
  CHECK(deep.at("max_depth_mm").get<double>() > shallow.at("max_depth_mm").get<double>());

  cli::ReconstructOptions neither;
  neither.checkpoint = ckpt;
  CHECK_THROWS_AS(cli::cmd_reconstruct(c, neither), cli::CommandError);
}

TEST_CASE("simulate is deterministic and feedback cuts the grip error") {
  const auto a = scratch_path("a.jsonl");
  const auto b = scratch_path("b.jsonl");
  REQUIRE(run_cli({"simulate", "--scenario", grasp_scenario(), "--out", a.string()}).code == 0);
  REQUIRE(run_cli({"simulate", "--scenario", grasp_scenario(), "--out", b.string()}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(Json::parse(slurp(a.string() + ".metrics.json")).at("steps") == 12000);

  const Outcome off = run_cli({"simulate", "--scenario", grasp_scenario(), "--out", scratch_path("off.jsonl").string(),
                               "--feedback", "off"});
  const Outcome on = run_cli({"simulate", "--scenario", grasp_scenario(), "--out", scratch_path("on.jsonl").string(),
                              "--feedback", "on"});
  REQUIRE(off.code == 0);
  REQUIRE(on.code == 0);
  const double e_off = Json::parse(off.out).at("regions").at("b").at("mean_error").get<double>();
  const double e_on = Json::parse(on.out).at("regions").at("b").at("mean_error").get<double>();
  MESSAGE("region b error off " << e_off << " m, on " << e_on << " m");
  CHECK(e_off >= 5.0 * e_on);
}

TEST_CASE("pipeline simulation needs a checkpoint") {
  const Outcome o = run_cli({"simulate", "--scenario", grasp_scenario(), "--out", scratch_path("p.jsonl").string(), "--sensor",
                             "pipeline"});
  CHECK(o.code == 1);
}

TEST_CASE("bench reports throughput and stage latencies") {
  const auto out = scratch_path("bench.json");
  const Json r = cli::cmd_bench(small_config(), {std::nullopt, out});
  CHECK(r.at("frames") == 20);
  CHECK(r.at("weights") == "random");
  CHECK(r.at("fps").get<double>() > 0.0);
  for (const char* stage : {"mlp", "solver", "regression", "total"}) {
    const Json& s = r.at("stages").at(stage);
    CHECK(s.at("p50_ms").get<double>() >= 0.0);
    CHECK(s.at("p95_ms").get<double>() >= s.at("p50_ms").get<double>());
  }
  CHECK(Json::parse(slurp(out)) == r);

  const Outcome scaled = run_cli({"--config", small_config_file().string(), "bench", "--width", "40", "--height", "30",
                                  "--frames", "5"});
  REQUIRE(scaled.code == 0);
  const Json sj = Json::parse(scaled.out);
  CHECK(sj.at("width") == 40);
  CHECK(sj.at("frames") == 5);
}

TEST_CASE("percentile interpolates between order statistics") {
  CHECK(cli::percentile({}, 0.5) == 0.0);
  CHECK(cli::percentile({3.0}, 0.95) == 3.0);
  CHECK(cli::percentile({4.0, 1.0, 3.0, 2.0}, 0.5) == 2.5);
  CHECK(cli::percentile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.95) == doctest::Approx(4.8));
  CHECK(cli::percentile({1.0, 2.0}, 1.0) == 2.0);
}

TEST_CASE("serve streams all topics and follows operator commands") {
  std::uint16_t port = 0;
  {
    bus::Server probe({"127.0.0.1:0"});
    port = probe.port();
  }
  Config c = small_config();
  c.bus.address = "127.0.0.1:" + std::to_string(port);
  std::atomic<bool> stop{false};
  std::ostringstream log;
  std::exception_ptr failure;
  std::thread serve([&] {
    try {
      cli::cmd_serve(c, {}, stop, log);
    } catch (...) {
      failure = std::current_exception();
    }
  });

  std::unique_ptr<bus::Client> client;
  for (int i = 0; i < 100 && !client; ++i) {
    try {
      client = std::make_unique<bus::Client>(c.bus.address);
    } catch (const bus::BusError&) {
      std::this_thread::sleep_for(50ms);
    }
  }
  REQUIRE(client);
  for (const char* t : {bus::topics::kLeaderState, bus::topics::kFollowerState, bus::topics::kForce, bus::topics::kFrame}) {
    client->subscribe(t);
  }
  client->publish(bus::topics::kCommand, bus::to_json(bus::OperatorCmd{0.01, true}));

  std::map<std::string, int> seen;
  double last_x_set = 0.0, last_force = 0.0;
  const auto until = std::chrono::steady_clock::now() + 3s;
  while (std::chrono::steady_clock::now() < until) {
    auto env = client->receive(100ms);
    if (!env || env->type != bus::MsgType::Pub) continue;
    ++seen[env->topic];
    if (env->topic == bus::topics::kLeaderState) last_x_set = bus::state_from_json(env->data).x_set;
    if (env->topic == bus::topics::kForce) last_force = bus::force_from_json(env->data).force_n;
    if (env->topic == bus::topics::kFrame) CHECK(bus::frame_from_json(env->data).image.width == 80);
  }
  stop = true;
  bool closed = false;
  while (auto env = client->receive(2s)) {
    if (env->type == bus::MsgType::Close) closed = true;
  }
  serve.join();
  CHECK_FALSE(failure);
  CHECK(closed);
  CHECK(seen[bus::topics::kLeaderState] > 100);
  CHECK(seen[bus::topics::kFollowerState] > 100);
  CHECK(seen[bus::topics::kForce] >= 60);
  CHECK(seen[bus::topics::kFrame] >= 1);
  CHECK(last_x_set == 0.01);
  CHECK(last_force > 0.0);
}

}  // TEST_SUITE
