#include <chrono>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

#include "tactiforce/bus/client.hpp"
#include "tactiforce/bus/server.hpp"
#include "tactiforce/cli.hpp"
#include "tactiforce/errors.hpp"
#include "tactiforce/field_io.hpp"
#include "tactiforce/poisson.hpp"

namespace tactiforce::cli {

namespace {

using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

// f_s for the control loop is whatever the force stage last published.
class BusForceSensor final : public ForceSensor {
 public:
  double measure(double, double, std::int64_t) override { return latest; }
  double latest = 0.0;
};

struct LiveSetup {
  Scenario scenario;
  bus::ServerOptions server;
  CalibrationRig rig;
  PolyCurve curve;
  std::optional<MlpParams> params;
  double state_rate_hz = 100.0;
  bool feedback = true;
};

// Renders the gel under the current penetration at the sensor rate and
// publishes force and frame. Talks to the loop only through the bus.
void force_stage(const LiveSetup& setup, const std::string& address, const std::atomic<bool>& stop,
                 std::ostream& log) {
  bus::Client client(address);
  client.subscribe(bus::topics::kFollowerState);
  const ContactModel& contact = setup.scenario.models.contact;
  std::unique_ptr<ForcePipeline> pipeline;
  if (setup.params) {
    pipeline = std::make_unique<ForcePipeline>(*setup.params, setup.curve, setup.rig.gel.pixel_pitch_mm, Exec::Serial);
  }
  HertzSensor hertz(contact.hertz, setup.scenario.sensor_noise_n, setup.scenario.seed);

  double x_f = setup.scenario.models.follower.x_max_m;
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / setup.scenario.sensor_rate_hz));
  const auto start = Clock::now();
  std::int64_t tick = 0;
  while (!stop.load() && !client.closed()) {
    while (auto env = client.receive(0ms)) {
      if (env->type == bus::MsgType::Pub && env->topic == bus::topics::kFollowerState) {
        x_f = bus::state_from_json(env->data).x;
      }
    }
    const double t = std::chrono::duration<double>(Clock::now() - start).count();
    const double pen = contact.penetration_mm(x_f);
    Indenter probe = setup.rig.probe;
    probe.press_depth_mm = std::min(pen, setup.rig.gel.max_indent_mm);
    const DepthMap depth = indent_depth(setup.rig.gel, probe, Exec::Serial);
    TactileFrame frame = render(normals_from_depth(depth, Exec::Serial), setup.rig.lighting, Exec::Serial);
    frame.frame_id = tick;
    frame.timestamp_s = t;

    ForceRecord rec;
    rec.frame_id = tick;
    rec.timestamp_s = t;
    switch (setup.scenario.sensor_mode) {
      case SensorMode::Hertz:
        rec.max_depth_mm = pen;
        rec.force_n = hertz.measure(pen, t, tick);
        break;
      case SensorMode::Oracle: {
        rec.max_depth_mm = max_depth(depth, false);
        const ForceEstimate e = eval_force(setup.curve, rec.max_depth_mm);
        rec.force_n = e.force_n;
        rec.clamped = e.clamped;
        break;
      }
      case SensorMode::Pipeline:
        try {
          rec = pipeline->process(frame);
        } catch (const std::exception& e) {
          log << "frame " << tick << ": " << e.what() << "\n";
          break;
        }
        break;
    }
    client.publish(bus::topics::kForce, bus::to_json(rec));
    client.publish(bus::topics::kFrame, bus::to_json(bus::FrameRef{tick, t, to_tfr(frame)}));
    ++tick;
    std::this_thread::sleep_until(start + tick * period);
  }
}

// Real-time control loop: operator commands and forces in, leader and
// follower state out.
void teleop_stage(const LiveSetup& setup, const std::string& address, const std::atomic<bool>& stop) {
  bus::Client client(address);
  client.subscribe(bus::topics::kCommand);
  client.subscribe(bus::topics::kForce);
  const Scenario& sc = setup.scenario;
  const double dt = 1.0 / sc.control_rate_hz;
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(dt));
  const int publish_every = std::max(1, static_cast<int>(std::lround(sc.control_rate_hz / setup.state_rate_hz)));

  double x_cmd = sc.trajectory.empty() ? sc.models.follower.x_max_m : sc.command_at(0.0);
  bool feedback = setup.feedback;
  TeleopState s;
  s.x_h = s.x_l = s.x_fd = s.x_f = std::clamp(x_cmd, sc.models.follower.x_min_m, sc.models.follower.x_max_m);
  OperatorHold hold;
  BusForceSensor sensor;

  const auto start = Clock::now();
  std::int64_t k = 0;
  while (!stop.load() && !client.closed()) {
    bool tick = false;
    while (auto env = client.receive(0ms)) {
      if (env->type != bus::MsgType::Pub) continue;
      if (env->topic == bus::topics::kCommand) {
        const bus::OperatorCmd cmd = bus::command_from_json(env->data);
        x_cmd = cmd.x_m;
        if (cmd.feedback) feedback = *cmd.feedback;
      } else if (env->topic == bus::topics::kForce) {
        sensor.latest = bus::force_from_json(env->data).force_n;
        tick = true;
      }
    }
    s = step(s, sc.models, {x_cmd, feedback, tick}, dt, hold, sensor);
    if (k % publish_every == 0) {
      client.publish(bus::topics::kLeaderState, bus::to_json(bus::leader_record(s, feedback)));
      client.publish(bus::topics::kFollowerState, bus::to_json(bus::follower_record(s, feedback)));
    }
    ++k;
    std::this_thread::sleep_until(start + k * period);
  }
}

}  // namespace

void cmd_serve(const Config& config, const ServeOptions& options, const std::atomic<bool>& stop, std::ostream& log) {
  config.validate();
  LiveSetup setup;
  setup.scenario = config.teleop;
  if (options.sensor) setup.scenario.sensor_mode = *options.sensor;
  setup.feedback = options.feedback;
  setup.state_rate_hz = config.bus.state_rate_hz;
  setup.rig = config.calibration.rig(config.gel, config.lighting.model());
  setup.rig.hertz = setup.scenario.models.contact.hertz;
  if (options.checkpoint) setup.params = read_checkpoint(*options.checkpoint);
  if (setup.scenario.sensor_mode == SensorMode::Pipeline && !setup.params) {
    throw CommandError("pipeline sensor mode needs --checkpoint");
  }
  if (options.curve) {
    setup.curve = read_curve(*options.curve);
  } else if (setup.scenario.sensor_mode != SensorMode::Hertz) {
    log << "calibrating...\n";
    setup.curve = fit_poly3(run_calibration(setup.rig, setup.params ? CalibPipeline::Full : CalibPipeline::Oracle,
                                            setup.params ? &*setup.params : nullptr));
  }
  setup.server.address = config.bus.address;
  setup.server.lossy_queue_depth = static_cast<std::size_t>(config.bus.frame_queue_depth);
  setup.server.lossless_queue_limit = static_cast<std::size_t>(config.bus.lossless_queue_limit);

  bus::Server server(setup.server);
  const std::string address = server.address();
  log << "serving on ws://" << address << " (sensor " << to_string(setup.scenario.sensor_mode) << ", feedback "
      << (setup.feedback ? "on" : "off") << ")\n";

  std::atomic<bool> halt{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto guarded = [&](auto&& body) {
    return std::thread([&, body] {
      try {
        body();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        halt.store(true);
      }
    });
  };
  std::thread forces = guarded([&] { force_stage(setup, address, halt, log); });
  std::thread loop = guarded([&] { teleop_stage(setup, address, halt); });

  const auto start = Clock::now();
  while (!stop.load() && !halt.load()) {
    if (options.duration_s > 0.0 && std::chrono::duration<double>(Clock::now() - start).count() >= options.duration_s) break;
    std::this_thread::sleep_for(20ms);
  }
  halt.store(true);
  forces.join();
  loop.join();
  server.stop();
  log << "stopped\n";
  if (failure) std::rethrow_exception(failure);
}

}  // namespace tactiforce::cli
