#pragma once

// Wire format of the telemetry bus: WebSocket text frames, each one JSON
// envelope {topic, seq, stamp, type, data}.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tactiforce/field_io.hpp"
#include "tactiforce/force.hpp"
#include "tactiforce/teleop.hpp"

namespace tactiforce::bus {

using Json = nlohmann::ordered_json;

/// SUB/UNSUB/PUB come from clients; ACK/NACK/CLOSE come from the server.
enum class MsgType { Sub, Unsub, Pub, Ack, Nack, Close };

const char* to_string(MsgType type);
MsgType msg_type_from_string(const std::string& name);

struct Envelope {
  std::string topic;
  std::uint64_t seq = 0;
  double stamp = 0.0;  // s, sender wall clock
  MsgType type = MsgType::Pub;
  Json data;  // null for control verbs without a body

  bool operator==(const Envelope&) const = default;
};

/// Seconds since the Unix epoch, system clock.
double now_stamp();

std::string encode(const Envelope& envelope);
/// Throws FormatError on bad JSON, missing or extra keys, or wrong types.
Envelope decode(const std::string& text);
Envelope envelope_from_json(const Json& object);
Json envelope_to_json(const Envelope& envelope);

enum class Schema { State, Force, Frame, Command };
/// Lossless topics deliver every message or fail the connection; lossy topics
/// keep a bounded queue per subscriber and drop the oldest entry when full.
enum class Qos { Lossless, Lossy };

struct TopicInfo {
  Schema schema = Schema::State;
  Qos qos = Qos::Lossless;
};

using TopicRegistry = std::map<std::string, TopicInfo, std::less<>>;

namespace topics {
inline constexpr const char* kLeaderState = "/leader/state";
inline constexpr const char* kFollowerState = "/follower/state";
inline constexpr const char* kFrame = "/digit/frame";
inline constexpr const char* kForce = "/digit/force";
inline constexpr const char* kCommand = "/operator/cmd";
}  // namespace topics

/// The five fixed topics; only /digit/frame is lossy.
TopicRegistry default_registry();

/// One side of the gripper. Leader: x = x_l, x_set = x_h, f = f_l,
/// f_set = f_ld. Follower: x = x_f, x_set = x_fd, f = f_s, f_set = f_s.
struct StateRecord {
  double t = 0.0;
  double x = 0.0;
  double x_set = 0.0;
  double v = 0.0;
  double f = 0.0;
  double f_set = 0.0;
  bool feedback = false;

  bool operator==(const StateRecord&) const = default;
};

StateRecord leader_record(const TeleopState& state, bool feedback);
StateRecord follower_record(const TeleopState& state, bool feedback);

struct FrameRef {
  std::int64_t frame_id = 0;
  double t = 0.0;
  TfrImage image;  // base64 "TFR1" container on the wire
};

struct OperatorCmd {
  double x_m = 0.0;
  std::optional<bool> feedback;  // absent: keep the current mode

  bool operator==(const OperatorCmd&) const = default;
};

Json to_json(const StateRecord& record);
Json to_json(const ForceRecord& record);
Json to_json(const FrameRef& frame);
Json to_json(const OperatorCmd& cmd);

StateRecord state_from_json(const Json& data);
ForceRecord force_from_json(const Json& data);
FrameRef frame_from_json(const Json& data);
OperatorCmd command_from_json(const Json& data);

/// Throws FormatError when data does not decode as the schema.
void check_schema(Schema schema, const Json& data);

}  // namespace tactiforce::bus
