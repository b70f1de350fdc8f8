#include "tactiforce/bus/protocol.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <limits>

#include "tactiforce/errors.hpp"
#include "tactiforce/fingerprint.hpp"

namespace tactiforce::bus {

namespace {

constexpr std::array<std::pair<MsgType, const char*>, 6> kTypeNames{{
    {MsgType::Sub, "SUB"},
    {MsgType::Unsub, "UNSUB"},
    {MsgType::Pub, "PUB"},
    {MsgType::Ack, "ACK"},
    {MsgType::Nack, "NACK"},
    {MsgType::Close, "CLOSE"},
}};

void require_object(const Json& j, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw FormatError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

const Json& field(const Json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string(what) + ": missing key '" + key + "'");
  return *it;
}

double number(const Json& j, const char* key, const char* what) {
  const Json& v = field(j, key, what);
  if (!v.is_number()) throw FormatError(std::string(what) + "." + key + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw FormatError(std::string(what) + "." + key + ": not finite");
  return d;
}

std::int64_t integer(const Json& j, const char* key, const char* what) {
  const Json& v = field(j, key, what);
  if (!v.is_number_integer()) throw FormatError(std::string(what) + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

bool boolean(const Json& j, const char* key, const char* what) {
  const Json& v = field(j, key, what);
  if (!v.is_boolean()) throw FormatError(std::string(what) + "." + key + ": expected a boolean");
  return v.get<bool>();
}

}  // namespace

const char* to_string(MsgType type) {
  for (const auto& [t, name] : kTypeNames) {
    if (t == type) return name;
  }
  return "?";
}

MsgType msg_type_from_string(const std::string& name) {
  for (const auto& [t, n] : kTypeNames) {
    if (name == n) return t;
  }
  throw FormatError("unknown message type '" + name + "'");
}

double now_stamp() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

Json envelope_to_json(const Envelope& e) {
  Json j;
  j["topic"] = e.topic;
  j["seq"] = e.seq;
  j["stamp"] = e.stamp;
  j["type"] = to_string(e.type);
  j["data"] = e.data;
  return j;
}

std::string encode(const Envelope& e) { return envelope_to_json(e).dump(); }

Envelope envelope_from_json(const Json& j) {
  constexpr const char* what = "envelope";
  require_object(j, what);
  reject_unknown(j, {"topic", "seq", "stamp", "type", "data"}, what);
  Envelope e;
  const Json& topic = field(j, "topic", what);
  if (!topic.is_string()) throw FormatError("envelope.topic: expected a string");
  e.topic = topic.get<std::string>();
  const Json& seq = field(j, "seq", what);
  if (!seq.is_number_unsigned() && !(seq.is_number_integer() && seq.get<std::int64_t>() >= 0)) {
    throw FormatError("envelope.seq: expected a non-negative integer");
  }
  e.seq = seq.get<std::uint64_t>();
  e.stamp = number(j, "stamp", what);
  const Json& type = field(j, "type", what);
  if (!type.is_string()) throw FormatError("envelope.type: expected a string");
  e.type = msg_type_from_string(type.get<std::string>());
  if (auto it = j.find("data"); it != j.end()) e.data = *it;
  return e;
}

Envelope decode(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& err) {
    throw FormatError(std::string("envelope: invalid JSON (") + err.what() + ")");
  }
  return envelope_from_json(j);
}

TopicRegistry default_registry() {
  return {
      {topics::kLeaderState, {Schema::State, Qos::Lossless}},
      {topics::kFollowerState, {Schema::State, Qos::Lossless}},
      {topics::kFrame, {Schema::Frame, Qos::Lossy}},
      {topics::kForce, {Schema::Force, Qos::Lossless}},
      {topics::kCommand, {Schema::Command, Qos::Lossless}},
  };
}

StateRecord leader_record(const TeleopState& s, bool feedback) {
  return {s.t, s.x_l, s.x_h, 0.0, s.f_l, s.f_ld, feedback};
}

StateRecord follower_record(const TeleopState& s, bool feedback) {
  return {s.t, s.x_f, s.x_fd, s.v_f, s.f_s, s.f_s, feedback};
}

Json to_json(const StateRecord& r) {
  Json j;
  j["t"] = r.t;
  j["x"] = r.x;
  j["x_set"] = r.x_set;
  j["v"] = r.v;
  j["f"] = r.f;
  j["f_set"] = r.f_set;
  j["feedback"] = r.feedback;
  return j;
}

Json to_json(const ForceRecord& r) {
  Json j;
  j["frame_id"] = r.frame_id;
  j["t"] = r.timestamp_s;
  j["force_n"] = r.force_n;
  j["max_depth_mm"] = r.max_depth_mm;
  j["clamped"] = r.clamped;
  return j;
}

Json to_json(const FrameRef& f) {
  Json j;
  j["frame_id"] = f.frame_id;
  j["t"] = f.t;
  j["width"] = f.image.width;
  j["height"] = f.image.height;
  j["tfr"] = base64_encode(encode_tfr(f.image));
  return j;
}

Json to_json(const OperatorCmd& c) {
  Json j;
  j["x_m"] = c.x_m;
  if (c.feedback) j["feedback"] = *c.feedback;
  return j;
}

StateRecord state_from_json(const Json& j) {
  constexpr const char* what = "state";
  require_object(j, what);
  reject_unknown(j, {"t", "x", "x_set", "v", "f", "f_set", "feedback"}, what);
  return {number(j, "t", what),     number(j, "x", what), number(j, "x_set", what),
          number(j, "v", what),     number(j, "f", what), number(j, "f_set", what),
          boolean(j, "feedback", what)};
}

ForceRecord force_from_json(const Json& j) {
  constexpr const char* what = "force";
  require_object(j, what);
  reject_unknown(j, {"frame_id", "t", "force_n", "max_depth_mm", "clamped"}, what);
  ForceRecord r;
  r.frame_id = integer(j, "frame_id", what);
  r.timestamp_s = number(j, "t", what);
  r.force_n = number(j, "force_n", what);
  r.max_depth_mm = number(j, "max_depth_mm", what);
  r.clamped = boolean(j, "clamped", what);
  return r;
}

FrameRef frame_from_json(const Json& j) {
  constexpr const char* what = "frame";
  require_object(j, what);
  reject_unknown(j, {"frame_id", "t", "width", "height", "tfr"}, what);
  FrameRef f;
  f.frame_id = integer(j, "frame_id", what);
  f.t = number(j, "t", what);
  const std::int64_t w = integer(j, "width", what);
  const std::int64_t h = integer(j, "height", what);
  const Json& tfr = field(j, "tfr", what);
  if (!tfr.is_string()) throw FormatError("frame.tfr: expected a base64 string");
  f.image = decode_tfr(base64_decode(tfr.get_ref<const std::string&>()));
  if (static_cast<std::int64_t>(f.image.width) != w || static_cast<std::int64_t>(f.image.height) != h) throw FormatError("frame: size does not match the container");
  return f;
}

OperatorCmd command_from_json(const Json& j) {
  constexpr const char* what = "command";
  require_object(j, what);
  reject_unknown(j, {"x_m", "feedback"}, what);
  OperatorCmd c;
  c.x_m = number(j, "x_m", what);
  if (j.contains("feedback")) c.feedback = boolean(j, "feedback", what);
  return c;
}

void check_schema(Schema schema, const Json& data) {
  switch (schema) {
    case Schema::State: state_from_json(data); return;
    case Schema::Force: force_from_json(data); return;
    case Schema::Frame: frame_from_json(data); return;
    case Schema::Command: command_from_json(data); return;
  }
}

}  // namespace tactiforce::bus
