#include "tactiforce/bus/recorder.hpp"

#include <cmath>
#include <thread>

#include "tactiforce/errors.hpp"

namespace tactiforce::bus {

std::string record_line(const RecordedMessage& m) {
  Json j = envelope_to_json(m.envelope);
  j["recv"] = m.recv;
  return j.dump();
}

RecordedMessage parse_record_line(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("invalid JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw FormatError("expected a JSON object");
  auto it = j.find("recv");
  if (it == j.end() || !it->is_number()) throw FormatError("missing numeric 'recv'");
  RecordedMessage m;
  m.recv = it->get<double>();
  if (!std::isfinite(m.recv)) throw FormatError("'recv' is not finite");
  j.erase("recv");
  m.envelope = envelope_from_json(j);
  if (m.envelope.type != MsgType::Pub) throw FormatError("only PUB envelopes can be recorded");
  return m;
}

RecordWriter::RecordWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw FormatError("cannot open " + path.string() + " for writing");
}

void RecordWriter::write(const Envelope& envelope, double recv_stamp) {
  out_ << record_line({envelope, recv_stamp}) << '\n';
  out_.flush();
  if (!out_) throw FormatError("write failed");
  ++count_;
}

std::vector<RecordedMessage> read_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<RecordedMessage> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::size_t record(Client& client, const std::vector<std::string>& topics, const std::filesystem::path& path,
                   const std::atomic<bool>& stop, std::chrono::milliseconds duration) {
  RecordWriter writer(path);
  for (const auto& t : topics) client.subscribe(t);
  const auto start = std::chrono::steady_clock::now();
  const auto deadline = duration == std::chrono::milliseconds::max() ? std::chrono::steady_clock::time_point::max()
                                                                     : start + duration;
  while (!stop.load() && std::chrono::steady_clock::now() < deadline) {
    auto env = client.receive(std::chrono::milliseconds(20));
    if (!env) {
      if (client.closed()) break;
      continue;
    }
    if (env->type == MsgType::Close) break;
    if (env->type != MsgType::Pub) continue;
    writer.write(*env, now_stamp());
  }
  return writer.count();
}

std::size_t replay(Client& client, const std::filesystem::path& path, double speed) {
  if (!(speed > 0.0) || !std::isfinite(speed)) throw DomainError("replay speed must be > 0");
  const std::vector<RecordedMessage> messages = read_recording(path);
  if (messages.empty()) return 0;
  const auto start = std::chrono::steady_clock::now();
  const double t0 = messages.front().recv;
  for (const auto& m : messages) {
    const auto offset = std::chrono::duration<double>((m.recv - t0) / speed);
    std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(offset));
    client.publish(m.envelope.topic, m.envelope.data);
  }
  client.flush();
  return messages.size();
}

}  // namespace tactiforce::bus
