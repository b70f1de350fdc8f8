#pragma once

// Bus sessions on disk: JSON-lines, one envelope per line plus the receive
// stamp under "recv".

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tactiforce/bus/client.hpp"

namespace tactiforce::bus {

struct RecordedMessage {
  Envelope envelope;
  double recv = 0.0;  // s
};

std::string record_line(const RecordedMessage& message);
/// Throws FormatError.
RecordedMessage parse_record_line(const std::string& line);

class RecordWriter {
 public:
  explicit RecordWriter(const std::filesystem::path& path);
  void write(const Envelope& envelope, double recv_stamp);
  std::size_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::size_t count_ = 0;
};

/// Reads the whole file; a bad line throws FormatError naming its 1-based number.
std::vector<RecordedMessage> read_recording(const std::filesystem::path& path);

/// Subscribes to `topics` and writes every PUB delivery until `stop` is set,
/// the duration elapses or the server closes. Returns the message count.
std::size_t record(Client& client, const std::vector<std::string>& topics, const std::filesystem::path& path,
                   const std::atomic<bool>& stop, std::chrono::milliseconds duration = std::chrono::milliseconds::max());

/// Republishes every message of the file with the original receive spacing
/// divided by speed. Seq and stamps are regenerated by the client, payloads
/// are sent unchanged. The file is validated before the first publish.
std::size_t replay(Client& client, const std::filesystem::path& path, double speed);

}  // namespace tactiforce::bus
