#pragma once

// Bus client with its own I/O thread. publish() never blocks on the network;
// received messages queue until receive() takes them.

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include "tactiforce/bus/protocol.hpp"
#include "tactiforce/bus/server.hpp"

namespace tactiforce::bus {

class Client {
 public:
  /// Connects and completes the WebSocket handshake. Throws BusError.
  explicit Client(const std::string& address,
                  std::chrono::milliseconds timeout = std::chrono::seconds(5));
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// Waits for the ACK; throws BusError with the NACK reason ("unknown_topic").
  void subscribe(const std::string& topic);
  void unsubscribe(const std::string& topic);

  /// Sends PUB with the next seq of this topic (1, 2, ...) and returns it.
  std::uint64_t publish(const std::string& topic, Json data);
  /// Sends the envelope unchanged.
  void send(const Envelope& envelope);
  /// Sends arbitrary text as one frame.
  void send_text(std::string text);

  /// Next message that is not the answer to subscribe/unsubscribe: PUB
  /// deliveries, NACKs of publishes and the server's CLOSE.
  std::optional<Envelope> receive(std::chrono::milliseconds timeout);

  /// Stops issuing socket reads so the server-side queue backs up.
  void pause_reading();
  void resume_reading();

  /// Blocks until every queued outgoing frame has been written.
  bool flush(std::chrono::milliseconds timeout = std::chrono::seconds(10));

  /// True once the connection ended or the server sent CLOSE.
  bool closed() const;
  bool close_received() const;

  /// Normal WebSocket close; idempotent.
  void close();

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace tactiforce::bus
