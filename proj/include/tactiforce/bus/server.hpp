#pragma once

// WebSocket pub/sub broker. One I/O thread multiplexes every connection;
// sessions exchange messages only through per-session write queues.

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "tactiforce/bus/protocol.hpp"

namespace tactiforce::bus {

class BusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;
};

/// "host:port"; throws BusError when malformed.
Endpoint parse_endpoint(const std::string& address);

struct ServerOptions {
  std::string address = "127.0.0.1:8765";  // port 0 picks a free port
  TopicRegistry registry = default_registry();
  std::size_t lossy_queue_depth = 64;
  /// A subscriber whose lossless backlog exceeds this is disconnected with an
  /// error frame rather than silently losing messages.
  std::size_t lossless_queue_limit = 65536;
};

struct TopicStats {
  std::uint64_t published = 0;
  std::uint64_t delivered = 0;  // handed to a subscriber socket
  std::uint64_t dropped = 0;    // lossy overflow, summed over subscribers
};

struct ServerStats {
  std::map<std::string, TopicStats> topics;
  std::uint64_t sessions_opened = 0;
  std::uint64_t sessions_failed = 0;  // disconnected for protocol or backlog errors
};

class Server {
 public:
  /// Binds and starts the I/O thread. Throws BusError when the address cannot be bound.
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const;
  std::string address() const;
  ServerStats stats() const;
  std::size_t session_count() const;

  /// Sends CLOSE to every client, closes the sockets and joins the I/O thread.
  /// Idempotent.
  void stop();

  struct Impl;  // shared with the session type in the implementation file

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace tactiforce::bus
