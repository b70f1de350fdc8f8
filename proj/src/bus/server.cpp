#include "tactiforce/bus/server.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "tactiforce/errors.hpp"

namespace tactiforce::bus {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

Endpoint parse_endpoint(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw BusError("bus address '" + address + "' is not host:port");
  }
  Endpoint e;
  e.host = address.substr(0, colon);
  const std::string port = address.substr(colon + 1);
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw BusError("bus address '" + address + "' has an invalid port");
  }
  return e;
}

namespace {

struct Outgoing {
  std::shared_ptr<const std::string> text;
  const std::string* lossy_topic = nullptr;  // registry key when the topic is lossy
};

Envelope control(MsgType type, const std::string& topic, std::uint64_t seq, Json data) {
  return {topic, seq, now_stamp(), type, std::move(data)};
}

Json reason(const std::string& code, const std::string& detail = {}) {
  Json j;
  j["reason"] = code;
  if (!detail.empty()) j["detail"] = detail;
  return j;
}

}  // namespace

class Session;

struct Server::Impl {
  ServerOptions opts;
  asio::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  std::uint16_t port = 0;

  // I/O thread only.
  std::set<std::shared_ptr<Session>> sessions;
  bool stopping = false;

  mutable std::mutex mutex;  // guards stats and live_sessions
  std::condition_variable cv;
  ServerStats stats;
  std::size_t live_sessions = 0;

  void accept();
  void fan_out(const Envelope& env, const std::string& text, const TopicInfo& info);
  void remove(const std::shared_ptr<Session>& s);
  void shutdown_all();
};

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Server::Impl& server) : ws_(std::move(socket)), server_(server) {}

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(64u << 20);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->finish();
      self->accepted_ = true;
      self->read();
    });
  }

  bool subscribed(const std::string& topic) const { return subs_.count(topic) != 0; }

  void enqueue(std::shared_ptr<const std::string> text, const std::string* lossy_topic) {
    if (closing_) return;
    if (lossy_topic) {
      std::size_t& queued = lossy_queued_[lossy_topic];
      if (queued >= server_.opts.lossy_queue_depth) {
        // Entry 0 may be in flight; drop the oldest waiting frame of this topic.
        for (auto it = queue_.begin() + (writing_ ? 1 : 0); it != queue_.end(); ++it) {
          if (it->lossy_topic == lossy_topic) {
            queue_.erase(it);
            --queued;
            std::lock_guard lock(server_.mutex);
            ++server_.stats.topics[*lossy_topic].dropped;
            break;
          }
        }
      }
      ++queued;
    } else if (++lossless_queued_ > server_.opts.lossless_queue_limit) {
      fail("backlog", "lossless queue limit exceeded");
      return;
    }
    queue_.push_back({std::move(text), lossy_topic});
    write();
  }

  void send(const Envelope& env) { enqueue(std::make_shared<const std::string>(encode(env)), nullptr); }

  // Error frame, then close.
  void fail(const std::string& code, const std::string& detail) {
    if (closing_) return;
    {
      std::lock_guard lock(server_.mutex);
      ++server_.stats.sessions_failed;
    }
    push_control(control(MsgType::Nack, "", 0, reason(code, detail)));
    close_after_drain();
  }

  void shutdown() {
    if (closing_) return;
    if (!accepted_) {
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().close(ec);
      return;
    }
    push_control(control(MsgType::Close, "", 0, reason("shutdown")));
    close_after_drain();
  }

 private:
  // Terminal frames skip the backlog limit so an overflowing session can still be told why it ends.
  void push_control(const Envelope& env) {
    ++lossless_queued_;
    queue_.push_back({std::make_shared<const std::string>(encode(env)), nullptr});
    write();
  }

  void close_after_drain() {
    closing_ = true;
    if (!writing_) close();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().close(ec);
    });
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      if (!self->closing_) self->handle(text);
      self->read();
    });
  }

  void write() {
    if (writing_ || queue_.empty()) return;
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front().text), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_written(ec);
    });
  }

  void on_written(beast::error_code ec) {
    writing_ = false;
    Outgoing done = std::move(queue_.front());
    queue_.pop_front();
    if (done.lossy_topic) {
      --lossy_queued_[done.lossy_topic];
    } else {
      --lossless_queued_;
    }
    if (ec) {
      // Socket error: the read side reports it and removes the session.
      closing_ = true;
      queue_.clear();
      beast::error_code ignored;
      beast::get_lowest_layer(ws_).socket().close(ignored);
      return;
    }
    if (!queue_.empty()) return write();
    if (closing_) close();
  }

  void handle(const std::string& text) {
    Envelope env;
    try {
      env = decode(text);
    } catch (const FormatError& e) {
      return fail("malformed", e.what());
    }
    const auto it = server_.opts.registry.find(env.topic);
    switch (env.type) {
      case MsgType::Sub:
      case MsgType::Unsub:
        if (it == server_.opts.registry.end()) {
          return send(control(MsgType::Nack, env.topic, env.seq, reason("unknown_topic")));
        }
        if (env.type == MsgType::Sub) {
          subs_.insert(it->first);
        } else {
          subs_.erase(it->first);
        }
        return send(control(MsgType::Ack, env.topic, env.seq, Json{{"of", to_string(env.type)}}));
      case MsgType::Pub: {
        if (it == server_.opts.registry.end()) {
          return send(control(MsgType::Nack, env.topic, env.seq, reason("unknown_topic")));
        }
        auto [last, fresh] = last_seq_.try_emplace(it->first, env.seq);
        if (!fresh) {
          if (env.seq <= last->second) {
            return send(control(MsgType::Nack, env.topic, env.seq, reason("seq_not_increasing")));
          }
          last->second = env.seq;
        }
        try {
          check_schema(it->second.schema, env.data);
        } catch (const FormatError& e) {
          return send(control(MsgType::Nack, env.topic, env.seq, reason("schema_mismatch", e.what())));
        }
        return server_.fan_out(env, text, it->second);
      }
      case MsgType::Close:
        return close_after_drain();
      case MsgType::Ack:
      case MsgType::Nack:
        return send(control(MsgType::Nack, env.topic, env.seq, reason("unexpected_type", to_string(env.type))));
    }
  }

  void finish() {
    closing_ = true;
    server_.remove(shared_from_this());
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server::Impl& server_;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> queue_;
  std::map<const std::string*, std::size_t> lossy_queued_;
  std::size_t lossless_queued_ = 0;
  std::set<std::string, std::less<>> subs_;
  std::map<std::string, std::uint64_t, std::less<>> last_seq_;
  bool accepted_ = false;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
};

void Server::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec || stopping) return;
    auto s = std::make_shared<Session>(std::move(socket), *this);
    sessions.insert(s);
    {
      std::lock_guard lock(mutex);
      ++stats.sessions_opened;
      ++live_sessions;
    }
    s->start();
    accept();
  });
}

void Server::Impl::fan_out(const Envelope& env, const std::string& text, const TopicInfo& info) {
  auto shared = std::make_shared<const std::string>(text);
  const auto key = opts.registry.find(env.topic);
  const std::string* lossy = info.qos == Qos::Lossy ? &key->first : nullptr;
  std::uint64_t receivers = 0;
  for (const auto& s : sessions) {
    if (!s->subscribed(env.topic)) continue;
    s->enqueue(shared, lossy);
    ++receivers;
  }
  std::lock_guard lock(mutex);
  auto& t = stats.topics[env.topic];
  ++t.published;
  t.delivered += receivers;
}

void Server::Impl::remove(const std::shared_ptr<Session>& s) {
  if (sessions.erase(s) == 0) return;
  std::lock_guard lock(mutex);
  --live_sessions;
  cv.notify_all();
}

void Server::Impl::shutdown_all() {
  stopping = true;
  beast::error_code ec;
  acceptor.close(ec);
  for (const auto& s : sessions) s->shutdown();
}

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->opts = std::move(options);
  for (const auto& [name, _] : impl_->opts.registry) {
    if (name.empty()) throw BusError("registry contains an empty topic name");
    impl_->stats.topics[name];
  }
  const Endpoint ep = parse_endpoint(impl_->opts.address);
  try {
    const tcp::endpoint endpoint(asio::ip::make_address(ep.host), ep.port);
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen(asio::socket_base::max_listen_connections);
  } catch (const std::exception& e) {
    throw BusError("cannot bind " + impl_->opts.address + ": " + e.what());
  }
  impl_->port = impl_->acceptor.local_endpoint().port();
  impl_->accept();
  impl_->thread = std::thread([impl = impl_.get()] { impl->ioc.run(); });
}

Server::~Server() { stop(); }

std::uint16_t Server::port() const { return impl_->port; }

std::string Server::address() const { return parse_endpoint(impl_->opts.address).host + ":" + std::to_string(impl_->port); }

ServerStats Server::stats() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->stats;
}

std::size_t Server::session_count() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->live_sessions;
}

void Server::stop() {
  if (!impl_->thread.joinable()) return;
  asio::post(impl_->ioc, [impl = impl_.get()] { impl->shutdown_all(); });
  {
    std::unique_lock lock(impl_->mutex);
    impl_->cv.wait_for(lock, std::chrono::seconds(2), [this] { return impl_->live_sessions == 0; });
  }
  impl_->ioc.stop();
  impl_->thread.join();
}

}  // namespace tactiforce::bus
