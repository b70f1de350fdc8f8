#include "tactiforce/bus/client.hpp"

#include <condition_variable>
#include <deque>
#include <future>
#include <map>
#include <mutex>
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

struct Client::Impl : std::enable_shared_from_this<Client::Impl> {
  asio::io_context ioc{1};
  // Keeps run() alive while reading is paused and nothing else is pending.
  asio::executor_work_guard<asio::io_context::executor_type> work = asio::make_work_guard(ioc);
  websocket::stream<beast::tcp_stream> ws{ioc};
  beast::flat_buffer buffer;
  std::thread thread;

  // I/O thread only.
  std::deque<std::string> out;
  bool writing = false;
  bool reading = false;
  bool paused = false;
  bool close_requested = false;
  bool close_sent = false;

  mutable std::mutex mutex;
  std::condition_variable cv;
  std::deque<Envelope> inbox;
  std::map<std::uint64_t, std::optional<Envelope>> pending;  // control seq -> answer
  std::map<std::string, std::uint64_t> next_seq;
  std::uint64_t control_seq = 0;
  std::size_t unwritten = 0;
  bool ended = false;
  bool got_close = false;

  void read() {
    if (reading || paused) return;
    reading = true;
    ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->reading = false;
      if (ec) return self->end();
      std::string text = beast::buffers_to_string(self->buffer.data());
      self->buffer.consume(self->buffer.size());
      self->deliver(text);
      self->read();
    });
  }

  void deliver(const std::string& text) {
    Envelope env;
    try {
      env = decode(text);
    } catch (const FormatError&) {
      return;  // the server only sends envelopes
    }
    std::lock_guard lock(mutex);
    if (env.type == MsgType::Ack || env.type == MsgType::Nack) {
      auto it = pending.find(env.seq);
      if (it != pending.end() && !it->second) {
        it->second = std::move(env);
        cv.notify_all();
        return;
      }
    }
    if (env.type == MsgType::Close) got_close = true;
    inbox.push_back(std::move(env));
    cv.notify_all();
  }

  void end() {
    std::lock_guard lock(mutex);
    ended = true;
    out.clear();
    unwritten = 0;
    cv.notify_all();
  }

  void enqueue(std::string text) {
    {
      std::lock_guard lock(mutex);
      if (ended) return;
      ++unwritten;
    }
    asio::post(ioc, [self = shared_from_this(), text = std::move(text)]() mutable {
      self->out.push_back(std::move(text));
      self->write();
    });
  }

  void write() {
    if (writing || out.empty() || close_sent) return;
    writing = true;
    ws.text(true);
    ws.async_write(asio::buffer(out.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing = false;
      if (ec) return self->end();
      self->out.pop_front();
      {
        std::lock_guard lock(self->mutex);
        --self->unwritten;
        self->cv.notify_all();
      }
      if (self->out.empty() && self->close_requested) return self->send_close();
      self->write();
    });
  }

  void send_close() {
    if (close_sent) return;
    close_sent = true;
    paused = false;
    ws.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws).socket().close(ec);
    });
    read();
  }

  Envelope request(MsgType type, const std::string& topic) {
    std::uint64_t seq;
    {
      std::lock_guard lock(mutex);
      if (ended) throw BusError("bus connection is closed");
      seq = ++control_seq;
      pending[seq];
    }
    enqueue(encode({topic, seq, now_stamp(), type, nullptr}));
    std::unique_lock lock(mutex);
    const bool answered = cv.wait_for(lock, std::chrono::seconds(5), [&] { return pending[seq].has_value() || ended; });
    std::optional<Envelope> reply = std::move(pending[seq]);
    pending.erase(seq);
    if (!answered || !reply) throw BusError(std::string(to_string(type)) + " " + topic + ": no answer from server");
    return std::move(*reply);
  }
};

Client::Client(const std::string& address, std::chrono::milliseconds timeout) : impl_(std::make_shared<Impl>()) {
  const Endpoint ep = parse_endpoint(address);
  try {
    tcp::resolver resolver(impl_->ioc);
    const auto results = resolver.resolve(ep.host, std::to_string(ep.port));
    auto& stream = beast::get_lowest_layer(impl_->ws);
    stream.expires_after(timeout);
    stream.connect(results);
    stream.socket().set_option(tcp::no_delay(true));
    impl_->ws.handshake(ep.host + ":" + std::to_string(ep.port), "/");
    stream.expires_never();
  } catch (const std::exception& e) {
    throw BusError("cannot connect to " + address + ": " + e.what());
  }
  impl_->ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::client));
  impl_->ws.read_message_max(64u << 20);
  impl_->read();
  impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
}

Client::~Client() {
  try {
    close();
  } catch (...) {
  }
}

void Client::subscribe(const std::string& topic) {
  const Envelope reply = impl_->request(MsgType::Sub, topic);
  if (reply.type == MsgType::Nack) {
    throw BusError("SUB " + topic + ": " + reply.data.value("reason", std::string("rejected")));
  }
}

void Client::unsubscribe(const std::string& topic) {
  const Envelope reply = impl_->request(MsgType::Unsub, topic);
  if (reply.type == MsgType::Nack) {
    throw BusError("UNSUB " + topic + ": " + reply.data.value("reason", std::string("rejected")));
  }
}

std::uint64_t Client::publish(const std::string& topic, Json data) {
  std::uint64_t seq;
  {
    std::lock_guard lock(impl_->mutex);
    seq = ++impl_->next_seq[topic];
  }
  impl_->enqueue(encode({topic, seq, now_stamp(), MsgType::Pub, std::move(data)}));
  return seq;
}

void Client::send(const Envelope& envelope) { impl_->enqueue(encode(envelope)); }

void Client::send_text(std::string text) { impl_->enqueue(std::move(text)); }

std::optional<Envelope> Client::receive(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mutex);
  impl_->cv.wait_for(lock, timeout, [this] { return !impl_->inbox.empty() || impl_->ended; });
  if (impl_->inbox.empty()) return std::nullopt;
  Envelope env = std::move(impl_->inbox.front());
  impl_->inbox.pop_front();
  return env;
}

void Client::pause_reading() {
  std::promise<void> done;
  auto f = done.get_future();
  asio::post(impl_->ioc, [impl = impl_, &done] {
    impl->paused = true;
    done.set_value();
  });
  f.wait();
}

void Client::resume_reading() {
  asio::post(impl_->ioc, [impl = impl_] {
    impl->paused = false;
    impl->read();
  });
}

bool Client::flush(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mutex);
  return impl_->cv.wait_for(lock, timeout, [this] { return impl_->unwritten == 0 || impl_->ended; }) &&
         !impl_->ended;
}

bool Client::closed() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->ended || impl_->got_close;
}

bool Client::close_received() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->got_close;
}

void Client::close() {
  if (!impl_->thread.joinable()) return;
  flush(std::chrono::seconds(2));
  asio::post(impl_->ioc, [impl = impl_] {
    impl->close_requested = true;
    if (!impl->writing) impl->send_close();
  });
  {
    std::unique_lock lock(impl_->mutex);
    impl_->cv.wait_for(lock, std::chrono::seconds(2), [this] { return impl_->ended; });
  }
  impl_->ioc.stop();
  impl_->thread.join();
}

}  // namespace tactiforce::bus
