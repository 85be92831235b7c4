#pragma once

#include "gmw/classifier.hpp"
#include "gmw/errors.hpp"
#include "gmw/motion.hpp"
#include "gmw/motion_io.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <fcntl.h>
#include <memory>
#include <netdb.h>
#include <netinet/in.h>
#include <optional>
#include <poll.h>
#include <string>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>
#include <utility>
#include <vector>

namespace gmw {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kDefaultTimeoutMs = 30'000;

/// Bidirectional newline-delimited channel.
class LineChannel {
public:
  virtual ~LineChannel() = default;
  virtual void send_line(const std::string &line) = 0;
  /// Next line without its terminator, or nullopt once the peer closed.
  virtual std::optional<std::string> recv_line() = 0;
};

/// Channel over a pair of file descriptors (a socket, or pipes). Reads wait
/// at most `timeout_ms` for data; timeouts raise TransportError.
class FdChannel : public LineChannel {
public:
  FdChannel(int read_fd, int write_fd, int timeout_ms = kDefaultTimeoutMs)
      : read_fd_(read_fd), write_fd_(write_fd), timeout_ms_(timeout_ms) {}
  FdChannel(const FdChannel &) = delete;
  FdChannel &operator=(const FdChannel &) = delete;
  ~FdChannel() override { close_fds(); }

  void send_line(const std::string &line) override {
    std::string buf = line + '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t w = send_or_write(write_fd_, buf.data() + off, buf.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(w);
    }
  }

  std::optional<std::string> recv_line() override {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        throw TransportError("stream closed mid-message");
      }
      pollfd p{read_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, timeout_ms_);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (r == 0) throw TransportError("timed out waiting for peer");
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) {
          eof_ = true;
          continue;
        }
        throw TransportError(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) eof_ = true;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Closes the write side so the peer sees end of stream.
  void shutdown_write() {
    if (write_fd_ < 0) return;
    if (write_fd_ == read_fd_) {
      ::shutdown(write_fd_, SHUT_WR);
    } else {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

protected:
  void close_fds() {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
  }

private:
  static ssize_t send_or_write(int fd, const char *data, std::size_t len) {
    // MSG_NOSIGNAL keeps a closed socket from raising SIGPIPE; pipes fall back to write.
    const ssize_t s = ::send(fd, data, len, MSG_NOSIGNAL);
    if (s < 0 && errno == ENOTSOCK) return ::write(fd, data, len);
    return s;
  }

  int read_fd_;
  int write_fd_;
  int timeout_ms_;
  std::string buffer_;
  bool eof_ = false;
};

/// Connects to host:port over TCP.
inline std::unique_ptr<FdChannel> connect_tcp(const std::string &host, const std::string &port,
                                              int timeout_ms = kDefaultTimeoutMs) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo *res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
  int fd = -1;
  std::string last_error = "no address";
  for (addrinfo *ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + port + ": " + last_error);
  return std::make_unique<FdChannel>(fd, fd, timeout_ms);
}

/// Child process speaking the protocol on its stdin/stdout.
class ProcessChannel : public FdChannel {
public:
  ProcessChannel(int read_fd, int write_fd, pid_t pid, int timeout_ms)
      : FdChannel(read_fd, write_fd, timeout_ms), pid_(pid) {}
  ~ProcessChannel() override {
    close_fds();
    if (pid_ > 0) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == 0) {
        ::kill(pid_, SIGTERM);
        ::waitpid(pid_, &status, 0);
      }
    }
  }

private:
  pid_t pid_;
};

inline std::unique_ptr<FdChannel> spawn_stdio(const std::vector<std::string> &argv,
                                              int timeout_ms = kDefaultTimeoutMs) {
  if (argv.empty()) throw TransportError("empty server command");
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw TransportError("pipe failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError("pipe failed");
  }
  std::vector<char *> args;
  for (const auto &a : argv) args.push_back(const_cast<char *>(a.c_str()));
  args.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError("fork failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<ProcessChannel>(from_child[0], to_child[1], pid, timeout_ms);
}

/// Opens "tcp://host:port" or "stdio:<command> [args...]" (whitespace-split).
inline std::unique_ptr<FdChannel> open_endpoint(const std::string &endpoint, int timeout_ms = kDefaultTimeoutMs) {
  if (endpoint.rfind("tcp://", 0) == 0) {
    const std::string rest = endpoint.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
      throw ValidationError("tcp endpoint needs host:port: " + endpoint);
    std::string host = rest.substr(0, colon);
    if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    return connect_tcp(host, rest.substr(colon + 1), timeout_ms);
  }
  if (endpoint.rfind("stdio:", 0) == 0) {
    std::vector<std::string> argv;
    std::string word;
    for (char c : endpoint.substr(6)) {
      if (c == ' ' || c == '\t') {
        if (!word.empty()) argv.push_back(std::move(word));
        word.clear();
      } else {
        word += c;
      }
    }
    if (!word.empty()) argv.push_back(std::move(word));
    return spawn_stdio(argv, timeout_ms);
  }
  throw ValidationError("unsupported endpoint (use tcp://host:port or stdio:<command>): " + endpoint);
}

namespace wire {

inline json hello() { return {{"type", "hello"}, {"protocol", kProtocolVersion}}; }

inline json ready(int num_classes, std::size_t num_joints, std::optional<std::size_t> frames) {
  return {{"type", "ready"},
          {"num_classes", num_classes},
          {"num_joints", num_joints},
          {"frames", frames ? json(*frames) : json(nullptr)}};
}

inline json classify(std::uint64_t id, const Motion &mo) {
  return {{"type", "classify"}, {"id", id}, {"frames", frames_to_json(mo.frames())}};
}

inline json label(std::uint64_t id, int cls) { return {{"type", "label"}, {"id", id}, {"class", cls}}; }

inline json error(std::optional<std::uint64_t> id, const std::string &message) {
  return {{"type", "error"}, {"id", id ? json(*id) : json(nullptr)}, {"message", message}};
}

inline json parse(const std::string &line) {
  try {
    json doc = json::parse(line);
    if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string())
      throw ProtocolError("message without a type: " + line);
    return doc;
  } catch (const json::exception &e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
}

} // namespace wire

/// Hard-label oracle behind the wire protocol. Performs the handshake on
/// construction; each classify is one request/response pair.
class RemoteClassifier : public Classifier {
public:
  explicit RemoteClassifier(std::unique_ptr<LineChannel> channel) : channel_(std::move(channel)) {
    channel_->send_line(wire::hello().dump());
    const json msg = receive();
    if (msg["type"] == "error") throw ProtocolError("handshake refused: " + msg.value("message", std::string()));
    if (msg["type"] != "ready") throw ProtocolError("expected ready, got " + msg["type"].get<std::string>());
    try {
      num_classes_ = msg.at("num_classes").get<int>();
      num_joints_ = msg.at("num_joints").get<std::size_t>();
      if (!msg.at("frames").is_null()) frames_ = msg.at("frames").get<std::size_t>();
    } catch (const json::exception &e) {
      throw ProtocolError(std::string("malformed ready message: ") + e.what());
    }
    if (num_classes_ < 1) throw ProtocolError("server reports no classes");
  }

  int num_classes() const override { return num_classes_; }
  std::size_t num_joints() const override { return num_joints_; }
  std::optional<std::size_t> expected_frames() const override { return frames_; }

  Label classify(const Motion &mo) override {
    const std::uint64_t id = next_id_++;
    channel_->send_line(wire::classify(id, mo).dump());
    const json msg = receive();
    const auto reply_id = msg.contains("id") && msg["id"].is_number_unsigned()
                              ? std::optional<std::uint64_t>(msg["id"].get<std::uint64_t>())
                              : std::nullopt;
    if (msg["type"] == "error") throw ProtocolError("server error: " + msg.value("message", std::string()));
    if (msg["type"] != "label") throw ProtocolError("expected label, got " + msg["type"].get<std::string>());
    if (!reply_id || *reply_id != id) throw ProtocolError("response id does not match request " + std::to_string(id));
    if (!msg.contains("class") || !msg["class"].is_number_integer()) throw ProtocolError("label without class");
    const int cls = msg["class"].get<int>();
    if (cls < 0 || cls >= num_classes_)
      throw ProtocolError("class " + std::to_string(cls) + " outside the handshake's " + std::to_string(num_classes_));
    return {cls};
  }

private:
  json receive() {
    const auto line = channel_->recv_line();
    if (!line) throw TransportError("server closed the connection");
    return wire::parse(*line);
  }

  std::unique_ptr<LineChannel> channel_;
  int num_classes_ = 0;
  std::size_t num_joints_ = 0;
  std::optional<std::size_t> frames_;
  std::uint64_t next_id_ = 0;
};

/// Answers protocol messages with `classifier` until the peer closes.
/// Malformed requests get an error message and the session continues.
/// Incoming frames become motions on `skeleton` with step `frame_dt`.
inline void serve_channel(LineChannel &channel, Classifier &classifier, const SkeletonPtr &skeleton,
                          double frame_dt = 1.0 / 30.0) {
  while (auto line = channel.recv_line()) {
    if (line->empty()) continue;
    std::optional<std::uint64_t> id;
    try {
      const json msg = wire::parse(*line);
      if (msg.contains("id") && msg["id"].is_number_unsigned()) id = msg["id"].get<std::uint64_t>();
      const auto type = msg["type"].get<std::string>();
      if (type == "hello") {
        if (msg.value("protocol", 0) != kProtocolVersion) throw ProtocolError("unsupported protocol version");
        channel.send_line(
            wire::ready(classifier.num_classes(), classifier.num_joints(), classifier.expected_frames()).dump());
      } else if (type == "classify") {
        if (!id) throw ProtocolError("classify without id");
        Motion mo(skeleton, frames_from_json(msg.at("frames"), skeleton->joint_count()), frame_dt);
        channel.send_line(wire::label(*id, classifier.classify(mo).class_id).dump());
      } else {
        throw ProtocolError("unknown message type " + type);
      }
    } catch (const TransportError &) {
      throw;
    } catch (const std::exception &e) {
      channel.send_line(wire::error(id, e.what()).dump());
    }
  }
}

} // namespace gmw
