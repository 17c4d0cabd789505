#pragma once

// Length-prefixed frames exchanged with the external guidance bridge:
//   [u32 LE header length][JSON header][u32 LE payload length][payload]
// Render and gradient payloads are row-major little-endian float32.

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "wire4d/error.hpp"
#include "wire4d/image.hpp"

namespace wire4d::guidance {

using Clock = std::chrono::steady_clock;

inline constexpr double kDefaultTimeoutSeconds = 120.0;
inline constexpr std::uint32_t kMaxHeaderBytes = 1u << 20;
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

struct Frame {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

inline std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  const std::string head = frame.header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + head.size() + frame.payload.size());
  detail::put_u32_le(out, static_cast<std::uint32_t>(head.size()));
  out.insert(out.end(), head.begin(), head.end());
  detail::put_u32_le(out, static_cast<std::uint32_t>(frame.payload.size()));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

/// Decodes one complete frame; throws BridgeError(Protocol) on malformed or
/// trailing bytes.
inline Frame decode_frame(const std::vector<std::uint8_t>& bytes) {
  auto bad = [](const std::string& why) { return BridgeError(BridgeError::Kind::Protocol, why); };
  if (bytes.size() < 4) throw bad("truncated header length");
  const std::uint32_t hl = detail::get_u32_le(bytes.data());
  if (hl > kMaxHeaderBytes || bytes.size() < 8ull + hl) throw bad("truncated header");
  const std::uint32_t pl = detail::get_u32_le(bytes.data() + 4 + hl);
  if (bytes.size() != 8ull + hl + pl) throw bad("frame length does not match its prefixes");
  Frame f;
  f.header = nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + hl, nullptr, false);
  if (f.header.is_discarded() || !f.header.is_object()) throw bad("header is not a JSON object");
  f.payload.assign(bytes.begin() + 8 + hl, bytes.end());
  return f;
}

inline nlohmann::json request_header(const std::string& view_id, int width, int height, double iter_progress) {
  return {{"type", "grad_request"},
          {"view_id", view_id},
          {"width", width},
          {"height", height},
          {"iter_progress", iter_progress}};
}

inline Frame make_request(const ImageBuffer& render, const std::string& view_id, double iter_progress) {
  return {request_header(view_id, render.width, render.height, iter_progress), encode_float32(render)};
}

inline Frame make_response(const ImageBuffer& gradient, const std::string& view_id) {
  return {{{"type", "grad_response"}, {"view_id", view_id}, {"width", gradient.width}, {"height", gradient.height}},
          encode_float32(gradient)};
}

inline Frame make_error(const std::string& message) {
  return {{{"type", "error"}, {"message", message}}, {}};
}

/// Checks a response against the request and decodes its gradient.
inline ImageBuffer parse_response(const Frame& f, const std::string& view_id, int width, int height) {
  using K = BridgeError::Kind;
  const auto type = f.header.value("type", std::string{});
  if (type == "error") throw BridgeError(K::Remote, "bridge error: " + f.header.value("message", std::string{"(no message)"}));
  if (type != "grad_response") throw BridgeError(K::Protocol, "unexpected frame type '" + type + "'");
  if (!f.header.contains("width") || !f.header.contains("height") || !f.header["width"].is_number_integer() ||
      !f.header["height"].is_number_integer()) {
    throw BridgeError(K::Protocol, "response header lacks integer width/height");
  }
  if (f.header.value("view_id", std::string{}) != view_id) {
    throw BridgeError(K::Protocol, "response is for view '" + f.header.value("view_id", std::string{}) + "'");
  }
  const int w = f.header["width"].get<int>();
  const int h = f.header["height"].get<int>();
  if (w != width || h != height) {
    throw BridgeError(K::Dimension, "gradient is " + std::to_string(w) + "x" + std::to_string(h) + ", render is " +
                                        std::to_string(width) + "x" + std::to_string(height));
  }
  if (f.payload.size() != 4ull * static_cast<std::size_t>(w) * static_cast<std::size_t>(h)) {
    throw BridgeError(K::Dimension, "gradient payload has " + std::to_string(f.payload.size()) + " bytes");
  }
  return decode_float32(f.payload.data(), f.payload.size(), w, h);
}

// ---------------------------------------------------------------------------
// Stream IO with a deadline

inline void write_all(int fd, const std::vector<std::uint8_t>& bytes, Clock::time_point deadline) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) throw BridgeError(BridgeError::Kind::Timeout, "timed out sending to bridge");
    pollfd p{fd, POLLOUT, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) continue;
    if (r < 0) throw BridgeError(BridgeError::Kind::Connection, std::string("poll: ") + std::strerror(errno));
    const ssize_t n = ::send(fd, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw BridgeError(BridgeError::Kind::Connection, std::string("send: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

inline void read_exact(int fd, std::uint8_t* out, std::size_t count, Clock::time_point deadline) {
  std::size_t done = 0;
  while (done < count) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) throw BridgeError(BridgeError::Kind::Timeout, "timed out waiting for bridge");
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) continue;
    if (r < 0) throw BridgeError(BridgeError::Kind::Connection, std::string("poll: ") + std::strerror(errno));
    const ssize_t n = ::recv(fd, out + done, count - done, 0);
    if (n == 0) throw BridgeError(BridgeError::Kind::Connection, "bridge closed the connection");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw BridgeError(BridgeError::Kind::Connection, std::string("recv: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

inline Frame read_frame(int fd, Clock::time_point deadline) {
  std::vector<std::uint8_t> bytes(4);
  read_exact(fd, bytes.data(), 4, deadline);
  const std::uint32_t hl = detail::get_u32_le(bytes.data());
  if (hl > kMaxHeaderBytes) throw BridgeError(BridgeError::Kind::Protocol, "header length " + std::to_string(hl) + " too large");
  bytes.resize(8 + hl);
  read_exact(fd, bytes.data() + 4, hl + 4, deadline);
  const std::uint32_t pl = detail::get_u32_le(bytes.data() + 4 + hl);
  if (pl > kMaxPayloadBytes) throw BridgeError(BridgeError::Kind::Protocol, "payload length " + std::to_string(pl) + " too large");
  bytes.resize(8ull + hl + pl);
  read_exact(fd, bytes.data() + 8 + hl, pl, deadline);
  return decode_frame(bytes);
}

inline void write_frame(int fd, const Frame& frame, Clock::time_point deadline) {
  write_all(fd, encode_frame(frame), deadline);
}

/// Socket path from an address of the form `unix:/path` or `/path`.
inline std::string socket_path(const std::string& address) {
  const std::string prefix = "unix:";
  std::string path = address.rfind(prefix, 0) == 0 ? address.substr(prefix.size()) : address;
  if (path.empty()) throw BridgeError(BridgeError::Kind::Connection, "empty bridge address");
  if (path.size() >= sizeof(sockaddr_un{}.sun_path)) throw BridgeError(BridgeError::Kind::Connection, "bridge socket path too long");
  return path;
}

/// Client side of the protocol; one request in flight at a time.
class Client {
 public:
  explicit Client(std::string address, double timeout_seconds = kDefaultTimeoutSeconds)
      : address_(std::move(address)), timeout_(timeout_seconds) {}
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;
  ~Client() { close(); }

  const std::string& address() const { return address_; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  /// Sends a render and returns dL/dI of identical size.
  ImageBuffer request(const ImageBuffer& render, const std::string& view_id, double iter_progress) {
    connect();
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_));
    try {
      write_frame(fd_, make_request(render, view_id, iter_progress), deadline);
      return parse_response(read_frame(fd_, deadline), view_id, render.width, render.height);
    } catch (const BridgeError& e) {
      // A remote error leaves the stream in sync; anything else does not.
      if (e.kind() != BridgeError::Kind::Remote && e.kind() != BridgeError::Kind::Dimension) close();
      throw;
    }
  }

 private:
  void connect() {
    if (fd_ >= 0) return;
    const std::string path = socket_path(address_);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw BridgeError(BridgeError::Kind::Connection, std::string("socket: ") + std::strerror(errno));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd);
      throw BridgeError(BridgeError::Kind::Connection, "cannot connect to bridge at " + path + ": " + why);
    }
    fd_ = fd;
  }

  std::string address_;
  double timeout_;
  int fd_ = -1;
};

}  // namespace wire4d::guidance
