#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "esim/dataset.hpp"
#include "esim/wire.hpp"

namespace esim {

/// Environment variable consulted for the bind address when no flag is given.
inline constexpr const char* kBindEnvVar = "ESIM_BIND";

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 7341;
};
/// "host:port", ":port" or "port".
BindAddress parse_bind(std::string_view s);

/// The listening socket could not be set up (exit code 2).
class BindError : public Error {
 public:
  using Error::Error;
};

struct ServerOptions {
  BindAddress bind;
  std::string episode_log;  // dataset-format NDJSON of finished episodes, empty = none
  int max_steps = 64;
  SceneConfig scene;
  EnvConfig env;
};

/// Appends finished episodes as dataset records; safe to share across threads.
class EpisodeLog {
 public:
  explicit EpisodeLog(const std::string& path);
  void append(const DatasetRecord& r);
  void flush();
  std::size_t count() const;

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

/// Message handling for one client connection. Sessions are keyed by the
/// client's session string and live only on this connection.
class Connection {
 public:
  Connection(const ServerOptions& opts, std::atomic<std::uint64_t>& episode_counter, EpisodeLog* log);
  ~Connection();

  /// Replies to one input line (already stripped of its newline).
  std::vector<Message> handle_line(std::string_view line);
  std::vector<Message> handle(const Message& m);
  /// Oversize line reply.
  Message oversize(std::string_view head) const;
  /// Aborts running sessions and logs them (connection closed).
  void close(const std::string& why);
  std::size_t open_sessions() const;

 private:
  struct Live;
  Message reset(const Message& m);
  std::vector<Message> emit(const Message& m, Live& live);
  Message finish(const Message& m, Live& live);
  Message ended(Live& live);

  const ServerOptions& opts_;
  std::atomic<std::uint64_t>& counter_;
  EpisodeLog* log_;
  std::map<std::string, std::unique_ptr<Live>> sessions_;
  std::uint64_t anonymous_ = 0;
};

/// Runs a connection over a line stream until EOF.
void serve_stream(std::istream& in, std::ostream& out, const ServerOptions& opts);

/// TCP listener, one thread per connection.
class Server {
 public:
  /// Binds immediately; throws BindError when the address is unavailable.
  explicit Server(ServerOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  int port() const { return port_; }
  /// Accepts until stop(); then closes every connection and flushes the log.
  void run();
  /// Async-signal-safe.
  void stop();
  std::uint64_t episodes_started() const { return counter_.load(); }

 private:
  void client(int fd);

  ServerOptions opts_;
  int listen_fd_ = -1;
  int wake_[2] = {-1, -1};
  int port_ = 0;
  std::atomic<std::uint64_t> counter_{0};
  std::unique_ptr<EpisodeLog> log_;
  std::mutex mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> threads_;
};

/// Header of episode logs and datasets written by the server.
DatasetHeader server_log_header();

}  // namespace esim
