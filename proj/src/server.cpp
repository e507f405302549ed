#include "esim/server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>

namespace esim {

BindAddress parse_bind(std::string_view s) {
  BindAddress b;
  const auto colon = s.rfind(':');
  std::string_view port = s;
  if (colon != std::string_view::npos) {
    if (colon > 0) b.host = std::string(s.substr(0, colon));
    port = s.substr(colon + 1);
  }
  if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string_view::npos)
    throw InvalidArgument("bad bind address '" + std::string(s) + "' (expected host:port)");
  b.port = std::stoi(std::string(port));
  if (b.port > 65535) throw InvalidArgument("port out of range: " + std::string(port));
  return b;
}

DatasetHeader server_log_header() {
  DatasetHeader h;
  h.catalog_sha256 = catalog_hash(builtin_catalog());
  h.generator = {{"source", "serve"}, {"params", "default"}};
  return h;
}

// --- episode log -------------------------------------------------------------------

EpisodeLog::EpisodeLog(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw ConfigError("cannot write episode log " + path);
  out_ << header_line(server_log_header()) << '\n';
  out_.flush();
}

void EpisodeLog::append(const DatasetRecord& r) {
  const auto line = record_line(r);
  std::lock_guard<std::mutex> lock(mu_);
  out_ << line << '\n';
  out_.flush();
  ++count_;
}

void EpisodeLog::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  out_.flush();
}

std::size_t EpisodeLog::count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return count_;
}

// --- connection ---------------------------------------------------------------------

struct Connection::Live {
  std::string id;
  Scene scene;
  std::optional<TaskSpec> task;
  std::unique_ptr<Session> session;
};

namespace {

nlohmann::json payload_ids(const std::map<int, WirePayload>& p) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& [id, _] : p) ids.push_back(id);
  return ids;
}

std::vector<std::optional<int>> sites_field(const nlohmann::json& fields) {
  std::vector<std::optional<int>> sites;
  auto it = fields.find("sites");
  if (it == fields.end()) return sites;
  if (!it->is_array()) throw InvalidArgument("sites must be an array");
  for (const auto& s : *it) {
    if (s.is_null()) sites.emplace_back();
    else if (s.is_number_integer()) sites.emplace_back(s.get<int>());
    else throw InvalidArgument("sites entries must be integers or null");
  }
  return sites;
}

}  // namespace

Connection::Connection(const ServerOptions& opts, std::atomic<std::uint64_t>& episode_counter, EpisodeLog* log)
    : opts_(opts), counter_(episode_counter), log_(log) {}

Connection::~Connection() { close("connection closed"); }

std::size_t Connection::open_sessions() const { return sessions_.size(); }

Message Connection::oversize(std::string_view head) const {
  return error_message("", "message_too_large", "message too large: line exceeds " + std::to_string(kMaxLineBytes) + " bytes", head);
}

std::vector<Message> Connection::handle_line(std::string_view line) {
  Message m;
  try {
    m = wire_decode(line);
  } catch (const WireError& e) {
    return {error_message("", e.code, e.what(), line)};
  }
  return handle(m);
}

std::vector<Message> Connection::handle(const Message& m) {
  try {
    switch (m.op) {
      case Op::hello: {
        Message r;
        r.op = Op::hello;
        r.session = m.session;
        r.fields = {{"server", "esim"},
                    {"capabilities", {"hello", "reset", "emit_tokens", "episode_end", "sites", "twins", "task"}},
                    {"max_steps", opts_.max_steps},
                    {"max_line_bytes", kMaxLineBytes}};
        return {r};
      }
      case Op::reset:
        return {reset(m)};
      case Op::emit_tokens:
      case Op::episode_end: {
        auto it = sessions_.find(m.session);
        if (it == sessions_.end())
          return {error_message(m.session, "unknown_session", "no running session '" + m.session + "'")};
        if (m.op == Op::emit_tokens) return emit(m, *it->second);
        return {finish(m, *it->second)};
      }
      case Op::state_update:
      case Op::error:
        return {error_message(m.session, "unexpected_op", "clients may not send " + std::string(to_string(m.op)))};
    }
  } catch (const std::exception& e) {
    return {error_message(m.session, "bad_request", e.what())};
  }
  return {};
}

Message Connection::reset(const Message& m) {
  const auto& f = m.fields;
  const auto& catalog = builtin_catalog();
  Scene scene;
  if (f.contains("scene")) {
    scene = scene_from_json(f.at("scene"));
    const auto report = validate_scene(scene, catalog);
    if (!report.ok()) return error_message(m.session, "invalid_scene", report.summary());
  } else if (f.contains("scene_seed")) {
    scene = sample_scene(catalog, opts_.scene, f.at("scene_seed").get<std::uint64_t>());
  } else {
    return error_message(m.session, "bad_request", "reset needs scene_seed or scene");
  }
  if (auto t = f.find("twins"); t != f.end()) {
    const int k = t->value("k", 4);
    const auto attr = parse_twin_attribute(t->value("attribute", std::string("material")));
    scene = twin_injection(scene, catalog, k, attr, t->value("seed", std::uint64_t{0}));
  }
  std::string prompt;
  std::optional<TaskSpec> task;
  if (f.contains("prompt")) {
    prompt = f.at("prompt").get<std::string>();
  } else if (auto t = f.find("task"); t != f.end()) {
    const auto kind = parse_task_kind(t->value("kind", std::string("retrieval")));
    auto proposed = propose_tasks(scene, {kind}, 1, t->value("seed", std::uint64_t{0}), catalog);
    if (proposed.tasks.empty()) return error_message(m.session, "no_task", "scene cannot support the task kind");
    task = proposed.tasks.front();
    prompt = task->prompt;
  } else {
    return error_message(m.session, "bad_request", "reset needs prompt or task");
  }

  std::string sid = m.session.empty() ? "s" + std::to_string(anonymous_++) : m.session;
  if (auto it = sessions_.find(sid); it != sessions_.end()) {
    it->second->session->abort("reset");
    ended(*it->second);
  }
  auto live = std::make_unique<Live>();
  live->scene = scene;
  live->task = task;
  live->session = std::make_unique<Session>(scene, prompt, default_params(), opts_.env, catalog);
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep-%06llu", static_cast<unsigned long long>(++counter_));
  live->id = buf;
  live->session->set_episode_id(live->id);
  auto delta = live->session->start();

  Message r;
  r.op = Op::state_update;
  r.session = sid;
  r.tokens = serialize(delta.tokens);
  r.payloads = std::move(delta.payloads);
  r.fields = {{"episode_id", live->id},
              {"scene_id", scene.id},
              {"objects", scene.objects.size()},
              {"prompt", prompt},
              {"step_count", 0}};
  if (task) r.fields["task"] = to_json(*task);
  sessions_[sid] = std::move(live);
  return r;
}

std::vector<Message> Connection::emit(const Message& m, Live& live) {
  auto& s = *live.session;
  TokenStream tokens;
  try {
    tokens = parse(m.tokens.value_or(""));
  } catch (const ParseError& e) {
    return {error_message(m.session, "bad_tokens", e.what(), m.tokens.value_or(""))};
  }
  const auto sites = sites_field(m.fields);
  int actions = 0;
  for (const auto& t : tokens.tokens) actions += t.is_action();
  if (static_cast<int>(s.episode().actions.size()) + actions > opts_.max_steps) {
    s.mark(EpisodeStatus::max_steps, "step budget exhausted");
    return {ended(live)};
  }
  Session::Delta delta;
  try {
    delta = s.submit(tokens, sites);
  } catch (const ProtocolError& e) {
    return {error_message(m.session, "protocol_violation", e.rule), ended(live)};
  } catch (const EnvError& e) {
    return {error_message(m.session, "environment", e.rule), ended(live)};
  }
  Message r;
  r.op = Op::state_update;
  r.session = m.session;
  r.tokens = serialize(delta.tokens);
  r.fields = {{"episode_id", live.id},
              {"step_count", s.episode().actions.size()},
              {"payload_ids", payload_ids(delta.payloads)}};
  r.payloads = std::move(delta.payloads);
  return {r};
}

Message Connection::finish(const Message& m, Live& live) {
  TokenStream answer;
  try {
    answer = parse(m.tokens.value_or(""));
  } catch (const ParseError& e) {
    return error_message(m.session, "bad_tokens", e.what(), m.tokens.value_or(""));
  }
  try {
    live.session->end(answer);
  } catch (const ProtocolError&) {
    // Status error is recorded on the episode.
  }
  return ended(live);
}

// Logs a finished session, removes it and builds the episode_end reply.
Message Connection::ended(Live& live) {
  const Episode e = live.session->episode();
  if (log_) {
    DatasetRecord rec;
    rec.scene = live.scene;
    if (live.task) rec.task = *live.task;
    rec.episode = e;
    rec.valid = e.status == EpisodeStatus::ok;
    if (!rec.valid) rec.invalid_reason = std::string(to_string(e.status)) + (e.error.empty() ? "" : ": " + e.error);
    if (rec.valid)
      for (const auto& s : incremental_samples(e))
        rec.samples.emplace_back(s.input_stream.size(), s.input_stream.size() + s.target_stream.size());
    log_->append(rec);
  }
  Message r;
  r.op = Op::episode_end;
  r.fields = {{"episode_id", e.id},
              {"status", std::string(to_string(e.status))},
              {"error", e.error},
              {"answer_object", e.answer_object ? nlohmann::json(*e.answer_object) : nlohmann::json(nullptr)},
              {"episode", to_json(e)}};
  for (auto it = sessions_.begin(); it != sessions_.end(); ++it) {
    if (it->second.get() != &live) continue;
    r.session = it->first;
    sessions_.erase(it);
    break;
  }
  return r;
}

void Connection::close(const std::string& why) {
  while (!sessions_.empty()) {
    auto& live = *sessions_.begin()->second;
    live.session->abort(why);
    ended(live);
  }
}

void serve_stream(std::istream& in, std::ostream& out, const ServerOptions& opts) {
  std::atomic<std::uint64_t> counter{0};
  std::unique_ptr<EpisodeLog> log;
  if (!opts.episode_log.empty()) log = std::make_unique<EpisodeLog>(opts.episode_log);
  Connection conn(opts, counter, log.get());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<Message> replies =
        line.size() > kMaxLineBytes ? std::vector<Message>{conn.oversize(line)} : conn.handle_line(line);
    for (const auto& r : replies) out << wire_encode(r) << '\n';
    out.flush();
  }
  conn.close("end of input");
}

// --- TCP server -------------------------------------------------------------------------

namespace {

bool send_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t n = ::send(fd, s.data() + off, s.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

Server::Server(ServerOptions opts) : opts_(std::move(opts)) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
  addrinfo* res = nullptr;
  const auto port = std::to_string(opts_.bind.port);
  if (int rc = ::getaddrinfo(opts_.bind.host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw BindError("cannot resolve " + opts_.bind.host + ": " + ::gai_strerror(rc));
  std::string last = "no address";
  for (auto* a = res; a; a = a->ai_next) {
    int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      listen_fd_ = fd;
      break;
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (listen_fd_ < 0) throw BindError("cannot bind " + opts_.bind.host + ":" + port + ": " + last);
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  if (::pipe2(wake_, O_CLOEXEC) != 0) {
    ::close(listen_fd_);
    throw BindError("pipe failed");
  }
  if (!opts_.episode_log.empty()) log_ = std::make_unique<EpisodeLog>(opts_.episode_log);
}

Server::~Server() {
  stop();
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  for (int fd : wake_)
    if (fd >= 0) ::close(fd);
}

void Server::stop() {
  const char c = 1;
  if (wake_[1] >= 0) [[maybe_unused]] auto n = ::write(wake_[1], &c, 1);
}

void Server::run() {
  for (;;) {
    pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {wake_[0], POLLIN, 0}};
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[1].revents) break;
    if (!(fds[0].revents & POLLIN)) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard<std::mutex> lock(mu_);
    client_fds_.push_back(fd);
    threads_.emplace_back([this, fd] { client(fd); });
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  threads_.clear();
  if (log_) log_->flush();
}

void Server::client(int fd) {
  {
    Connection conn(opts_, counter_, log_.get());
    LineFramer framer;
    char buf[65536];
    auto answer = [&](const LineFramer::Line& line) {
      const auto replies = line.oversize ? std::vector<Message>{conn.oversize(line.text)} : conn.handle_line(line.text);
      std::string out;
      for (const auto& r : replies) out += wire_encode(r) + '\n';
      return send_all(fd, out);
    };
    bool open = true;
    while (open) {
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      framer.feed(std::string_view(buf, static_cast<std::size_t>(n)));
      while (auto line = framer.next()) {
        if (line->text.empty() && !line->oversize) continue;
        if (!answer(*line)) {
          open = false;
          break;
        }
      }
    }
    if (open)
      if (auto rest = framer.flush(); rest && !rest->text.empty()) answer(*rest);
    conn.close("connection closed");
  }
  std::lock_guard<std::mutex> lock(mu_);
  client_fds_.erase(std::remove(client_fds_.begin(), client_fds_.end(), fd), client_fds_.end());
  ::close(fd);
}

}  // namespace esim
