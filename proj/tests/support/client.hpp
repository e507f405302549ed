#pragma once

// Line-oriented TCP client and a scripted retrieval run used by the server
// tests and the acceptance binary.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "esim/server.hpp"

namespace esim::testing {

class LineClient {
 public:
  explicit LineClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket");
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
      ::close(fd_);
      throw std::runtime_error("connect");
    }
  }
  ~LineClient() {
    if (fd_ >= 0) ::close(fd_);
  }
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send(const Message& m) { send_raw(wire_encode(m) + "\n"); }
  void send_raw(const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const auto n = ::send(fd_, s.data() + off, s.size() - off, MSG_NOSIGNAL);
      if (n <= 0) throw std::runtime_error("send");
      off += static_cast<std::size_t>(n);
    }
  }
  /// Next reply line decoded; throws on EOF.
  Message receive() {
    for (;;) {
      if (auto pos = buf_.find('\n'); pos != std::string::npos) {
        std::string line = buf_.substr(0, pos);
        buf_.erase(0, pos + 1);
        return wire_decode(line);
      }
      char tmp[65536];
      const auto n = ::recv(fd_, tmp, sizeof tmp, 0);
      if (n <= 0) throw std::runtime_error("connection closed");
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }
  Message call(const Message& m) {
    send(m);
    return receive();
  }

 private:
  int fd_ = -1;
  std::string buf_;
};

inline Message request(Op op, const std::string& session, nlohmann::json fields = nlohmann::json::object(),
                       std::optional<std::string> tokens = std::nullopt) {
  Message m;
  m.op = op;
  m.session = session;
  m.fields = fields.is_null() ? nlohmann::json::object() : std::move(fields);
  m.tokens = std::move(tokens);
  return m;
}

/// Token text of one ground-truth action.
inline std::string action_text(const PlannedAction& a) {
  std::string s = Token::act(a.kind).str();
  if (a.kind == ActionKind::select) s += " " + handle(a.object);
  return s;
}

struct ScriptedRun {
  std::string episode_id;
  std::string status;
  int answer_object = -1;
  int target = -1;
  std::vector<std::string> session_tags;  // session field of every reply
};

/// Twin retrieval over any reply channel: reset, one action per emit, answer.
template <class Call>
ScriptedRun scripted_retrieval(Call&& call, const std::string& session, std::uint64_t scene_seed, int k) {
  ScriptedRun out;
  auto reply = call(request(Op::reset, session,
                            {{"scene_seed", scene_seed},
                             {"twins", {{"k", k}, {"attribute", "material"}, {"seed", scene_seed}}},
                             {"task", {{"kind", "retrieval"}, {"seed", scene_seed}}}}));
  out.session_tags.push_back(reply.session);
  if (reply.op != Op::state_update) throw std::runtime_error("reset failed: " + reply.fields.dump());
  out.episode_id = reply.fields.at("episode_id").template get<std::string>();
  const auto task = task_from_json(reply.fields.at("task"));
  out.target = task.target_objects.at(0);
  for (const auto& a : task.gt_actions) {
    reply = call(request(Op::emit_tokens, session, nlohmann::json::object(), action_text(a)));
    out.session_tags.push_back(reply.session);
    if (reply.op != Op::state_update) throw std::runtime_error("emit failed: " + reply.fields.dump());
  }
  reply = call(request(Op::episode_end, session, nlohmann::json::object(), "it is " + handle(out.target)));
  out.session_tags.push_back(reply.session);
  out.status = reply.fields.value("status", "");
  if (reply.fields.contains("answer_object") && !reply.fields.at("answer_object").is_null())
    out.answer_object = reply.fields.at("answer_object").template get<int>();
  return out;
}

}  // namespace esim::testing
