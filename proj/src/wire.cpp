#include "esim/wire.hpp"

#include <cstring>
#include <limits>

namespace esim {

namespace {

constexpr std::string_view kOps[] = {"hello", "reset", "emit_tokens", "state_update", "episode_end", "error"};

std::string dump(const nlohmann::json& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); }

}  // namespace

std::size_t dtype_size(std::string_view dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "pcm16") return 2;
  if (dtype == "u8" || dtype == "text") return 1;
  throw InvalidArgument("unknown dtype: " + std::string(dtype));
}

void check_payload(const WirePayload& p) {
  if (p.kind.empty()) throw InvalidArgument("payload kind missing");
  const std::size_t size = dtype_size(p.dtype);
  std::size_t count = 1;
  for (auto d : p.shape) {
    if (d < 0) throw InvalidArgument("negative payload dimension");
    count *= static_cast<std::size_t>(d);
  }
  if (count * size != p.data.size())
    throw InvalidArgument("payload " + p.kind + " has " + std::to_string(p.data.size()) + " bytes, shape needs " +
                          std::to_string(count * size));
  if (!p.meta.is_object()) throw InvalidArgument("payload meta must be an object");
}

WirePayload f32_payload(std::string kind, std::vector<std::int64_t> shape, const std::vector<float>& values,
                        nlohmann::json meta) {
  WirePayload p;
  p.kind = std::move(kind);
  p.dtype = "f32";
  p.shape = std::move(shape);
  p.data.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    for (int b = 0; b < 4; ++b) p.data[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  p.meta = std::move(meta);
  check_payload(p);
  return p;
}

std::vector<float> f32_values(const WirePayload& p) {
  if (p.dtype != "f32" || p.data.size() % 4 != 0) throw InvalidArgument("payload is not f32");
  std::vector<float> out(p.data.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p.data[4 * i + static_cast<std::size_t>(b)])) << (8 * b);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

nlohmann::json to_json(const WirePayload& p) {
  return {{"kind", p.kind}, {"dtype", p.dtype}, {"shape", p.shape}, {"data", base64_encode(p.data)}, {"meta", p.meta}};
}

WirePayload payload_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("payload must be an object");
  WirePayload p;
  try {
    p.kind = j.at("kind").get<std::string>();
    p.dtype = j.at("dtype").get<std::string>();
    p.shape = j.at("shape").get<std::vector<std::int64_t>>();
    p.data = base64_decode(j.at("data").get<std::string>());
    p.meta = j.contains("meta") ? j.at("meta") : nlohmann::json::object();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed payload: ") + e.what());
  }
  check_payload(p);
  return p;
}

std::string_view to_string(Op op) { return kOps[static_cast<int>(op)]; }

std::optional<Op> op_from_string(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kOps[i] == s) return static_cast<Op>(i);
  return std::nullopt;
}

WireError::WireError(std::string c, const std::string& message, std::string e)
    : Error(message), code(std::move(c)), echo(std::move(e)) {}

std::string echo_prefix(std::string_view line) {
  if (line.size() <= kEchoBytes) return std::string(line);
  std::size_t n = kEchoBytes;
  // Back off continuation bytes so the cut never splits a code point.
  while (n > 0 && (static_cast<unsigned char>(line[n]) & 0xC0) == 0x80) --n;
  return std::string(line.substr(0, n));
}

std::string wire_encode(const Message& m) {
  if (!m.fields.is_object()) throw InvalidArgument("message fields must be an object");
  nlohmann::json j = m.fields;
  for (const char* k : {"v", "op", "session", "tokens", "payloads"})
    if (j.contains(k)) throw InvalidArgument(std::string("reserved field in extras: ") + k);
  j["v"] = m.v;
  j["op"] = std::string(to_string(m.op));
  j["session"] = m.session;
  if (m.tokens) j["tokens"] = *m.tokens;
  if (m.payloads) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [id, p] : *m.payloads) {
      auto pj = to_json(p);
      pj["id"] = id;
      arr.push_back(std::move(pj));
    }
    j["payloads"] = std::move(arr);
  }
  return dump(j);
}

Message wire_decode(std::string_view line) {
  if (line.size() > kMaxLineBytes) throw WireError("too_large", "message too large", echo_prefix(line));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw WireError("bad_json", std::string("malformed JSON: ") + e.what(), echo_prefix(line));
  }
  if (!j.is_object()) throw WireError("bad_json", "message must be a JSON object", echo_prefix(line));

  Message m;
  auto v = j.find("v");
  if (v == j.end() || !v->is_number_integer() || v->get<std::int64_t>() != kWireVersion)
    throw WireError("bad_version", "unsupported or missing protocol version", echo_prefix(line));
  auto op = j.find("op");
  if (op == j.end() || !op->is_string() || !op_from_string(op->get<std::string>()))
    throw WireError("bad_op", "unknown or missing op", echo_prefix(line));
  m.op = *op_from_string(op->get<std::string>());
  if (auto s = j.find("session"); s != j.end()) {
    if (!s->is_string()) throw WireError("bad_field", "session must be a string", echo_prefix(line));
    m.session = s->get<std::string>();
  }
  if (auto t = j.find("tokens"); t != j.end()) {
    if (!t->is_string()) throw WireError("bad_field", "tokens must be a string", echo_prefix(line));
    m.tokens = t->get<std::string>();
  }
  if (auto p = j.find("payloads"); p != j.end()) {
    if (!p->is_array()) throw WireError("bad_field", "payloads must be an array", echo_prefix(line));
    std::map<int, WirePayload> table;
    for (const auto& pj : *p) {
      try {
        if (!pj.is_object() || !pj.contains("id") || !pj.at("id").is_number_integer())
          throw InvalidArgument("payload id missing");
        const auto id = pj.at("id").get<std::int64_t>();
        if (id < 0 || id > std::numeric_limits<int>::max()) throw InvalidArgument("payload id out of range");
        nlohmann::json body = pj;
        body.erase("id");
        if (!table.emplace(static_cast<int>(id), payload_from_json(body)).second)
          throw InvalidArgument("duplicate payload id " + std::to_string(id));
      } catch (const InvalidArgument& e) {
        throw WireError("bad_payload", e.what(), echo_prefix(line));
      }
    }
    m.payloads = std::move(table);
  }
  for (const char* k : {"v", "op", "session", "tokens", "payloads"}) j.erase(k);
  m.fields = std::move(j);
  return m;
}

Message error_message(const std::string& session, const std::string& code, const std::string& message,
                      std::string_view offending) {
  Message m;
  m.op = Op::error;
  m.session = session;
  m.fields = {{"code", code}, {"message", message}};
  if (!offending.empty()) m.fields["echo"] = echo_prefix(offending);
  return m;
}

void LineFramer::feed(std::string_view bytes) { buf_.append(bytes); }

std::optional<LineFramer::Line> LineFramer::next() {
  for (;;) {
    const auto nl = buf_.find('\n', scan_);
    if (discarding_) {
      if (nl == std::string::npos) {
        buf_.clear();
        scan_ = 0;
        return std::nullopt;
      }
      buf_.erase(0, nl + 1);
      scan_ = 0;
      discarding_ = false;
      return Line{std::move(discarded_head_), true};
    }
    if (nl == std::string::npos) {
      if (buf_.size() > max_) {
        discarding_ = true;
        discarded_head_ = echo_prefix(buf_);
        buf_.clear();
        scan_ = 0;
        continue;
      }
      scan_ = buf_.size();
      return std::nullopt;
    }
    Line line;
    if (nl > max_) {
      line.oversize = true;
      line.text = echo_prefix(buf_);
    } else {
      line.text = buf_.substr(0, nl);
      if (!line.text.empty() && line.text.back() == '\r') line.text.pop_back();
    }
    buf_.erase(0, nl + 1);
    scan_ = 0;
    return line;
  }
}

std::optional<LineFramer::Line> LineFramer::flush() {
  if (discarding_) {
    discarding_ = false;
    buf_.clear();
    scan_ = 0;
    return Line{std::move(discarded_head_), true};
  }
  if (buf_.empty()) return std::nullopt;
  const bool oversize = buf_.size() > max_;
  Line line{oversize ? echo_prefix(buf_) : std::move(buf_), oversize};
  buf_.clear();
  scan_ = 0;
  return line;
}

}  // namespace esim
