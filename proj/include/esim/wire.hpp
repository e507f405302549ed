#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/common.hpp"

namespace esim {

inline constexpr int kWireVersion = 1;
inline constexpr std::size_t kMaxLineBytes = std::size_t{16} << 20;
inline constexpr std::size_t kEchoBytes = 120;

/// A sensor payload referenced from token text as `#p<id>`. `data` holds raw
/// bytes; it is base64 on the wire.
struct WirePayload {
  std::string kind;   // scene_features, ambient_sound, point_cloud, object_features, impact_sound, tactile, temperature
  std::string dtype;  // f32, pcm16, u8, text
  std::vector<std::int64_t> shape;
  std::string data;
  nlohmann::json meta = nlohmann::json::object();

  friend bool operator==(const WirePayload&, const WirePayload&) = default;
};

std::size_t dtype_size(std::string_view dtype);
/// Throws InvalidArgument when dtype, shape and data length disagree.
void check_payload(const WirePayload& p);

WirePayload f32_payload(std::string kind, std::vector<std::int64_t> shape, const std::vector<float>& values,
                        nlohmann::json meta = nlohmann::json::object());
std::vector<float> f32_values(const WirePayload& p);

nlohmann::json to_json(const WirePayload& p);
WirePayload payload_from_json(const nlohmann::json& j);

enum class Op { hello, reset, emit_tokens, state_update, episode_end, error };
std::string_view to_string(Op op);
std::optional<Op> op_from_string(std::string_view s);

struct Message {
  int v = kWireVersion;
  Op op = Op::hello;
  std::string session;
  std::optional<std::string> tokens;                // token text form
  std::optional<std::map<int, WirePayload>> payloads;
  nlohmann::json fields = nlohmann::json::object();  // op-specific extras, top level on the wire

  friend bool operator==(const Message&, const Message&) = default;
};

/// Malformed wire input; `code` is machine readable, `echo` the offending prefix.
class WireError : public Error {
 public:
  WireError(std::string code, const std::string& message, std::string echo);
  std::string code;
  std::string echo;
};

/// One JSON object, no trailing newline.
std::string wire_encode(const Message& m);
Message wire_decode(std::string_view line);

/// Error reply for a rejected line.
Message error_message(const std::string& session, const std::string& code, const std::string& message,
                      std::string_view offending = {});

/// First `kEchoBytes` of a line, cut on a UTF-8 boundary.
std::string echo_prefix(std::string_view line);

/// Splits a byte stream into lines of at most kMaxLineBytes. Longer lines are
/// discarded through their newline and reported as oversize.
class LineFramer {
 public:
  explicit LineFramer(std::size_t max_line = kMaxLineBytes) : max_(max_line) {}

  struct Line {
    std::string text;
    bool oversize = false;
  };

  void feed(std::string_view bytes);
  /// Next complete line, if any.
  std::optional<Line> next();
  /// Remaining partial line at end of input.
  std::optional<Line> flush();

 private:
  std::size_t max_;
  std::string buf_;
  bool discarding_ = false;
  std::string discarded_head_;
  std::size_t scan_ = 0;
};

}  // namespace esim
