#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esim/common.hpp"

namespace esim {

enum class ActionKind { select, navigate, observe, touch, hit, pick_up, put_down, look_around };
enum class StateKind { scene, ambient_sound, object, impact_sound, tactile, temperature };

inline constexpr ActionKind kAllActions[] = {ActionKind::select,  ActionKind::navigate, ActionKind::observe,
                                             ActionKind::touch,   ActionKind::hit,      ActionKind::pick_up,
                                             ActionKind::put_down, ActionKind::look_around};
inline constexpr StateKind kAllStates[] = {StateKind::scene,        StateKind::ambient_sound, StateKind::object,
                                           StateKind::impact_sound, StateKind::tactile,       StateKind::temperature};

/// Surface names without brackets: "PICK-UP", "IMPACT_SOUND", ...
std::string_view name(ActionKind a);
std::string_view name(StateKind s);
std::optional<ActionKind> action_from_name(std::string_view n);
std::optional<StateKind> state_from_name(std::string_view n);

struct Token {
  enum class Type { text, action, state_open, state_close, payload_ref };

  Type type = Type::text;
  std::string word;                          // text
  ActionKind action = ActionKind::select;    // action
  StateKind state = StateKind::scene;        // state_open / state_close
  int payload = 0;                           // payload_ref

  static Token text(std::string w);
  static Token act(ActionKind a);
  static Token open(StateKind s);
  static Token close(StateKind s);
  static Token ref(int id);

  bool is_action() const { return type == Type::action; }
  bool is_action(ActionKind a) const { return type == Type::action && action == a; }
  /// Canonical text form: `<TOUCH>`, `</TACTILE>`, `#p3`, or the word.
  std::string str() const;

  friend bool operator==(const Token& a, const Token& b);
};

struct TokenStream {
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  void append(const TokenStream& other);
  TokenStream slice(std::size_t begin, std::size_t end) const;
  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

/// Raised by parse() with the byte offset of the offending input.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what);
  std::size_t offset;
  std::string reason;
};

/// Tokens separated by whitespace or bracket boundaries. Text words may not
/// contain '<', '>' or start with '#'. State spans must hold exactly one
/// payload ref and may not nest.
TokenStream parse(std::string_view text);
/// Tokens joined by single spaces.
std::string serialize(const TokenStream& s);

// ---------------------------------------------------------------------------
// Legality automaton.

enum class Phase { await_scene, idle, selected, holding, terminated };
std::string_view to_string(Phase p);

/// Id value of a SELECT whose referent has not been resolved yet.
inline constexpr int kPendingSelection = -1;

struct ProtocolState {
  Phase phase = Phase::await_scene;
  std::optional<int> selected_object;
  std::optional<int> held_object;

  std::optional<StateKind> open_span;
  bool span_filled = false;
  std::deque<StateKind> expected;  // observations owed by the last action
  bool look_around_open = false;   // any number of OBJECT spans may follow
  int action_count = 0;

  friend bool operator==(const ProtocolState&, const ProtocolState&) = default;
};

/// Names the violated rule, e.g. "no object selected", "already holding".
class ProtocolError : public Error {
 public:
  ProtocolError(std::string rule, std::size_t index = 0);
  std::string rule;
  std::size_t index;  // token position when raised from a stream replay
};

/// One transition. Never mutates `state`; throws ProtocolError on illegal tokens.
ProtocolState step(const ProtocolState& state, const Token& token);
/// Records the object a pending SELECT resolved to.
ProtocolState resolve_selection(const ProtocolState& state, int object_id);
/// Ends the episode; fails while a span is open or observations are owed.
ProtocolState finish(const ProtocolState& state);
/// Replays `stream` through step() from `start`; rethrows with the token index.
ProtocolState replay_steps(const TokenStream& stream, ProtocolState start = {});

struct StreamCheck {
  bool ok = true;
  std::size_t index = 0;  // first offending token (== size() for end-of-stream faults)
  std::string rule;
};

/// Whole-stream rule check, written independently of step(). With
/// `complete`, the stream must also be a finished episode.
StreamCheck validate_stream(const TokenStream& stream, bool complete = true);

/// Parses "obj<N>" handles used to name objects in text.
std::optional<int> parse_handle(std::string_view word);
std::string handle(int object_id);

}  // namespace esim
