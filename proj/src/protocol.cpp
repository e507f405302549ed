#include "esim/protocol.hpp"

#include <cctype>

namespace esim {

namespace {

constexpr std::string_view kActionNames[] = {"SELECT", "NAVIGATE", "OBSERVE",  "TOUCH",
                                             "HIT",    "PICK-UP",  "PUT-DOWN", "LOOK-AROUND"};
constexpr std::string_view kStateNames[] = {"SCENE",        "AMBIENT_SOUND", "OBJECT",
                                            "IMPACT_SOUND", "TACTILE",       "TEMPERATURE"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string_view name(ActionKind a) { return kActionNames[static_cast<int>(a)]; }
std::string_view name(StateKind s) { return kStateNames[static_cast<int>(s)]; }

std::optional<ActionKind> action_from_name(std::string_view n) {
  for (int i = 0; i < 8; ++i)
    if (kActionNames[i] == n) return static_cast<ActionKind>(i);
  return std::nullopt;
}

std::optional<StateKind> state_from_name(std::string_view n) {
  for (int i = 0; i < 6; ++i)
    if (kStateNames[i] == n) return static_cast<StateKind>(i);
  return std::nullopt;
}

Token Token::text(std::string w) {
  Token t;
  t.type = Type::text;
  t.word = std::move(w);
  return t;
}
Token Token::act(ActionKind a) {
  Token t;
  t.type = Type::action;
  t.action = a;
  return t;
}
Token Token::open(StateKind s) {
  Token t;
  t.type = Type::state_open;
  t.state = s;
  return t;
}
Token Token::close(StateKind s) {
  Token t;
  t.type = Type::state_close;
  t.state = s;
  return t;
}
Token Token::ref(int id) {
  Token t;
  t.type = Type::payload_ref;
  t.payload = id;
  return t;
}

std::string Token::str() const {
  switch (type) {
    case Type::text: return word;
    case Type::action: return "<" + std::string(name(action)) + ">";
    case Type::state_open: return "<" + std::string(name(state)) + ">";
    case Type::state_close: return "</" + std::string(name(state)) + ">";
    case Type::payload_ref: return "#p" + std::to_string(payload);
  }
  return {};
}

bool operator==(const Token& a, const Token& b) {
  if (a.type != b.type) return false;
  switch (a.type) {
    case Token::Type::text: return a.word == b.word;
    case Token::Type::action: return a.action == b.action;
    case Token::Type::state_open:
    case Token::Type::state_close: return a.state == b.state;
    case Token::Type::payload_ref: return a.payload == b.payload;
  }
  return false;
}

void TokenStream::append(const TokenStream& other) {
  tokens.insert(tokens.end(), other.tokens.begin(), other.tokens.end());
}

TokenStream TokenStream::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > tokens.size()) throw InvalidArgument("token slice out of range");
  return {std::vector<Token>(tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                             tokens.begin() + static_cast<std::ptrdiff_t>(end))};
}

ParseError::ParseError(std::size_t off, const std::string& what)
    : Error(what + " at byte " + std::to_string(off)), offset(off), reason(what) {}

TokenStream parse(std::string_view text) {
  TokenStream out;
  std::optional<StateKind> open;
  std::size_t open_at = 0;
  int refs_in_span = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();

  auto in_span_guard = [&](std::size_t at) {
    if (open) throw ParseError(at, "state span " + std::string(name(*open)) + " must contain exactly one payload ref");
  };

  while (i < n) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (text[i] == '<') {
      const auto end = text.find('>', i);
      if (end == std::string_view::npos) throw ParseError(start, "unterminated marker");
      std::string_view inner = text.substr(i + 1, end - i - 1);
      i = end + 1;
      const bool closing = !inner.empty() && inner.front() == '/';
      if (closing) inner.remove_prefix(1);
      if (!closing) {
        if (auto a = action_from_name(inner)) {
          in_span_guard(start);
          out.tokens.push_back(Token::act(*a));
          continue;
        }
      }
      auto s = state_from_name(inner);
      if (!s) throw ParseError(start, "unknown token <" + std::string(closing ? "/" : "") + std::string(inner) + ">");
      if (!closing) {
        if (open) throw ParseError(start, "nested state span " + std::string(name(*s)) + " inside " + std::string(name(*open)));
        open = *s;
        open_at = start;
        refs_in_span = 0;
        out.tokens.push_back(Token::open(*s));
      } else {
        if (!open) throw ParseError(start, "unbalanced </" + std::string(name(*s)) + ">");
        if (*open != *s)
          throw ParseError(start, "mismatched </" + std::string(name(*s)) + "> closing " + std::string(name(*open)));
        if (refs_in_span != 1)
          throw ParseError(start, "state span " + std::string(name(*s)) + " must contain exactly one payload ref");
        open.reset();
        out.tokens.push_back(Token::close(*s));
      }
      continue;
    }
    if (text[i] == '>') throw ParseError(start, "stray '>'");
    std::size_t j = i;
    while (j < n && !is_space(text[j]) && text[j] != '<') {
      if (text[j] == '>') throw ParseError(j, "stray '>'");
      ++j;
    }
    const std::string_view word = text.substr(i, j - i);
    i = j;
    if (word.front() == '#') {
      if (word.size() < 3 || word[1] != 'p' || word.size() > 12) throw ParseError(start, "malformed payload ref " + std::string(word));
      int id = 0;
      for (std::size_t k = 2; k < word.size(); ++k) {
        if (!std::isdigit(static_cast<unsigned char>(word[k]))) throw ParseError(start, "malformed payload ref " + std::string(word));
        id = id * 10 + (word[k] - '0');
      }
      if (word.size() > 3 && word[2] == '0') throw ParseError(start, "malformed payload ref " + std::string(word));
      if (!open) throw ParseError(start, "payload ref outside a state span");
      if (++refs_in_span > 1) in_span_guard(start);
      out.tokens.push_back(Token::ref(id));
      continue;
    }
    in_span_guard(start);
    out.tokens.push_back(Token::text(std::string(word)));
  }
  if (open) throw ParseError(open_at, "unclosed " + std::string(name(*open)));
  return out;
}

std::string serialize(const TokenStream& s) {
  std::string out;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const auto& t = s.tokens[i];
    if (t.type == Token::Type::text) {
      if (t.word.empty() || t.word.front() == '#' ||
          t.word.find_first_of("<> \t\n\r\f\v") != std::string::npos)
        throw InvalidArgument("text token not representable: '" + t.word + "'");
    }
    if (t.type == Token::Type::payload_ref && t.payload < 0) throw InvalidArgument("negative payload ref");
    if (i) out += ' ';
    out += t.str();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::await_scene: return "AwaitScene";
    case Phase::idle: return "Idle";
    case Phase::selected: return "Selected";
    case Phase::holding: return "Holding";
    case Phase::terminated: return "Terminated";
  }
  return "?";
}

ProtocolError::ProtocolError(std::string r, std::size_t idx)
    : Error("protocol violation: " + r), rule(std::move(r)), index(idx) {}

ProtocolState step(const ProtocolState& in, const Token& tok) {
  using T = Token::Type;
  if (in.phase == Phase::terminated) throw ProtocolError("episode terminated");
  ProtocolState s = in;

  if (s.open_span) {
    switch (tok.type) {
      case T::payload_ref:
        if (s.span_filled) throw ProtocolError("span holds more than one payload");
        s.span_filled = true;
        return s;
      case T::state_close:
        if (tok.state != *s.open_span) throw ProtocolError("mismatched span close");
        if (!s.span_filled) throw ProtocolError("empty state span");
        if (*s.open_span == StateKind::scene) s.phase = Phase::idle;
        s.open_span.reset();
        s.span_filled = false;
        return s;
      case T::state_open: throw ProtocolError("nested state span");
      default: throw ProtocolError("unclosed state span");
    }
  }

  switch (tok.type) {
    case T::payload_ref: throw ProtocolError("payload outside span");
    case T::state_close: throw ProtocolError("unbalanced span close");
    case T::state_open: {
      const StateKind k = tok.state;
      if (s.phase == Phase::await_scene) {
        if (k != StateKind::scene) throw ProtocolError("scene not framed");
      } else if (k == StateKind::scene) {
        throw ProtocolError("scene already framed");
      } else if (k == StateKind::ambient_sound) {
        if (s.action_count != 0) throw ProtocolError("ambient sound outside framing");
      } else if (!s.expected.empty()) {
        if (s.expected.front() != k) throw ProtocolError("unexpected observation");
        s.expected.pop_front();
      } else if (!(s.look_around_open && k == StateKind::object)) {
        throw ProtocolError("unexpected observation");
      }
      s.open_span = k;
      s.span_filled = false;
      return s;
    }
    default: break;
  }

  if (!s.expected.empty()) throw ProtocolError("missing observation");
  s.look_around_open = false;
  if (tok.type == T::text) return s;

  if (s.phase == Phase::await_scene) throw ProtocolError("scene not framed");
  const bool has_selection = s.phase == Phase::selected || s.phase == Phase::holding;
  switch (tok.action) {
    case ActionKind::select:
      s.selected_object = kPendingSelection;
      if (s.phase != Phase::holding) s.phase = Phase::selected;
      break;
    case ActionKind::navigate:
    case ActionKind::observe:
    case ActionKind::touch:
    case ActionKind::hit:
      if (!has_selection) throw ProtocolError("no object selected");
      if (tok.action == ActionKind::observe) s.expected = {StateKind::object};
      if (tok.action == ActionKind::touch) s.expected = {StateKind::tactile, StateKind::temperature};
      if (tok.action == ActionKind::hit) s.expected = {StateKind::impact_sound};
      break;
    case ActionKind::pick_up:
      if (!has_selection) throw ProtocolError("no object selected");
      if (s.held_object) throw ProtocolError("already holding");
      s.held_object = s.selected_object;
      s.phase = Phase::holding;
      break;
    case ActionKind::put_down:
      if (!s.held_object) throw ProtocolError("empty hand");
      s.held_object.reset();
      s.phase = Phase::selected;
      break;
    case ActionKind::look_around: s.look_around_open = true; break;
  }
  ++s.action_count;
  return s;
}

ProtocolState resolve_selection(const ProtocolState& state, int object_id) {
  if (object_id < 0) throw InvalidArgument("object id must be non-negative");
  if (state.selected_object != kPendingSelection) throw ProtocolError("no pending selection");
  ProtocolState s = state;
  s.selected_object = object_id;
  return s;
}

ProtocolState finish(const ProtocolState& state) {
  if (state.phase == Phase::terminated) throw ProtocolError("episode terminated");
  if (state.open_span) throw ProtocolError("unclosed state span");
  if (!state.expected.empty()) throw ProtocolError("missing observation");
  if (state.phase == Phase::await_scene) throw ProtocolError("scene not framed");
  ProtocolState s = state;
  s.phase = Phase::terminated;
  return s;
}

ProtocolState replay_steps(const TokenStream& stream, ProtocolState start) {
  for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
    try {
      start = step(start, stream.tokens[i]);
    } catch (const ProtocolError& e) {
      throw ProtocolError(e.rule, i);
    }
  }
  return start;
}

// ---------------------------------------------------------------------------
// Independent checker: rules are evaluated as a table of predicates per token
// class over a flat record of the stream seen so far.

namespace {

struct Seen {
  bool framed = false;        // SCENE span completed
  int actions = 0;
  bool selection = false;
  bool hand_full = false;
  int span = -1;              // open state kind, -1 when none
  int span_refs = 0;
  std::vector<int> owed;      // observations owed, front first
  std::size_t owed_pos = 0;
  bool sweep = false;         // after LOOK-AROUND, before any text/action
};

std::vector<int> owed_by(ActionKind a) {
  switch (a) {
    case ActionKind::observe: return {static_cast<int>(StateKind::object)};
    case ActionKind::touch: return {static_cast<int>(StateKind::tactile), static_cast<int>(StateKind::temperature)};
    case ActionKind::hit: return {static_cast<int>(StateKind::impact_sound)};
    default: return {};
  }
}

const char* check_token(Seen& v, const Token& t) {
  using T = Token::Type;
  const bool pending = v.owed_pos < v.owed.size();
  const int scene = static_cast<int>(StateKind::scene);

  if (v.span >= 0) {
    if (t.type == T::payload_ref) return v.span_refs++ == 0 ? nullptr : "span holds more than one payload";
    if (t.type == T::state_close) {
      if (static_cast<int>(t.state) != v.span) return "mismatched span close";
      if (v.span_refs == 0) return "empty state span";
      if (v.span == scene) v.framed = true;
      v.span = -1;
      return nullptr;
    }
    return t.type == T::state_open ? "nested state span" : "unclosed state span";
  }
  if (t.type == T::payload_ref) return "payload outside span";
  if (t.type == T::state_close) return "unbalanced span close";

  if (t.type == T::state_open) {
    const int k = static_cast<int>(t.state);
    const char* err = nullptr;
    if (!v.framed) {
      // The opening SCENE counts as framing only once closed, so a second
      // SCENE before closing is impossible here (spans cannot nest).
      err = k == scene ? nullptr : "scene not framed";
    } else if (k == scene) {
      err = "scene already framed";
    } else if (t.state == StateKind::ambient_sound) {
      err = v.actions == 0 ? nullptr : "ambient sound outside framing";
    } else if (pending) {
      if (v.owed[v.owed_pos] == k)
        ++v.owed_pos;
      else
        err = "unexpected observation";
    } else if (!(v.sweep && t.state == StateKind::object)) {
      err = "unexpected observation";
    }
    if (!err) {
      v.span = k;
      v.span_refs = 0;
    }
    return err;
  }

  if (pending) return "missing observation";
  v.sweep = false;
  if (t.type == T::text) return nullptr;
  if (!v.framed) return "scene not framed";

  const ActionKind a = t.action;
  const bool needs_selection = a == ActionKind::navigate || a == ActionKind::observe || a == ActionKind::touch ||
                               a == ActionKind::hit || a == ActionKind::pick_up;
  if (needs_selection && !v.selection) return "no object selected";
  if (a == ActionKind::pick_up && v.hand_full) return "already holding";
  if (a == ActionKind::put_down && !v.hand_full) return "empty hand";

  if (a == ActionKind::select) v.selection = true;
  if (a == ActionKind::pick_up) v.hand_full = true;
  if (a == ActionKind::put_down) v.hand_full = false;
  if (a == ActionKind::look_around) v.sweep = true;
  v.owed = owed_by(a);
  v.owed_pos = 0;
  ++v.actions;
  return nullptr;
}

}  // namespace

StreamCheck validate_stream(const TokenStream& stream, bool complete) {
  Seen v;
  for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
    if (const char* err = check_token(v, stream.tokens[i])) return {false, i, err};
  }
  if (complete) {
    const std::size_t end = stream.tokens.size();
    if (v.span >= 0) return {false, end, "unclosed state span"};
    if (v.owed_pos < v.owed.size()) return {false, end, "missing observation"};
    if (!v.framed) return {false, end, "scene not framed"};
  }
  return {};
}

std::optional<int> parse_handle(std::string_view word) {
  if (word.size() < 4 || word.size() > 12 || word.substr(0, 3) != "obj") return std::nullopt;
  int id = 0;
  for (std::size_t k = 3; k < word.size(); ++k) {
    if (!std::isdigit(static_cast<unsigned char>(word[k]))) return std::nullopt;
    id = id * 10 + (word[k] - '0');
  }
  if (word.size() > 4 && word[3] == '0') return std::nullopt;
  return id;
}

std::string handle(int object_id) { return "obj" + std::to_string(object_id); }

}  // namespace esim
