#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esim/embedding.hpp"
#include "esim/protocol.hpp"
#include "esim/scene.hpp"
#include "esim/sensors.hpp"
#include "esim/wire.hpp"

namespace esim {

struct EnvConfig {
  SensorConfig sensors;
  double step_length = 0.25;  // m per navigation step
  double reach = 0.8;         // m, contact actions
  double look_radius = 2.0;   // m
  double standoff = 0.3;      // m kept from the box after NAVIGATE
};

struct AgentState {
  Vec3 position;
  std::optional<int> selected;
  std::optional<int> held;
  int step_count = 0;  // actions executed
  int nav_steps = 0;   // navigation steps walked
};

/// Environment-side failure of a protocol-legal action ("out of reach", ...).
class EnvError : public Error {
 public:
  explicit EnvError(std::string rule_);
  std::string rule;
};

struct ActionRequest {
  ActionKind kind = ActionKind::select;
  std::vector<std::string> referent;  // SELECT: words naming the object
  std::optional<int> object;          // SELECT: already-resolved id
  std::optional<int> site;            // TOUCH/HIT site override
};

struct ActionRecord {
  ActionKind kind = ActionKind::select;
  int object = -1;
  int site = -1;
  friend bool operator==(const ActionRecord&, const ActionRecord&) = default;
};

struct Observation {
  StateKind state = StateKind::object;
  int object_id = -1;
  int payload_id = -1;
};

/// One scene, one agent. Not thread-safe; run one instance per thread.
class Environment {
 public:
  explicit Environment(Scene scene, const AdapterParams& params = aligned_params(), EnvConfig cfg = {},
                       const Catalog& catalog = builtin_catalog());

  /// Agent back at the room center, payload table cleared. Returns the SCENE
  /// span and one AMBIENT_SOUND span per sounding object.
  TokenStream reset();

  struct StepResult {
    ActionRecord record;
    std::vector<Observation> observations;
    TokenStream tokens;  // observation spans
  };
  StepResult execute(const ActionRequest& request);

  /// Handle word ("obj3") if present, else argmax of the SELECT head.
  int resolve_referent(const std::vector<std::string>& words) const;

  const Scene& scene() const { return scene_; }
  const AgentState& agent() const { return agent_; }
  const std::vector<WirePayload>& payloads() const { return payloads_; }
  const SceneFeatureMatrix& features() const { return features_; }
  const EnvConfig& config() const { return cfg_; }
  const Catalog& catalog() const { return *catalog_; }
  const AdapterParams& params() const { return *params_; }
  double distance_to(int object_id) const;

 private:
  int add_payload(WirePayload p);
  TokenStream span(StateKind kind, int payload_id) const;

  Scene initial_;
  Scene scene_;
  const AdapterParams* params_;
  EnvConfig cfg_;
  const Catalog* catalog_;
  SceneFeatureMatrix features_;
  AgentState agent_;
  std::vector<WirePayload> payloads_;
};

int default_touch_site(const ObjectInstance& o);
int default_strike_site(const ObjectInstance& o);

// Payload decoding, shared by policies, audits and replay.
TactileReading tactile_from_payload(const WirePayload& p);
HeatmapImage heatmap_from_payload(const WirePayload& p);
ImpactSoundClip clip_from_payload(const WirePayload& p);
TemperatureReading temperature_from_payload(const WirePayload& p);
PointCloud point_cloud_from_payload(const WirePayload& p);
AmbientSoundTag ambient_from_payload(const WirePayload& p);
Eigen::MatrixXf features_from_payload(const WirePayload& p);
int payload_object(const WirePayload& p);

// ---------------------------------------------------------------------------

enum class EpisodeStatus { running, ok, error, aborted, max_steps };
std::string_view to_string(EpisodeStatus s);
EpisodeStatus parse_episode_status(std::string_view s);

struct Episode {
  std::string id;
  std::string scene_id;
  std::string prompt;
  TokenStream stream;
  std::vector<WirePayload> payloads;        // indexed by PayloadRef id
  std::vector<ActionRecord> actions;
  std::vector<std::size_t> action_offsets;  // stream index of each action token
  std::size_t framing_end = 0;              // end of prompt + framing
  std::size_t answer_offset = 0;
  std::string answer;
  std::optional<int> answer_object;
  EpisodeStatus status = EpisodeStatus::running;
  std::string error;
  int nav_steps = 0;

  /// Actions other than SELECT.
  int interaction_count() const;
  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Protocol automaton + environment + episode record for one task.
class Session {
 public:
  Session(Scene scene, std::string prompt, const AdapterParams& params = aligned_params(), EnvConfig cfg = {},
          const Catalog& catalog = builtin_catalog());

  struct Delta {
    TokenStream tokens;
    std::map<int, WirePayload> payloads;
  };

  /// Prompt words followed by the scene framing.
  Delta start();
  /// Steps and executes policy-emitted tokens. `sites` optionally overrides
  /// the TOUCH/HIT site of the n-th action in this batch. On a protocol or
  /// environment fault the episode ends with status error and the fault is rethrown.
  Delta submit(const TokenStream& emitted, const std::vector<std::optional<int>>& sites = {});
  /// Appends the answer text and terminates the episode.
  void end(const TokenStream& answer);
  void abort(const std::string& why);

  bool done() const { return episode_.status != EpisodeStatus::running; }
  const Episode& episode() const { return episode_; }
  const Environment& env() const { return env_; }
  const ProtocolState& protocol() const { return state_; }
  void set_episode_id(std::string id) { episode_.id = std::move(id); }
  void mark(EpisodeStatus s, std::string why = {});

 private:
  void require_running() const;
  void flush_select(Delta& delta);
  void fail(const std::string& rule);

  Environment env_;
  ProtocolState state_;
  Episode episode_;
  bool started_ = false;
  bool select_pending_ = false;
  std::vector<std::string> referent_;
  std::size_t select_offset_ = 0;
};

/// Policy side of the interaction loop.
class PolicyConnection {
 public:
  virtual ~PolicyConnection() = default;
  struct Turn {
    TokenStream tokens;
    std::vector<std::optional<int>> sites;
    bool final = false;  // tokens are the answer
  };
  /// Receives what was appended since the last turn.
  virtual Turn next(const Session::Delta& delta) = 0;
};

/// The policy side went away mid-episode.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Alternates policy turns and environment execution until the policy
/// answers or `max_steps` actions have run.
Episode run_episode(Session& session, PolicyConnection& policy, int max_steps);

/// Re-executes the policy-emitted tokens of a recorded episode on a fresh
/// session; returns human-readable differences (empty when reproducible).
std::vector<std::string> replay_episode(const Scene& scene, const Episode& recorded,
                                        const AdapterParams& params = aligned_params(), EnvConfig cfg = {});

/// Interleaved stream with payload summaries, one token span per line.
std::string transcript(const Episode& e);

}  // namespace esim
