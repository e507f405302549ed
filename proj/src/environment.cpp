#include "esim/environment.hpp"

#include <cmath>
#include <sstream>

namespace esim {

namespace {

double xy_distance(const Box& b, const Vec3& p) {
  const double dx = std::max({b.min().x - p.x, 0.0, p.x - b.max().x});
  const double dy = std::max({b.min().y - p.y, 0.0, p.y - b.max().y});
  return std::hypot(dx, dy);
}

Vec3 room_start(const Box& room) { return {room.center.x, room.center.y, room.min().z}; }

}  // namespace

EnvError::EnvError(std::string r) : Error("environment error: " + r), rule(std::move(r)) {}

int default_touch_site(const ObjectInstance& o) { return static_cast<int>(mix(o.seed, 0x70C4ULL) % kTouchSites); }
int default_strike_site(const ObjectInstance& o) { return static_cast<int>(mix(o.seed, 0x417ULL) % kStrikeSites); }

Environment::Environment(Scene scene, const AdapterParams& params, EnvConfig cfg, const Catalog& catalog)
    : initial_(std::move(scene)), params_(&params), cfg_(cfg), catalog_(&catalog) {
  const auto report = validate_scene(initial_, catalog);
  if (!report.ok()) throw InvalidArgument("invalid scene: " + report.summary());
  scene_ = initial_;
  features_ = scene_features(scene_);
  agent_.position = room_start(scene_.room);
}

int Environment::add_payload(WirePayload p) {
  payloads_.push_back(std::move(p));
  return static_cast<int>(payloads_.size()) - 1;
}

TokenStream Environment::span(StateKind kind, int payload_id) const {
  return {{Token::open(kind), Token::ref(payload_id), Token::close(kind)}};
}

TokenStream Environment::reset() {
  scene_ = initial_;
  agent_ = AgentState{};
  agent_.position = room_start(scene_.room);
  payloads_.clear();

  TokenStream out;
  std::vector<float> rows(static_cast<std::size_t>(features_.rows.size()));
  for (Eigen::Index i = 0; i < features_.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < features_.rows.cols(); ++j)
      rows[static_cast<std::size_t>(i * features_.rows.cols() + j)] = features_.rows(i, j);
  const int scene_ref = add_payload(f32_payload("scene_features", {features_.rows.rows(), features_.rows.cols()}, rows,
                                                {{"scene_id", scene_.id}}));
  out.append(span(StateKind::scene, scene_ref));
  for (const auto& o : scene_.objects) {
    if (!o.ambient_sound) continue;
    WirePayload p;
    p.kind = "ambient_sound";
    p.dtype = "text";
    p.data = o.ambient_sound->description;
    p.shape = {static_cast<std::int64_t>(p.data.size())};
    p.meta = {{"object_id", o.id}, {"ontology_id", o.ambient_sound->ontology_id}};
    out.append(span(StateKind::ambient_sound, add_payload(std::move(p))));
  }
  return out;
}

double Environment::distance_to(int object_id) const {
  if (agent_.held == object_id) return 0.0;
  return xy_distance(scene_.object(object_id).bbox, agent_.position);
}

int Environment::resolve_referent(const std::vector<std::string>& words) const {
  for (const auto& w : words) {
    if (auto id = parse_handle(w); id && *id < static_cast<int>(scene_.objects.size())) return *id;
  }
  if (words.empty()) throw EnvError("empty referent");
  const FeatureVector q = adapt(*params_, Modality::text, encode(Modality::text, join(words, " ")));
  return argmax_lowest(select_scores(q, features_, *params_));
}

Environment::StepResult Environment::execute(const ActionRequest& req) {
  StepResult r;
  r.record.kind = req.kind;
  auto need_selection = [&]() -> int {
    if (!agent_.selected) throw EnvError("no object selected");
    return *agent_.selected;
  };
  auto need_reach = [&](int id) {
    if (distance_to(id) > cfg_.reach + 1e-9) throw EnvError("out of reach");
  };
  auto carry = [&] {
    if (!agent_.held) return;
    auto& o = scene_.object(*agent_.held);
    o.bbox.center = {agent_.position.x, agent_.position.y, scene_.room.min().z + o.bbox.half.z};
  };
  auto observe_span = [&](StateKind kind, int obj, WirePayload p) {
    const int id = add_payload(std::move(p));
    r.observations.push_back({kind, obj, id});
    r.tokens.append(span(kind, id));
  };

  switch (req.kind) {
    case ActionKind::select: {
      const int id = req.object ? *req.object : resolve_referent(req.referent);
      if (id < 0 || id >= static_cast<int>(scene_.objects.size())) throw EnvError("unknown object");
      agent_.selected = id;
      r.record.object = id;
      break;
    }
    case ActionKind::navigate: {
      const int id = need_selection();
      r.record.object = id;
      if (agent_.held == id) break;
      const Box& b = scene_.object(id).bbox;
      const Vec3 p = agent_.position;
      const Vec3 q{std::clamp(p.x, b.min().x, b.max().x), std::clamp(p.y, b.min().y, b.max().y), p.z};
      const double gap = std::hypot(p.x - q.x, p.y - q.y);
      if (gap > cfg_.standoff) {
        Vec3 goal = q + (cfg_.standoff / gap) * Vec3{p.x - q.x, p.y - q.y, 0.0};
        goal.x = std::clamp(goal.x, scene_.room.min().x, scene_.room.max().x);
        goal.y = std::clamp(goal.y, scene_.room.min().y, scene_.room.max().y);
        const double dist = std::hypot(goal.x - p.x, goal.y - p.y);
        agent_.nav_steps += static_cast<int>(std::ceil(dist / cfg_.step_length - 1e-12));
        agent_.position = goal;
        carry();
      }
      break;
    }
    case ActionKind::observe: {
      const int id = need_selection();
      r.record.object = id;
      const auto pc = observe(scene_.object(id), cfg_.sensors.point_count, scene_.object(id).seed);
      std::vector<float> xyz;
      xyz.reserve(pc.points.size() * 3);
      for (const auto& pt : pc.points)
        for (int a = 0; a < 3; ++a) xyz.push_back(static_cast<float>(pt[a]));
      observe_span(StateKind::object, id,
                   f32_payload("point_cloud", {static_cast<std::int64_t>(pc.points.size()), 3}, xyz, {{"object_id", id}}));
      break;
    }
    case ActionKind::touch: {
      const int id = need_selection();
      need_reach(id);
      const auto& o = scene_.object(id);
      const int site = req.site ? *req.site : default_touch_site(o);
      r.record = {req.kind, id, site};
      const auto reading = touch(o, *catalog_, site, cfg_.sensors.touch_force, cfg_.sensors);
      std::vector<float> markers;
      for (const auto* grid : {&reading.marker_init, &reading.marker_final})
        for (const auto& m : *grid) {
          markers.push_back(static_cast<float>(m.x));
          markers.push_back(static_cast<float>(m.y));
        }
      const auto heat = render_tactile_heatmap(reading, cfg_.sensors);
      nlohmann::json meta = {{"object_id", id},
                             {"contact_point", site},
                             {"force", reading.force},
                             {"grid", reading.grid},
                             {"heatmap_pgm", base64_encode(pgm_bytes(heat))}};
      observe_span(StateKind::tactile, id,
                   f32_payload("tactile", {2, static_cast<std::int64_t>(reading.grid) * reading.grid, 2}, markers, meta));
      observe_span(StateKind::temperature, id,
                   f32_payload("temperature", {1}, {static_cast<float>(o.temp_celsius)}, {{"object_id", id}}));
      break;
    }
    case ActionKind::hit: {
      const int id = need_selection();
      need_reach(id);
      const auto& o = scene_.object(id);
      const int site = req.site ? *req.site : default_strike_site(o);
      r.record = {req.kind, id, site};
      const auto clip = hit(o, *catalog_, site, cfg_.sensors.hit_force, cfg_.sensors);
      WirePayload p;
      p.kind = "impact_sound";
      p.dtype = "pcm16";
      p.shape = {static_cast<std::int64_t>(clip.samples.size())};
      p.data = pcm16_bytes(clip.samples);
      p.meta = {{"object_id", id}, {"sample_rate", clip.sample_rate}, {"strike_point", site}, {"force", clip.force}};
      observe_span(StateKind::impact_sound, id, std::move(p));
      break;
    }
    case ActionKind::pick_up: {
      const int id = need_selection();
      need_reach(id);
      if (agent_.held) throw EnvError("already holding");
      if (!catalog_->category(scene_.object(id).category).portable) throw EnvError("not portable");
      r.record.object = id;
      agent_.held = id;
      carry();
      break;
    }
    case ActionKind::put_down: {
      if (!agent_.held) throw EnvError("empty hand");
      auto& o = scene_.object(*agent_.held);
      r.record.object = o.id;
      o.bbox.center = {agent_.position.x, agent_.position.y, scene_.room.min().z + o.bbox.half.z};
      agent_.held.reset();
      break;
    }
    case ActionKind::look_around: {
      for (const auto& o : scene_.objects) {
        if (xy_distance(o.bbox, agent_.position) > cfg_.look_radius) continue;
        std::vector<float> row(features_.rows.cols());
        for (Eigen::Index j = 0; j < features_.rows.cols(); ++j) row[static_cast<std::size_t>(j)] = features_.rows(o.id, j);
        observe_span(StateKind::object, o.id,
                     f32_payload("object_features", {features_.rows.cols()}, row, {{"object_id", o.id}}));
      }
      break;
    }
  }
  ++agent_.step_count;
  return r;
}

// ---------------------------------------------------------------------------

int payload_object(const WirePayload& p) {
  if (!p.meta.contains("object_id")) throw InvalidArgument("payload carries no object id");
  return p.meta.at("object_id").get<int>();
}

TactileReading tactile_from_payload(const WirePayload& p) {
  if (p.kind != "tactile" || p.shape.size() != 3 || p.shape[0] != 2 || p.shape[2] != 2)
    throw InvalidArgument("not a tactile payload");
  const auto v = f32_values(p);
  TactileReading r;
  r.grid = p.meta.at("grid").get<int>();
  if (static_cast<std::int64_t>(r.grid) * r.grid != p.shape[1]) throw InvalidArgument("tactile grid mismatch");
  r.contact_point = p.meta.at("contact_point").get<int>();
  r.force = p.meta.at("force").get<double>();
  const auto n = static_cast<std::size_t>(p.shape[1]);
  for (std::size_t i = 0; i < n; ++i) r.marker_init.push_back({v[2 * i], v[2 * i + 1]});
  for (std::size_t i = 0; i < n; ++i) r.marker_final.push_back({v[2 * (n + i)], v[2 * (n + i) + 1]});
  return r;
}

HeatmapImage heatmap_from_payload(const WirePayload& p) {
  if (p.kind != "tactile") throw InvalidArgument("not a tactile payload");
  return heatmap_from_pgm(base64_decode(p.meta.at("heatmap_pgm").get<std::string>()));
}

ImpactSoundClip clip_from_payload(const WirePayload& p) {
  if (p.kind != "impact_sound" || p.dtype != "pcm16") throw InvalidArgument("not an impact sound payload");
  ImpactSoundClip c;
  c.samples = samples_from_pcm16_bytes(p.data);
  c.sample_rate = p.meta.at("sample_rate").get<int>();
  c.strike_point = p.meta.at("strike_point").get<int>();
  c.force = p.meta.at("force").get<double>();
  return c;
}

TemperatureReading temperature_from_payload(const WirePayload& p) {
  if (p.kind != "temperature") throw InvalidArgument("not a temperature payload");
  const auto v = f32_values(p);
  if (v.size() != 1) throw InvalidArgument("temperature payload must hold one value");
  TemperatureReading t{static_cast<double>(v[0]), TempLabel::room};
  for (auto label : kAllTempLabels)
    if (temp_range(label).contains(t.celsius)) t.label = label;
  return t;
}

PointCloud point_cloud_from_payload(const WirePayload& p) {
  if (p.kind != "point_cloud" || p.shape.size() != 2 || p.shape[1] != 3) throw InvalidArgument("not a point cloud payload");
  const auto v = f32_values(p);
  PointCloud pc;
  for (std::size_t i = 0; i + 2 < v.size(); i += 3) pc.points.push_back({v[i], v[i + 1], v[i + 2]});
  return pc;
}

AmbientSoundTag ambient_from_payload(const WirePayload& p) {
  if (p.kind != "ambient_sound") throw InvalidArgument("not an ambient sound payload");
  return {p.meta.at("ontology_id").get<std::string>(), p.data};
}

Eigen::MatrixXf features_from_payload(const WirePayload& p) {
  if (p.dtype != "f32" || p.shape.empty() || p.shape.size() > 2) throw InvalidArgument("not a feature payload");
  const auto v = f32_values(p);
  const Eigen::Index rows = p.shape.size() == 2 ? p.shape[0] : 1;
  const Eigen::Index cols = p.shape.back();
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

// ---------------------------------------------------------------------------

std::string_view to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::running: return "running";
    case EpisodeStatus::ok: return "ok";
    case EpisodeStatus::error: return "error";
    case EpisodeStatus::aborted: return "aborted";
    case EpisodeStatus::max_steps: return "max_steps";
  }
  return "?";
}

EpisodeStatus parse_episode_status(std::string_view s) {
  for (auto st : {EpisodeStatus::running, EpisodeStatus::ok, EpisodeStatus::error, EpisodeStatus::aborted,
                  EpisodeStatus::max_steps})
    if (to_string(st) == s) return st;
  throw InvalidArgument("unknown episode status: " + std::string(s));
}

int Episode::interaction_count() const {
  int n = 0;
  for (const auto& a : actions) n += a.kind != ActionKind::select;
  return n;
}

Session::Session(Scene scene, std::string prompt, const AdapterParams& params, EnvConfig cfg, const Catalog& catalog)
    : env_(std::move(scene), params, cfg, catalog) {
  episode_.scene_id = env_.scene().id;
  episode_.prompt = std::move(prompt);
}

void Session::require_running() const {
  if (done()) throw ProtocolError("episode terminated");
  if (!started_) throw InvalidArgument("session not started");
}

void Session::mark(EpisodeStatus s, std::string why) {
  episode_.status = s;
  episode_.error = std::move(why);
  episode_.payloads = env_.payloads();
  episode_.nav_steps = env_.agent().nav_steps;
}

void Session::fail(const std::string& rule) {
  select_pending_ = false;
  mark(EpisodeStatus::error, rule);
}

Session::Delta Session::start() {
  if (started_) throw InvalidArgument("session already started");
  started_ = true;
  Delta d;
  for (const auto& w : split_whitespace(episode_.prompt)) {
    std::string clean;
    for (char c : w)
      if (c != '<' && c != '>') clean += c;
    while (!clean.empty() && clean.front() == '#') clean.erase(clean.begin());
    if (!clean.empty()) d.tokens.tokens.push_back(Token::text(clean));
  }
  d.tokens.append(env_.reset());
  state_ = replay_steps(d.tokens);
  episode_.stream = d.tokens;
  episode_.framing_end = d.tokens.size();
  for (std::size_t i = 0; i < env_.payloads().size(); ++i) d.payloads.emplace(static_cast<int>(i), env_.payloads()[i]);
  episode_.payloads = env_.payloads();
  return d;
}

void Session::flush_select(Delta& delta) {
  if (!select_pending_) return;
  select_pending_ = false;
  ActionRequest req{ActionKind::select, referent_, std::nullopt, std::nullopt};
  referent_.clear();
  Environment::StepResult r;
  try {
    r = env_.execute(req);
  } catch (const EnvError& e) {
    // Drop the SELECT and its referent so the recorded stream stays legal.
    episode_.stream.tokens.resize(select_offset_);
    delta.tokens.tokens.clear();
    episode_.actions.pop_back();
    episode_.action_offsets.pop_back();
    fail(e.rule);
    throw;
  }
  state_ = resolve_selection(state_, r.record.object);
  episode_.actions.back() = r.record;
}

Session::Delta Session::submit(const TokenStream& emitted, const std::vector<std::optional<int>>& sites) {
  require_running();
  Delta d;
  const std::size_t payloads_before = env_.payloads().size();
  std::size_t action_index = 0;
  try {
    for (const auto& tok : emitted.tokens) {
      if (tok.type != Token::Type::text && tok.type != Token::Type::action)
        throw ProtocolError("policy may only emit text and action tokens");
      if (tok.type == Token::Type::text) {
        state_ = step(state_, tok);
        episode_.stream.tokens.push_back(tok);
        d.tokens.tokens.push_back(tok);
        if (select_pending_) referent_.push_back(tok.word);
        continue;
      }
      flush_select(d);
      ProtocolState next = step(state_, tok);
      const auto site = action_index < sites.size() ? sites[action_index] : std::nullopt;
      ++action_index;
      if (tok.action == ActionKind::select) {
        state_ = next;
        select_pending_ = true;
        select_offset_ = episode_.stream.size();
        episode_.action_offsets.push_back(episode_.stream.size());
        episode_.actions.push_back({ActionKind::select, -1, -1});
        episode_.stream.tokens.push_back(tok);
        d.tokens.tokens.push_back(tok);
        continue;
      }
      Environment::StepResult r;
      try {
        r = env_.execute({tok.action, {}, std::nullopt, site});
      } catch (const EnvError& e) {
        fail(e.rule);
        throw;
      }
      episode_.action_offsets.push_back(episode_.stream.size());
      episode_.actions.push_back(r.record);
      episode_.stream.tokens.push_back(tok);
      d.tokens.tokens.push_back(tok);
      state_ = next;
      for (const auto& t : r.tokens.tokens) state_ = step(state_, t);
      episode_.stream.append(r.tokens);
      d.tokens.append(r.tokens);
    }
    flush_select(d);
  } catch (const ProtocolError& e) {
    if (!done()) fail(e.rule);
    throw;
  }
  for (std::size_t i = payloads_before; i < env_.payloads().size(); ++i)
    d.payloads.emplace(static_cast<int>(i), env_.payloads()[i]);
  episode_.payloads = env_.payloads();
  episode_.nav_steps = env_.agent().nav_steps;
  return d;
}

void Session::end(const TokenStream& answer) {
  require_running();
  try {
    episode_.answer_offset = episode_.stream.size();
    std::vector<std::string> words;
    for (const auto& tok : answer.tokens) {
      if (tok.type != Token::Type::text) throw ProtocolError("answer must be text");
      state_ = step(state_, tok);
      episode_.stream.tokens.push_back(tok);
      words.push_back(tok.word);
    }
    state_ = finish(state_);
    episode_.answer = join(words, " ");
    episode_.answer_object.reset();
    for (const auto& w : words)
      if (auto id = parse_handle(w); id && *id < static_cast<int>(env_.scene().objects.size())) episode_.answer_object = *id;
    if (!episode_.answer_object && env_.agent().selected) episode_.answer_object = env_.agent().selected;
  } catch (const ProtocolError& e) {
    fail(e.rule);
    throw;
  }
  mark(EpisodeStatus::ok);
}

void Session::abort(const std::string& why) {
  if (!done()) mark(EpisodeStatus::aborted, why);
}

Episode run_episode(Session& session, PolicyConnection& policy, int max_steps) {
  if (max_steps < 1) throw InvalidArgument("max_steps must be at least 1");
  Session::Delta delta = session.start();
  try {
    while (!session.done()) {
      auto turn = policy.next(delta);
      int actions = 0;
      for (const auto& t : turn.tokens.tokens) actions += t.is_action();
      if (turn.final || actions == 0) {
        session.end(turn.tokens);
        break;
      }
      if (static_cast<int>(session.episode().actions.size()) + actions > max_steps) {
        session.mark(EpisodeStatus::max_steps, "step budget exhausted");
        break;
      }
      delta = session.submit(turn.tokens, turn.sites);
    }
  } catch (const TransportError& e) {
    session.abort(e.what());
  } catch (const ProtocolError&) {
    // Recorded in the episode by the session.
  } catch (const EnvError&) {
  }
  return session.episode();
}

std::vector<std::string> replay_episode(const Scene& scene, const Episode& rec, const AdapterParams& params,
                                        EnvConfig cfg) {
  std::vector<std::string> diffs;
  Session s(scene, rec.prompt, params, cfg);
  s.start();
  const std::size_t stop = rec.status == EpisodeStatus::ok ? rec.answer_offset : rec.stream.size();
  TokenStream emitted;
  std::vector<std::optional<int>> sites;
  int span_depth = 0;
  for (std::size_t i = rec.framing_end; i < stop; ++i) {
    const auto& t = rec.stream.tokens[i];
    if (t.type == Token::Type::state_open) ++span_depth;
    if (span_depth == 0 && (t.type == Token::Type::text || t.type == Token::Type::action)) {
      emitted.tokens.push_back(t);
      if (t.is_action()) {
        const std::size_t k = sites.size();
        const bool sited = k < rec.actions.size() && rec.actions[k].site >= 0;
        sites.push_back(sited ? std::optional<int>(rec.actions[k].site) : std::nullopt);
      }
    }
    if (t.type == Token::Type::state_close) --span_depth;
  }
  try {
    if (!emitted.empty()) s.submit(emitted, sites);
    if (rec.status == EpisodeStatus::ok) s.end(rec.stream.slice(rec.answer_offset, rec.stream.size()));
  } catch (const Error& e) {
    diffs.push_back(std::string("replay failed: ") + e.what());
    return diffs;
  }
  const auto& got = s.episode();
  if (got.stream.size() != rec.stream.size()) diffs.push_back("stream length differs");
  for (std::size_t i = 0; i < std::min(got.stream.size(), rec.stream.size()); ++i)
    if (!(got.stream.tokens[i] == rec.stream.tokens[i]))
      diffs.push_back("token " + std::to_string(i) + ": " + rec.stream.tokens[i].str() + " vs " + got.stream.tokens[i].str());
  if (got.payloads.size() != rec.payloads.size()) diffs.push_back("payload count differs");
  for (std::size_t i = 0; i < std::min(got.payloads.size(), rec.payloads.size()); ++i)
    if (!(got.payloads[i] == rec.payloads[i])) diffs.push_back("payload #p" + std::to_string(i) + " differs");
  if (!(got.actions == rec.actions)) diffs.push_back("action records differ");
  return diffs;
}

std::string transcript(const Episode& e) {
  std::ostringstream out;
  out << "episode " << e.id << " scene " << e.scene_id << " status " << to_string(e.status);
  if (!e.error.empty()) out << " (" << e.error << ")";
  out << "\n";
  std::string line;
  auto flush = [&] {
    if (!line.empty()) out << line << "\n";
    line.clear();
  };
  for (std::size_t i = 0; i < e.stream.size(); ++i) {
    const auto& t = e.stream.tokens[i];
    if (t.type == Token::Type::action || t.type == Token::Type::state_open) flush();
    if (!line.empty()) line += ' ';
    line += t.str();
    if (t.type == Token::Type::payload_ref && t.payload >= 0 && static_cast<std::size_t>(t.payload) < e.payloads.size()) {
      const auto& p = e.payloads[static_cast<std::size_t>(t.payload)];
      line += " [" + p.kind + " " + p.dtype + " " + std::to_string(p.data.size()) + "B]";
    }
    if (t.type == Token::Type::state_close) flush();
  }
  flush();
  if (!e.answer.empty()) out << "answer: " << e.answer << "\n";
  return out.str();
}

}  // namespace esim
