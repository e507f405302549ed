#include "esim/policies.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace esim {

namespace {

constexpr std::string_view kSenseNames[] = {"visual", "audio", "tactile", "temperature"};
constexpr std::string_view kPolicyNames[] = {"no_interaction", "oracle_interaction", "interactive_trained"};
constexpr int kCandidateWindow = 6;
constexpr std::uint64_t kTrainStream = 0x5E1EC7;
constexpr int kTrainScenes = 32;

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

std::string strip_word(std::string_view w) {
  std::string out;
  for (char c : w) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-') out.push_back(static_cast<char>(std::tolower(u)));
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  while (!out.empty() && out.front() == '-') out.erase(out.begin());
  return out;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& w : split_whitespace(text)) {
    auto s = strip_word(w);
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::optional<HardnessClass> try_parse_hardness(std::string_view w) {
  for (auto h : {HardnessClass::soft, HardnessClass::firm, HardnessClass::hard})
    if (to_string(h) == w) return h;
  return std::nullopt;
}

std::optional<TempLabel> try_parse_temp_adjective(std::string_view w) {
  for (auto t : {TempLabel::cold, TempLabel::room, TempLabel::hot})
    if (temp_adjective(t) == w) return t;
  return std::nullopt;
}

template <typename T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

FeatureVector unit(const FeatureVector& v) {
  const float n = v.norm();
  return n > 0.0f ? FeatureVector(v / n) : v;
}

// Indices sorted by descending score, lowest id first on ties.
std::vector<int> ranking(const Eigen::VectorXd& scores) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores(a) > scores(b); });
  return idx;
}

Eigen::VectorXd cosine_scores(const FeatureVector& query, const SceneFeatureMatrix& features) {
  Eigen::VectorXd s(features.size());
  for (int i = 0; i < features.size(); ++i) s(i) = cosine(query, FeatureVector(features.rows.row(i).transpose()));
  return s;
}

TokenStream text_tokens(std::string_view text) {
  TokenStream t;
  for (const auto& w : split_whitespace(text)) t.tokens.push_back(Token::text(w));
  return t;
}

// Readings taken from one object during an episode.
struct Probe {
  std::optional<TactileReading> tactile;
  std::optional<TemperatureReading> temperature;
  std::optional<ImpactSoundClip> clip;
};

// Thin action layer over a session.
class Driver {
 public:
  Driver(const Scene& scene, const TaskSpec& task, const AdapterParams& params, const EnvConfig& cfg)
      : scene_(scene), session_(scene, task.prompt, params, cfg) {
    session_.start();
  }

  void select(int id) {
    submit({Token::act(ActionKind::select), Token::text(handle(id)), Token::text(scene_.object(id).category)});
  }
  void act(ActionKind a) { submit({Token::act(a)}); }
  Probe& probe(int id) { return probes_[id]; }

  void touch(int id) {
    const auto d = submit({Token::act(ActionKind::touch)});
    for (const auto& [pid, p] : d.payloads) {
      if (p.kind == "tactile") probes_[id].tactile = tactile_from_payload(p);
      if (p.kind == "temperature") probes_[id].temperature = temperature_from_payload(p);
    }
  }
  void hit(int id) {
    const auto d = submit({Token::act(ActionKind::hit)});
    for (const auto& [pid, p] : d.payloads)
      if (p.kind == "impact_sound") probes_[id].clip = clip_from_payload(p);
  }

  PolicyResult finish(const std::string& answer) {
    PolicyResult r;
    r.answer = answer;
    r.answer_objects = answer_handles(answer);
    if (!session_.done()) session_.end(text_tokens(answer));
    r.episode = session_.episode();
    return r;
  }

  const SceneFeatureMatrix& features() const { return session_.env().features(); }
  bool alive() const { return !session_.done(); }

 private:
  Session::Delta submit(std::vector<Token> toks) { return session_.submit(TokenStream{std::move(toks)}); }

  const Scene& scene_;
  Session session_;
  std::map<int, Probe> probes_;
};

struct CaptionFacts {
  std::string category, material, hardness, temperature;
};

std::string caption(const CaptionFacts& f) {
  return fill_template(builtin_templates().answers.at(TaskKind::captioning).front(),
                       {{"category", f.category},
                        {"material", f.material},
                        {"hardness", f.hardness},
                        {"temperature", f.temperature}});
}

// Fallbacks for attributes a policy could not sense.
CaptionFacts caption_prior(const std::string& category) {
  return {category, std::string(to_string(Material::plastic)), std::string(to_string(HardnessClass::firm)),
          std::string(temp_adjective(TempLabel::room))};
}

CaptionFacts caption_from(const std::string& category, const Probe& p, SenseSet senses, const Calibration& cal) {
  auto f = caption_prior(category);
  if (p.clip && senses.has(Sense::audio)) f.material = std::string(to_string(classify_material(*p.clip, cal)));
  if (p.tactile && senses.has(Sense::tactile)) f.hardness = std::string(to_string(classify_hardness(*p.tactile, cal)));
  if (p.temperature && senses.has(Sense::temperature))
    f.temperature = std::string(temp_adjective(classify_temperature(p.temperature->celsius, cal)));
  return f;
}

const Recipe& recipe_of(const TaskSpec& task) {
  for (const auto& r : builtin_tools().recipes)
    if (r.id == task.situation) return r;
  throw InvalidArgument("unknown recipe: " + task.situation);
}

std::string items_answer(const std::vector<int>& ids) {
  if (ids.empty()) return "not found";
  std::vector<std::string> hs;
  for (int id : ids) hs.push_back(handle(id));
  return "the needed items are " + join(hs, " ");
}

// Visual category guess for a scene row.
std::string seen_category(const SceneFeatureMatrix& f, int id) {
  return classify_category(FeatureVector(f.rows.row(id).transpose()));
}

// The food a decomposition prompt is about.
std::optional<std::string> food_in_prompt(std::string_view prompt) {
  const auto& catalog = builtin_catalog();
  for (const auto& w : words_of(prompt))
    if (const auto* c = catalog.find_category(w); c && c->food) return w;
  return std::nullopt;
}

Requirement requirement_for(const TaskSpec& task) {
  return task.kind == TaskKind::tool_use ? tool_requirement(task.prompt) : parse_requirement(task.prompt);
}

}  // namespace

// --- modality masks ------------------------------------------------------------------

std::string SenseSet::str() const {
  if (empty()) return "none";
  std::vector<std::string> parts;
  for (int i = 0; i < 4; ++i)
    if (has(static_cast<Sense>(i))) parts.emplace_back(kSenseNames[i]);
  return join(parts, "+");
}

SenseSet parse_sense_set(std::string_view s) {
  if (s == "all") return SenseSet::all();
  if (s == "none") return {};
  SenseSet out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto end = std::min(s.find('+', pos), s.size());
    const auto part = s.substr(pos, end - pos);
    bool found = false;
    for (int i = 0; i < 4; ++i) {
      if (kSenseNames[i] == part) {
        out = out.with(static_cast<Sense>(i));
        found = true;
      }
    }
    if (!found) throw InvalidArgument("unknown modality: " + std::string(part));
    pos = end + 1;
  }
  return out;
}

std::string PolicyKind::name() const {
  std::string n(kPolicyNames[static_cast<int>(type)]);
  if (type != PolicyType::no_interaction) n += "[" + senses.str() + "]";
  return n;
}

PolicyKind parse_policy_kind(std::string_view s) {
  PolicyKind k;
  const auto open = s.find('[');
  const auto base = s.substr(0, open);
  bool found = false;
  for (int i = 0; i < 3; ++i) {
    if (kPolicyNames[i] == base) {
      k.type = static_cast<PolicyType>(i);
      found = true;
    }
  }
  if (!found) throw InvalidArgument("unknown policy: " + std::string(s));
  if (open != std::string_view::npos) {
    require(s.back() == ']', "malformed policy: " + std::string(s));
    k.senses = parse_sense_set(s.substr(open + 1, s.size() - open - 2));
  }
  return k;
}

// --- SELECT training ------------------------------------------------------------------

std::vector<std::uint64_t> training_scene_seeds() {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < kTrainScenes; ++i) out.push_back(split_seed(kTrainStream, static_cast<std::uint64_t>(i)));
  return out;
}

bool is_training_scene(const std::string& scene_id) {
  static const std::set<std::string> ids = [] {
    std::set<std::string> s;
    for (auto seed : training_scene_seeds()) {
      std::ostringstream id;
      id << "scene-" << std::hex << seed;
      s.insert(id.str());
    }
    return s;
  }();
  return ids.count(scene_id) > 0;
}

std::vector<SelectExample> select_training_set(const std::vector<std::uint64_t>& scene_seeds, const Catalog& catalog) {
  std::vector<SelectExample> out;
  for (auto seed : scene_seeds) {
    const Scene scene = sample_scene(catalog, {}, seed);
    const auto features = scene_features(scene);
    for (const auto& o : scene.objects) {
      if (std::count_if(scene.objects.begin(), scene.objects.end(),
                        [&](const auto& x) { return x.category == o.category; }) != 1)
        continue;
      const std::string mat(to_string(o.material));
      const std::string hard(to_string(hardness_class(catalog.material(o.material).hardness)));
      const std::string temp(temp_adjective(o.temp_label));
      for (const auto& phrase : {o.category, mat + " " + o.category, hard + " " + temp + " " + o.category})
        out.push_back({encode(Modality::text, phrase), features.rows, o.id});
    }
  }
  return out;
}

const AdapterParams& default_params() {
  static const AdapterParams p = train_select(select_training_set(training_scene_seeds()), {}, aligned_params()).params;
  return p;
}

// --- requirements -----------------------------------------------------------------------

std::string Requirement::referent() const {
  std::vector<std::string> w;
  for (auto h : hardness) w.emplace_back(to_string(h));
  for (auto t : temps) w.emplace_back(temp_adjective(t));
  for (auto m : materials) w.emplace_back(to_string(m));
  if (category) w.push_back(*category);
  else
    for (const auto& c : categories) w.push_back(c);
  return join(w, " ");
}

Requirement parse_requirement(std::string_view prompt, const Catalog& catalog) {
  Requirement r;
  for (const auto& w : words_of(prompt)) {
    if (catalog.find_category(w)) r.category = w;
    else if (auto m = try_parse_material(w)) r.materials.push_back(*m);
    else if (auto h = try_parse_hardness(w)) r.hardness.push_back(*h);
    else if (auto t = try_parse_temp_adjective(w)) r.temps.push_back(*t);
  }
  return r;
}

Requirement tool_requirement(std::string_view prompt, const ToolTable& tools) {
  for (const auto& s : tools.situations) {
    if (prompt.find(s.text) == std::string_view::npos) continue;
    Requirement r;
    r.category = s.category;
    r.materials = s.materials;
    r.temps = s.temps;
    return r;
  }
  throw InvalidArgument("no known situation in prompt: " + std::string(prompt));
}

// --- policies ------------------------------------------------------------------------------

std::vector<int> answer_handles(std::string_view answer) {
  std::vector<int> out;
  for (const auto& w : words_of(answer))
    if (auto id = parse_handle(w)) out.push_back(*id);
  return out;
}

int policy_no_interaction(std::string_view query, const SceneFeatureMatrix& features) {
  require(features.size() >= 1, "scene has no objects");
  return argmax_lowest(cosine_scores(encode(Modality::text, std::string(query)), features));
}

PolicyResult run_no_interaction(const TaskSpec& task, const Scene& scene, const AdapterParams& params,
                                const EnvConfig& cfg) {
  Driver drv(scene, task, params, cfg);
  const auto& f = drv.features();
  switch (task.kind) {
    case TaskKind::retrieval:
    case TaskKind::tool_use:
      return drv.finish(handle(policy_no_interaction(requirement_for(task).referent(), f)));
    case TaskKind::captioning: {
      const auto req = parse_requirement(task.prompt);
      const int id = policy_no_interaction(req.referent(), f);
      return drv.finish(caption(caption_prior(seen_category(f, id))));
    }
    case TaskKind::task_decomposition: {
      const auto food = food_in_prompt(task.prompt);
      std::vector<int> chosen;
      for (const auto& slot : recipe_of(task).slots) {
        Requirement r;
        if (slot.food && food) r.category = *food;
        else r.categories = slot.categories;
        const auto s = cosine_scores(encode(Modality::text, r.referent()), f);
        for (int id : ranking(s)) {
          if (contains(chosen, id)) continue;
          chosen.push_back(id);
          break;
        }
      }
      return drv.finish(items_answer(chosen));
    }
    default: throw InvalidArgument("no_interaction does not support " + std::string(to_string(task.kind)) + " tasks");
  }
}

PolicyResult policy_oracle_interaction(const TaskSpec& task, const Scene& scene, SenseSet senses,
                                       const AdapterParams& params, const EnvConfig& cfg) {
  require(!senses.empty(), "oracle_interaction needs at least one modality");
  require(task.kind == TaskKind::retrieval || task.kind == TaskKind::tool_use || task.kind == TaskKind::captioning,
          "oracle_interaction does not support " + std::string(to_string(task.kind)) + " tasks");
  Driver drv(scene, task, params, cfg);
  const auto& f = drv.features();
  const auto req = requirement_for(task);
  const FeatureVector query = encode(Modality::text, req.referent());
  const auto order = ranking(cosine_scores(query, f));
  const bool touch = senses.has(Sense::tactile) || senses.has(Sense::temperature);
  const bool strike = senses.has(Sense::audio);

  auto probe = [&](int id) {
    drv.select(id);
    drv.act(ActionKind::navigate);
    if (touch) drv.touch(id);
    if (strike) drv.hit(id);
  };

  if (task.kind == TaskKind::captioning) {
    const int id = order.front();
    try {
      if (touch || strike) probe(id);
    } catch (const Error&) {
    }
    return drv.finish(caption(caption_from(seen_category(f, id), drv.probe(id), senses, builtin_calibration())));
  }

  const std::size_t window = std::min<std::size_t>(kCandidateWindow, order.size());
  std::vector<double> score(window, -std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < window; ++c) {
    const int id = order[c];
    if (touch || strike) {
      if (!drv.alive()) break;
      try {
        probe(id);
      } catch (const Error&) {
        continue;  // candidate scored -inf
      }
    }
    const auto& p = drv.probe(id);
    FeatureVector sum = FeatureVector::Zero(kFeatureDim);
    int parts = 0;
    auto add = [&](const FeatureVector& v) {
      sum += unit(v);
      ++parts;
    };
    if (senses.has(Sense::visual)) add(FeatureVector(f.rows.row(id).transpose()));
    if (senses.has(Sense::audio) && p.clip) add(adapt(params, Modality::impact_sound, encode(Modality::impact_sound, *p.clip)));
    if (senses.has(Sense::tactile) && p.tactile) add(adapt(params, Modality::tactile, encode(Modality::tactile, *p.tactile)));
    if (senses.has(Sense::temperature) && p.temperature)
      add(adapt(params, Modality::temperature, encode(Modality::temperature, *p.temperature)));
    if (parts > 0) score[c] = cosine(query, FeatureVector(sum / static_cast<float>(parts)));
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < window; ++c)
    if (score[c] > score[best]) best = c;
  return drv.finish(std::isfinite(score[best]) ? handle(order[best]) : std::string("not found"));
}

PolicyResult policy_interactive_trained(const TaskSpec& task, const Scene& scene, const AdapterParams& params,
                                        SenseSet senses, const Calibration& cal, const EnvConfig& cfg) {
  Driver drv(scene, task, params, cfg);
  const auto& f = drv.features();
  const bool see = senses.has(Sense::visual);

  // Checks `id` against the attribute constraints, probing as needed.
  auto satisfies_req = [&](int id, const Requirement& r) {
    const bool need_touch = (!r.hardness.empty() && senses.has(Sense::tactile)) ||
                            (!r.temps.empty() && senses.has(Sense::temperature));
    const bool need_hit = !r.materials.empty() && senses.has(Sense::audio);
    drv.select(id);
    if (!need_touch && !need_hit) return true;
    drv.act(ActionKind::navigate);
    auto& p = drv.probe(id);
    if (need_touch) {
      drv.touch(id);
      if (senses.has(Sense::tactile) && !r.hardness.empty() && !contains(r.hardness, classify_hardness(*p.tactile, cal)))
        return false;
      if (senses.has(Sense::temperature) && !r.temps.empty() &&
          !contains(r.temps, classify_temperature(p.temperature->celsius, cal)))
        return false;
    }
    if (need_hit) {
      drv.hit(id);
      if (!contains(r.materials, classify_material(*p.clip, cal))) return false;
    }
    return true;
  };

  auto candidates = [&](const Requirement& r) {
    const auto order = ranking(select_scores(encode(Modality::text, r.referent()), f, params));
    std::vector<int> out;
    for (int id : order) {
      if (static_cast<int>(out.size()) == kCandidateWindow) break;
      if (see) {
        const auto c = seen_category(f, id);
        if (r.category ? c != *r.category : (!r.categories.empty() && !contains(r.categories, c))) continue;
      }
      out.push_back(id);
    }
    return out;
  };

  try {
    switch (task.kind) {
      case TaskKind::retrieval:
      case TaskKind::tool_use: {
        const auto req = requirement_for(task);
        for (int id : candidates(req))
          if (satisfies_req(id, req)) return drv.finish(handle(id));
        return drv.finish("not found");
      }
      case TaskKind::captioning:
      case TaskKind::qa:
      case TaskKind::dialogue: {
        const auto req = parse_requirement(task.prompt);
        const auto cs = candidates(req);
        if (cs.empty()) return drv.finish("not found");
        const int id = cs.front();
        drv.select(id);
        if (senses.has(Sense::tactile) || senses.has(Sense::temperature) || senses.has(Sense::audio))
          drv.act(ActionKind::navigate);
        if (senses.has(Sense::tactile) || senses.has(Sense::temperature)) drv.touch(id);
        if (senses.has(Sense::audio)) drv.hit(id);
        return drv.finish(caption(caption_from(seen_category(f, id), drv.probe(id), senses, cal)));
      }
      case TaskKind::task_decomposition: {
        const auto food = food_in_prompt(task.prompt);
        std::vector<int> chosen;
        for (const auto& slot : recipe_of(task).slots) {
          Requirement r;
          if (slot.food && food) r.category = *food;
          else r.categories = slot.categories;
          r.materials = slot.materials;
          for (int id : candidates(r)) {
            if (contains(chosen, id)) continue;
            if (!satisfies_req(id, r)) continue;
            if (drv.probe(id).clip == std::nullopt && !drv.probe(id).tactile) drv.act(ActionKind::navigate);
            drv.act(ActionKind::pick_up);
            drv.act(ActionKind::put_down);
            chosen.push_back(id);
            break;
          }
        }
        return drv.finish(items_answer(chosen));
      }
    }
  } catch (const Error& e) {
    return drv.finish("not found");
  }
  return drv.finish("not found");
}

PolicyResult run_policy(const PolicyKind& kind, const TaskSpec& task, const Scene& scene, const AdapterParams& params,
                        const EnvConfig& cfg) {
  switch (kind.type) {
    case PolicyType::no_interaction: return run_no_interaction(task, scene, params, cfg);
    case PolicyType::oracle_interaction: return policy_oracle_interaction(task, scene, kind.senses, params, cfg);
    case PolicyType::interactive_trained:
      return policy_interactive_trained(task, scene, params, kind.senses, builtin_calibration(), cfg);
  }
  throw InvalidArgument("unknown policy");
}

ScriptedPolicy::ScriptedPolicy(std::vector<Turn> turns, TokenStream answer)
    : turns_(std::move(turns)), answer_(std::move(answer)) {}

ScriptedPolicy ScriptedPolicy::from_task(const TaskSpec& task, const Scene& scene, std::string answer) {
  std::vector<Turn> turns;
  for (const auto& a : task.gt_actions) {
    Turn t;
    t.tokens.tokens.push_back(Token::act(a.kind));
    if (a.kind == ActionKind::select) {
      t.tokens.tokens.push_back(Token::text(handle(a.object)));
      t.tokens.tokens.push_back(Token::text(scene.object(a.object).category));
    }
    turns.push_back(std::move(t));
  }
  return ScriptedPolicy(std::move(turns), text_tokens(answer));
}

PolicyConnection::Turn ScriptedPolicy::next(const Session::Delta&) {
  if (pos_ < turns_.size()) return turns_[pos_++];
  return {answer_, {}, true};
}

// --- metrics --------------------------------------------------------------------------------

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const std::vector<std::string>& s, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return out;
}

}  // namespace

double bleu(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references,
            int max_n) {
  require(max_n >= 1, "bleu needs max_n >= 1");
  require(!candidate.empty() && !references.empty(), "bleu needs a candidate and references");
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngrams(candidate, n);
    NgramCounts max_ref;
    for (const auto& ref : references)
      for (const auto& [g, c] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
    int matched = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    const double p = total == 0 ? kBleuEpsilon : std::max<double>(matched, kBleuEpsilon) / total;
    log_sum += std::log(p);
  }
  const auto c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double meteor_lite(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references) {
  require(!candidate.empty() && !references.empty(), "meteor needs a candidate and references");
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    // Greedy left-to-right alignment onto the earliest unused identical word.
    std::vector<bool> used(ref.size(), false);
    std::vector<int> align(candidate.size(), -1);
    int m = 0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == candidate[i]) {
          used[j] = true;
          align[i] = static_cast<int>(j);
          ++m;
          break;
        }
      }
    }
    if (m == 0) continue;
    int chunks = 0;
    int prev = -2;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (align[i] < 0) {
        prev = -2;
        continue;
      }
      if (align[i] != prev + 1) ++chunks;
      prev = align[i];
    }
    const double p = static_cast<double>(m) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(m) / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

// --- benchmarks ------------------------------------------------------------------------------

Benchmark twin_benchmark(int k, const std::vector<TwinAttribute>& attrs, int episodes, std::uint64_t seed,
                         const SceneConfig& scene_cfg) {
  require(k >= 2, "twin benchmark needs k >= 2");
  require(!attrs.empty(), "twin benchmark needs at least one attribute");
  require(episodes >= 1, "benchmark needs at least one episode");
  const auto& catalog = builtin_catalog();
  Benchmark b;
  b.name = "twins_k" + std::to_string(k);
  b.kind = TaskKind::retrieval;
  b.seed = seed;
  for (int i = 0; i < episodes; ++i) {
    const auto attr = attrs[static_cast<std::size_t>(i) % attrs.size()];
    bool placed = false;
    for (std::uint64_t attempt = 0; attempt < 200 && !placed; ++attempt) {
      const auto s = mix(split_seed(seed, static_cast<std::uint64_t>(i)), attempt);
      try {
        Scene scene = sample_scene(catalog, scene_cfg, s);
        if (is_training_scene(scene.id)) continue;
        scene = twin_injection(scene, catalog, k, attr, mix(s, 0x7171));
        auto tasks = propose_tasks(scene, {TaskKind::retrieval}, 1, mix(s, 0x7A5), catalog);
        b.items.push_back({std::move(scene), std::move(tasks.tasks.front())});
        placed = true;
      } catch (const Error&) {
        // no template admits k values, or placement failed: next attempt
      }
    }
    if (!placed) throw InvalidArgument("could not build twin episode " + std::to_string(i));
  }
  return b;
}

Benchmark task_benchmark(TaskKind kind, int episodes, std::uint64_t seed, const SceneConfig& scene_cfg) {
  require(episodes >= 1, "benchmark needs at least one episode");
  if (kind == TaskKind::retrieval) {
    auto b = twin_benchmark(4, {TwinAttribute::material}, episodes, seed, scene_cfg);
    return b;
  }
  const auto& catalog = builtin_catalog();
  Benchmark b;
  b.name = std::string(to_string(kind));
  b.kind = kind;
  b.seed = seed;
  for (int i = 0; i < episodes; ++i) {
    bool placed = false;
    for (std::uint64_t attempt = 0; attempt < 500 && !placed; ++attempt) {
      const auto s = mix(split_seed(seed, static_cast<std::uint64_t>(i)), attempt);
      try {
        Scene scene = sample_scene(catalog, scene_cfg, s);
        if (is_training_scene(scene.id)) continue;
        auto tasks = propose_tasks(scene, {kind}, 1, mix(s, 0x7A5), catalog);
        b.items.push_back({std::move(scene), std::move(tasks.tasks.front())});
        placed = true;
      } catch (const Error&) {
      }
    }
    if (!placed) throw InvalidArgument("could not build " + b.name + " episode " + std::to_string(i));
  }
  return b;
}

bool decomposition_success(const TaskSpec& task, std::vector<int> retrieved) {
  std::sort(retrieved.begin(), retrieved.end());
  if (std::adjacent_find(retrieved.begin(), retrieved.end()) != retrieved.end()) return false;
  return contains(task.valid_combinations, retrieved);
}

std::vector<std::string> caption_references(const TaskSpec& task, const Scene& scene, const Catalog& catalog) {
  require(!task.target_objects.empty(), "caption references need a target");
  const auto& o = scene.object(task.target_objects.front());
  const std::map<std::string, std::string> values = {
      {"category", o.category},
      {"material", std::string(to_string(o.material))},
      {"hardness", std::string(to_string(hardness_class(catalog.material(o.material).hardness)))},
      {"temperature", std::string(temp_adjective(o.temp_label))},
      {"handle", handle(o.id)}};
  std::vector<std::string> out;
  for (const auto& t : builtin_templates().answers.at(task.kind)) out.push_back(fill_template(t, values));
  return out;
}

// --- evaluation ------------------------------------------------------------------------------

namespace {

bool supports(PolicyType p, TaskKind k) {
  switch (k) {
    case TaskKind::retrieval:
    case TaskKind::tool_use:
    case TaskKind::captioning: return true;
    case TaskKind::task_decomposition: return p != PolicyType::oracle_interaction;
    default: return false;
  }
}

EpisodeRecord score_episode(int index, const BenchmarkItem& item, const PolicyResult& r) {
  EpisodeRecord rec;
  rec.index = index;
  rec.scene_id = item.scene.id;
  rec.target = item.task.target_objects;
  rec.predicted = r.answer_objects;
  rec.answer = r.answer;
  rec.status = std::string(to_string(r.episode.status));
  rec.actions = static_cast<int>(r.episode.actions.size());
  rec.interactions = r.episode.interaction_count();
  rec.nav_steps = r.episode.nav_steps;
  switch (item.task.kind) {
    case TaskKind::task_decomposition:
      rec.outcome = decomposition_success(item.task, r.answer_objects) ? 1.0 : 0.0;
      break;
    case TaskKind::captioning: {
      const auto refs = caption_references(item.task, item.scene);
      std::vector<std::vector<std::string>> tok;
      for (const auto& s : refs) tok.push_back(split_whitespace(s));
      const auto cand = split_whitespace(r.answer);
      rec.outcome = contains(refs, r.answer) ? 1.0 : 0.0;
      if (!cand.empty()) {
        rec.bleu1 = bleu(cand, tok, 1);
        rec.bleu4 = bleu(cand, tok, 4);
        rec.meteor = meteor_lite(cand, tok);
      } else {
        rec.bleu1 = rec.bleu4 = rec.meteor = 0.0;
      }
      break;
    }
    default:
      rec.outcome = !r.answer_objects.empty() && r.answer_objects.front() == item.task.target_objects.front() ? 1.0 : 0.0;
  }
  return rec;
}

}  // namespace

EvalReport evaluate(const Benchmark& bench, const PolicyKind& policy, const AdapterParams& params, int threads,
                    const EnvConfig& cfg) {
  require(!bench.items.empty(), "empty benchmark");
  if (!supports(policy.type, bench.kind))
    throw InvalidArgument("policy " + policy.name() + " does not support " + std::string(to_string(bench.kind)) +
                          " benchmarks");
  if (policy.type != PolicyType::no_interaction) require(!policy.senses.empty(), "policy needs at least one modality");
  for (const auto& item : bench.items) {
    require(item.task.kind == bench.kind, "benchmark item kind differs from the benchmark kind");
    require(!is_training_scene(item.scene.id), "benchmark scene " + item.scene.id + " is a SELECT training scene");
  }
  // Force lazy caches before fanning out.
  (void)builtin_calibration();

  EvalReport rep;
  rep.benchmark = bench.name;
  rep.kind = bench.kind;
  rep.policy = policy.name();
  rep.seed = bench.seed;
  rep.records.resize(bench.items.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(bench.items.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < bench.items.size(); i = next++) {
      try {
        const auto& item = bench.items[i];
        rep.records[i] = score_episode(static_cast<int>(i), item, run_policy(policy, item.task, item.scene, params, cfg));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  int n = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  n = std::min<int>(n, static_cast<int>(bench.items.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw Error("episode " + std::to_string(i) + ": " + errors[i]);
  return reaggregate(std::move(rep));
}

EvalReport reaggregate(EvalReport r) {
  const auto n = static_cast<double>(r.records.size());
  r.score = r.mean_actions = r.mean_interactions = 0.0;
  r.max_interactions = 0;
  double b1 = 0.0, b4 = 0.0, me = 0.0;
  int metric_n = 0;
  for (const auto& rec : r.records) {
    r.score += rec.outcome;
    r.mean_actions += rec.actions;
    r.mean_interactions += rec.interactions;
    r.max_interactions = std::max(r.max_interactions, rec.interactions);
    if (rec.bleu1 && rec.bleu4 && rec.meteor) {
      b1 += *rec.bleu1;
      b4 += *rec.bleu4;
      me += *rec.meteor;
      ++metric_n;
    }
  }
  if (n > 0) {
    r.score /= n;
    r.mean_actions /= n;
    r.mean_interactions /= n;
  }
  r.bleu1.reset();
  r.bleu4.reset();
  r.meteor.reset();
  if (metric_n > 0) {
    r.bleu1 = b1 / metric_n;
    r.bleu4 = b4 / metric_n;
    r.meteor = me / metric_n;
  }
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& e : r.records) {
    nlohmann::json j = {{"index", e.index},     {"scene_id", e.scene_id},         {"target", e.target},
                        {"predicted", e.predicted}, {"outcome", e.outcome},       {"actions", e.actions},
                        {"interactions", e.interactions}, {"nav_steps", e.nav_steps}, {"status", e.status},
                        {"answer", e.answer}};
    if (e.bleu1) j["bleu1"] = *e.bleu1;
    if (e.bleu4) j["bleu4"] = *e.bleu4;
    if (e.meteor) j["meteor_lite"] = *e.meteor;
    recs.push_back(std::move(j));
  }
  nlohmann::json j = {{"benchmark", r.benchmark},
                      {"task", std::string(to_string(r.kind))},
                      {"policy", r.policy},
                      {"seed", r.seed},
                      {"episodes", r.records.size()},
                      {"score", r.score},
                      {"actions", {{"mean", r.mean_actions}, {"mean_interactions", r.mean_interactions}, {"max_interactions", r.max_interactions}}},
                      {"records", recs}};
  if (r.bleu1) j["metrics"] = {{"bleu1", *r.bleu1}, {"bleu4", *r.bleu4}, {"meteor_lite", *r.meteor}};
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.benchmark = j.at("benchmark").get<std::string>();
    r.kind = parse_task_kind(j.at("task").get<std::string>());
    r.policy = j.at("policy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.score = j.at("score").get<double>();
    r.mean_actions = j.at("actions").at("mean").get<double>();
    r.mean_interactions = j.at("actions").at("mean_interactions").get<double>();
    r.max_interactions = j.at("actions").at("max_interactions").get<int>();
    if (j.contains("metrics")) {
      r.bleu1 = j["metrics"].at("bleu1").get<double>();
      r.bleu4 = j["metrics"].at("bleu4").get<double>();
      r.meteor = j["metrics"].at("meteor_lite").get<double>();
    }
    for (const auto& e : j.at("records")) {
      EpisodeRecord rec;
      rec.index = e.at("index").get<int>();
      rec.scene_id = e.at("scene_id").get<std::string>();
      rec.target = e.at("target").get<std::vector<int>>();
      rec.predicted = e.at("predicted").get<std::vector<int>>();
      rec.outcome = e.at("outcome").get<double>();
      rec.actions = e.at("actions").get<int>();
      rec.interactions = e.at("interactions").get<int>();
      rec.nav_steps = e.at("nav_steps").get<int>();
      rec.status = e.at("status").get<std::string>();
      rec.answer = e.at("answer").get<std::string>();
      if (e.contains("bleu1")) rec.bleu1 = e["bleu1"].get<double>();
      if (e.contains("bleu4")) rec.bleu4 = e["bleu4"].get<double>();
      if (e.contains("meteor_lite")) rec.meteor = e["meteor_lite"].get<double>();
      r.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) c << std::fixed << std::setprecision(4) << *v;
    else c << "-";
    return c.str();
  };
  os << std::left << std::setw(20) << "benchmark" << std::setw(56) << "policy" << std::right << std::setw(6) << "n"
     << std::setw(10) << "score" << std::setw(10) << "BLEU1" << std::setw(10) << "BLEU4" << std::setw(13)
     << "METEOR-lite" << std::setw(14) << "interactions" << "\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(20) << r.benchmark << std::setw(56) << r.policy << std::right << std::setw(6)
       << r.records.size() << std::setw(10) << cell(r.score) << std::setw(10) << cell(r.bleu1) << std::setw(10)
       << cell(r.bleu4) << std::setw(13) << cell(r.meteor) << std::setw(14) << cell(r.mean_interactions) << "\n";
  }
  return os.str();
}

// --- compositional generalization ---------------------------------------------------------------

FeatureVector composed_feature(const Scene& scene, int object_id, const AdapterParams& params, const Catalog& catalog) {
  const auto& o = scene.object(object_id);
  const FeatureVector visual = encode(Modality::object_visual, visual_payload(o));
  const SensorConfig sc;
  const auto clip = hit(o, catalog, default_strike_site(o), sc.hit_force, sc);
  const FeatureVector sound = adapt(params, Modality::impact_sound, encode(Modality::impact_sound, clip));
  return unit(FeatureVector(unit(visual) + unit(sound)));
}

namespace {

struct Pair {
  Material material;
  std::string category;
  friend bool operator==(const Pair&, const Pair&) = default;
};

// A flat row of objects: target plus distractors sharing one attribute each.
Scene composition_scene(const Pair& target, const std::vector<Pair>& pool, std::uint64_t seed, int& target_id) {
  const auto& catalog = builtin_catalog();
  Rng rng(seed);
  std::vector<Pair> objs{target};
  std::vector<Pair> same_mat, same_cat, other;
  for (const auto& p : pool) {
    if (p == target) continue;
    if (p.material == target.material) same_mat.push_back(p);
    else if (p.category == target.category) same_cat.push_back(p);
    else other.push_back(p);
  }
  auto take = [&](std::vector<Pair>& from, int n) {
    rng.shuffle(from);
    for (int i = 0; i < n && i < static_cast<int>(from.size()); ++i) objs.push_back(from[static_cast<std::size_t>(i)]);
  };
  take(same_mat, 2);
  take(same_cat, 2);
  take(other, 2);
  rng.shuffle(objs);
  Scene s;
  s.id = "compose-" + std::to_string(seed);
  s.room = SceneConfig{}.room;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    ObjectInstance o;
    o.id = static_cast<int>(i);
    o.category = objs[i].category;
    o.material = objs[i].material;
    o.seed = mix(seed, i);
    const auto& spec = catalog.category(o.category);
    for (int a = 0; a < 3; ++a) o.bbox.half[a] = 0.5 * (spec.half_min[a] + spec.half_max[a]);
    o.bbox.center = {0.5 + 0.6 * static_cast<double>(i), 1.0, o.bbox.half[2]};
    if (objs[i] == target) target_id = o.id;
    s.objects.push_back(std::move(o));
  }
  return s;
}

SelectExample composition_example(const Pair& target, const std::vector<Pair>& pool, std::uint64_t seed) {
  int tid = 0;
  const Scene s = composition_scene(target, pool, seed, tid);
  Eigen::MatrixXf rows(static_cast<Eigen::Index>(s.objects.size()), kFeatureDim);
  for (const auto& o : s.objects) rows.row(o.id) = composed_feature(s, o.id).transpose();
  return {encode(Modality::text, std::string(to_string(target.material)) + " " + target.category), rows, tid};
}

}  // namespace

CompositionResult compositional_generalization(Material held_material, const std::string& held_category,
                                               int train_scenes, int eval_episodes, std::uint64_t seed) {
  require(train_scenes >= 1 && eval_episodes >= 1, "composition needs training scenes and episodes");
  const auto& catalog = builtin_catalog();
  const Pair held{held_material, held_category};
  require(contains(catalog.category(held_category).materials, held_material), "held-out pair is not in the catalog");
  std::vector<Pair> pool, seen;
  for (const auto& c : {"cup", "mug", "bowl", "plate", "bottle", "box", "spoon", "fork", "clock"}) {
    for (auto m : catalog.category(c).materials) {
      pool.push_back({m, c});
      if (!(Pair{m, c} == held)) seen.push_back({m, c});
    }
  }
  std::vector<Pair> train_pool = seen;  // the held pair never appears in training scenes
  std::vector<SelectExample> train;
  Rng rng(mix(seed, 0xC0DE));
  for (int i = 0; i < train_scenes; ++i) {
    const auto& t = seen[rng.index(seen.size())];
    train.push_back(composition_example(t, train_pool, mix(seed, 0x7A, static_cast<std::uint64_t>(i))));
  }
  const AdapterParams trained = train_select(train, {}, aligned_params()).params;

  CompositionResult r;
  r.episodes = eval_episodes;
  int hit_n = 0, seen_n = 0, untrained_n = 0;
  for (int i = 0; i < eval_episodes; ++i) {
    const auto ex = composition_example(held, pool, mix(seed, 0xE7, static_cast<std::uint64_t>(i)));
    const FeatureVector q = adapt(trained, Modality::text, ex.query);
    if (argmax_lowest(select_scores(q, ex.objects, trained.select)) == ex.target) ++hit_n;
    if (argmax_lowest(select_scores(q, ex.objects, aligned_params().select)) == ex.target) ++untrained_n;
    const auto& t = seen[rng.index(seen.size())];
    const auto sx = composition_example(t, pool, mix(seed, 0x5E, static_cast<std::uint64_t>(i)));
    if (argmax_lowest(select_scores(adapt(trained, Modality::text, sx.query), sx.objects, trained.select)) == sx.target)
      ++seen_n;
  }
  r.accuracy = static_cast<double>(hit_n) / eval_episodes;
  r.seen_accuracy = static_cast<double>(seen_n) / eval_episodes;
  r.untrained_accuracy = static_cast<double>(untrained_n) / eval_episodes;
  return r;
}

}  // namespace esim
