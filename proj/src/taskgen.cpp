#include "esim/taskgen.hpp"

#include <algorithm>
#include <set>

#include "esim/builtin_data.hpp"

namespace esim {

namespace {

constexpr std::string_view kKindNames[] = {"captioning", "qa", "dialogue", "retrieval", "tool_use", "task_decomposition"};

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

bool has_slot(std::string_view tmpl, std::string_view slot) {
  return tmpl.find("{" + std::string(slot) + "}") != std::string_view::npos;
}

// Probe order on one object: TOUCH before HIT.
struct Probes {
  bool touch = false;
  bool hit = false;
  Probes& operator|=(const Probes& o) {
    touch |= o.touch;
    hit |= o.hit;
    return *this;
  }
};

Probes probes_for(TwinAttribute a) {
  return a == TwinAttribute::material ? Probes{false, true} : Probes{true, false};
}

Probes probes_for_template(std::string_view tmpl) {
  Probes p;
  if (has_slot(tmpl, "material")) p.hit = true;
  if (has_slot(tmpl, "hardness") || has_slot(tmpl, "temperature")) p.touch = true;
  return p;
}

void visit(std::vector<PlannedAction>& plan, int obj, Probes p) {
  plan.push_back({ActionKind::select, obj});
  plan.push_back({ActionKind::navigate, obj});
  if (p.touch) plan.push_back({ActionKind::touch, obj});
  if (p.hit) plan.push_back({ActionKind::hit, obj});
}

void add_probes(std::vector<PlannedAction>& plan, int obj, Probes have, Probes need) {
  if (need.touch && !have.touch) plan.push_back({ActionKind::touch, obj});
  if (need.hit && !have.hit) plan.push_back({ActionKind::hit, obj});
}

int count_category(const Scene& s, const std::string& cat) {
  return static_cast<int>(std::count_if(s.objects.begin(), s.objects.end(), [&](const auto& o) { return o.category == cat; }));
}

std::vector<int> pick_order(const std::vector<int>& ids) {
  std::vector<int> v = ids;
  std::sort(v.begin(), v.end());
  return v;
}

// Attribute words of a retrieval query, in a fixed reading order.
std::vector<TwinAttribute> ordered(std::vector<TwinAttribute> a) {
  auto rank = [](TwinAttribute x) {
    return x == TwinAttribute::hardness ? 0 : (x == TwinAttribute::temp_label ? 1 : 2);
  };
  std::sort(a.begin(), a.end(), [&](auto l, auto r) { return rank(l) < rank(r); });
  return a;
}

std::string slot_key(TwinAttribute a) {
  switch (a) {
    case TwinAttribute::material: return "material";
    case TwinAttribute::temp_label: return "temperature";
    case TwinAttribute::hardness: return "hardness";
  }
  return {};
}

}  // namespace

std::string_view to_string(TaskKind k) { return kKindNames[static_cast<int>(k)]; }

TaskKind parse_task_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kKindNames[i] == s) return static_cast<TaskKind>(i);
  throw InvalidArgument("unknown task kind: " + std::string(s));
}

TemplateBank templates_from_json(const nlohmann::json& j) {
  TemplateBank b;
  try {
    b.version = j.at("version").get<std::string>();
    for (auto k : kAllTaskKinds) {
      const auto& e = j.at("kinds").at(std::string(to_string(k)));
      b.prompts[k] = e.at("prompts").get<std::vector<std::string>>();
      b.answers[k] = e.at("answers").get<std::vector<std::string>>();
      require(b.prompts[k].size() >= 5 && b.prompts[k].size() == b.answers[k].size(),
              "template kind " + std::string(to_string(k)) + " needs >= 5 paired prompts and answers");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed template bank: ") + e.what());
  }
  return b;
}

const TemplateBank& builtin_templates() {
  static const TemplateBank b = templates_from_json(nlohmann::json::parse(builtin_data::templates_json()));
  return b;
}

ToolTable tools_from_json(const nlohmann::json& j) {
  ToolTable t;
  auto materials = [](const nlohmann::json& a) {
    std::vector<Material> out;
    for (const auto& m : a) out.push_back(parse_material(m.get<std::string>()));
    return out;
  };
  try {
    t.version = j.at("version").get<std::string>();
    for (const auto& s : j.at("situations")) {
      ToolSituation ts;
      ts.id = s.at("id").get<std::string>();
      ts.text = s.at("text").get<std::string>();
      ts.category = s.at("category").get<std::string>();
      ts.materials = materials(s.at("materials"));
      for (const auto& x : s.at("temps")) ts.temps.push_back(parse_temp_label(x.get<std::string>()));
      t.situations.push_back(std::move(ts));
    }
    if (j.contains("recipes")) {
      for (const auto& r : j.at("recipes")) {
        Recipe rec;
        rec.id = r.at("id").get<std::string>();
        for (const auto& s : r.at("slots")) {
          RecipeSlot slot;
          slot.role = s.at("role").get<std::string>();
          slot.food = s.value("food", false);
          if (s.contains("categories")) slot.categories = s.at("categories").get<std::vector<std::string>>();
          if (s.contains("materials")) slot.materials = materials(s.at("materials"));
          rec.slots.push_back(std::move(slot));
        }
        t.recipes.push_back(std::move(rec));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed tool table: ") + e.what());
  }
  return t;
}

const ToolTable& builtin_tools() {
  static const ToolTable t = tools_from_json(nlohmann::json::parse(builtin_data::tools_json()));
  return t;
}

bool satisfies(const ObjectInstance& o, const ToolSituation& s) {
  if (o.category != s.category) return false;
  if (!s.materials.empty() && std::find(s.materials.begin(), s.materials.end(), o.material) == s.materials.end()) return false;
  if (!s.temps.empty() && std::find(s.temps.begin(), s.temps.end(), o.temp_label) == s.temps.end()) return false;
  return true;
}

bool satisfies(const ObjectInstance& o, const RecipeSlot& slot, const ObjectInstance& food) {
  if (slot.food) return o.id == food.id;
  if (std::find(slot.categories.begin(), slot.categories.end(), o.category) == slot.categories.end()) return false;
  return slot.materials.empty() ||
         std::find(slot.materials.begin(), slot.materials.end(), o.material) != slot.materials.end();
}

nlohmann::json to_json(const TaskSpec& t) {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : t.gt_actions) actions.push_back({std::string(name(a.kind)), a.object});
  nlohmann::json attrs = nlohmann::json::array();
  for (auto a : t.attributes) attrs.push_back(std::string(to_string(a)));
  return {{"kind", std::string(to_string(t.kind))},
          {"prompt", t.prompt},
          {"target_objects", t.target_objects},
          {"gt_actions", actions},
          {"gt_answer_template", t.gt_answer_template},
          {"template_index", t.template_index},
          {"attributes", attrs},
          {"situation", t.situation},
          {"valid_combinations", t.valid_combinations}};
}

TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec t;
  try {
    t.kind = parse_task_kind(j.at("kind").get<std::string>());
    t.prompt = j.at("prompt").get<std::string>();
    t.target_objects = j.at("target_objects").get<std::vector<int>>();
    for (const auto& a : j.at("gt_actions")) {
      auto kind = action_from_name(a.at(0).get<std::string>());
      require(kind.has_value(), "unknown action in task");
      t.gt_actions.push_back({*kind, a.at(1).get<int>()});
    }
    t.gt_answer_template = j.at("gt_answer_template").get<std::string>();
    t.template_index = j.at("template_index").get<int>();
    for (const auto& a : j.at("attributes")) t.attributes.push_back(parse_twin_attribute(a.get<std::string>()));
    t.situation = j.at("situation").get<std::string>();
    t.valid_combinations = j.at("valid_combinations").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed task: ") + e.what());
  }
  return t;
}

std::vector<std::string> template_slots(std::string_view tmpl) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string_view::npos) break;
    out.emplace_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

bool is_sensor_slot(std::string_view slot) {
  return slot == "material" || slot == "hardness" || slot == "temperature" || slot == "attributes";
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    const std::string key(tmpl.substr(open + 1, close - open - 1));
    auto it = values.find(key);
    out += it != values.end() ? it->second : std::string(tmpl.substr(open, close - open + 1));
    pos = close + 1;
  }
  out.append(tmpl.substr(pos));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Generator {
  const Scene& scene;
  const Catalog& catalog;
  const TemplateBank& bank;
  const ToolTable& tools;

  std::vector<int> template_choices(TaskKind k, bool allow_temperature) const {
    std::vector<int> out;
    const auto& answers = bank.answers.at(k);
    for (int i = 0; i < static_cast<int>(answers.size()); ++i) {
      const bool temp = has_slot(answers[static_cast<std::size_t>(i)], "temperature") ||
                        has_slot(bank.prompts.at(k)[static_cast<std::size_t>(i)], "temperature");
      if (!temp || allow_temperature) out.push_back(i);
    }
    return out;
  }

  bool has_thermal_object() const {
    return std::any_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
      return o.temp_label != TempLabel::room && count_category(scene, o.category) == 1;
    });
  }

  // Describe-an-object kinds: captioning, qa, dialogue.
  std::optional<TaskSpec> describe(TaskKind k, Rng& rng) const {
    const auto choices = template_choices(k, has_thermal_object());
    if (choices.empty()) return std::nullopt;
    const int ti = choices[rng.index(choices.size())];
    const auto& answer = bank.answers.at(k)[static_cast<std::size_t>(ti)];
    const auto& prompt = bank.prompts.at(k)[static_cast<std::size_t>(ti)];
    const bool needs_thermal = has_slot(answer, "temperature") || has_slot(prompt, "temperature");
    // The prompt names the target by category alone, so it must be unique.
    std::vector<int> pool;
    for (const auto& o : scene.objects) {
      if (needs_thermal && o.temp_label == TempLabel::room) continue;
      if (count_category(scene, o.category) == 1) pool.push_back(o.id);
    }
    if (pool.empty()) return std::nullopt;
    const int target = pool[rng.index(pool.size())];
    TaskSpec t;
    t.kind = k;
    t.template_index = ti;
    t.target_objects = {target};
    t.prompt = fill_template(prompt, {{"category", scene.object(target).category}});
    t.gt_answer_template = answer;
    visit(t.gt_actions, target, probes_for_template(answer));
    return t;
  }

  std::optional<TaskSpec> retrieval(Rng& rng) const {
    if (scene.twin_groups.empty()) return std::nullopt;
    const auto& g = scene.twin_groups[rng.index(scene.twin_groups.size())];
    const int target = g.members[rng.index(g.members.size())];
    const auto& obj = scene.object(target);
    std::vector<TwinAttribute> attrs = {g.varied};
    if (g.varied != TwinAttribute::temp_label && obj.temp_label != TempLabel::room) attrs.push_back(TwinAttribute::temp_label);
    attrs = ordered(attrs);
    std::vector<std::string> words;
    for (auto a : attrs) words.push_back(attribute_word(a, obj, catalog));

    const auto choices = template_choices(TaskKind::retrieval, true);
    const int ti = choices[rng.index(choices.size())];
    TaskSpec t;
    t.kind = TaskKind::retrieval;
    t.template_index = ti;
    t.target_objects = {target};
    t.attributes = attrs;
    t.prompt = fill_template(bank.prompts.at(TaskKind::retrieval)[static_cast<std::size_t>(ti)],
                             {{"attributes", join(words, " ")}, {"category", obj.category}});
    t.gt_answer_template = bank.answers.at(TaskKind::retrieval)[static_cast<std::size_t>(ti)];
    Probes all;
    for (auto a : attrs) all |= probes_for(a);
    all |= probes_for_template(t.gt_answer_template);
    for (int id : pick_order(g.members)) {
      if (id == target) {
        visit(t.gt_actions, id, all);
        break;
      }
      visit(t.gt_actions, id, probes_for(g.varied));
    }
    return t;
  }

  std::optional<TaskSpec> tool_use(Rng& rng) const {
    std::vector<std::pair<const ToolSituation*, int>> feasible;
    for (const auto& s : tools.situations) {
      std::vector<int> ok;
      for (const auto& o : scene.objects)
        if (satisfies(o, s)) ok.push_back(o.id);
      if (ok.size() == 1) feasible.emplace_back(&s, ok.front());
    }
    if (feasible.empty()) return std::nullopt;
    const auto [sit, target] = feasible[rng.index(feasible.size())];
    const auto choices = template_choices(TaskKind::tool_use, true);
    const int ti = choices[rng.index(choices.size())];
    TaskSpec t;
    t.kind = TaskKind::tool_use;
    t.template_index = ti;
    t.target_objects = {target};
    t.situation = sit->id;
    t.prompt = fill_template(bank.prompts.at(TaskKind::tool_use)[static_cast<std::size_t>(ti)], {{"situation", sit->text}});
    t.gt_answer_template = bank.answers.at(TaskKind::tool_use)[static_cast<std::size_t>(ti)];
    const Probes check{!sit->temps.empty(), !sit->materials.empty()};
    for (const auto& o : scene.objects) {
      if (o.category != sit->category) continue;
      visit(t.gt_actions, o.id, check);
      if (o.id == target) {
        add_probes(t.gt_actions, o.id, check, probes_for_template(t.gt_answer_template));
        break;
      }
    }
    return t;
  }

  std::optional<TaskSpec> decomposition(Rng& rng) const {
    if (tools.recipes.empty()) return std::nullopt;
    struct Option {
      const Recipe* recipe;
      int food;
      std::vector<std::vector<int>> combos;
      std::vector<int> chosen;
    };
    std::vector<Option> options;
    for (const auto& recipe : tools.recipes) {
      for (const auto& food : scene.objects) {
        if (!catalog.category(food.category).food || count_category(scene, food.category) != 1) continue;
        std::vector<std::vector<int>> per_slot;
        for (const auto& slot : recipe.slots) {
          std::vector<int> ids;
          for (const auto& o : scene.objects)
            if (satisfies(o, slot, food) && catalog.category(o.category).portable) ids.push_back(o.id);
          per_slot.push_back(std::move(ids));
        }
        std::vector<std::vector<int>> combos{{}};
        for (const auto& ids : per_slot) {
          std::vector<std::vector<int>> next;
          for (const auto& c : combos)
            for (int id : ids)
              if (std::find(c.begin(), c.end(), id) == c.end()) {
                auto e = c;
                e.push_back(id);
                next.push_back(std::move(e));
              }
          combos = std::move(next);
        }
        if (combos.empty()) continue;
        // Ground truth retrieves, per slot, the first candidate in id order.
        Option opt{&recipe, food.id, {}, combos.front()};
        for (auto& c : combos) {
          std::sort(c.begin(), c.end());
          opt.combos.push_back(c);
        }
        std::sort(opt.combos.begin(), opt.combos.end());
        opt.combos.erase(std::unique(opt.combos.begin(), opt.combos.end()), opt.combos.end());
        options.push_back(std::move(opt));
      }
    }
    if (options.empty()) return std::nullopt;
    const auto& opt = options[rng.index(options.size())];
    const auto choices = template_choices(TaskKind::task_decomposition, true);
    const int ti = choices[rng.index(choices.size())];
    TaskSpec t;
    t.kind = TaskKind::task_decomposition;
    t.template_index = ti;
    t.situation = opt.recipe->id;
    t.target_objects = opt.chosen;
    t.valid_combinations = opt.combos;
    t.prompt = fill_template(bank.prompts.at(TaskKind::task_decomposition)[static_cast<std::size_t>(ti)],
                             {{"category", scene.object(opt.food).category}});
    t.gt_answer_template = bank.answers.at(TaskKind::task_decomposition)[static_cast<std::size_t>(ti)];
    for (std::size_t s = 0; s < opt.recipe->slots.size(); ++s) {
      const auto& slot = opt.recipe->slots[s];
      const int id = opt.chosen[s];
      // Containers with a material constraint are checked by ear first.
      if (!slot.materials.empty()) {
        for (const auto& o : scene.objects) {
          if (std::find(slot.categories.begin(), slot.categories.end(), o.category) == slot.categories.end()) continue;
          if (!catalog.category(o.category).portable) continue;
          if (std::find(opt.chosen.begin(), opt.chosen.end(), o.id) != opt.chosen.end() && o.id != id) continue;
          visit(t.gt_actions, o.id, {false, true});
          if (o.id == id) break;
        }
      } else {
        visit(t.gt_actions, id, {});
      }
      t.gt_actions.push_back({ActionKind::pick_up, id});
      t.gt_actions.push_back({ActionKind::put_down, id});
    }
    return t;
  }

  std::optional<TaskSpec> make(TaskKind k, Rng& rng) const {
    switch (k) {
      case TaskKind::captioning:
      case TaskKind::qa:
      case TaskKind::dialogue: return describe(k, rng);
      case TaskKind::retrieval: return retrieval(rng);
      case TaskKind::tool_use: return tool_use(rng);
      case TaskKind::task_decomposition: return decomposition(rng);
    }
    return std::nullopt;
  }
};

}  // namespace

TaskGenResult propose_tasks(const Scene& scene, const std::vector<TaskKind>& kinds, int n, std::uint64_t seed,
                            const Catalog& catalog) {
  require(n >= 1, "propose_tasks needs n >= 1");
  require(!kinds.empty(), "propose_tasks needs at least one task kind");
  const auto report = validate_scene(scene, catalog);
  require(report.ok(), "invalid scene: " + report.summary());
  Generator gen{scene, catalog, builtin_templates(), builtin_tools()};

  TaskGenResult out;
  std::vector<TaskKind> feasible;
  for (auto k : kinds) {
    if (std::find(feasible.begin(), feasible.end(), k) != feasible.end()) continue;
    Rng probe(mix(seed, 0xFEA5, static_cast<std::uint64_t>(k)));
    if (gen.make(k, probe))
      feasible.push_back(k);
    else
      out.warnings.push_back("scene " + scene.id + " cannot support " + std::string(to_string(k)) + " tasks");
  }
  if (feasible.empty()) throw NoTasksPossible("no requested task kind is possible in scene " + scene.id);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix(seed, 0x7A5C, static_cast<std::uint64_t>(i)));
    out.tasks.push_back(*gen.make(feasible[static_cast<std::size_t>(i) % feasible.size()], rng));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string derive_slot(std::string_view slot, const WirePayload& payload) {
  if (slot == "material") return std::string(to_string(classify_material(clip_from_payload(payload))));
  if (slot == "hardness") return std::string(to_string(classify_hardness(tactile_from_payload(payload))));
  if (slot == "temperature")
    return std::string(temp_adjective(classify_temperature(temperature_from_payload(payload).celsius)));
  throw InvalidArgument("not a sensor slot: " + std::string(slot));
}

RealizedEpisode realize(const TaskSpec& task, const Scene& scene, const AdapterParams& params, const EnvConfig& cfg) {
  RealizedEpisode out;
  out.task = task;
  Session session(scene, task.prompt, params, cfg);
  session.start();
  // Latest payload per (object, kind).
  std::map<std::pair<int, std::string>, int> latest;
  try {
    for (std::size_t i = 0; i < task.gt_actions.size(); ++i) {
      const auto& a = task.gt_actions[i];
      TokenStream emit{{Token::act(a.kind)}};
      if (a.kind == ActionKind::select) {
        emit.tokens.push_back(Token::text(handle(a.object)));
        emit.tokens.push_back(Token::text(scene.object(a.object).category));
      }
      const auto delta = session.submit(emit);
      for (const auto& [id, p] : delta.payloads)
        if (p.meta.contains("object_id")) latest[{payload_object(p), p.kind}] = id;
    }
  } catch (const Error& e) {
    out.valid = false;
    out.invalid_reason = e.what();
    out.episode = session.episode();
    return out;
  }

  const auto& payloads = session.env().payloads();
  std::map<std::string, std::string> values;
  const int target = task.target_objects.empty() ? -1 : task.target_objects.front();
  auto read = [&](const std::string& slot, const std::string& kind) -> std::string {
    auto it = latest.find({target, kind});
    if (it == latest.end()) throw InvalidArgument("slot {" + slot + "} has no producing observation");
    out.slot_payloads[slot] = it->second;
    auto v = derive_slot(slot, payloads[static_cast<std::size_t>(it->second)]);
    out.slot_values[slot] = v;
    return v;
  };
  try {
    const auto slots = template_slots(task.gt_answer_template);
    auto wants = [&](const std::string& s) { return std::find(slots.begin(), slots.end(), s) != slots.end(); };
    if (target >= 0) {
      values["category"] = scene.object(target).category;
      values["handle"] = handle(target);
    }
    if (wants("material")) values["material"] = read("material", "impact_sound");
    if (wants("hardness")) values["hardness"] = read("hardness", "tactile");
    if (wants("temperature")) values["temperature"] = read("temperature", "temperature");
    if (wants("attributes")) {
      std::vector<std::string> words;
      for (auto a : task.attributes)
        words.push_back(read(slot_key(a), a == TwinAttribute::material ? "impact_sound"
                                          : a == TwinAttribute::hardness ? "tactile"
                                                                          : "temperature"));
      values["attributes"] = join(words, " ");
      out.slot_values["attributes"] = values["attributes"];
    }
    if (wants("handles")) {
      std::vector<std::string> hs;
      for (int id : task.target_objects) hs.push_back(handle(id));
      values["handles"] = join(hs, " ");
    }
    if (wants("situation")) {
      for (const auto& s : builtin_tools().situations)
        if (s.id == task.situation) values["situation"] = s.text;
    }
    const std::string answer = fill_template(task.gt_answer_template, values);
    TokenStream words;
    for (const auto& w : split_whitespace(answer)) words.tokens.push_back(Token::text(w));
    session.end(words);
  } catch (const Error& e) {
    out.valid = false;
    out.invalid_reason = e.what();
  }
  out.episode = session.episode();
  if (out.valid && out.episode.status != EpisodeStatus::ok) {
    out.valid = false;
    out.invalid_reason = out.episode.error;
  }
  return out;
}

std::vector<Sample> incremental_samples(const Episode& e) {
  std::vector<Sample> out;
  const std::size_t end = e.stream.size();
  const std::size_t answer = e.status == EpisodeStatus::ok ? e.answer_offset : end;
  for (std::size_t i = 0; i < e.action_offsets.size(); ++i) {
    const std::size_t b = e.action_offsets[i];
    const std::size_t next = i + 1 < e.action_offsets.size() ? e.action_offsets[i + 1] : answer;
    out.push_back({e.stream.slice(0, b), e.stream.slice(b, next)});
  }
  out.push_back({e.stream.slice(0, answer), e.stream.slice(answer, end)});
  return out;
}

}  // namespace esim
