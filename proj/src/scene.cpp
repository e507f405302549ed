#include "esim/scene.hpp"

#include <map>
#include <set>
#include <sstream>

#include "esim/builtin_data.hpp"
#include "esim/sensors.hpp"

namespace esim {

namespace {

constexpr double kMaxOverlapFraction = 0.05;
constexpr int kMaxAdded = 10;

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::string_view (&names)[N], const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw InvalidArgument(std::string("unknown ") + what + ": " + std::string(s));
}

constexpr std::string_view kMaterialNames[] = {"ceramic", "plastic", "steel", "wood",
                                               "glass",   "paper",   "fabric"};
constexpr std::string_view kTempNames[] = {"hot", "cold", "room"};
constexpr std::string_view kHardnessNames[] = {"soft", "firm", "hard"};
constexpr std::string_view kTwinNames[] = {"material", "temp_label", "hardness"};

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

bool overlaps_too_much(const Box& a, const Box& b) {
  const double ov = a.overlap_volume(b);
  return ov > kMaxOverlapFraction * std::min(a.volume(), b.volume());
}

std::optional<Box> place_on_floor(const Box& room, const Vec3& half,
                                  const std::vector<ObjectInstance>& placed, int max_retries,
                                  Rng& rng) {
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Box b;
    b.half = half;
    b.center.x = rng.uniform(room.min().x + half.x, room.max().x - half.x);
    b.center.y = rng.uniform(room.min().y + half.y, room.max().y - half.y);
    b.center.z = room.min().z + half.z;
    if (!room.contains(b)) continue;
    bool clear = true;
    for (const auto& o : placed) {
      if (overlaps_too_much(b, o.bbox)) {
        clear = false;
        break;
      }
    }
    if (clear) return b;
  }
  return std::nullopt;
}

std::vector<HardnessClass> hardness_classes(const Catalog& catalog, const CategorySpec& cat) {
  std::vector<HardnessClass> out;
  for (Material m : cat.materials) {
    const auto h = hardness_class(catalog.material(m).hardness);
    if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
  }
  return out;
}

std::size_t distinct_values(const Catalog& catalog, const CategorySpec& cat, TwinAttribute a) {
  switch (a) {
    case TwinAttribute::material: return cat.materials.size();
    case TwinAttribute::temp_label: return cat.temps.size();
    case TwinAttribute::hardness: return hardness_classes(catalog, cat).size();
  }
  return 0;
}

std::size_t attribute_cardinality(TwinAttribute a) {
  switch (a) {
    case TwinAttribute::material: return std::size(kAllMaterials);
    case TwinAttribute::temp_label: return std::size(kAllTempLabels);
    case TwinAttribute::hardness: return 3;
  }
  return 0;
}

}  // namespace

std::string_view to_string(Material m) { return kMaterialNames[static_cast<int>(m)]; }
std::string_view to_string(TempLabel t) { return kTempNames[static_cast<int>(t)]; }
std::string_view to_string(HardnessClass h) { return kHardnessNames[static_cast<int>(h)]; }
std::string_view to_string(TwinAttribute a) { return kTwinNames[static_cast<int>(a)]; }

Material parse_material(std::string_view s) {
  return parse_enum<Material>(s, kMaterialNames, "material");
}
TempLabel parse_temp_label(std::string_view s) {
  return parse_enum<TempLabel>(s, kTempNames, "temperature label");
}
TwinAttribute parse_twin_attribute(std::string_view s) {
  return parse_enum<TwinAttribute>(s, kTwinNames, "twin attribute");
}

std::optional<Material> try_parse_material(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kMaterialNames); ++i) {
    if (kMaterialNames[i] == s) return static_cast<Material>(i);
  }
  return std::nullopt;
}

TempRange temp_range(TempLabel label) {
  switch (label) {
    case TempLabel::hot: return {55.0, 95.0};
    case TempLabel::cold: return {0.0, 10.0};
    case TempLabel::room: return {18.0, 26.0};
  }
  return {0.0, 0.0};
}

std::string_view temp_adjective(TempLabel label) {
  switch (label) {
    case TempLabel::hot: return "hot";
    case TempLabel::cold: return "cold";
    case TempLabel::room: return "room-temperature";
  }
  return "";
}

HardnessClass hardness_class(double hardness) {
  if (hardness < 0.3) return HardnessClass::soft;
  if (hardness < 0.7) return HardnessClass::firm;
  return HardnessClass::hard;
}

// ---------------------------------------------------------------------------
// Catalog

const MaterialProfile& Catalog::material(Material m) const {
  for (const auto& p : materials) {
    if (p.name == m) return p;
  }
  throw InvalidArgument("material not in catalog: " + std::string(to_string(m)));
}

const CategorySpec* Catalog::find_category(std::string_view name) const {
  for (const auto& c : categories) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const CategorySpec& Catalog::category(std::string_view name) const {
  if (const auto* c = find_category(name)) return *c;
  throw InvalidArgument("unknown category: " + std::string(name));
}

Catalog catalog_from_json(const nlohmann::json& j) {
  Catalog c;
  c.version = j.at("version").get<std::string>();
  for (const auto& m : j.at("materials")) {
    MaterialProfile p;
    p.name = parse_material(m.at("name").get<std::string>());
    p.hardness = m.at("hardness").get<double>();
    p.elasticity = m.at("elasticity").get<double>();
    p.deformability = m.at("deformability").get<double>();
    p.modal_base_freq_hz = m.at("modal_base_freq_hz").get<double>();
    p.modal_damping = m.at("modal_damping").get<double>();
    p.density_rel = m.at("density_rel").get<double>();
    c.materials.push_back(p);
  }
  for (const auto& k : j.at("categories")) {
    CategorySpec s;
    s.name = k.at("name").get<std::string>();
    s.half_min = vec_from_json(k.at("half_min"));
    s.half_max = vec_from_json(k.at("half_max"));
    for (const auto& m : k.at("materials")) s.materials.push_back(parse_material(m.get<std::string>()));
    for (const auto& t : k.at("temps")) s.temps.push_back(parse_temp_label(t.get<std::string>()));
    s.portable = k.value("portable", true);
    s.food = k.value("food", false);
    c.categories.push_back(std::move(s));
  }
  if (auto problems = check_catalog(c); !problems.empty()) {
    throw InvalidArgument("invalid catalog: " + problems.front());
  }
  return c;
}

nlohmann::json to_json(const Catalog& c) {
  nlohmann::json j;
  j["version"] = c.version;
  auto& mats = j["materials"] = nlohmann::json::array();
  for (const auto& p : c.materials) {
    mats.push_back({{"name", to_string(p.name)},
                    {"hardness", p.hardness},
                    {"elasticity", p.elasticity},
                    {"deformability", p.deformability},
                    {"modal_base_freq_hz", p.modal_base_freq_hz},
                    {"modal_damping", p.modal_damping},
                    {"density_rel", p.density_rel}});
  }
  auto& cats = j["categories"] = nlohmann::json::array();
  for (const auto& s : c.categories) {
    nlohmann::json k{{"name", s.name},
                     {"half_min", vec_json(s.half_min)},
                     {"half_max", vec_json(s.half_max)},
                     {"portable", s.portable},
                     {"food", s.food}};
    auto& ms = k["materials"] = nlohmann::json::array();
    for (Material m : s.materials) ms.push_back(to_string(m));
    auto& ts = k["temps"] = nlohmann::json::array();
    for (TempLabel t : s.temps) ts.push_back(to_string(t));
    cats.push_back(std::move(k));
  }
  return j;
}

std::string catalog_hash(const Catalog& c) { return sha256_hex(to_json(c).dump()); }

std::vector<std::string> check_catalog(const Catalog& c) {
  std::vector<std::string> out;
  if (c.materials.empty()) out.push_back("no materials");
  if (c.categories.empty()) out.push_back("no categories");
  std::set<Material> seen;
  for (const auto& p : c.materials) {
    if (!seen.insert(p.name).second) out.push_back("duplicate material " + std::string(to_string(p.name)));
    for (double v : {p.hardness, p.elasticity, p.deformability, p.modal_base_freq_hz, p.modal_damping,
                     p.density_rel}) {
      if (!std::isfinite(v)) out.push_back("non-finite value in " + std::string(to_string(p.name)));
    }
    if (!(p.hardness > 0.0 && p.hardness <= 1.0)) out.push_back("hardness out of (0,1]");
    if (!(p.elasticity > 0.0 && p.elasticity <= 1.0)) out.push_back("elasticity out of (0,1]");
    if (!(p.deformability >= 0.0 && p.deformability < 1.0)) out.push_back("deformability out of [0,1)");
  }
  auto sorted = c.materials;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.hardness < b.hardness; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (!(sorted[i].deformability < sorted[i - 1].deformability)) {
      out.push_back("deformability not strictly decreasing in hardness at " +
                    std::string(to_string(sorted[i].name)));
    }
  }
  std::set<std::string> names;
  for (const auto& s : c.categories) {
    if (!names.insert(s.name).second) out.push_back("duplicate category " + s.name);
    if (s.materials.empty() || s.temps.empty()) out.push_back("category without materials/temps: " + s.name);
    for (int i = 0; i < 3; ++i) {
      if (!(s.half_min[i] > 0.0 && s.half_min[i] <= s.half_max[i])) {
        out.push_back("bad half-extent range for " + s.name);
        break;
      }
    }
    for (Material m : s.materials) {
      if (!seen.count(m)) out.push_back("category " + s.name + " uses unknown material");
    }
  }
  return out;
}

const Catalog& builtin_catalog() {
  static const Catalog catalog = catalog_from_json(nlohmann::json::parse(builtin_data::catalog_json()));
  return catalog;
}

// ---------------------------------------------------------------------------
// Scene

const ObjectInstance& Scene::object(int id) const {
  if (id < 0 || id >= static_cast<int>(objects.size())) {
    throw InvalidArgument("object id out of range: " + std::to_string(id));
  }
  return objects[static_cast<std::size_t>(id)];
}

ObjectInstance& Scene::object(int id) {
  return const_cast<ObjectInstance&>(static_cast<const Scene&>(*this).object(id));
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  if (j.contains("room")) c.room = box_from_json(j.at("room"));
  c.n_base = j.value("n_base", c.n_base);
  c.n_added = j.value("n_added", c.n_added);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.ambient_probability = j.value("ambient_probability", c.ambient_probability);
  return c;
}

nlohmann::json to_json(const SceneConfig& c) {
  return {{"room", to_json(c.room)},
          {"n_base", c.n_base},
          {"n_added", c.n_added},
          {"max_retries", c.max_retries},
          {"ambient_probability", c.ambient_probability}};
}

Scene sample_scene(const Catalog& catalog, const SceneConfig& config, std::uint64_t seed) {
  if (catalog.categories.empty()) throw InvalidArgument("catalog has no categories");
  if (config.n_added < 1 || config.n_added > kMaxAdded) {
    throw InvalidArgument("n_added must be in [1, 10], got " + std::to_string(config.n_added));
  }
  if (config.n_base < 0) throw InvalidArgument("n_base must be non-negative");
  if (config.max_retries < 1) throw InvalidArgument("max_retries must be positive");
  for (int i = 0; i < 3; ++i) {
    if (!(config.room.half[i] > 0.0)) throw InvalidArgument("room extents must be positive");
  }

  Rng rng(mix(seed, 0x5CE4E));
  const auto& ontology = builtin_ontology();
  Scene scene;
  std::ostringstream id;
  id << "scene-" << std::hex << seed;
  scene.id = id.str();
  scene.room = config.room;
  scene.n_base = config.n_base;
  scene.n_added = config.n_added;

  const int total = config.n_base + config.n_added;
  for (int i = 0; i < total; ++i) {
    const auto& cat = catalog.categories[rng.index(catalog.categories.size())];
    ObjectInstance obj;
    obj.id = i;
    obj.category = cat.name;
    obj.seed = mix(seed, static_cast<std::uint64_t>(i), 0x0B1EC7);
    Vec3 half;
    for (int a = 0; a < 3; ++a) half[a] = rng.uniform(cat.half_min[a], cat.half_max[a]);
    obj.material = cat.materials[rng.index(cat.materials.size())];
    obj.temp_label = cat.temps[rng.index(cat.temps.size())];
    obj.temp_celsius = sample_temperature(obj.temp_label, obj.seed).celsius;
    if (rng.bernoulli(config.ambient_probability)) {
      obj.ambient_sound = assign_ambient(obj, ontology, obj.seed);
    }
    auto placed = place_on_floor(config.room, half, scene.objects, config.max_retries, rng);
    if (!placed) {
      throw PlacementError("could not place object " + std::to_string(i) + " (" + cat.name +
                           ") after " + std::to_string(config.max_retries) + " retries");
    }
    obj.bbox = *placed;
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

Scene twin_injection(const Scene& scene, const Catalog& catalog, int k, TwinAttribute varied,
                     std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("twin_injection needs k >= 2, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > attribute_cardinality(varied)) {
    throw InvalidArgument("k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(attribute_cardinality(varied)) + " distinct values of " +
                          std::string(to_string(varied)));
  }
  if (scene.n_added + k - 1 > kMaxAdded) {
    throw InvalidArgument("twin injection would exceed 10 added objects");
  }

  std::map<std::string, int> category_count;
  for (const auto& o : scene.objects) ++category_count[o.category];
  std::vector<int> candidates;
  for (const auto& o : scene.objects) {
    const auto* cat = catalog.find_category(o.category);
    if (cat == nullptr || category_count[o.category] != 1) continue;
    if (distinct_values(catalog, *cat, varied) >= static_cast<std::size_t>(k)) candidates.push_back(o.id);
  }
  if (candidates.empty()) {
    throw InvalidArgument("no template object admits " + std::to_string(k) + " distinct values of " +
                          std::string(to_string(varied)));
  }

  Rng rng(mix(seed, 0x7817));
  Scene out = scene;
  const ObjectInstance tmpl = scene.object(candidates[rng.index(candidates.size())]);
  const auto& cat = catalog.category(tmpl.category);

  // Distinct values for the copies, excluding the template's own value.
  std::vector<Material> materials;
  std::vector<TempLabel> temps;
  switch (varied) {
    case TwinAttribute::material:
      for (Material m : cat.materials) {
        if (m != tmpl.material) materials.push_back(m);
      }
      rng.shuffle(materials);
      break;
    case TwinAttribute::temp_label:
      for (TempLabel t : cat.temps) {
        if (t != tmpl.temp_label) temps.push_back(t);
      }
      rng.shuffle(temps);
      break;
    case TwinAttribute::hardness: {
      const auto own = hardness_class(catalog.material(tmpl.material).hardness);
      std::vector<HardnessClass> used{own};
      std::vector<Material> pool = cat.materials;
      rng.shuffle(pool);
      for (Material m : pool) {
        const auto h = hardness_class(catalog.material(m).hardness);
        if (std::find(used.begin(), used.end(), h) != used.end()) continue;
        used.push_back(h);
        materials.push_back(m);
      }
      break;
    }
  }

  TwinGroup group{varied, {tmpl.id}};
  for (int c = 0; c < k - 1; ++c) {
    ObjectInstance twin = tmpl;
    twin.id = static_cast<int>(out.objects.size());
    twin.seed = mix(seed, static_cast<std::uint64_t>(twin.id), 0x7717);
    if (varied == TwinAttribute::temp_label) {
      twin.temp_label = temps[static_cast<std::size_t>(c)];
      twin.temp_celsius = sample_temperature(twin.temp_label, twin.seed).celsius;
    } else {
      twin.material = materials[static_cast<std::size_t>(c)];
    }
    auto placed = place_on_floor(out.room, tmpl.bbox.half, out.objects, 200, rng);
    if (!placed) throw PlacementError("could not place twin of object " + std::to_string(tmpl.id));
    twin.bbox = *placed;
    group.members.push_back(twin.id);
    out.objects.push_back(std::move(twin));
  }
  out.n_added += k - 1;
  out.twin_groups.push_back(std::move(group));
  return out;
}

std::string ValidationReport::summary() const {
  std::string s;
  for (const auto& v : violations) {
    s += v.rule + ": " + v.message;
    if (!v.object_ids.empty()) {
      s += " [ids";
      for (int id : v.object_ids) s += " " + std::to_string(id);
      s += "]";
    }
    s += "\n";
  }
  return s;
}

ValidationReport validate_scene(const Scene& scene, const Catalog& catalog) {
  ValidationReport r;
  auto add = [&](std::string rule, std::vector<int> ids, std::string msg) {
    r.violations.push_back({std::move(rule), std::move(ids), std::move(msg)});
  };
  const int n = static_cast<int>(scene.objects.size());
  if (scene.n_added < 1 || scene.n_added > kMaxAdded) {
    add("n_added_range", {}, "n_added=" + std::to_string(scene.n_added) + " outside [1, 10]");
  }
  if (scene.n_base < 0 || scene.n_base + scene.n_added != n) {
    add("object_count", {}, "n_base + n_added != number of objects");
  }
  for (int i = 0; i < 3; ++i) {
    if (!(scene.room.half[i] > 0.0)) {
      add("room_extents", {}, "room half-extents must be positive");
      break;
    }
  }
  const auto& ontology = builtin_ontology();
  for (int i = 0; i < n; ++i) {
    const auto& o = scene.objects[static_cast<std::size_t>(i)];
    if (o.id != i) add("dense_ids", {o.id}, "object at index " + std::to_string(i) + " has id " + std::to_string(o.id));
    bool finite = std::isfinite(o.temp_celsius);
    for (int a = 0; a < 3; ++a) finite = finite && std::isfinite(o.bbox.center[a]) && std::isfinite(o.bbox.half[a]);
    if (!finite) add("finite", {o.id}, "non-finite field");
    if (!(o.bbox.half.x > 0.0 && o.bbox.half.y > 0.0 && o.bbox.half.z > 0.0)) {
      add("half_extents_positive", {o.id}, "half-extents must be positive");
    }
    if (!scene.room.contains(o.bbox, 1e-9)) add("inside_room", {o.id}, "bbox leaves the room");
    if (!temp_range(o.temp_label).contains(o.temp_celsius)) {
      add("temp_range", {o.id},
          std::to_string(o.temp_celsius) + " C outside the " + std::string(to_string(o.temp_label)) + " range");
    }
    const auto* cat = catalog.find_category(o.category);
    if (cat == nullptr) {
      add("unknown_category", {o.id}, "category " + o.category + " not in catalog");
    }
    bool has_material = false;
    for (const auto& p : catalog.materials) has_material = has_material || p.name == o.material;
    if (!has_material) add("unknown_material", {o.id}, "material not in catalog");
    if (o.ambient_sound && ontology.find(o.ambient_sound->ontology_id) == nullptr) {
      add("ambient_ontology", {o.id}, "unknown ontology id " + o.ambient_sound->ontology_id);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto& a = scene.objects[static_cast<std::size_t>(i)].bbox;
      const auto& b = scene.objects[static_cast<std::size_t>(j)].bbox;
      if (overlaps_too_much(a, b)) {
        add("overlap", {scene.objects[static_cast<std::size_t>(i)].id, scene.objects[static_cast<std::size_t>(j)].id},
            "boxes overlap more than 5% of the smaller volume");
      }
    }
  }
  for (const auto& g : scene.twin_groups) {
    bool ids_ok = g.members.size() >= 2;
    for (int id : g.members) ids_ok = ids_ok && id >= 0 && id < n;
    if (!ids_ok) {
      add("twin_group", g.members, "twin group has invalid members");
      continue;
    }
    const auto& first = scene.objects[static_cast<std::size_t>(g.members.front())];
    std::set<int> values;
    for (int id : g.members) {
      const auto& o = scene.objects[static_cast<std::size_t>(id)];
      if (o.category != first.category || !(o.bbox.half == first.bbox.half)) {
        add("twin_visual", {first.id, id}, "twins differ in visual attributes");
      }
      switch (g.varied) {
        case TwinAttribute::material:
        case TwinAttribute::hardness:
          if (o.temp_label != first.temp_label) add("twin_varied", {first.id, id}, "twins differ outside the varied attribute");
          values.insert(g.varied == TwinAttribute::material
                            ? static_cast<int>(o.material)
                            : static_cast<int>(hardness_class(catalog.material(o.material).hardness)));
          break;
        case TwinAttribute::temp_label:
          if (o.material != first.material) add("twin_varied", {first.id, id}, "twins differ outside the varied attribute");
          values.insert(static_cast<int>(o.temp_label));
          break;
      }
    }
    if (values.size() != g.members.size()) add("twin_distinct", g.members, "varied attribute values are not distinct");
  }
  return r;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const Box& b) {
  return {{"center", vec_json(b.center)}, {"half", vec_json(b.half)}};
}

Box box_from_json(const nlohmann::json& j) {
  return {vec_from_json(j.at("center")), vec_from_json(j.at("half"))};
}

nlohmann::json to_json(const Scene& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["room"] = to_json(s.room);
  j["n_base"] = s.n_base;
  j["n_added"] = s.n_added;
  auto& objs = j["objects"] = nlohmann::json::array();
  for (const auto& o : s.objects) {
    nlohmann::json oj{{"id", o.id},
                      {"category", o.category},
                      {"bbox", to_json(o.bbox)},
                      {"material", to_string(o.material)},
                      {"temp_label", to_string(o.temp_label)},
                      {"temp_celsius", o.temp_celsius},
                      {"seed", o.seed}};
    if (o.ambient_sound) {
      oj["ambient_sound"] = {{"ontology_id", o.ambient_sound->ontology_id},
                             {"description", o.ambient_sound->description}};
    } else {
      oj["ambient_sound"] = nullptr;
    }
    objs.push_back(std::move(oj));
  }
  auto& groups = j["twin_groups"] = nlohmann::json::array();
  for (const auto& g : s.twin_groups) groups.push_back({{"varied", to_string(g.varied)}, {"members", g.members}});
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.id = j.at("id").get<std::string>();
  s.room = box_from_json(j.at("room"));
  s.n_base = j.at("n_base").get<int>();
  s.n_added = j.at("n_added").get<int>();
  for (const auto& oj : j.at("objects")) {
    ObjectInstance o;
    o.id = oj.at("id").get<int>();
    o.category = oj.at("category").get<std::string>();
    o.bbox = box_from_json(oj.at("bbox"));
    o.material = parse_material(oj.at("material").get<std::string>());
    o.temp_label = parse_temp_label(oj.at("temp_label").get<std::string>());
    o.temp_celsius = oj.at("temp_celsius").get<double>();
    o.seed = oj.at("seed").get<std::uint64_t>();
    if (const auto& a = oj.at("ambient_sound"); !a.is_null()) {
      o.ambient_sound = AmbientSoundTag{a.at("ontology_id").get<std::string>(), a.at("description").get<std::string>()};
    }
    s.objects.push_back(std::move(o));
  }
  if (j.contains("twin_groups")) {
    for (const auto& g : j.at("twin_groups")) {
      s.twin_groups.push_back({parse_twin_attribute(g.at("varied").get<std::string>()),
                               g.at("members").get<std::vector<int>>()});
    }
  }
  return s;
}

std::string canonical_json(const Scene& s) { return to_json(s).dump(); }

}  // namespace esim
