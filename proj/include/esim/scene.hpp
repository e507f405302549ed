#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/common.hpp"

namespace esim {

enum class Material { ceramic, plastic, steel, wood, glass, paper, fabric };
enum class TempLabel { hot, cold, room };
enum class HardnessClass { soft, firm, hard };

inline constexpr Material kAllMaterials[] = {Material::ceramic, Material::plastic, Material::steel,
                                             Material::wood,    Material::glass,   Material::paper,
                                             Material::fabric};
inline constexpr TempLabel kAllTempLabels[] = {TempLabel::hot, TempLabel::cold, TempLabel::room};

std::string_view to_string(Material m);
std::string_view to_string(TempLabel t);
std::string_view to_string(HardnessClass h);
Material parse_material(std::string_view s);
TempLabel parse_temp_label(std::string_view s);
std::optional<Material> try_parse_material(std::string_view s);

/// Inclusive Celsius range each temperature label is sampled from.
struct TempRange {
  double lo;
  double hi;
  bool contains(double c) const { return c >= lo && c <= hi; }
};
TempRange temp_range(TempLabel label);

/// Adjective used in language for a temperature label ("hot", "cold", "room-temperature").
std::string_view temp_adjective(TempLabel label);

/// Hardness bins: soft below 0.3, hard from 0.7.
HardnessClass hardness_class(double hardness);

struct MaterialProfile {
  Material name = Material::plastic;
  double hardness = 0.5;
  double elasticity = 0.5;
  double deformability = 0.5;
  double modal_base_freq_hz = 440.0;
  double modal_damping = 10.0;
  double density_rel = 1.0;
};

struct CategorySpec {
  std::string name;
  Vec3 half_min;
  Vec3 half_max;
  std::vector<Material> materials;
  std::vector<TempLabel> temps;
  bool portable = true;
  bool food = false;
};

/// Material table plus the object categories scenes are populated from.
struct Catalog {
  std::string version;
  std::vector<MaterialProfile> materials;
  std::vector<CategorySpec> categories;

  const MaterialProfile& material(Material m) const;
  const CategorySpec* find_category(std::string_view name) const;
  const CategorySpec& category(std::string_view name) const;
};

/// The versioned catalog compiled into the library from data/catalog.json.
const Catalog& builtin_catalog();
Catalog catalog_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Catalog& c);
/// SHA-256 of the canonical catalog JSON; stamped into dataset headers.
std::string catalog_hash(const Catalog& c);
/// Invariant violations of a catalog (empty when valid).
std::vector<std::string> check_catalog(const Catalog& c);

struct AmbientSoundTag {
  std::string ontology_id;
  std::string description;
  friend bool operator==(const AmbientSoundTag&, const AmbientSoundTag&) = default;
};

struct ObjectInstance {
  int id = 0;
  std::string category;
  Box bbox;
  Material material = Material::plastic;
  TempLabel temp_label = TempLabel::room;
  double temp_celsius = 22.0;
  std::optional<AmbientSoundTag> ambient_sound;
  std::uint64_t seed = 0;
  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

enum class TwinAttribute { material, temp_label, hardness };
std::string_view to_string(TwinAttribute a);
TwinAttribute parse_twin_attribute(std::string_view s);

/// Objects sharing category and shape that differ only in one non-visual attribute.
struct TwinGroup {
  TwinAttribute varied = TwinAttribute::material;
  std::vector<int> members;
  friend bool operator==(const TwinGroup&, const TwinGroup&) = default;
};

struct Scene {
  std::string id;
  Box room;
  std::vector<ObjectInstance> objects;
  int n_base = 0;
  int n_added = 0;
  std::vector<TwinGroup> twin_groups;

  const ObjectInstance& object(int id) const;
  ObjectInstance& object(int id);
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SceneConfig {
  Box room{{3.0, 2.5, 1.5}, {3.0, 2.5, 1.5}};
  int n_base = 8;
  int n_added = 3;
  int max_retries = 200;
  double ambient_probability = 0.5;
};
SceneConfig scene_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneConfig& c);

/// Raised when rejection sampling cannot place an object.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Deterministic scene sampling: n_base background objects, then n_added
/// inserted objects, all from the catalog and placed on the floor by
/// rejection sampling.
Scene sample_scene(const Catalog& catalog, const SceneConfig& config, std::uint64_t seed);

/// Adds k-1 copies of a template object that differ only in `varied`. The
/// template is chosen by seed among objects whose category is unique in the
/// scene and admits k distinct values of the attribute.
Scene twin_injection(const Scene& scene, const Catalog& catalog, int k, TwinAttribute varied,
                     std::uint64_t seed);

struct Violation {
  std::string rule;
  std::vector<int> object_ids;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

/// Never throws; lists every violated invariant.
ValidationReport validate_scene(const Scene& scene, const Catalog& catalog = builtin_catalog());

nlohmann::json to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);
/// Sorted-key compact JSON, stable for golden comparisons.
std::string canonical_json(const Scene& s);

nlohmann::json to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);

}  // namespace esim
