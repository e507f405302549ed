#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/classifiers.hpp"
#include "esim/environment.hpp"
#include "esim/protocol.hpp"
#include "esim/scene.hpp"

namespace esim {

enum class TaskKind { captioning, qa, dialogue, retrieval, tool_use, task_decomposition };
inline constexpr TaskKind kAllTaskKinds[] = {TaskKind::captioning, TaskKind::qa,       TaskKind::dialogue,
                                             TaskKind::retrieval,  TaskKind::tool_use, TaskKind::task_decomposition};
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

/// Versioned paraphrase bank (data/templates.json).
struct TemplateBank {
  std::string version;
  std::map<TaskKind, std::vector<std::string>> prompts;
  std::map<TaskKind, std::vector<std::string>> answers;
};
const TemplateBank& builtin_templates();
TemplateBank templates_from_json(const nlohmann::json& j);

/// Situations whose tool is identified by category plus required material or temperature.
struct ToolSituation {
  std::string id;
  std::string text;
  std::string category;
  std::vector<Material> materials;  // any of, empty = unconstrained
  std::vector<TempLabel> temps;     // any of, empty = unconstrained
};

/// One retrieval slot of a decomposition recipe.
struct RecipeSlot {
  std::string role;
  std::vector<std::string> categories;  // any of; empty with `food` = the task's food item
  std::vector<Material> materials;      // any of, empty = unconstrained
  bool food = false;
};

struct Recipe {
  std::string id;
  std::vector<RecipeSlot> slots;
};

struct ToolTable {
  std::string version;
  std::vector<ToolSituation> situations;
  std::vector<Recipe> recipes;
};
const ToolTable& builtin_tools();
ToolTable tools_from_json(const nlohmann::json& j);

bool satisfies(const ObjectInstance& o, const ToolSituation& s);
bool satisfies(const ObjectInstance& o, const RecipeSlot& slot, const ObjectInstance& food);

struct PlannedAction {
  ActionKind kind = ActionKind::select;
  int object = -1;
  friend bool operator==(const PlannedAction&, const PlannedAction&) = default;
};

struct TaskSpec {
  TaskKind kind = TaskKind::captioning;
  std::string prompt;
  std::vector<int> target_objects;
  std::vector<PlannedAction> gt_actions;
  std::string gt_answer_template;
  int template_index = 0;
  // Retrieval: the queried attributes of the target. Tool use: the situation id.
  std::vector<TwinAttribute> attributes;
  std::string situation;
  // Decomposition: every acceptable set of retrieved ids.
  std::vector<std::vector<int>> valid_combinations;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

nlohmann::json to_json(const TaskSpec& t);
TaskSpec task_from_json(const nlohmann::json& j);

/// Slot names occurring in a template, e.g. {"material", "handle"}.
std::vector<std::string> template_slots(std::string_view tmpl);
/// Sensor-grounded slots: material, hardness, temperature, attributes.
bool is_sensor_slot(std::string_view slot);

class NoTasksPossible : public Error {
 public:
  using Error::Error;
};

struct TaskGenResult {
  std::vector<TaskSpec> tasks;
  std::vector<std::string> warnings;  // kinds skipped for lack of scene structure
};

/// Rule-based task proposal: n tasks cycling over `kinds`; kinds the scene
/// cannot support are skipped with a warning.
TaskGenResult propose_tasks(const Scene& scene, const std::vector<TaskKind>& kinds, int n, std::uint64_t seed,
                            const Catalog& catalog = builtin_catalog());

/// Fills `{slot}`s from a map; unknown slots are left in place.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

struct RealizedEpisode {
  Episode episode;
  TaskSpec task;
  std::map<std::string, std::string> slot_values;
  std::map<std::string, int> slot_payloads;  // slot -> payload id it was read from
  bool valid = true;
  std::string invalid_reason;
};

/// Executes the ground-truth actions and fills the answer template from the
/// decoded observations through the frozen classifiers.
RealizedEpisode realize(const TaskSpec& task, const Scene& scene, const AdapterParams& params = aligned_params(),
                        const EnvConfig& cfg = {});

/// Re-derives one sensor slot value from a recorded payload.
std::string derive_slot(std::string_view slot, const WirePayload& payload);

struct Sample {
  TokenStream input_stream;
  TokenStream target_stream;
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// One sample per action boundary plus one for the answer.
std::vector<Sample> incremental_samples(const Episode& episode);

}  // namespace esim
