#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/classifiers.hpp"
#include "esim/environment.hpp"
#include "esim/taskgen.hpp"

namespace esim {

// --- modality masks --------------------------------------------------------

enum class Sense { visual, audio, tactile, temperature };

struct SenseSet {
  unsigned bits = 0;

  static SenseSet all() { return {0xF}; }
  static SenseSet only(Sense s) { return {1u << static_cast<unsigned>(s)}; }
  bool has(Sense s) const { return (bits >> static_cast<unsigned>(s)) & 1u; }
  bool empty() const { return bits == 0; }
  SenseSet with(Sense s) const { return {bits | (1u << static_cast<unsigned>(s))}; }
  bool subset_of(SenseSet o) const { return (bits & ~o.bits) == 0; }
  /// "visual+audio", "none" for the empty set.
  std::string str() const;
  friend bool operator==(SenseSet, SenseSet) = default;
};
SenseSet parse_sense_set(std::string_view s);

enum class PolicyType { no_interaction, oracle_interaction, interactive_trained };

struct PolicyKind {
  PolicyType type = PolicyType::no_interaction;
  SenseSet senses = SenseSet::all();
  std::string name() const;  // e.g. "oracle_interaction[visual+audio]"
};
PolicyKind parse_policy_kind(std::string_view s);

// --- SELECT training --------------------------------------------------------

/// Seeds of the scenes the default SELECT head is trained on.
std::vector<std::uint64_t> training_scene_seeds();
bool is_training_scene(const std::string& scene_id);

/// Referent-style SELECT examples ("<attribute words> <category>") over the
/// training scenes, one per object whose category is unique in its scene.
std::vector<SelectExample> select_training_set(const std::vector<std::uint64_t>& scene_seeds,
                                               const Catalog& catalog = builtin_catalog());

/// Aligned adapters plus a SELECT head trained on the training scenes.
const AdapterParams& default_params();

// --- requirements parsed from language ----------------------------------------

/// What a policy is asked to find: a category plus optional attribute constraints.
struct Requirement {
  std::optional<std::string> category;
  std::vector<std::string> categories;  // any of, used when `category` is unset
  std::vector<Material> materials;
  std::vector<HardnessClass> hardness;
  std::vector<TempLabel> temps;
  bool food = false;  // decomposition food slot: the food named in the prompt
  std::string referent() const;
};

/// Category and attribute words of a retrieval or captioning prompt.
Requirement parse_requirement(std::string_view prompt, const Catalog& catalog = builtin_catalog());
/// Requirement implied by a tool-use prompt through the situation table.
Requirement tool_requirement(std::string_view prompt, const ToolTable& tools = builtin_tools());

// --- policies --------------------------------------------------------------------

struct PolicyResult {
  Episode episode;
  std::vector<int> answer_objects;  // handles named in the answer, in order
  std::string answer;
};

/// argmax cosine(text(query), object rows), lowest id on ties.
int policy_no_interaction(std::string_view query, const SceneFeatureMatrix& features);

/// No actions: answer from the scene framing alone.
PolicyResult run_no_interaction(const TaskSpec& task, const Scene& scene, const AdapterParams& params = default_params(),
                                const EnvConfig& cfg = {});

/// Scripted probing of the top candidates (NAVIGATE, TOUCH and/or HIT as the
/// mask permits); adapted sensor embeddings are averaged with the visual row
/// and ranked by cosine against the query.
PolicyResult policy_oracle_interaction(const TaskSpec& task, const Scene& scene, SenseSet senses,
                                       const AdapterParams& params = default_params(), const EnvConfig& cfg = {});

/// SELECT-ranked candidates are probed with the modality each unresolved
/// attribute needs until one satisfies every available classifier.
PolicyResult policy_interactive_trained(const TaskSpec& task, const Scene& scene, const AdapterParams& params,
                                        SenseSet senses = SenseSet::all(),
                                        const Calibration& cal = builtin_calibration(), const EnvConfig& cfg = {});

PolicyResult run_policy(const PolicyKind& kind, const TaskSpec& task, const Scene& scene,
                        const AdapterParams& params = default_params(), const EnvConfig& cfg = {});

/// Object handles named in an answer, in order of appearance.
std::vector<int> answer_handles(std::string_view answer);

/// Plays fixed token batches, then a fixed answer.
class ScriptedPolicy : public PolicyConnection {
 public:
  ScriptedPolicy(std::vector<Turn> turns, TokenStream answer);
  /// Ground-truth actions of a task, one action per turn, answering with `answer`.
  static ScriptedPolicy from_task(const TaskSpec& task, const Scene& scene, std::string answer);
  Turn next(const Session::Delta& delta) override;

 private:
  std::vector<Turn> turns_;
  TokenStream answer_;
  std::size_t pos_ = 0;
};

// --- metrics ----------------------------------------------------------------------

inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU with uniform weights over 1..max_n, clipped counts against
/// all references, closest-length brevity penalty, zero matches floored at eps.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references,
            int max_n);
/// Exact-unigram METEOR variant, best over references.
double meteor_lite(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references);

// --- benchmarks and evaluation ---------------------------------------------------------

struct BenchmarkItem {
  Scene scene;
  TaskSpec task;
};

struct Benchmark {
  std::string name;
  TaskKind kind = TaskKind::retrieval;
  std::uint64_t seed = 0;
  std::vector<BenchmarkItem> items;
};

/// Retrieval among k visual twins; the varied attribute cycles through `attrs`.
Benchmark twin_benchmark(int k, const std::vector<TwinAttribute>& attrs, int episodes, std::uint64_t seed,
                         const SceneConfig& scene_cfg = {});
Benchmark task_benchmark(TaskKind kind, int episodes, std::uint64_t seed, const SceneConfig& scene_cfg = {});

/// Success iff the retrieved set equals one valid combination.
bool decomposition_success(const TaskSpec& task, std::vector<int> retrieved);

/// Caption references: every paraphrase of the kind filled with ground truth.
std::vector<std::string> caption_references(const TaskSpec& task, const Scene& scene,
                                            const Catalog& catalog = builtin_catalog());

struct EpisodeRecord {
  int index = 0;
  std::string scene_id;
  std::vector<int> target;
  std::vector<int> predicted;
  double outcome = 0.0;  // 1 correct / success, else 0
  int actions = 0;       // all action tokens
  int interactions = 0;  // actions other than SELECT
  int nav_steps = 0;
  std::string status;
  std::string answer;
  std::optional<double> bleu1, bleu4, meteor;
};

struct EvalReport {
  std::string benchmark;
  TaskKind kind = TaskKind::retrieval;
  std::string policy;
  std::uint64_t seed = 0;
  double score = 0.0;  // accuracy or success rate
  std::vector<EpisodeRecord> records;
  std::optional<double> bleu1, bleu4, meteor;
  double mean_actions = 0.0;
  double mean_interactions = 0.0;
  int max_interactions = 0;
};

/// Runs every item; `threads` workers (0 = hardware concurrency).
EvalReport evaluate(const Benchmark& bench, const PolicyKind& policy, const AdapterParams& params = default_params(),
                    int threads = 1, const EnvConfig& cfg = {});
/// Recomputes the aggregates from the records.
EvalReport reaggregate(EvalReport r);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// Plain-text table, one row per report.
std::string report_table(const std::vector<EvalReport>& reports);

// --- compositional generalization --------------------------------------------------

struct CompositionResult {
  double accuracy = 0.0;           // held-out pair
  double seen_accuracy = 0.0;      // training pairs on fresh scenes
  double untrained_accuracy = 0.0; // zero SELECT head, held-out pair
  int episodes = 0;
};

/// Object features for composition: normalize(visual row + adapted impact embedding).
FeatureVector composed_feature(const Scene& scene, int object_id, const AdapterParams& params = aligned_params(),
                               const Catalog& catalog = builtin_catalog());

/// Trains SELECT on material x category queries excluding (held_material,
/// held_category) and measures selection of the held-out pair among
/// distractors sharing one of its attributes.
CompositionResult compositional_generalization(Material held_material, const std::string& held_category,
                                               int train_scenes, int eval_episodes, std::uint64_t seed);

}  // namespace esim
