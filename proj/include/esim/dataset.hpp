#pragma once

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/environment.hpp"
#include "esim/policies.hpp"
#include "esim/taskgen.hpp"

namespace esim {

inline constexpr int kDatasetVersion = 1;

// Process exit codes of the CLI commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitEnvironment = 2;
inline constexpr int kExitNondeterminism = 3;

nlohmann::json to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnvConfig& c);
EnvConfig env_config_from_json(const nlohmann::json& j);

struct DatasetHeader {
  int version = kDatasetVersion;
  std::string catalog_sha256;
  std::uint64_t seed = 0;
  nlohmann::json generator = nlohmann::json::object();
  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

/// One generated episode with everything needed to audit and replay it.
struct DatasetRecord {
  Scene scene;
  TaskSpec task;
  Episode episode;
  std::map<std::string, std::string> slot_values;
  std::map<std::string, int> slot_payloads;
  bool valid = true;
  std::string invalid_reason;
  // Incremental samples as (input end, target end) offsets into the stream.
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

DatasetRecord make_record(const RealizedEpisode& r, const Scene& scene);
std::vector<Sample> record_samples(const DatasetRecord& r);

std::string header_line(const DatasetHeader& h);
std::string record_line(const DatasetRecord& r);
DatasetHeader parse_header(std::string_view line, const Catalog& catalog = builtin_catalog());
DatasetRecord parse_record(std::string_view line);

/// Streams records one line at a time; the header is checked on open.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path, const Catalog& catalog = builtin_catalog());
  const DatasetHeader& header() const { return header_; }
  std::optional<DatasetRecord> next();

 private:
  std::ifstream in_;
  DatasetHeader header_;
  std::size_t line_no_ = 1;
};

void write_dataset(const std::string& path, const DatasetHeader& h, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::string& path, DatasetHeader* header = nullptr);

/// Everything a command needs; seeds are always explicit.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  int scenes = 100;
  int tasks_per_scene = 10;
  std::vector<TaskKind> task_kinds{std::begin(kAllTaskKinds), std::end(kAllTaskKinds)};
  int twin_k = 3;  // twins injected per generated scene, 0 = none
  SceneConfig scene;
  EnvConfig env;
  int threads = 0;  // 0 = hardware concurrency
  std::string output = "dataset.ndjson";
  // eval
  int eval_episodes = 500;
  int eval_k = 4;
  std::vector<std::string> benchmarks{"twins", "ablation", "tool_use", "captioning", "task_decomposition"};
  std::vector<std::string> policies{"no_interaction", "oracle_interaction", "interactive_trained"};
  std::vector<std::string> ablation_masks{"visual",       "visual+audio",         "visual+tactile",
                                          "visual+temperature", "visual+audio+tactile", "all"};
  std::string report = "report.json";
  // serve
  std::string bind = "127.0.0.1:7341";
  std::string episode_log;  // NDJSON of served episodes, empty = none
  int max_steps = 64;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::string& path);

/// Raised for invalid configurations and usage errors (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct GenSummary {
  int scenes = 0;
  int skipped_scenes = 0;
  int episodes = 0;
  int invalid = 0;
  std::size_t samples = 0;
  std::vector<std::string> warnings;
  std::string line() const;
};

/// Scenes -> tasks -> episodes -> dataset file.
GenSummary cmd_gen(const RunConfig& cfg);
/// Episodes generated for scene `index` of a run (the unit of parallel work).
std::vector<DatasetRecord> generate_scene(const RunConfig& cfg, int index, std::vector<std::string>* warnings = nullptr);

struct ValidateSummary {
  int episodes = 0;
  int stream_failures = 0;
  int ref_failures = 0;
  int slot_failures = 0;
  int sample_failures = 0;
  int slots_checked = 0;
  std::vector<std::string> problems;
  bool ok() const { return stream_failures + ref_failures + slot_failures + sample_failures == 0; }
  std::string line() const;
};

/// Protocol validation, payload reference resolution, sensor slot
/// re-derivation and sample counts over a dataset file.
ValidateSummary cmd_validate(const std::string& path);

struct ReplayResult {
  std::string transcript;
  std::vector<std::string> diff;
};

/// Re-executes a recorded episode. Unknown ids raise ConfigError.
ReplayResult cmd_replay(const std::string& path, const std::string& episode_id);

/// Runs the configured benchmarks and policies; writes the JSON report.
std::vector<EvalReport> cmd_eval(const RunConfig& cfg);

}  // namespace esim
