#include "esim/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace esim {

namespace {

std::string dump(const nlohmann::json& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); }

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

int worker_count(int requested, int jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min(n, jobs));
}

}  // namespace

// --- episode JSON ------------------------------------------------------------------

nlohmann::json to_json(const Episode& e) {
  nlohmann::json payloads = nlohmann::json::array();
  for (const auto& p : e.payloads) payloads.push_back(to_json(p));
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : e.actions) actions.push_back({std::string(name(a.kind)), a.object, a.site});
  return {{"id", e.id},
          {"scene_id", e.scene_id},
          {"prompt", e.prompt},
          {"stream", serialize(e.stream)},
          {"payloads", payloads},
          {"actions", actions},
          {"action_offsets", e.action_offsets},
          {"framing_end", e.framing_end},
          {"answer_offset", e.answer_offset},
          {"answer", e.answer},
          {"answer_object", e.answer_object ? nlohmann::json(*e.answer_object) : nlohmann::json(nullptr)},
          {"status", std::string(to_string(e.status))},
          {"error", e.error},
          {"nav_steps", e.nav_steps}};
}

Episode episode_from_json(const nlohmann::json& j) {
  Episode e;
  try {
    e.id = j.at("id").get<std::string>();
    e.scene_id = j.at("scene_id").get<std::string>();
    e.prompt = j.at("prompt").get<std::string>();
    e.stream = parse(j.at("stream").get<std::string>());
    for (const auto& p : j.at("payloads")) e.payloads.push_back(payload_from_json(p));
    for (const auto& a : j.at("actions")) {
      const auto kind = action_from_name(a.at(0).get<std::string>());
      if (!kind) throw InvalidArgument("unknown action in episode");
      e.actions.push_back({*kind, a.at(1).get<int>(), a.at(2).get<int>()});
    }
    e.action_offsets = j.at("action_offsets").get<std::vector<std::size_t>>();
    e.framing_end = j.at("framing_end").get<std::size_t>();
    e.answer_offset = j.at("answer_offset").get<std::size_t>();
    e.answer = j.at("answer").get<std::string>();
    if (!j.at("answer_object").is_null()) e.answer_object = j.at("answer_object").get<int>();
    e.status = parse_episode_status(j.at("status").get<std::string>());
    e.error = j.at("error").get<std::string>();
    e.nav_steps = j.at("nav_steps").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidArgument(std::string("malformed episode: ") + ex.what());
  }
  return e;
}

nlohmann::json to_json(const EnvConfig& c) {
  const auto& s = c.sensors;
  return {{"step_length", c.step_length},
          {"reach", c.reach},
          {"look_radius", c.look_radius},
          {"standoff", c.standoff},
          {"sensors",
           {{"marker_grid", s.marker_grid},
            {"k0", s.k0},
            {"d_max", s.d_max},
            {"falloff_sigma", s.falloff_sigma},
            {"heatmap_width", s.heatmap_width},
            {"heatmap_height", s.heatmap_height},
            {"sample_rate", s.sample_rate},
            {"duration", s.duration},
            {"force_ref", s.force_ref},
            {"point_count", s.point_count},
            {"touch_force", s.touch_force},
            {"hit_force", s.hit_force}}}};
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
  EnvConfig c;
  try {
    c.step_length = get_or(j, "step_length", c.step_length);
    c.reach = get_or(j, "reach", c.reach);
    c.look_radius = get_or(j, "look_radius", c.look_radius);
    c.standoff = get_or(j, "standoff", c.standoff);
    if (j.contains("sensors")) {
      const auto& s = j.at("sensors");
      auto& o = c.sensors;
      o.marker_grid = get_or(s, "marker_grid", o.marker_grid);
      o.k0 = get_or(s, "k0", o.k0);
      o.d_max = get_or(s, "d_max", o.d_max);
      o.falloff_sigma = get_or(s, "falloff_sigma", o.falloff_sigma);
      o.heatmap_width = get_or(s, "heatmap_width", o.heatmap_width);
      o.heatmap_height = get_or(s, "heatmap_height", o.heatmap_height);
      o.sample_rate = get_or(s, "sample_rate", o.sample_rate);
      o.duration = get_or(s, "duration", o.duration);
      o.force_ref = get_or(s, "force_ref", o.force_ref);
      o.point_count = get_or(s, "point_count", o.point_count);
      o.touch_force = get_or(s, "touch_force", o.touch_force);
      o.hit_force = get_or(s, "hit_force", o.hit_force);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed environment config: ") + e.what());
  }
  if (!(c.step_length > 0) || !(c.reach > 0) || !(c.look_radius > 0) || c.standoff < 0)
    throw ConfigError("environment distances must be positive");
  if (c.sensors.marker_grid < 2 || c.sensors.sample_rate < 1000 || !(c.sensors.duration > 0))
    throw ConfigError("invalid sensor config");
  return c;
}

// --- records ------------------------------------------------------------------------

DatasetRecord make_record(const RealizedEpisode& r, const Scene& scene) {
  DatasetRecord rec;
  rec.scene = scene;
  rec.task = r.task;
  rec.episode = r.episode;
  rec.slot_values = r.slot_values;
  rec.slot_payloads = r.slot_payloads;
  rec.valid = r.valid;
  rec.invalid_reason = r.invalid_reason;
  if (r.valid) {
    for (const auto& s : incremental_samples(r.episode))
      rec.samples.emplace_back(s.input_stream.size(), s.input_stream.size() + s.target_stream.size());
  }
  return rec;
}

std::vector<Sample> record_samples(const DatasetRecord& r) {
  std::vector<Sample> out;
  const auto& s = r.episode.stream;
  for (const auto& [a, b] : r.samples) {
    if (a > b || b > s.size()) throw InvalidArgument("sample offsets out of range");
    out.push_back({s.slice(0, a), s.slice(a, b)});
  }
  return out;
}

std::string header_line(const DatasetHeader& h) {
  return dump({{"type", "header"},
               {"format", "esim-dataset"},
               {"version", h.version},
               {"catalog_sha256", h.catalog_sha256},
               {"seed", h.seed},
               {"generator", h.generator}});
}

std::string record_line(const DatasetRecord& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& [a, b] : r.samples) samples.push_back({a, b});
  return dump({{"type", "episode"},
               {"scene", to_json(r.scene)},
               {"task", to_json(r.task)},
               {"episode", to_json(r.episode)},
               {"slot_values", r.slot_values},
               {"slot_payloads", r.slot_payloads},
               {"valid", r.valid},
               {"invalid_reason", r.invalid_reason},
               {"samples", samples}});
}

DatasetHeader parse_header(std::string_view line, const Catalog& catalog) {
  DatasetHeader h;
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.value("type", "") != "header" || j.value("format", "") != "esim-dataset")
      throw InvalidArgument("not an esim dataset (missing header)");
    h.version = j.at("version").get<int>();
    h.catalog_sha256 = j.at("catalog_sha256").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.generator = j.value("generator", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed dataset header: ") + e.what());
  }
  if (h.version != kDatasetVersion) throw InvalidArgument("unsupported dataset version " + std::to_string(h.version));
  const auto expected = catalog_hash(catalog);
  if (h.catalog_sha256 != expected)
    throw InvalidArgument("dataset catalog hash " + h.catalog_sha256 + " does not match the catalog (" + expected + ")");
  return h;
}

DatasetRecord parse_record(std::string_view line) {
  DatasetRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.value("type", "") != "episode") throw InvalidArgument("record is not an episode");
    r.scene = scene_from_json(j.at("scene"));
    r.task = task_from_json(j.at("task"));
    r.episode = episode_from_json(j.at("episode"));
    r.slot_values = j.at("slot_values").get<std::map<std::string, std::string>>();
    r.slot_payloads = j.at("slot_payloads").get<std::map<std::string, int>>();
    r.valid = j.at("valid").get<bool>();
    r.invalid_reason = j.at("invalid_reason").get<std::string>();
    for (const auto& s : j.at("samples")) r.samples.emplace_back(s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed episode record: ") + e.what());
  }
  return r;
}

DatasetReader::DatasetReader(const std::string& path, const Catalog& catalog) : in_(path, std::ios::binary) {
  if (!in_) throw ConfigError("cannot open dataset " + path);
  std::string line;
  if (!std::getline(in_, line)) throw InvalidArgument("empty dataset file " + path);
  header_ = parse_header(line, catalog);
}

std::optional<DatasetRecord> DatasetReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    try {
      return parse_record(line);
    } catch (const Error& e) {
      throw InvalidArgument("line " + std::to_string(line_no_) + ": " + e.what());
    }
  }
  return std::nullopt;
}

void write_dataset(const std::string& path, const DatasetHeader& h, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << header_line(h) << '\n';
  for (const auto& r : records) out << record_line(r) << '\n';
  if (!out) throw ConfigError("write failed: " + path);
}

std::vector<DatasetRecord> read_dataset(const std::string& path, DatasetHeader* header) {
  DatasetReader reader(path);
  if (header) *header = reader.header();
  std::vector<DatasetRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

// --- config ---------------------------------------------------------------------------

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"seed",          "scenes",      "tasks_per_scene", "task_kinds", "twin_k",
                                           "scene",         "env",         "threads",         "output",     "eval_episodes",
                                           "eval_k",        "benchmarks",  "policies",        "ablation_masks",
                                           "report",        "bind",        "episode_log",     "max_steps"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.scenes = get_or(j, "scenes", c.scenes);
    c.tasks_per_scene = get_or(j, "tasks_per_scene", c.tasks_per_scene);
    if (j.contains("task_kinds")) {
      c.task_kinds.clear();
      for (const auto& k : j.at("task_kinds")) c.task_kinds.push_back(parse_task_kind(k.get<std::string>()));
    }
    c.twin_k = get_or(j, "twin_k", c.twin_k);
    if (j.contains("scene")) c.scene = scene_config_from_json(j.at("scene"));
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
    c.threads = get_or(j, "threads", c.threads);
    c.output = get_or(j, "output", c.output);
    c.eval_episodes = get_or(j, "eval_episodes", c.eval_episodes);
    c.eval_k = get_or(j, "eval_k", c.eval_k);
    c.benchmarks = get_or(j, "benchmarks", c.benchmarks);
    c.policies = get_or(j, "policies", c.policies);
    c.ablation_masks = get_or(j, "ablation_masks", c.ablation_masks);
    c.report = get_or(j, "report", c.report);
    c.bind = get_or(j, "bind", c.bind);
    c.episode_log = get_or(j, "episode_log", c.episode_log);
    c.max_steps = get_or(j, "max_steps", c.max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (c.scenes < 0 || c.tasks_per_scene < 1) throw ConfigError("scenes must be >= 0 and tasks_per_scene >= 1");
  if (c.twin_k != 0 && (c.twin_k < 2 || c.twin_k > 3)) throw ConfigError("twin_k must be 0, 2 or 3");
  if (c.eval_episodes < 1 || c.eval_k < 2) throw ConfigError("eval_episodes must be >= 1 and eval_k >= 2");
  if (c.max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (c.task_kinds.empty()) throw ConfigError("task_kinds must not be empty");
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : c.task_kinds) kinds.push_back(std::string(to_string(k)));
  nlohmann::json j = {{"scenes", c.scenes},
                      {"tasks_per_scene", c.tasks_per_scene},
                      {"task_kinds", kinds},
                      {"twin_k", c.twin_k},
                      {"scene", to_json(c.scene)},
                      {"env", to_json(c.env)},
                      {"threads", c.threads},
                      {"output", c.output},
                      {"eval_episodes", c.eval_episodes},
                      {"eval_k", c.eval_k},
                      {"benchmarks", c.benchmarks},
                      {"policies", c.policies},
                      {"ablation_masks", c.ablation_masks},
                      {"report", c.report},
                      {"bind", c.bind},
                      {"episode_log", c.episode_log},
                      {"max_steps", c.max_steps}};
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

// --- gen ---------------------------------------------------------------------------------

std::string GenSummary::line() const {
  std::ostringstream os;
  os << "generated " << episodes << " episodes (" << invalid << " invalid) from " << scenes << " scenes ("
     << skipped_scenes << " skipped), " << samples << " incremental samples";
  return os.str();
}

std::vector<DatasetRecord> generate_scene(const RunConfig& cfg, int index, std::vector<std::string>* warnings) {
  if (!cfg.seed) throw ConfigError("a seed is required");
  const auto& catalog = builtin_catalog();
  const std::uint64_t s = split_seed(*cfg.seed, static_cast<std::uint64_t>(index));
  Scene scene = sample_scene(catalog, cfg.scene, s);
  if (cfg.twin_k >= 2) {
    constexpr TwinAttribute attrs[] = {TwinAttribute::material, TwinAttribute::temp_label, TwinAttribute::hardness};
    const auto attr = attrs[static_cast<std::size_t>(index) % 3];
    try {
      scene = twin_injection(scene, catalog, cfg.twin_k, attr, mix(s, 0x7717));
    } catch (const Error& e) {
      if (warnings) warnings->push_back("scene " + scene.id + ": no twins (" + e.what() + ")");
    }
  }
  TaskGenResult tasks;
  try {
    tasks = propose_tasks(scene, cfg.task_kinds, cfg.tasks_per_scene, mix(s, 0x7A5), catalog);
  } catch (const NoTasksPossible& e) {
    if (warnings) warnings->push_back(e.what());
    return {};
  }
  if (warnings)
    for (const auto& w : tasks.warnings) warnings->push_back(w);
  std::vector<DatasetRecord> out;
  for (std::size_t t = 0; t < tasks.tasks.size(); ++t) {
    auto r = realize(tasks.tasks[t], scene, aligned_params(), cfg.env);
    r.episode.id = scene.id + "-t" + std::to_string(t);
    out.push_back(make_record(r, scene));
  }
  return out;
}

GenSummary cmd_gen(const RunConfig& cfg) {
  if (!cfg.seed) throw ConfigError("a seed is required (config key \"seed\" or --seed)");
  if (cfg.scenes == 0) throw ConfigError("empty generation: 0 scenes requested");
  const auto parent = std::filesystem::path(cfg.output).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) throw ConfigError("output directory does not exist: " + parent.string());
  std::ofstream out(cfg.output, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + cfg.output);

  DatasetHeader h;
  h.catalog_sha256 = catalog_hash(builtin_catalog());
  h.seed = *cfg.seed;
  h.generator = {{"scenes", cfg.scenes}, {"tasks_per_scene", cfg.tasks_per_scene}, {"twin_k", cfg.twin_k},
                 {"scene", to_json(cfg.scene)}, {"env", to_json(cfg.env)}, {"params", "aligned"}};
  out << header_line(h) << '\n';
  (void)aligned_params();
  (void)builtin_calibration();

  // Workers fill per-scene slots; the writer emits them in scene order.
  const int n = cfg.scenes;
  struct Slot {
    bool done = false;
    std::vector<DatasetRecord> records;
    std::vector<std::string> warnings;
    std::string error;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      Slot local;
      try {
        local.records = generate_scene(cfg, i, &local.warnings);
      } catch (const std::exception& e) {
        local.error = e.what();
      }
      local.done = true;
      {
        std::lock_guard<std::mutex> lock(mu);
        slots[static_cast<std::size_t>(i)] = std::move(local);
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const int workers = worker_count(cfg.threads, n);
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);

  GenSummary sum;
  std::string failure;
  for (int i = 0; i < n; ++i) {
    Slot slot;
    {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return slots[static_cast<std::size_t>(i)].done; });
      slot = std::move(slots[static_cast<std::size_t>(i)]);
    }
    if (!slot.error.empty()) {
      if (failure.empty()) failure = "scene " + std::to_string(i) + ": " + slot.error;
      continue;
    }
    ++sum.scenes;
    if (slot.records.empty()) ++sum.skipped_scenes;
    for (auto& w : slot.warnings) sum.warnings.push_back(std::move(w));
    for (const auto& r : slot.records) {
      out << record_line(r) << '\n';
      ++sum.episodes;
      if (!r.valid) ++sum.invalid;
      sum.samples += r.samples.size();
    }
  }
  for (auto& t : pool) t.join();
  out.flush();
  if (!out) throw ConfigError("write failed: " + cfg.output);
  if (!failure.empty()) throw Error("generation failed at " + failure);
  if (sum.episodes == 0) throw ConfigError("empty generation: no episodes produced");
  return sum;
}

// --- validate -----------------------------------------------------------------------------

std::string ValidateSummary::line() const {
  std::ostringstream os;
  os << "validated " << episodes << " episodes: " << stream_failures << " protocol failures, " << ref_failures
     << " unresolved payload refs, " << slot_failures << " of " << slots_checked << " sensor slots not re-derivable, "
     << sample_failures << " sample count mismatches";
  return os.str();
}

ValidateSummary cmd_validate(const std::string& path) {
  DatasetReader reader(path);
  ValidateSummary sum;
  while (auto rec = reader.next()) {
    ++sum.episodes;
    const auto& e = rec->episode;
    auto problem = [&](const std::string& what) {
      if (sum.problems.size() < 50) sum.problems.push_back(e.id + ": " + what);
    };
    const auto check = validate_stream(e.stream, e.status == EpisodeStatus::ok);
    if (!check.ok) {
      ++sum.stream_failures;
      problem("protocol: " + check.rule + " at token " + std::to_string(check.index));
    }
    bool refs_ok = true;
    for (const auto& t : e.stream.tokens)
      if (t.type == Token::Type::payload_ref && (t.payload < 0 || t.payload >= static_cast<int>(e.payloads.size())))
        refs_ok = false;
    if (!refs_ok) {
      ++sum.ref_failures;
      problem("payload reference outside the payload table");
    }
    for (const auto& [slot, pid] : rec->slot_payloads) {
      ++sum.slots_checked;
      const auto it = rec->slot_values.find(slot);
      std::string derived;
      try {
        if (pid < 0 || pid >= static_cast<int>(e.payloads.size())) throw InvalidArgument("payload id out of range");
        derived = derive_slot(slot, e.payloads[static_cast<std::size_t>(pid)]);
      } catch (const Error& ex) {
        derived = std::string("<") + ex.what() + ">";
      }
      if (it == rec->slot_values.end() || it->second != derived) {
        ++sum.slot_failures;
        problem("slot {" + slot + "} recorded '" + (it == rec->slot_values.end() ? "" : it->second) + "', derived '" +
                derived + "'");
      }
    }
    if (rec->valid && rec->samples.size() != e.actions.size() + 1) {
      ++sum.sample_failures;
      problem("has " + std::to_string(rec->samples.size()) + " samples for " + std::to_string(e.actions.size()) +
              " actions");
    }
  }
  return sum;
}

// --- replay ----------------------------------------------------------------------------------

ReplayResult cmd_replay(const std::string& path, const std::string& episode_id) {
  DatasetReader reader(path);
  while (auto rec = reader.next()) {
    if (rec->episode.id != episode_id) continue;
    ReplayResult r;
    r.transcript = transcript(rec->episode);
    const auto& gen = reader.header().generator;
    const EnvConfig env = gen.contains("env") ? env_config_from_json(gen.at("env")) : EnvConfig{};
    const auto& params = gen.value("params", std::string("aligned")) == "default" ? default_params() : aligned_params();
    r.diff = replay_episode(rec->scene, rec->episode, params, env);
    return r;
  }
  throw ConfigError("unknown episode id: " + episode_id);
}

// --- eval ----------------------------------------------------------------------------------------

std::vector<EvalReport> cmd_eval(const RunConfig& cfg) {
  if (!cfg.seed) throw ConfigError("a seed is required (config key \"seed\" or --seed)");
  std::vector<PolicyKind> policies;
  for (const auto& p : cfg.policies) {
    try {
      policies.push_back(parse_policy_kind(p));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  const auto& params = default_params();
  std::vector<EvalReport> reports;
  std::uint64_t stream = 0;
  for (const auto& name : cfg.benchmarks) {
    const std::uint64_t seed = split_seed(*cfg.seed, stream++);
    if (name == "twins") {
      const auto b = twin_benchmark(cfg.eval_k, {TwinAttribute::material}, cfg.eval_episodes, seed, cfg.scene);
      for (const auto& p : policies) reports.push_back(evaluate(b, p, params, cfg.threads, cfg.env));
    } else if (name == "ablation") {
      auto b = twin_benchmark(3, {TwinAttribute::material, TwinAttribute::temp_label, TwinAttribute::hardness},
                              cfg.eval_episodes, seed, cfg.scene);
      b.name = "ablation_k3";
      for (const auto& m : cfg.ablation_masks) {
        SenseSet mask;
        try {
          mask = parse_sense_set(m);
        } catch (const InvalidArgument& e) {
          throw ConfigError(e.what());
        }
        for (auto type : {PolicyType::oracle_interaction, PolicyType::interactive_trained})
          reports.push_back(evaluate(b, {type, mask}, params, cfg.threads, cfg.env));
      }
    } else {
      TaskKind kind;
      try {
        kind = parse_task_kind(name);
      } catch (const InvalidArgument&) {
        throw ConfigError("unknown benchmark: " + name);
      }
      const auto b = task_benchmark(kind, cfg.eval_episodes, seed, cfg.scene);
      for (const auto& p : policies) {
        if (kind == TaskKind::task_decomposition && p.type == PolicyType::oracle_interaction) continue;
        reports.push_back(evaluate(b, p, params, cfg.threads, cfg.env));
      }
    }
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  std::ofstream out(cfg.report, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write report " + cfg.report);
  out << j.dump(1) << '\n';
  return reports;
}

}  // namespace esim
