// esim command-line entry point: gen, serve, eval, replay, validate, calibrate.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "esim/classifiers.hpp"
#include "esim/dataset.hpp"
#include "esim/server.hpp"

namespace {

esim::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::vector<esim::TaskKind> kinds_from(const std::vector<std::string>& names) {
  std::vector<esim::TaskKind> out;
  for (const auto& n : names) out.push_back(esim::parse_task_kind(n));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multisensory embodied environment simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("--config", config_path, "JSON config file; flags override its keys")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen", "Generate a dataset");
  std::optional<int> scenes, tasks_per_scene, twin_k;
  std::optional<std::string> output;
  std::vector<std::string> kinds;
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--scenes", scenes);
  gen->add_option("--tasks-per-scene", tasks_per_scene);
  gen->add_option("--twin-k", twin_k, "Twins injected per scene (0 = none)");
  gen->add_option("--kinds", kinds, "Task kinds");
  gen->add_option("--threads", threads);
  gen->add_option("-o,--output", output);

  auto* eval = app.add_subcommand("eval", "Run benchmarks and write a report");
  std::optional<int> episodes, k;
  std::optional<std::string> report;
  std::vector<std::string> benchmarks, policies;
  eval->add_option("--seed", seed, "Benchmark seed");
  eval->add_option("--episodes", episodes);
  eval->add_option("--k", k, "Twins per episode of the twin benchmark");
  eval->add_option("--benchmarks", benchmarks);
  eval->add_option("--policies", policies);
  eval->add_option("--threads", threads);
  eval->add_option("--report", report);

  auto* serve = app.add_subcommand("serve", "Serve sessions over TCP or stdio");
  std::optional<std::string> bind, episode_log;
  std::optional<int> max_steps;
  bool stdio = false;
  serve->add_option("--bind", bind, std::string("host:port (default from ") + esim::kBindEnvVar + " or config)");
  serve->add_option("--episode-log", episode_log);
  serve->add_option("--max-steps", max_steps);
  serve->add_flag("--stdio", stdio, "Read messages from stdin, reply on stdout");

  auto* replay = app.add_subcommand("replay", "Re-execute a recorded episode and print its transcript");
  std::string dataset, episode_id;
  replay->add_option("dataset", dataset)->required()->check(CLI::ExistingFile);
  replay->add_option("episode", episode_id)->required();
  bool quiet = false;
  replay->add_flag("-q,--quiet", quiet, "Print only the diff");

  auto* validate = app.add_subcommand("validate", "Audit a dataset file");
  validate->add_option("dataset", dataset)->required()->check(CLI::ExistingFile);

  auto* calibrate = app.add_subcommand("calibrate", "Recompute classifier constants");
  std::string cal_out;
  int cal_seeds = 20;
  calibrate->add_option("-o,--output", cal_out, "Write here instead of stdout");
  calibrate->add_option("--seeds", cal_seeds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? esim::kExitOk : esim::kExitConfig;
  }

  try {
    esim::RunConfig cfg = config_path.empty() ? esim::RunConfig{} : esim::load_run_config(config_path);
    if (seed) cfg.seed = seed;
    if (threads) cfg.threads = *threads;
    if (scenes) cfg.scenes = *scenes;
    if (tasks_per_scene) cfg.tasks_per_scene = *tasks_per_scene;
    if (twin_k) cfg.twin_k = *twin_k;
    if (!kinds.empty()) cfg.task_kinds = kinds_from(kinds);
    if (output) cfg.output = *output;
    if (episodes) cfg.eval_episodes = *episodes;
    if (k) cfg.eval_k = *k;
    if (!benchmarks.empty()) cfg.benchmarks = benchmarks;
    if (!policies.empty()) cfg.policies = policies;
    if (report) cfg.report = *report;
    if (episode_log) cfg.episode_log = *episode_log;
    if (max_steps) cfg.max_steps = *max_steps;
    // Re-validate after overrides.
    cfg = esim::run_config_from_json(esim::to_json(cfg));

    if (*gen) {
      const auto sum = esim::cmd_gen(cfg);
      for (const auto& w : sum.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << sum.line() << '\n';
      return esim::kExitOk;
    }
    if (*eval) {
      const auto reports = esim::cmd_eval(cfg);
      std::cout << esim::report_table(reports) << "report written to " << cfg.report << '\n';
      return esim::kExitOk;
    }
    if (*serve) {
      esim::ServerOptions opts;
      std::string where = cfg.bind;
      if (const char* env = std::getenv(esim::kBindEnvVar); env && *env) where = env;
      if (bind) where = *bind;
      opts.bind = esim::parse_bind(where);
      opts.episode_log = cfg.episode_log;
      opts.max_steps = cfg.max_steps;
      opts.scene = cfg.scene;
      opts.env = cfg.env;
      if (stdio) {
        esim::serve_stream(std::cin, std::cout, opts);
        return esim::kExitOk;
      }
      esim::Server server(opts);
      g_server = &server;
      struct sigaction sa {};
      sa.sa_handler = on_signal;
      sigemptyset(&sa.sa_mask);
      sigaction(SIGINT, &sa, nullptr);
      sigaction(SIGTERM, &sa, nullptr);
      std::cerr << "listening on " << opts.bind.host << ':' << server.port() << std::endl;
      server.run();
      g_server = nullptr;
      std::cerr << "shut down after " << server.episodes_started() << " episodes" << std::endl;
      return esim::kExitOk;
    }
    if (*replay) {
      const auto r = esim::cmd_replay(dataset, episode_id);
      if (!quiet) std::cout << r.transcript;
      if (!r.diff.empty()) {
        std::cerr << "nondeterminism: " << r.diff.size() << " differences\n";
        for (const auto& d : r.diff) std::cerr << "  " << d << '\n';
        return esim::kExitNondeterminism;
      }
      std::cerr << "replay identical\n";
      return esim::kExitOk;
    }
    if (*validate) {
      const auto sum = esim::cmd_validate(dataset);
      for (const auto& p : sum.problems) std::cerr << p << '\n';
      std::cout << sum.line() << '\n';
      return sum.ok() ? esim::kExitOk : esim::kExitConfig;
    }
    if (*calibrate) {
      const auto cal = esim::calibrate(esim::builtin_catalog(), cfg.env.sensors, cal_seeds);
      const auto text = esim::to_json(cal).dump(2) + "\n";
      if (cal_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(cal_out, std::ios::binary | std::ios::trunc);
        if (!(out << text)) throw esim::ConfigError("cannot write " + cal_out);
      }
      return esim::kExitOk;
    }
  } catch (const esim::BindError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return esim::kExitEnvironment;
  } catch (const esim::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return esim::kExitConfig;
  } catch (const esim::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return esim::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return esim::kExitEnvironment;
  }
  return esim::kExitOk;
}
