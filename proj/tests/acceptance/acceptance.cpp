// Runs the ten acceptance checks and prints one PASS/FAIL line per check.
// Exit status is the number of failed checks. `acceptance 3 7` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "esim/classifiers.hpp"
#include "esim/dataset.hpp"
#include "esim/server.hpp"
#include "support/client.hpp"
#include "support/streams.hpp"

namespace esim {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// --- 1 ---------------------------------------------------------------------------------

Outcome protocol_round_trip() {
  Rng rng(1);
  int round_trip_failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto s = testing::random_valid_stream(rng);
    const auto text = serialize(s);
    if (!(parse(text) == s) || serialize(parse(text)) != text) ++round_trip_failures;
  }
  std::vector<ActionKind> seq;
  std::size_t checked = 0, disagreements = 0, accepted = 0;
  std::function<void()> rec = [&] {
    for (bool obs : {true, false}) {
      const auto s = testing::stream_for_actions(seq, obs);
      const auto a = testing::automaton_route(s);
      const auto v = testing::validator_route(s);
      disagreements += !(a == v);
      accepted += a.ok;
      ++checked;
    }
    if (seq.size() == 6) return;
    for (auto act : kAllActions) {
      seq.push_back(act);
      rec();
      seq.pop_back();
    }
  };
  rec();
  return {round_trip_failures == 0 && disagreements == 0 && accepted > 0,
          "round-trip failures " + std::to_string(round_trip_failures) + "/10000, automaton vs validator " +
              std::to_string(disagreements) + " disagreements over " + std::to_string(checked) + " sequences"};
}

// --- 2 ---------------------------------------------------------------------------------

Outcome gradient_check() {
  using MatD = Eigen::MatrixXd;
  using VecD = Eigen::VectorXd;
  // Loss written out directly, independent of the analytic routine.
  auto loss_of = [](const MatD& w, const VecD& q, const MatD& objects, int target) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
    double loss = 0;
    for (int i = 0; i < objects.rows(); ++i) {
      const double z = scale * q.dot(w * objects.row(i).transpose());
      const double s = 1.0 / (1.0 + std::exp(-z));
      loss -= i == target ? std::log(s) : std::log(1.0 - s);
    }
    return loss / static_cast<double>(objects.rows());
  };
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b))); };
  Rng rng(2);
  const double h = 1e-4;
  const int d = 16;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(rng.index(8));
    const int target = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    MatD w(d, d), objects(n, d);
    VecD q(d);
    for (int i = 0; i < d; ++i) {
      q(i) = rng.normal();
      for (int j = 0; j < d; ++j) w(i, j) = 0.5 * rng.normal();
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) objects(i, j) = rng.normal();
    const auto r = bce_loss_and_grad<double>(w, q, objects, target);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        MatD wp = w, wm = w;
        wp(i, j) += h;
        wm(i, j) -= h;
        worst = std::max(worst, rel((loss_of(wp, q, objects, target) - loss_of(wm, q, objects, target)) / (2 * h),
                                    r.grad_w(i, j)));
      }
      VecD qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      worst = std::max(worst, rel((loss_of(w, qp, objects, target) - loss_of(w, qm, objects, target)) / (2 * h),
                                  r.grad_query(i)));
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3e", worst) + " over 100 instances (d=16, O<=8)"};
}

// --- 3 ---------------------------------------------------------------------------------

ObjectInstance probe_object(Material m, std::uint64_t seed) {
  ObjectInstance o;
  o.category = "cup";
  o.bbox = {{1.0, 1.0, 0.06}, {0.05, 0.05, 0.06}};
  o.material = m;
  o.seed = seed;
  return o;
}

double window_rms(const std::vector<float>& x, std::size_t a, std::size_t b) {
  return rms(std::span<const float>(x.data() + a, b - a));
}

Outcome sensor_physics() {
  const auto& catalog = builtin_catalog();
  std::vector<const MaterialProfile*> by_hardness;
  for (const auto& m : catalog.materials) by_hardness.push_back(&m);
  std::sort(by_hardness.begin(), by_hardness.end(), [](auto* a, auto* b) { return a->hardness < b->hardness; });
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto* m : by_hardness) {
    const double d = touch(probe_object(m->name, 1), catalog, 5, 1.0).mean_displacement();
    monotone &= d < prev;
    prev = d;
  }
  Rng rng(3);
  int decaying = 0, correct = 0;
  for (int i = 0; i < 500; ++i) {
    const auto m = kAllMaterials[static_cast<std::size_t>(i % 7)];
    auto clip = hit(probe_object(m, rng.next()), catalog, static_cast<int>(rng.index(10)), 1.0);
    const std::size_t tenth = clip.samples.size() / 10;
    decaying += window_rms(clip.samples, clip.samples.size() - tenth, clip.samples.size()) <
                window_rms(clip.samples, 0, tenth);
    clip.samples = samples_from_pcm16_bytes(pcm16_bytes(clip.samples));  // as recorded
    correct += classify_material(clip) == m;
  }
  return {monotone && decaying == 500 && correct == 500,
          std::string("tactile monotone ") + (monotone ? "yes" : "no") + ", RMS decay " + std::to_string(decaying) +
              "/500, material classification " + std::to_string(correct) + "/500"};
}

// --- 4 ---------------------------------------------------------------------------------

Outcome twin_ordering() {
  const int n = 500;
  const auto b = twin_benchmark(4, {TwinAttribute::material}, n, 0xACC4);
  const double none = evaluate(b, {PolicyType::no_interaction, SenseSet::all()}).score;
  const double oracle = evaluate(b, {PolicyType::oracle_interaction, SenseSet::all()}).score;
  const double inter = evaluate(b, {PolicyType::interactive_trained, SenseSet::all()}).score;
  const double half = 1.96 * std::sqrt(0.25 * 0.75 / n);
  const bool chance = std::abs(none - 0.25) <= half;
  const bool pass = chance && oracle >= 0.95 && inter >= 0.95 && oracle - none >= 0.2 && inter - none >= 0.2 &&
                    inter >= oracle;
  return {pass, "n=" + std::to_string(n) + " no_interaction " + fmt("%.3f", none) + " (CI 0.25+-" +
                    fmt("%.3f", half) + "), oracle " + fmt("%.3f", oracle) + ", interactive " + fmt("%.3f", inter)};
}

// --- 5 ---------------------------------------------------------------------------------

Outcome modality_monotonicity() {
  const int n = 300;
  const auto b = twin_benchmark(3, {TwinAttribute::material, TwinAttribute::temp_label, TwinAttribute::hardness}, n,
                                0xAB1A);
  std::vector<double> acc(16, -1);
  for (unsigned bits = 1; bits < 16; ++bits)
    acc[bits] = evaluate(b, {PolicyType::interactive_trained, SenseSet{bits}}).score;
  int chains = 0, violations = 0;
  for (unsigned s = 1; s < 16; ++s)
    for (unsigned t = 1; t < 16; ++t) {
      if (s == t || (s & ~t) != 0) continue;
      ++chains;
      violations += acc[s] > acc[t];
    }
  std::string detail = std::to_string(chains) + " chains S<S', " + std::to_string(violations) + " violations;";
  for (const char* m : {"visual", "visual+audio", "visual+audio+tactile", "all"})
    detail += std::string(" ") + m + "=" + fmt("%.3f", acc[parse_sense_set(m).bits]);
  return {violations == 0 && acc[15] > acc[1], detail};
}

// --- 6 ---------------------------------------------------------------------------------

Outcome composition() {
  const auto r = compositional_generalization(Material::paper, "cup", 400, 200, 0xC6);
  return {r.accuracy >= 0.9, "held-out paper cup " + fmt("%.3f", r.accuracy) + " over 200 episodes (seen pairs " +
                                 fmt("%.3f", r.seen_accuracy) + ", untrained head " +
                                 fmt("%.3f", r.untrained_accuracy) + ")"};
}

// --- 7 ---------------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct ScratchDir {
  fs::path path = fs::temp_directory_path() / ("esim_acceptance_" + std::to_string(::getpid()));
  ScratchDir() { fs::create_directories(path); }
  ~ScratchDir() { fs::remove_all(path); }
  std::string file(const std::string& n) const { return (path / n).string(); }
};

Outcome pipeline_audit() {
  ScratchDir dir;
  RunConfig cfg;
  cfg.seed = 2024;
  cfg.scenes = 100;
  cfg.tasks_per_scene = 10;
  cfg.threads = 4;
  cfg.output = dir.file("a.ndjson");
  const auto gen = cmd_gen(cfg);
  const auto v = cmd_validate(cfg.output);
  // Sample counts recounted here from the records.
  int sample_mismatch = 0, valid = 0;
  DatasetReader reader(cfg.output);
  while (auto r = reader.next()) {
    if (!r->valid) continue;
    ++valid;
    sample_mismatch += r->samples.size() != r->episode.actions.size() + 1 ||
                       incremental_samples(r->episode).size() != r->episode.actions.size() + 1;
  }
  cfg.threads = 1;
  cfg.output = dir.file("b.ndjson");
  cmd_gen(cfg);
  const bool identical = slurp(dir.file("a.ndjson")) == slurp(dir.file("b.ndjson"));
  const bool pass = v.ok() && v.episodes == gen.episodes && gen.invalid == 0 && gen.episodes > 0 &&
                    sample_mismatch == 0 && identical && v.slots_checked > 0;
  return {pass, std::to_string(gen.episodes) + " episodes (" + std::to_string(gen.invalid) + " invalid), stream failures " +
                    std::to_string(v.stream_failures) + ", slots re-derived " +
                    std::to_string(v.slots_checked - v.slot_failures) + "/" + std::to_string(v.slots_checked) +
                    ", sample mismatches " + std::to_string(sample_mismatch) + ", rerun byte-identical " +
                    (identical ? "yes" : "no")};
}

// --- 8 ---------------------------------------------------------------------------------

Outcome metrics() {
  auto w = [](const char* s) { return split_whitespace(s); };
  const double eps = kBleuEpsilon;
  struct Case {
    double got, want;
  };
  const std::vector<std::vector<std::string>> r1{w("the cat is on the mat")};
  const std::vector<std::vector<std::string>> r2{w("the cup is hot steel"), w("a steel cup that is hot")};
  const std::vector<std::vector<std::string>> r3{w("obj3 is glass"), w("it is made of glass")};
  const auto c1 = w("the cat sat on the mat");
  const auto c2 = w("a hot steel cup");
  const auto c3 = w("obj3 is made of glass and feels cold");
  const double bp2 = std::exp(1.0 - 5.0 / 4.0);
  const std::vector<Case> cases{
      {bleu(c1, r1, 1), 5.0 / 6.0},
      {bleu(c1, r1, 4), std::pow(5.0 / 6.0 * 3.0 / 5.0 * 1.0 / 4.0 * eps / 3.0, 0.25)},
      {meteor_lite(c1, r1), 121.0 / 150.0},
      {bleu(c2, r2, 1), bp2},
      {bleu(c2, r2, 4), bp2 * std::pow(2.0 / 3.0 * (eps / 2.0) * eps, 0.25)},
      {meteor_lite(c2, r2), 505.0 / 928.0},
      {bleu(c3, r3, 1), 5.0 / 8.0},
      {bleu(c3, r3, 4), std::pow(5.0 / 8.0 * 4.0 / 7.0 * 2.0 / 6.0 * 1.0 / 5.0, 0.25)},
      {meteor_lite(c3, r3), 635.0 / 848.0},
  };
  double worst = 0;
  for (const auto& c : cases) worst = std::max(worst, std::abs(c.got - c.want));
  double worst_max = 0;
  for (const auto* s : {"the hot steel cup", "obj4 is made of glass", "a b c d e f g"}) {
    const auto t = w(s);
    const double m = static_cast<double>(t.size());
    worst_max = std::max(worst_max, std::abs(bleu(t, {t}, 4) - 1.0));
    worst_max = std::max(worst_max, std::abs(bleu(t, {t}, 1) - 1.0));
    worst_max = std::max(worst_max, std::abs(meteor_lite(t, {t}) - (1.0 - 0.5 / (m * m * m))));
  }
  return {worst <= 1e-9 && worst_max <= 1e-9, "9 worked values max error " + fmt("%.2e", worst) +
                                                  ", identical-sentence maxima error " + fmt("%.2e", worst_max)};
}

// --- 9 ---------------------------------------------------------------------------------

Outcome live_loop() {
  ScratchDir dir;
  ServerOptions opts;
  opts.bind = parse_bind("127.0.0.1:0");
  opts.episode_log = dir.file("served.ndjson");
  Server server(opts);
  std::thread loop([&] { server.run(); });
  struct Stop {
    Server& server;
    std::thread& loop;
    ~Stop() {
      server.stop();
      if (loop.joinable()) loop.join();
    }
  } stop{server, loop};

  std::string problems;
  // One scripted retrieval end to end.
  testing::ScriptedRun single;
  {
    testing::LineClient client(server.port());
    if (client.call(testing::request(Op::hello, "")).op != Op::hello) problems += " hello;";
    single = testing::scripted_retrieval([&](const Message& m) { return client.call(m); }, "solo", 41, 4);
  }
  if (single.status != "ok" || single.answer_object != single.target) problems += " retrieval failed;";

  // Two sessions at once on separate connections, plus two sessions
  // interleaved message by message on one connection.
  testing::ScriptedRun par[2];
  std::thread clients[2];
  for (int i = 0; i < 2; ++i)
    clients[i] = std::thread([&, i] {
      testing::LineClient c(server.port());
      par[i] = testing::scripted_retrieval([&](const Message& m) { return c.call(m); }, "p" + std::to_string(i),
                                           50 + static_cast<std::uint64_t>(i), 3);
    });
  for (auto& t : clients) t.join();
  for (int i = 0; i < 2; ++i) {
    if (par[i].status != "ok" || par[i].answer_object != par[i].target) problems += " concurrent run failed;";
    for (const auto& s : par[i].session_tags)
      if (s != "p" + std::to_string(i)) problems += " reply for wrong session;";
  }
  if (par[0].episode_id == par[1].episode_id) problems += " duplicate episode ids;";
  {
    testing::LineClient c(server.port());
    auto r0 = c.call(testing::request(Op::reset, "x", {{"scene_seed", 60}, {"prompt", "look around"}}));
    auto r1 = c.call(testing::request(Op::reset, "y", {{"scene_seed", 61}, {"prompt", "look around"}}));
    for (int step = 0; step < 2; ++step) {
      const auto a = c.call(testing::request(Op::emit_tokens, "x", {}, "<LOOK-AROUND>"));
      const auto b = c.call(testing::request(Op::emit_tokens, "y", {}, "<LOOK-AROUND>"));
      if (a.session != "x" || b.session != "y" || a.fields.value("step_count", -1) != step + 1 ||
          b.fields.value("step_count", -1) != step + 1)
        problems += " interleaved state;";
    }
    c.call(testing::request(Op::episode_end, "x", {}, "done"));
    c.call(testing::request(Op::episode_end, "y", {}, "done"));
    if (r0.fields.value("episode_id", "") == r1.fields.value("episode_id", "")) problems += " duplicate ids;";
  }
  server.stop();
  loop.join();

  // The log replays with an empty diff and passes the validator; each
  // logged episode contains only its own scene's observations.
  DatasetHeader h;
  const auto records = read_dataset(opts.episode_log, &h);
  int diffs = 0;
  for (const auto& r : records) diffs += !cmd_replay(opts.episode_log, r.episode.id).diff.empty();
  const auto v = cmd_validate(opts.episode_log);
  if (records.size() != 5) problems += " expected 5 logged episodes, got " + std::to_string(records.size()) + ";";
  if (diffs) problems += " replay diffs " + std::to_string(diffs) + ";";
  if (!v.ok()) problems += " validator: " + v.line() + ";";
  return {problems.empty(), problems.empty() ? "retrieval ok, 5 logged episodes replay with empty diff, sessions isolated"
                                             : problems};
}

// --- 10 --------------------------------------------------------------------------------

// Kitchen scene laid out on a grid: one food, safe and unsafe containers,
// utensils and a microwave.
Scene kitchen_scene(int index) {
  const auto& catalog = builtin_catalog();
  Rng rng(mix(0xD1CE, static_cast<std::uint64_t>(index)));
  struct Item {
    std::string category;
    Material material;
  };
  const Material safe[] = {Material::ceramic, Material::glass};
  const Material unsafe_bowl[] = {Material::steel, Material::plastic};
  std::vector<Item> items{{index % 2 ? "bread" : "donut", index % 2 ? Material::paper : Material::fabric},
                          {"microwave", Material::steel},
                          {"plate", safe[rng.index(2)]},
                          {"bowl", safe[rng.index(2)]},
                          {"bowl", unsafe_bowl[rng.index(2)]},
                          {"plate", Material::plastic},
                          {"fork", kAllMaterials[1 + rng.index(2)]},  // plastic or steel
                          {"spoon", Material::wood}};
  rng.shuffle(items);
  Scene s;
  s.id = "kitchen-" + std::to_string(index);
  s.room = SceneConfig{}.room;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& spec = catalog.category(items[i].category);
    ObjectInstance o;
    o.id = static_cast<int>(i);
    o.category = items[i].category;
    o.material = items[i].material;
    const Vec3 half = 0.5 * (spec.half_min + spec.half_max);
    o.bbox = {{0.8 + 1.1 * static_cast<double>(i % 4), 1.0 + 2.0 * static_cast<double>(i / 4), half.z}, half};
    o.temp_label = TempLabel::room;
    o.temp_celsius = 22.0;
    o.seed = rng.next();
    s.objects.push_back(o);
  }
  s.n_base = static_cast<int>(items.size()) - 3;
  s.n_added = 3;
  return s;
}

bool microwave_safe(const ObjectInstance& o) {
  return (o.category == "plate" || o.category == "bowl") && (o.material == Material::ceramic || o.material == Material::glass);
}

Outcome decomposition() {
  const auto& catalog = builtin_catalog();
  int scenes = 0, combos = 0, combo_success = 0, unsafe_checked = 0, unsafe_zero = 0, policy_success = 0;
  std::string problems;
  for (int i = 0; i < 20; ++i) {
    const auto scene = kitchen_scene(i);
    const auto report = validate_scene(scene, catalog);
    if (!report.ok()) {
      problems += " scene " + std::to_string(i) + " invalid: " + report.summary() + ";";
      continue;
    }
    ++scenes;
    const auto task = propose_tasks(scene, {TaskKind::task_decomposition}, 1, static_cast<std::uint64_t>(i)).tasks.at(0);
    int food = -1;
    std::vector<int> unsafe;
    for (const auto& o : scene.objects) {
      if (catalog.category(o.category).food) food = o.id;
      if ((o.category == "plate" || o.category == "bowl") && !microwave_safe(o)) unsafe.push_back(o.id);
    }
    // Every listed combination holds the food, one safe container, one utensil.
    for (const auto& c : task.valid_combinations) {
      int containers = 0, utensils = 0, has_food = 0;
      for (int id : c) {
        const auto& o = scene.object(id);
        containers += microwave_safe(o);
        utensils += o.category == "fork" || o.category == "spoon";
        has_food += id == food;
      }
      if (c.size() != 3 || containers != 1 || utensils != 1 || has_food != 1) problems += " bad combination listed;";
    }
    // Scripted policies answering each valid combination, and one with the
    // safe container swapped for an unsafe one.
    for (const auto& c : task.valid_combinations) {
      std::string answer;
      for (int id : c) answer += handle(id) + " ";
      ScriptedPolicy p({}, parse(answer));
      Session session(scene, task.prompt);
      const auto e = run_episode(session, p, 8);
      ++combos;
      combo_success += decomposition_success(task, answer_handles(e.answer));
      for (int bad : unsafe) {
        auto swapped = c;
        for (auto& id : swapped)
          if (microwave_safe(scene.object(id))) id = bad;
        ++unsafe_checked;
        unsafe_zero += !decomposition_success(task, swapped);
      }
    }
    const auto r = policy_interactive_trained(task, scene, default_params());
    policy_success += decomposition_success(task, r.answer_objects);
  }
  const bool pass = problems.empty() && scenes == 20 && combos > 0 && combo_success == combos &&
                    unsafe_zero == unsafe_checked && unsafe_checked > 0 && policy_success == 20;
  return {pass, std::to_string(scenes) + " scenes, valid combinations scored 1: " + std::to_string(combo_success) + "/" +
                    std::to_string(combos) + ", unsafe swaps scored 0: " + std::to_string(unsafe_zero) + "/" +
                    std::to_string(unsafe_checked) + ", interactive policy successes " +
                    std::to_string(policy_success) + "/20" + problems};
}

struct Check {
  int id;
  const char* name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace esim

int main(int argc, char** argv) {
  using namespace esim;
  const std::vector<Check> checks{
      {1, "protocol round-trip and automaton equivalence", 30, protocol_round_trip},
      {2, "SELECT loss gradient check", 0, gradient_check},
      {3, "sensor physics properties", 60, sensor_physics},
      {4, "twin disambiguation ordering (k=4)", 300, twin_ordering},
      {5, "modality monotonicity", 0, modality_monotonicity},
      {6, "compositional generalization", 0, composition},
      {7, "data pipeline audit (100 scenes x 10 tasks)", 300, pipeline_audit},
      {8, "BLEU / METEOR-lite worked values", 0, metrics},
      {9, "live loop over TCP", 0, live_loop},
      {10, "task decomposition success semantics", 0, decomposition},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : checks) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += " (over the " + std::to_string(static_cast<int>(c.budget_s)) + " s budget)";
    }
    std::printf("%s %2d %-46s %7.1fs  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed;
}
