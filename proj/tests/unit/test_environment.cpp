#include <gtest/gtest.h>

#include "esim/environment.hpp"
#include "esim/policies.hpp"

namespace esim {
namespace {

const Catalog& cat() { return builtin_catalog(); }

Scene scene_with(std::uint64_t seed, double ambient_probability) {
  SceneConfig cfg;
  cfg.ambient_probability = ambient_probability;
  return sample_scene(cat(), cfg, seed);
}

int count_open(const TokenStream& s, StateKind k) {
  int n = 0;
  for (const auto& t : s.tokens) n += t.type == Token::Type::state_open && t.state == k;
  return n;
}

int portable_object(const Scene& s) {
  for (const auto& o : s.objects)
    if (cat().category(o.category).portable) return o.id;
  return -1;
}

TEST(Reset, FramingWithoutAmbient) {
  const auto scene = scene_with(3, 0.0);
  Environment env(scene);
  const auto framing = env.reset();
  EXPECT_EQ(count_open(framing, StateKind::scene), 1);
  EXPECT_EQ(count_open(framing, StateKind::ambient_sound), 0);
  const auto rows = features_from_payload(env.payloads().at(0));
  EXPECT_EQ(rows.rows(), static_cast<Eigen::Index>(scene.objects.size()));
  EXPECT_EQ(rows.cols(), kFeatureDim);
}

TEST(Reset, AmbientSpansAndDeterminism) {
  const auto scene = scene_with(3, 1.0);
  int sounding = 0;
  for (const auto& o : scene.objects) sounding += o.ambient_sound.has_value();
  Environment env(scene);
  const auto a = env.reset();
  const auto payloads = env.payloads();
  const auto b = env.reset();
  EXPECT_EQ(serialize(a), serialize(b));
  EXPECT_EQ(payloads, env.payloads());
  EXPECT_EQ(count_open(a, StateKind::ambient_sound), sounding);
}

TEST(Reset, FiveObjectSceneMatrix) {
  SceneConfig cfg;
  cfg.n_base = 2;
  cfg.n_added = 3;
  Environment env(sample_scene(cat(), cfg, 1));
  env.reset();
  EXPECT_EQ(features_from_payload(env.payloads().at(0)).rows(), 5);
}

TEST(Execute, TouchYieldsTactileThenTemperature) {
  const auto scene = scene_with(4, 0.0);
  Environment env(scene);
  env.reset();
  env.execute({ActionKind::select, {}, 2, {}});
  env.execute({ActionKind::navigate, {}, {}, {}});
  const auto r = env.execute({ActionKind::touch, {}, {}, {}});
  ASSERT_EQ(r.observations.size(), 2u);
  EXPECT_EQ(r.observations[0].state, StateKind::tactile);
  EXPECT_EQ(r.observations[1].state, StateKind::temperature);
  const auto& temp = env.payloads().at(static_cast<std::size_t>(r.observations[1].payload_id));
  EXPECT_FLOAT_EQ(temperature_from_payload(temp).celsius, scene.object(2).temp_celsius);  // f32 on the wire
}

TEST(Execute, TouchOutOfReach) {
  const auto scene = scene_with(4, 0.0);
  Environment env(scene);
  env.reset();
  int far = -1;
  for (const auto& o : scene.objects)
    if (env.distance_to(o.id) > 0.8) far = o.id;
  ASSERT_GE(far, 0);
  env.execute({ActionKind::select, {}, far, {}});
  try {
    env.execute({ActionKind::touch, {}, {}, {}});
    FAIL();
  } catch (const EnvError& e) {
    EXPECT_EQ(e.rule, "out of reach");
  }
}

TEST(Execute, NavigationSteps) {
  const auto scene = scene_with(6, 0.0);
  Environment env(scene);
  env.reset();
  for (const auto& o : scene.objects) {
    Environment fresh(scene);
    fresh.reset();
    const Vec3 start = fresh.agent().position;
    fresh.execute({ActionKind::select, {}, o.id, {}});
    fresh.execute({ActionKind::navigate, {}, {}, {}});
    const Vec3 end = fresh.agent().position;
    const double walked = std::hypot(end.x - start.x, end.y - start.y);
    EXPECT_EQ(fresh.agent().nav_steps, static_cast<int>(std::ceil(walked / 0.25 - 1e-12)));
    EXPECT_LE(fresh.distance_to(o.id), 0.8);
  }
}

TEST(Execute, HitSteelBrighterThanWoodTwin) {
  auto base = scene_with(10, 0.0);
  Scene s;
  for (std::uint64_t seed = 0;; ++seed) {
    s = twin_injection(base, cat(), 2, TwinAttribute::material, seed);
    const auto& g = s.twin_groups.back();
    auto& a = s.object(g.members[0]);
    auto& b = s.object(g.members[1]);
    const auto& spec = cat().category(a.category);
    auto has = [&](Material m) { return std::find(spec.materials.begin(), spec.materials.end(), m) != spec.materials.end(); };
    if (has(Material::steel) && has(Material::wood)) {
      a.material = Material::steel;
      b.material = Material::wood;
      break;
    }
    ASSERT_LT(seed, 200u);
  }
  const auto& g = s.twin_groups.back();
  double centroid[2];
  for (int i = 0; i < 2; ++i) {
    Environment env(s);
    env.reset();
    env.execute({ActionKind::select, {}, g.members[static_cast<std::size_t>(i)], {}});
    env.execute({ActionKind::navigate, {}, {}, {}});
    const auto r = env.execute({ActionKind::hit, {}, {}, 0});
    const auto clip = clip_from_payload(env.payloads().at(static_cast<std::size_t>(r.observations[0].payload_id)));
    centroid[i] = spectral_centroid(clip.samples, clip.sample_rate);
  }
  EXPECT_GT(centroid[0], centroid[1]);
}

TEST(Execute, PickUpPutDownRestoresAtDropPoint) {
  const auto scene = scene_with(12, 0.0);
  const int id = portable_object(scene);
  ASSERT_GE(id, 0);
  Environment env(scene);
  env.reset();
  env.execute({ActionKind::select, {}, id, {}});
  env.execute({ActionKind::navigate, {}, {}, {}});
  env.execute({ActionKind::pick_up, {}, {}, {}});
  EXPECT_EQ(env.agent().held, id);
  const Vec3 drop = env.agent().position;
  env.execute({ActionKind::put_down, {}, {}, {}});
  EXPECT_FALSE(env.agent().held);
  const auto& o = env.scene().object(id);
  EXPECT_DOUBLE_EQ(o.bbox.center.x, drop.x);
  EXPECT_DOUBLE_EQ(o.bbox.center.y, drop.y);
  EXPECT_DOUBLE_EQ(o.bbox.center.z, scene.room.min().z + o.bbox.half.z);
}

TEST(Execute, NotPortable) {
  Scene scene;
  for (std::uint64_t seed = 0;; ++seed) {
    scene = scene_with(seed, 0.0);
    bool has = false;
    for (const auto& o : scene.objects) has |= !cat().category(o.category).portable;
    if (has) break;
  }
  int id = -1;
  for (const auto& o : scene.objects)
    if (!cat().category(o.category).portable) id = o.id;
  Environment env(scene);
  env.reset();
  env.execute({ActionKind::select, {}, id, {}});
  env.execute({ActionKind::navigate, {}, {}, {}});
  EXPECT_THROW(env.execute({ActionKind::pick_up, {}, {}, {}}), EnvError);
}

TEST(Execute, LookAroundWithinRadius) {
  const auto scene = scene_with(2, 0.0);
  Environment env(scene);
  env.reset();
  const auto r = env.execute({ActionKind::look_around, {}, {}, {}});
  int expected = 0;
  for (const auto& o : scene.objects) {
    const auto q = o.bbox.closest_point(env.agent().position);
    expected += std::hypot(q.x - env.agent().position.x, q.y - env.agent().position.y) <= 2.0;
  }
  EXPECT_EQ(static_cast<int>(r.observations.size()), expected);
  for (const auto& ob : r.observations) EXPECT_EQ(ob.state, StateKind::object);
}

TEST(Episode, ScriptedTwinRetrievalWithinBound) {
  int played = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int k = 4;
    Scene scene;
    try {
      scene = twin_injection(scene_with(seed, 0.5), cat(), k, TwinAttribute::material, seed);
    } catch (const InvalidArgument&) {
      continue;  // no object in this scene admits k materials
    }
    const auto task = propose_tasks(scene, {TaskKind::retrieval}, 1, seed).tasks.at(0);
    const int target = task.target_objects[0];
    // Oracle script: go to the target and strike it.
    std::vector<PolicyConnection::Turn> turns{{parse("<SELECT> " + handle(target)), {}, false},
                                              {parse("<NAVIGATE>"), {}, false},
                                              {parse("<HIT>"), {}, false}};
    ScriptedPolicy policy(turns, parse("it is " + handle(target)));
    Session session(scene, task.prompt);
    const auto e = run_episode(session, policy, 64);
    EXPECT_EQ(e.status, EpisodeStatus::ok) << e.error;
    EXPECT_EQ(e.answer_object, target);
    EXPECT_LE(static_cast<int>(e.actions.size()), 2 * k);
    EXPECT_TRUE(validate_stream(e.stream).ok);
    EXPECT_TRUE(replay_episode(scene, e).empty());
    ++played;
  }
  EXPECT_GE(played, 10);
}

TEST(Episode, GroundTruthTrajectoryReplays) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto scene = twin_injection(scene_with(seed, 0.5), cat(), 3, TwinAttribute::temp_label, seed);
    const auto task = propose_tasks(scene, {TaskKind::retrieval}, 1, seed).tasks.at(0);
    auto policy = ScriptedPolicy::from_task(task, scene, handle(task.target_objects[0]));
    Session session(scene, task.prompt);
    const auto e = run_episode(session, policy, 64);
    EXPECT_EQ(e.status, EpisodeStatus::ok) << e.error;
    EXPECT_EQ(e.answer_object, task.target_objects[0]);
    EXPECT_EQ(e.actions.size(), task.gt_actions.size());
    EXPECT_TRUE(replay_episode(scene, e).empty());
  }
}

TEST(Episode, MaxStepsPrecondition) {
  const auto scene = scene_with(1, 0.0);
  Session session(scene, "find the cup");
  ScriptedPolicy p({}, parse("nothing"));
  EXPECT_THROW(run_episode(session, p, 0), InvalidArgument);
}

TEST(Episode, ProtocolViolationEndsWithError) {
  const auto scene = scene_with(1, 0.0);
  Session session(scene, "touch it");
  ScriptedPolicy p({{parse("<TOUCH>"), {}, false}}, parse("done"));
  const auto e = run_episode(session, p, 8);
  EXPECT_EQ(e.status, EpisodeStatus::error);
  EXPECT_EQ(e.error, "no object selected");
  EXPECT_TRUE(validate_stream(e.stream, false).ok);
}

TEST(Episode, StepBudget) {
  const auto scene = scene_with(1, 0.0);
  Session session(scene, "look");
  std::vector<PolicyConnection::Turn> turns(5, {parse("<LOOK-AROUND>"), {}, false});
  ScriptedPolicy p(turns, parse("done"));
  const auto e = run_episode(session, p, 3);
  EXPECT_EQ(e.status, EpisodeStatus::max_steps);
  EXPECT_EQ(e.actions.size(), 3u);
}

class DroppingPolicy : public PolicyConnection {
 public:
  Turn next(const Session::Delta&) override { throw TransportError("peer went away"); }
};

TEST(Episode, TransportLossAborts) {
  Session session(scene_with(1, 0.0), "hello");
  DroppingPolicy p;
  EXPECT_EQ(run_episode(session, p, 4).status, EpisodeStatus::aborted);
}

TEST(Episode, ReplayDetectsTampering) {
  const auto scene = twin_injection(scene_with(7, 0.0), cat(), 3, TwinAttribute::temp_label, 1);
  const auto task = propose_tasks(scene, {TaskKind::retrieval}, 1, 2).tasks.at(0);
  auto policy = ScriptedPolicy::from_task(task, scene, "obj0");
  Session session(scene, task.prompt);
  auto e = run_episode(session, policy, 64);
  ASSERT_TRUE(replay_episode(scene, e).empty());
  ASSERT_FALSE(e.payloads.empty());
  e.payloads.back().data[0] ^= 1;
  EXPECT_FALSE(replay_episode(scene, e).empty());
}

}  // namespace
}  // namespace esim
