#include <gtest/gtest.h>

#include <set>

#include "esim/classifiers.hpp"
#include "esim/taskgen.hpp"

namespace esim {
namespace {

const Catalog& cat() { return builtin_catalog(); }

TEST(Templates, BankShape) {
  const auto& bank = builtin_templates();
  EXPECT_FALSE(bank.version.empty());
  for (auto k : kAllTaskKinds) {
    EXPECT_GE(bank.prompts.at(k).size(), 5u) << to_string(k);
    EXPECT_EQ(bank.prompts.at(k).size(), bank.answers.at(k).size());
  }
}

TEST(Templates, FillAndSlots) {
  EXPECT_EQ(template_slots("the {material} {category} is {handle}"),
            (std::vector<std::string>{"material", "category", "handle"}));
  EXPECT_EQ(fill_template("it feels {temperature} and {x}", {{"temperature", "cold"}}), "it feels cold and {x}");
  EXPECT_EQ(fill_template("no slots here", {{"a", "b"}}), "no slots here");
  EXPECT_TRUE(is_sensor_slot("material"));
  EXPECT_FALSE(is_sensor_slot("category"));
}

TEST(Propose, Deterministic) {
  const auto scene = twin_injection(sample_scene(cat(), {}, 5), cat(), 3, TwinAttribute::material, 5);
  const std::vector<TaskKind> kinds(std::begin(kAllTaskKinds), std::end(kAllTaskKinds));
  const auto a = propose_tasks(scene, kinds, 50, 9);
  const auto b = propose_tasks(scene, kinds, 50, 9);
  ASSERT_EQ(a.tasks.size(), b.tasks.size());
  for (std::size_t i = 0; i < a.tasks.size(); ++i) EXPECT_EQ(a.tasks[i], b.tasks[i]);
}

TEST(Propose, TasksReferenceSceneObjects) {
  const std::vector<TaskKind> kinds(std::begin(kAllTaskKinds), std::end(kAllTaskKinds));
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto scene = twin_injection(sample_scene(cat(), {}, seed), cat(), 2, TwinAttribute::material, seed);
    TaskGenResult r;
    try {
      r = propose_tasks(scene, kinds, 12, seed);
    } catch (const NoTasksPossible&) {
      continue;
    }
    for (const auto& t : r.tasks) {
      for (int id : t.target_objects) ASSERT_TRUE(id >= 0 && id < static_cast<int>(scene.objects.size()));
      for (const auto& a : t.gt_actions)
        if (a.object >= 0) ASSERT_LT(a.object, static_cast<int>(scene.objects.size()));
      if (t.kind == TaskKind::retrieval) {
        bool in_group = false;
        for (const auto& g : scene.twin_groups)
          in_group |= std::find(g.members.begin(), g.members.end(), t.target_objects[0]) != g.members.end();
        EXPECT_TRUE(in_group);
      }
      if (t.kind == TaskKind::tool_use) {
        const ToolSituation* sit = nullptr;
        for (const auto& s : builtin_tools().situations)
          if (s.id == t.situation) sit = &s;
        ASSERT_TRUE(sit);
        int satisfying = 0;
        for (const auto& o : scene.objects) satisfying += satisfies(o, *sit);
        EXPECT_EQ(satisfying, 1);
        EXPECT_TRUE(satisfies(scene.object(t.target_objects[0]), *sit));
      }
    }
  }
}

TEST(Propose, RetrievalPromptNamesAttributes) {
  const auto scene = twin_injection(sample_scene(cat(), {}, 2), cat(), 2, TwinAttribute::material, 4);
  const auto t = propose_tasks(scene, {TaskKind::retrieval}, 1, 0).tasks.at(0);
  const auto& target = scene.object(t.target_objects[0]);
  EXPECT_NE(t.prompt.find(target.category), std::string::npos);
  EXPECT_NE(t.prompt.find(std::string(to_string(target.material))), std::string::npos) << t.prompt;
}

TEST(Propose, NoTemperatureTasksWithoutThermalObjects) {
  Scene scene;
  for (std::uint64_t seed = 0;; ++seed) {
    scene = sample_scene(cat(), {}, seed);
    for (auto& o : scene.objects) {
      o.temp_label = TempLabel::room;
      o.temp_celsius = 22.0;
    }
    break;
  }
  TaskGenResult r;
  try {
    r = propose_tasks(scene, std::vector<TaskKind>(std::begin(kAllTaskKinds), std::end(kAllTaskKinds)), 40, 3);
  } catch (const NoTasksPossible&) {
    return;
  }
  for (const auto& t : r.tasks) {
    const auto slots = template_slots(t.gt_answer_template);
    EXPECT_EQ(std::count(slots.begin(), slots.end(), "temperature"), 0) << t.gt_answer_template;
    EXPECT_EQ(t.prompt.find("hot"), std::string::npos);
    EXPECT_EQ(t.prompt.find("cold"), std::string::npos);
  }
}

TEST(Realize, SlotsGroundedInPayloads) {
  int checked = 0;
  const std::vector<TaskKind> kinds(std::begin(kAllTaskKinds), std::end(kAllTaskKinds));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = twin_injection(sample_scene(cat(), {}, seed), cat(), 3,
                                      static_cast<TwinAttribute>(seed % 3), seed);
    TaskGenResult r;
    try {
      r = propose_tasks(scene, kinds, 10, seed);
    } catch (const NoTasksPossible&) {
      continue;
    }
    for (const auto& t : r.tasks) {
      const auto re = realize(t, scene);
      ASSERT_TRUE(re.valid) << re.invalid_reason;
      ASSERT_TRUE(validate_stream(re.episode.stream).ok);
      for (const auto& [slot, pid] : re.slot_payloads) {
        ++checked;
        EXPECT_EQ(derive_slot(slot, re.episode.payloads.at(static_cast<std::size_t>(pid))), re.slot_values.at(slot));
      }
      // Every sensor slot of the template is filled.
      for (const auto& slot : template_slots(t.gt_answer_template))
        if (is_sensor_slot(slot)) EXPECT_TRUE(re.slot_values.count(slot)) << slot;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Realize, ColdObjectFeelsCold) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto scene = sample_scene(cat(), {}, seed);
    TaskGenResult r;
    try {
      r = propose_tasks(scene, {TaskKind::captioning, TaskKind::qa, TaskKind::dialogue}, 12, seed);
    } catch (const NoTasksPossible&) {
      continue;
    }
    for (const auto& t : r.tasks) {
      const auto re = realize(t, scene);
      auto it = re.slot_values.find("temperature");
      if (it == re.slot_values.end()) continue;
      const auto& payload = re.episode.payloads.at(static_cast<std::size_t>(re.slot_payloads.at("temperature")));
      const double c = temperature_from_payload(payload).celsius;
      EXPECT_EQ(it->second, std::string(temp_adjective(classify_temperature(c))));
      if (it->second == "cold") {
        EXPECT_LT(c, 10.0 + 1e-9);
        EXPECT_NE(re.episode.answer.find("cold"), std::string::npos);
        return;
      }
    }
  }
  FAIL() << "no cold temperature slot found";
}

TEST(Samples, CountAndReconstruction) {
  const auto scene = twin_injection(sample_scene(cat(), {}, 4), cat(), 3, TwinAttribute::material, 1);
  const auto tasks = propose_tasks(scene, {TaskKind::retrieval, TaskKind::captioning}, 6, 2);
  for (const auto& t : tasks.tasks) {
    const auto re = realize(t, scene);
    const auto samples = incremental_samples(re.episode);
    ASSERT_EQ(samples.size(), re.episode.actions.size() + 1);
    TokenStream rebuilt = samples.front().input_stream;
    for (const auto& s : samples) {
      EXPECT_TRUE(validate_stream(s.input_stream, false).ok);
      EXPECT_EQ(s.input_stream, rebuilt);
      rebuilt.append(s.target_stream);
    }
    EXPECT_EQ(rebuilt, re.episode.stream);
  }
}

TEST(Samples, NoActionEpisodeHasOneSample) {
  const auto scene = sample_scene(cat(), {}, 4);
  Session s(scene, "describe the room");
  s.start();
  s.end(parse("a room"));
  EXPECT_EQ(incremental_samples(s.episode()).size(), 1u);
}

TEST(TaskJson, RoundTrip) {
  const auto scene = twin_injection(sample_scene(cat(), {}, 4), cat(), 3, TwinAttribute::material, 1);
  for (const auto& t : propose_tasks(scene, std::vector<TaskKind>(std::begin(kAllTaskKinds), std::end(kAllTaskKinds)), 12, 5).tasks)
    EXPECT_EQ(task_from_json(to_json(t)), t);
}

}  // namespace
}  // namespace esim
