#include <gtest/gtest.h>

#include <set>

#include "esim/scene.hpp"

namespace esim {
namespace {

const Catalog& cat() { return builtin_catalog(); }

TEST(Catalog, BuiltinIsConsistent) {
  EXPECT_TRUE(check_catalog(cat()).empty());
  EXPECT_EQ(cat().materials.size(), 7u);
  // Deformability strictly decreasing in hardness.
  auto mats = cat().materials;
  std::sort(mats.begin(), mats.end(), [](auto& a, auto& b) { return a.hardness < b.hardness; });
  for (std::size_t i = 1; i < mats.size(); ++i) EXPECT_LT(mats[i].deformability, mats[i - 1].deformability);
}

TEST(Catalog, JsonRoundTripAndHash) {
  const auto back = catalog_from_json(to_json(cat()));
  EXPECT_EQ(catalog_hash(back), catalog_hash(cat()));
  EXPECT_EQ(catalog_hash(cat()).size(), 64u);
  auto j = to_json(cat());
  j["materials"][0]["hardness"] = 0.06;
  EXPECT_NE(catalog_hash(catalog_from_json(j)), catalog_hash(cat()));
  j["materials"][0]["hardness"] = 0.96;  // breaks the hardness / deformability ordering
  EXPECT_THROW(catalog_from_json(j), InvalidArgument);
}

TEST(Catalog, TemperatureRanges) {
  EXPECT_EQ(temp_range(TempLabel::hot).lo, 55.0);
  EXPECT_EQ(temp_range(TempLabel::hot).hi, 95.0);
  EXPECT_EQ(temp_range(TempLabel::cold).lo, 0.0);
  EXPECT_EQ(temp_range(TempLabel::cold).hi, 10.0);
  EXPECT_EQ(temp_range(TempLabel::room).lo, 18.0);
  EXPECT_EQ(temp_range(TempLabel::room).hi, 26.0);
  EXPECT_EQ(hardness_class(0.29), HardnessClass::soft);
  EXPECT_EQ(hardness_class(0.3), HardnessClass::firm);
  EXPECT_EQ(hardness_class(0.7), HardnessClass::hard);
}

TEST(SampleScene, Deterministic) {
  SceneConfig cfg;
  cfg.n_added = 3;
  EXPECT_EQ(canonical_json(sample_scene(cat(), cfg, 7)), canonical_json(sample_scene(cat(), cfg, 7)));
  EXPECT_NE(canonical_json(sample_scene(cat(), cfg, 7)), canonical_json(sample_scene(cat(), cfg, 8)));
}

TEST(SampleScene, AddedRangeChecked) {
  SceneConfig cfg;
  cfg.n_added = 11;
  EXPECT_THROW(sample_scene(cat(), cfg, 1), InvalidArgument);
  cfg.n_added = 0;
  EXPECT_THROW(sample_scene(cat(), cfg, 1), InvalidArgument);
}

TEST(SampleScene, PopulationValid) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = sample_scene(cat(), {}, seed);
    const auto r = validate_scene(s);
    ASSERT_TRUE(r.ok()) << seed << ": " << r.summary();
    for (const auto& o : s.objects) ASSERT_TRUE(temp_range(o.temp_label).contains(o.temp_celsius));
  }
}

TEST(SampleScene, JsonRoundTrip) {
  const auto s = sample_scene(cat(), {}, 42);
  EXPECT_EQ(scene_from_json(to_json(s)), s);
}

TEST(Twins, MaterialPair) {
  const auto base = sample_scene(cat(), {}, 3);
  const auto s = twin_injection(base, cat(), 2, TwinAttribute::material, 9);
  ASSERT_EQ(s.twin_groups.size(), 1u);
  const auto& g = s.twin_groups[0];
  ASSERT_EQ(g.members.size(), 2u);
  const auto& a = s.object(g.members[0]);
  const auto& b = s.object(g.members[1]);
  EXPECT_EQ(a.category, b.category);
  EXPECT_EQ(a.bbox.half, b.bbox.half);
  EXPECT_NE(a.material, b.material);
  EXPECT_EQ(a.temp_label, b.temp_label);
  EXPECT_TRUE(validate_scene(s).ok()) << validate_scene(s).summary();
}

TEST(Twins, Indistinguishable) {
  int infeasible = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (auto attr : {TwinAttribute::material, TwinAttribute::temp_label, TwinAttribute::hardness}) {
      Scene s;
      try {
        s = twin_injection(sample_scene(cat(), {}, seed), cat(), 3, attr, seed);
      } catch (const InvalidArgument&) {
        ++infeasible;  // no object in the scene admits three values
        continue;
      }
      const auto& g = s.twin_groups.back();
      std::set<std::string> varied;
      for (int id : g.members) {
        const auto& o = s.object(id);
        ASSERT_EQ(o.category, s.object(g.members[0]).category);
        ASSERT_EQ(o.bbox.half, s.object(g.members[0]).bbox.half);
      }
      ASSERT_TRUE(validate_scene(s).ok()) << validate_scene(s).summary();
    }
  }
  EXPECT_LT(infeasible, 50);
}

TEST(Twins, DegenerateCounts) {
  const auto base = sample_scene(cat(), {}, 3);
  EXPECT_THROW(twin_injection(base, cat(), 1, TwinAttribute::material, 0), InvalidArgument);
  EXPECT_THROW(twin_injection(base, cat(), 4, TwinAttribute::temp_label, 0), InvalidArgument);
  EXPECT_THROW(twin_injection(base, cat(), 4, TwinAttribute::hardness, 0), InvalidArgument);
}

TEST(Validate, CoincidentBoxes) {
  auto s = sample_scene(cat(), {}, 5);
  s.objects[1].bbox = s.objects[0].bbox;
  const auto r = validate_scene(s);
  bool found = false;
  for (const auto& v : r.violations)
    if (v.rule == "overlap" && v.object_ids == std::vector<int>{0, 1}) found = true;
  EXPECT_TRUE(found) << r.summary();
}

TEST(Validate, TemperatureOutOfRange) {
  auto s = sample_scene(cat(), {}, 5);
  s.objects[2].temp_label = TempLabel::cold;
  s.objects[2].temp_celsius = 90.0;
  const auto r = validate_scene(s);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.violations[0].rule, "temp_range");
  EXPECT_EQ(r.violations[0].object_ids, std::vector<int>{2});
}

TEST(Validate, OutsideRoomAndIds) {
  auto s = sample_scene(cat(), {}, 5);
  s.objects[0].bbox.center.x = -5;
  s.objects[3].id = 9;
  std::set<std::string> rules;
  for (const auto& v : validate_scene(s).violations) rules.insert(v.rule);
  EXPECT_TRUE(rules.count("inside_room"));
  EXPECT_TRUE(rules.count("dense_ids"));
}

TEST(Geometry, BoxOverlap) {
  Box a{{0, 0, 0}, {1, 1, 1}};
  Box b{{1, 0, 0}, {1, 1, 1}};
  EXPECT_DOUBLE_EQ(a.overlap_volume(b), 4.0);
  EXPECT_DOUBLE_EQ(a.distance_to({3, 0, 0}), 2.0);
}

TEST(Rng, SplitSeedsDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(split_seed(1, i));
  EXPECT_EQ(seen.size(), 10000u);
  Rng a(4), b(4);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

}  // namespace
}  // namespace esim
