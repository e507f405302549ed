#include "esim/classifiers.hpp"

#include <limits>

#include "esim/builtin_data.hpp"

namespace esim {

const Calibration& builtin_calibration() {
  static const Calibration c = calibration_from_json(nlohmann::json::parse(builtin_data::calibration_json()));
  return c;
}

Calibration calibration_from_json(const nlohmann::json& j) {
  Calibration c;
  try {
    c.version = j.at("version").get<std::string>();
    const auto& t = j.at("temperature");
    c.cold_below = t.at("cold_below").get<double>();
    c.hot_above = t.at("hot_above").get<double>();
    const auto& h = j.at("hardness");
    c.soft_below = h.at("soft_below").get<double>();
    c.hard_from = h.at("hard_from").get<double>();
    c.k0 = h.at("k0").get<double>();
    c.d_max = h.at("d_max").get<double>();
    c.falloff_sigma = h.at("falloff_sigma").get<double>();
    const auto& m = j.at("material");
    c.scale = m.at("scale").get<std::array<double, 2>>();
    for (const auto& [name, xy] : m.at("centroids").items()) {
      c.materials.push_back(parse_material(name));
      c.centroids.push_back(xy.get<std::array<double, 2>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed calibration: ") + e.what());
  }
  if (!(c.cold_below < c.hot_above) || !(c.soft_below < c.hard_from) || c.materials.empty() || !(c.scale[0] > 0) ||
      !(c.scale[1] > 0))
    throw InvalidArgument("inconsistent calibration constants");
  return c;
}

nlohmann::json to_json(const Calibration& c) {
  nlohmann::json centroids = nlohmann::json::object();
  for (std::size_t i = 0; i < c.materials.size(); ++i) centroids[std::string(to_string(c.materials[i]))] = c.centroids[i];
  return {{"version", c.version},
          {"temperature", {{"cold_below", c.cold_below}, {"hot_above", c.hot_above}}},
          {"hardness",
           {{"soft_below", c.soft_below},
            {"hard_from", c.hard_from},
            {"k0", c.k0},
            {"d_max", c.d_max},
            {"falloff_sigma", c.falloff_sigma}}},
          {"material", {{"features", {"log_centroid_hz", "log_decay_per_s"}}, {"scale", c.scale}, {"centroids", centroids}}}};
}

std::array<double, 2> acoustic_point(const ImpactSoundClip& clip) {
  const auto f = spectral_features(clip.samples, clip.sample_rate);
  return {std::log(std::max(f.centroid_hz, 1e-9)), std::log(std::max(f.decay_per_s, 1e-9))};
}

Calibration calibrate(const Catalog& catalog, const SensorConfig& cfg, int seeds) {
  if (seeds < 2) throw InvalidArgument("calibration needs at least two seeds");
  Calibration c;
  c.version = "1";
  const auto cold = temp_range(TempLabel::cold), room = temp_range(TempLabel::room), hot = temp_range(TempLabel::hot);
  c.cold_below = 0.5 * (cold.hi + room.lo);
  c.hot_above = 0.5 * (room.hi + hot.lo);
  c.k0 = cfg.k0;
  c.d_max = cfg.d_max;
  c.falloff_sigma = cfg.falloff_sigma;

  std::vector<std::vector<std::array<double, 2>>> pts;
  for (const auto& mat : catalog.materials) {
    std::vector<std::array<double, 2>> mine;
    for (int s = 0; s < seeds; ++s) {
      ObjectInstance o;
      o.material = mat.name;
      o.seed = mix(0xCA11B8A7EULL, static_cast<std::uint64_t>(s));
      for (int sp = 0; sp < kStrikeSites; ++sp) {
        auto clip = hit(o, catalog, sp, cfg.hit_force, cfg);
        clip.samples = from_pcm16(to_pcm16(clip.samples));
        mine.push_back(acoustic_point(clip));
      }
    }
    std::array<double, 2> mean{0.0, 0.0};
    for (const auto& p : mine)
      for (int a = 0; a < 2; ++a) mean[a] += p[a] / static_cast<double>(mine.size());
    c.materials.push_back(mat.name);
    c.centroids.push_back(mean);
    pts.push_back(std::move(mine));
  }
  std::array<double, 2> ss{0.0, 0.0};
  std::size_t dof = 0;
  for (std::size_t m = 0; m < pts.size(); ++m) {
    for (const auto& p : pts[m])
      for (int a = 0; a < 2; ++a) ss[a] += (p[a] - c.centroids[m][a]) * (p[a] - c.centroids[m][a]);
    dof += pts[m].size() - 1;
  }
  for (int a = 0; a < 2; ++a) c.scale[a] = std::sqrt(ss[a] / static_cast<double>(dof));
  return c;
}

TempLabel classify_temperature(double celsius, const Calibration& cal) {
  if (celsius < cal.cold_below) return TempLabel::cold;
  if (celsius > cal.hot_above) return TempLabel::hot;
  return TempLabel::room;
}

double estimate_hardness(const TactileReading& r, const Calibration& cal) {
  if (r.marker_init.empty() || r.marker_init.size() != r.marker_final.size()) throw InvalidArgument("malformed tactile reading");
  if (!(r.force > 0.0)) throw InvalidArgument("tactile reading without force");
  const Vec2 c = touch_site_center(r.contact_point);
  const double two_sigma2 = 2.0 * cal.falloff_sigma * cal.falloff_sigma;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < r.marker_init.size(); ++i) {
    const Vec2 d = r.marker_init[i] - c;
    const double f = std::exp(-(d.x * d.x + d.y * d.y) / two_sigma2);
    num += (r.marker_final[i] - r.marker_init[i]).norm() * f;
    den += f * f;
  }
  const double amplitude = den > 0.0 ? num / den : 0.0;
  const double ratio = std::clamp(amplitude / cal.d_max, 0.0, 1.0 - 1e-12);
  if (ratio <= 0.0) return std::numeric_limits<double>::infinity();
  return r.force / (cal.k0 * std::atanh(ratio));
}

HardnessClass classify_hardness(const TactileReading& r, const Calibration& cal) {
  const double h = estimate_hardness(r, cal);
  if (h < cal.soft_below) return HardnessClass::soft;
  if (h >= cal.hard_from) return HardnessClass::hard;
  return HardnessClass::firm;
}

Material classify_material(const ImpactSoundClip& clip, const Calibration& cal) {
  const auto p = acoustic_point(clip);
  double best = std::numeric_limits<double>::infinity();
  Material out = cal.materials.front();
  for (std::size_t i = 0; i < cal.materials.size(); ++i) {
    double d = 0.0;
    for (int a = 0; a < 2; ++a) {
      const double z = (p[a] - cal.centroids[i][a]) / cal.scale[a];
      d += z * z;
    }
    if (d < best) {
      best = d;
      out = cal.materials[i];
    }
  }
  return out;
}

std::string classify_category(const FeatureVector& visual, const Catalog& catalog) {
  double best = -2.0;
  std::string out;
  for (const auto& c : catalog.categories) {
    const double s = cosine(visual, word_vector(c.name));
    if (s > best) {
      best = s;
      out = c.name;
    }
  }
  return out;
}

std::string attribute_word(TwinAttribute attr, const ObjectInstance& o, const Catalog& catalog) {
  switch (attr) {
    case TwinAttribute::material: return std::string(to_string(o.material));
    case TwinAttribute::temp_label: return std::string(temp_adjective(o.temp_label));
    case TwinAttribute::hardness: return std::string(to_string(hardness_class(catalog.material(o.material).hardness)));
  }
  return {};
}

}  // namespace esim
