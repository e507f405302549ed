#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "esim/embedding.hpp"
#include "esim/scene.hpp"
#include "esim/sensors.hpp"

namespace esim {

/// Frozen attribute-classifier constants (data/calibration.json).
struct Calibration {
  std::string version;
  double cold_below = 14.0;  // degrees C
  double hot_above = 40.5;
  double soft_below = 0.3;   // estimated hardness
  double hard_from = 0.7;
  double k0 = 1.0;
  double d_max = 0.25;
  double falloff_sigma = 0.2;
  // Nearest-centroid material classifier in (log centroid Hz, log decay 1/s),
  // distances scaled per axis by the pooled within-class deviation.
  std::vector<Material> materials;
  std::vector<std::array<double, 2>> centroids;
  std::array<double, 2> scale{1.0, 1.0};
};

const Calibration& builtin_calibration();
Calibration calibration_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Calibration& c);

/// Recomputes the constants from the catalog: temperature thresholds at the
/// gaps between label ranges, material centroids from pcm16-quantized clips
/// over `seeds` objects x 10 strike sites at the configured hit force.
Calibration calibrate(const Catalog& catalog, const SensorConfig& cfg = {}, int seeds = 20);

std::array<double, 2> acoustic_point(const ImpactSoundClip& clip);

TempLabel classify_temperature(double celsius, const Calibration& cal = builtin_calibration());
/// Inverts the contact model: least-squares amplitude over the markers, then
/// hardness = F / (k0 * atanh(A / d_max)).
double estimate_hardness(const TactileReading& r, const Calibration& cal = builtin_calibration());
HardnessClass classify_hardness(const TactileReading& r, const Calibration& cal = builtin_calibration());
Material classify_material(const ImpactSoundClip& clip, const Calibration& cal = builtin_calibration());
/// Catalog category whose word vector is nearest to a visual feature.
std::string classify_category(const FeatureVector& visual, const Catalog& catalog = builtin_catalog());

/// Word used in language for each attribute value.
std::string attribute_word(TwinAttribute attr, const ObjectInstance& o, const Catalog& catalog = builtin_catalog());

}  // namespace esim
