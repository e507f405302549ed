#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "esim/common.hpp"
#include "esim/scene.hpp"

namespace esim {

inline constexpr int kTouchSites = 16;
inline constexpr int kStrikeSites = 10;
inline constexpr int kImpactModes = 5;
inline constexpr double kModeRatios[kImpactModes] = {1.0, 2.32, 4.05, 6.1, 8.3};

struct SensorConfig {
  int marker_grid = 8;
  double k0 = 1.0;          // N
  double d_max = 0.25;      // normalized gripper units
  double falloff_sigma = 0.2;
  int heatmap_width = 64;
  int heatmap_height = 64;
  int sample_rate = 16000;  // Hz
  double duration = 0.5;    // s
  double force_ref = 10.0;  // N; force at which an impact clip reaches full scale
  int point_count = 256;
  double touch_force = 0.5; // N, used by the environment
  double hit_force = 1.0;   // N, used by the environment
};

struct TactileReading {
  int grid = 0;
  std::vector<Vec2> marker_init;   // row-major grid x grid
  std::vector<Vec2> marker_final;
  int contact_point = 0;
  double force = 0.0;

  double mean_displacement() const;
  double max_displacement() const;
  friend bool operator==(const TactileReading&, const TactileReading&) = default;
};

struct HeatmapImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, each in [0, 1]

  float at(int x, int y) const { return values[static_cast<std::size_t>(y * width + x)]; }
  double mass() const;
  friend bool operator==(const HeatmapImage&, const HeatmapImage&) = default;
};

struct ImpactSoundClip {
  int sample_rate = 0;
  std::vector<float> samples;
  int strike_point = 0;
  double force = 0.0;
  friend bool operator==(const ImpactSoundClip&, const ImpactSoundClip&) = default;
};

struct TemperatureReading {
  double celsius = 0.0;
  TempLabel label = TempLabel::room;
  friend bool operator==(const TemperatureReading&, const TemperatureReading&) = default;
};

struct PointCloud {
  std::vector<Vec3> points;
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Static sound-description table standing in for an audio ontology.
struct AmbientOntology {
  struct Entry {
    std::string id;
    std::string description;
    std::vector<std::string> categories;
  };
  std::string version;
  std::vector<Entry> entries;

  const Entry* find(std::string_view id) const;
};

const AmbientOntology& builtin_ontology();
AmbientOntology ontology_from_json(const nlohmann::json& j);

/// Gripper-space center of touch site `site` (0..15).
Vec2 touch_site_center(int site);

/// Quasi-static bubble-gripper contact. Marker displacement is radial away
/// from the contact center with magnitude
///   d_max * tanh(force / (k0 * hardness)) * exp(-r^2 / (2 sigma^2)).
TactileReading touch(const ObjectInstance& object, const Catalog& catalog, int contact_point,
                     double force, const SensorConfig& cfg = {});

/// Marker dots at the initial positions plus an arrowed segment per moved marker.
HeatmapImage render_tactile_heatmap(const TactileReading& reading, const SensorConfig& cfg = {});

/// Per-mode amplitude weight in [0.3, 1] for a strike site.
double strike_weight(std::uint64_t object_seed, int strike_point, int mode);

/// Modal synthesis: sum of exponentially damped sinusoids at the material's
/// mode frequencies, peak-normalized and scaled by min(1, force / force_ref).
ImpactSoundClip hit(const ObjectInstance& object, const Catalog& catalog, int strike_point,
                    double force, const SensorConfig& cfg = {});

TemperatureReading sample_temperature(TempLabel label, std::uint64_t seed);

/// Area-weighted uniform samples on the faces of the object's box.
PointCloud observe(const ObjectInstance& object, int n_points, std::uint64_t seed);

std::optional<AmbientSoundTag> assign_ambient(const ObjectInstance& object, const AmbientOntology& ontology,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Signal analysis shared by encoders and classifiers.

struct SpectralFeatures {
  double centroid_hz = 0.0;
  double decay_per_s = 0.0;
};

/// Magnitude-weighted mean frequency of the zero-padded FFT.
double spectral_centroid(std::span<const float> samples, int sample_rate);
/// Negated slope of log frame-RMS (10 ms frames) over the audible part of the clip.
double decay_rate(std::span<const float> samples, int sample_rate);
SpectralFeatures spectral_features(std::span<const float> samples, int sample_rate);
double rms(std::span<const float> samples);

// ---------------------------------------------------------------------------
// Export formats.

std::vector<std::int16_t> to_pcm16(std::span<const float> samples);
std::vector<float> from_pcm16(std::span<const std::int16_t> pcm);
/// Little-endian raw 16-bit PCM bytes.
std::string pcm16_bytes(std::span<const float> samples);
std::vector<float> samples_from_pcm16_bytes(std::string_view bytes);
/// Mono 16-bit PCM WAV with the canonical 44-byte header.
std::string wav_bytes(const ImpactSoundClip& clip);
ImpactSoundClip clip_from_wav(std::string_view bytes);

/// Binary PGM (P5, maxval 255).
std::string pgm_bytes(const HeatmapImage& image);
HeatmapImage heatmap_from_pgm(std::string_view bytes);

}  // namespace esim
