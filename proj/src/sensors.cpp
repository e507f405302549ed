#include "esim/sensors.hpp"

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <mutex>

#include "esim/builtin_data.hpp"

namespace esim {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

struct Pixel {
  int x;
  int y;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

Pixel to_pixel(Vec2 p, int w, int h) {
  return {static_cast<int>(std::lround(p.x * (w - 1))), static_cast<int>(std::lround(p.y * (h - 1)))};
}

void plot(HeatmapImage& img, int x, int y, float v) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  float& px = img.values[static_cast<std::size_t>(y * img.width + x)];
  px = std::max(px, v);
}

void draw_line(HeatmapImage& img, Pixel a, Pixel b, float v) {
  int dx = std::abs(b.x - a.x), sx = a.x < b.x ? 1 : -1;
  int dy = -std::abs(b.y - a.y), sy = a.y < b.y ? 1 : -1;
  int err = dx + dy;
  int x = a.x, y = a.y;
  for (;;) {
    plot(img, x, y, v);
    if (x == b.x && y == b.y) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

constexpr float kDotValue = 0.5f;
constexpr float kArrowValue = 1.0f;

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::string& s, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_u32(std::string_view s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}
std::uint16_t get_u16(std::string_view s, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1]) << 8));
}

}  // namespace

// ---------------------------------------------------------------------------

double TactileReading::mean_displacement() const {
  if (marker_init.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < marker_init.size(); ++i) sum += (marker_final[i] - marker_init[i]).norm();
  return sum / static_cast<double>(marker_init.size());
}

double TactileReading::max_displacement() const {
  double m = 0.0;
  for (std::size_t i = 0; i < marker_init.size(); ++i) m = std::max(m, (marker_final[i] - marker_init[i]).norm());
  return m;
}

double HeatmapImage::mass() const {
  double s = 0.0;
  for (float v : values) s += v;
  return s;
}

const AmbientOntology::Entry* AmbientOntology::find(std::string_view id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

AmbientOntology ontology_from_json(const nlohmann::json& j) {
  AmbientOntology o;
  o.version = j.at("version").get<std::string>();
  for (const auto& e : j.at("entries")) {
    o.entries.push_back({e.at("id").get<std::string>(), e.at("description").get<std::string>(),
                         e.at("categories").get<std::vector<std::string>>()});
  }
  return o;
}

const AmbientOntology& builtin_ontology() {
  static const AmbientOntology o = ontology_from_json(nlohmann::json::parse(builtin_data::ontology_json()));
  return o;
}

// ---------------------------------------------------------------------------
// Tactile

Vec2 touch_site_center(int site) {
  require(site >= 0 && site < kTouchSites, "touch site out of range: " + std::to_string(site));
  return {0.35 + 0.1 * (site % 4), 0.35 + 0.1 * (site / 4)};
}

TactileReading touch(const ObjectInstance& object, const Catalog& catalog, int contact_point, double force,
                     const SensorConfig& cfg) {
  require(contact_point >= 0 && contact_point < kTouchSites,
          "contact_point must be in [0, 16), got " + std::to_string(contact_point));
  require(force > 0.0 && std::isfinite(force), "touch force must be positive");
  require(cfg.marker_grid >= 2, "marker grid must be at least 2x2");

  const double hardness = catalog.material(object.material).hardness;
  const double amplitude = cfg.d_max * std::tanh(force / (cfg.k0 * hardness));
  const Vec2 c = touch_site_center(contact_point);
  const double two_sigma2 = 2.0 * cfg.falloff_sigma * cfg.falloff_sigma;

  TactileReading r;
  r.grid = cfg.marker_grid;
  r.contact_point = contact_point;
  r.force = force;
  const int g = cfg.marker_grid;
  r.marker_init.reserve(static_cast<std::size_t>(g * g));
  r.marker_final.reserve(static_cast<std::size_t>(g * g));
  for (int row = 0; row < g; ++row) {
    for (int col = 0; col < g; ++col) {
      const Vec2 m{(col + 0.5) / g, (row + 0.5) / g};
      const Vec2 off = m - c;
      const double dist = off.norm();
      Vec2 moved = m;
      if (dist > 0.0) {
        const double mag = amplitude * std::exp(-dist * dist / two_sigma2);
        moved = m + (mag / dist) * off;
      }
      r.marker_init.push_back(m);
      r.marker_final.push_back(moved);
    }
  }
  return r;
}

HeatmapImage render_tactile_heatmap(const TactileReading& reading, const SensorConfig& cfg) {
  HeatmapImage img;
  img.width = cfg.heatmap_width;
  img.height = cfg.heatmap_height;
  img.values.assign(static_cast<std::size_t>(img.width * img.height), 0.0f);
  for (const auto& m : reading.marker_init) {
    const Pixel p = to_pixel(m, img.width, img.height);
    plot(img, p.x, p.y, kDotValue);
  }
  for (std::size_t i = 0; i < reading.marker_init.size(); ++i) {
    const Vec2 a = reading.marker_init[i];
    const Vec2 b = reading.marker_final[i];
    const Pixel pa = to_pixel(a, img.width, img.height);
    const Pixel pb = to_pixel(b, img.width, img.height);
    if (pa == pb) continue;
    draw_line(img, pa, pb, kArrowValue);
    // Arrowhead: two barbs at +-30 degrees, a third of the shaft long (>= 2 px).
    const double sx = pb.x - pa.x, sy = pb.y - pa.y;
    const double len = std::hypot(sx, sy);
    const double barb = std::max(2.0, len / 3.0);
    for (double ang : {5.0 * std::numbers::pi / 6.0, -5.0 * std::numbers::pi / 6.0}) {
      const double ux = (sx * std::cos(ang) - sy * std::sin(ang)) / len;
      const double uy = (sx * std::sin(ang) + sy * std::cos(ang)) / len;
      const Pixel tip{static_cast<int>(std::lround(pb.x + barb * ux)), static_cast<int>(std::lround(pb.y + barb * uy))};
      draw_line(img, pb, tip, kArrowValue);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Impact sound

double strike_weight(std::uint64_t object_seed, int strike_point, int mode) {
  const std::uint64_t h = mix(object_seed, static_cast<std::uint64_t>(strike_point), static_cast<std::uint64_t>(mode), 0x57121CE);
  return 0.3 + 0.7 * (static_cast<double>(h >> 11) * 0x1.0p-53);
}

ImpactSoundClip hit(const ObjectInstance& object, const Catalog& catalog, int strike_point, double force,
                    const SensorConfig& cfg) {
  require(strike_point >= 0 && strike_point < kStrikeSites,
          "strike_point must be in [0, 10), got " + std::to_string(strike_point));
  require(force > 0.0 && std::isfinite(force), "hit force must be positive");
  require(cfg.sample_rate > 0 && cfg.duration > 0.0, "invalid audio configuration");

  const auto& mat = catalog.material(object.material);
  const auto n = static_cast<std::size_t>(std::llround(cfg.sample_rate * cfg.duration));
  const double nyquist = 0.5 * cfg.sample_rate;
  std::vector<double> raw(n, 0.0);
  for (int i = 0; i < kImpactModes; ++i) {
    const double f = mat.modal_base_freq_hz * kModeRatios[i];
    if (f >= nyquist) continue;
    const double d = mat.modal_damping * kModeRatios[i];
    const double a = strike_weight(object.seed, strike_point, i);
    const double w = 2.0 * std::numbers::pi * f;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) / cfg.sample_rate;
      raw[k] += a * std::exp(-d * t) * std::sin(w * t);
    }
  }
  double peak = 0.0;
  for (double v : raw) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0.0 ? std::min(1.0, force / cfg.force_ref) / peak : 0.0;

  ImpactSoundClip clip;
  clip.sample_rate = cfg.sample_rate;
  clip.strike_point = strike_point;
  clip.force = force;
  clip.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) clip.samples[k] = static_cast<float>(gain * raw[k]);
  return clip;
}

// ---------------------------------------------------------------------------

TemperatureReading sample_temperature(TempLabel label, std::uint64_t seed) {
  Rng rng(mix(seed, 0x7E3B));
  const auto range = temp_range(label);
  return {rng.uniform(range.lo, range.hi), label};
}

PointCloud observe(const ObjectInstance& object, int n_points, std::uint64_t seed) {
  require(n_points >= 8, "observe needs at least 8 points");
  const Vec3 h = object.bbox.half;
  const Vec3 c = object.bbox.center;
  // Faces in order -x,+x,-y,+y,-z,+z.
  const double areas[6] = {h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y};
  double total = 0.0;
  for (double a : areas) total += a;

  Rng rng(mix(seed, object.seed, 0x0B5E));
  PointCloud pc;
  pc.points.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    double u = rng.uniform() * total;
    int face = 0;
    while (face < 5 && u >= areas[face]) u -= areas[face++];
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? -1.0 : 1.0;
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = a == axis ? c[a] + sign * h[a] : rng.uniform(c[a] - h[a], c[a] + h[a]);
    }
    pc.points.push_back(p);
  }
  return pc;
}

std::optional<AmbientSoundTag> assign_ambient(const ObjectInstance& object, const AmbientOntology& ontology,
                                              std::uint64_t seed) {
  std::vector<const AmbientOntology::Entry*> matches;
  for (const auto& e : ontology.entries) {
    if (std::find(e.categories.begin(), e.categories.end(), object.category) != e.categories.end()) {
      matches.push_back(&e);
    }
  }
  if (matches.empty()) return std::nullopt;
  Rng rng(mix(seed, 0xA3B1E7));
  const auto* e = matches[rng.index(matches.size())];
  return AmbientSoundTag{e->id, e->description};
}

// ---------------------------------------------------------------------------
// Analysis

double rms(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (float v : samples) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(samples.size()));
}

double spectral_centroid(std::span<const float> samples, int sample_rate) {
  const std::size_t n = next_pow2(std::max<std::size_t>(samples.size(), 2));
  const std::size_t bins = n / 2 + 1;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) in[i] = i < samples.size() ? samples[i] : 0.0;
  fftw_execute(plan);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double mag = std::hypot(out[k][0], out[k][1]);
    num += mag * (static_cast<double>(k) * sample_rate / static_cast<double>(n));
    den += mag;
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return den > 0.0 ? num / den : 0.0;
}

double decay_rate(std::span<const float> samples, int sample_rate) {
  const auto frame = static_cast<std::size_t>(std::max(1, sample_rate / 100));
  std::vector<double> t, logr;
  double first = 0.0;
  for (std::size_t start = 0; start + frame <= samples.size(); start += frame) {
    const double r = rms(samples.subspan(start, frame));
    if (start == 0) first = r;
    if (r <= 0.0 || (first > 0.0 && r < 1e-3 * first)) break;
    t.push_back((static_cast<double>(start) + 0.5 * static_cast<double>(frame)) / sample_rate);
    logr.push_back(std::log(r));
  }
  if (t.size() < 2) return 0.0;
  double mt = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mt += t[i];
    ml += logr[i];
  }
  mt /= static_cast<double>(t.size());
  ml /= static_cast<double>(t.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += (t[i] - mt) * (logr[i] - ml);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return den > 0.0 ? -num / den : 0.0;
}

SpectralFeatures spectral_features(std::span<const float> samples, int sample_rate) {
  return {spectral_centroid(samples, sample_rate), decay_rate(samples, sample_rate)};
}

// ---------------------------------------------------------------------------
// Formats

std::vector<std::int16_t> to_pcm16(std::span<const float> samples) {
  std::vector<std::int16_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(static_cast<double>(samples[i]), -1.0, 1.0);
    out[i] = static_cast<std::int16_t>(std::lround(v * 32767.0));
  }
  return out;
}

std::vector<float> from_pcm16(std::span<const std::int16_t> pcm) {
  std::vector<float> out(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) out[i] = static_cast<float>(pcm[i] / 32767.0);
  return out;
}

std::string pcm16_bytes(std::span<const float> samples) {
  std::string s;
  s.reserve(samples.size() * 2);
  for (std::int16_t v : to_pcm16(samples)) put_u16(s, static_cast<std::uint16_t>(v));
  return s;
}

std::vector<float> samples_from_pcm16_bytes(std::string_view bytes) {
  require(bytes.size() % 2 == 0, "PCM16 byte count must be even");
  std::vector<std::int16_t> pcm(bytes.size() / 2);
  for (std::size_t i = 0; i < pcm.size(); ++i) pcm[i] = static_cast<std::int16_t>(get_u16(bytes, 2 * i));
  return from_pcm16(pcm);
}

std::string wav_bytes(const ImpactSoundClip& clip) {
  const std::string data = pcm16_bytes(clip.samples);
  std::string s;
  s.reserve(44 + data.size());
  s += "RIFF";
  put_u32(s, static_cast<std::uint32_t>(36 + data.size()));
  s += "WAVE";
  s += "fmt ";
  put_u32(s, 16);
  put_u16(s, 1);  // PCM
  put_u16(s, 1);  // mono
  put_u32(s, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(s, static_cast<std::uint32_t>(clip.sample_rate * 2));
  put_u16(s, 2);
  put_u16(s, 16);
  s += "data";
  put_u32(s, static_cast<std::uint32_t>(data.size()));
  s += data;
  return s;
}

ImpactSoundClip clip_from_wav(std::string_view bytes) {
  require(bytes.size() >= 44 && bytes.substr(0, 4) == "RIFF" && bytes.substr(8, 4) == "WAVE" &&
              bytes.substr(12, 4) == "fmt " && bytes.substr(36, 4) == "data",
          "not a canonical 44-byte-header WAV");
  require(get_u16(bytes, 20) == 1 && get_u16(bytes, 22) == 1 && get_u16(bytes, 34) == 16,
          "WAV must be mono 16-bit PCM");
  const std::uint32_t len = get_u32(bytes, 40);
  require(bytes.size() == 44 + static_cast<std::size_t>(len), "WAV data length mismatch");
  ImpactSoundClip clip;
  clip.sample_rate = static_cast<int>(get_u32(bytes, 24));
  clip.samples = samples_from_pcm16_bytes(bytes.substr(44));
  return clip;
}

std::string pgm_bytes(const HeatmapImage& image) {
  std::string s = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  s.reserve(s.size() + image.values.size());
  for (float v : image.values) {
    s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
  return s;
}

HeatmapImage heatmap_from_pgm(std::string_view bytes) {
  // Header fields are whitespace separated; exactly one whitespace byte precedes the raster.
  std::size_t pos = 0;
  auto field = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  require(field() == "P5", "not a binary PGM");
  HeatmapImage img;
  img.width = std::stoi(field());
  img.height = std::stoi(field());
  require(field() == "255", "PGM maxval must be 255");
  ++pos;
  require(bytes.size() - pos == static_cast<std::size_t>(img.width * img.height), "PGM raster size mismatch");
  img.values.resize(static_cast<std::size_t>(img.width * img.height));
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    img.values[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

}  // namespace esim
