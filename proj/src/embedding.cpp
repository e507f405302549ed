#include "esim/embedding.hpp"

#include <cctype>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <unordered_map>

namespace esim {

namespace {

constexpr std::uint64_t kLexiconSeed = 0x1E71C0DE5EEDULL;
constexpr std::uint64_t kProjectionSeed = 0x9A0EC7104EEDULL;

constexpr const char* kModalityNames[kModalityCount] = {"object_visual", "point_cloud", "impact_sound",
                                                        "ambient_sound", "tactile",     "temperature",
                                                        "text"};

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "a",      "an",     "the",    "of",     "with",  "to",    "and",     "or",     "that",   "is",
      "it",     "its",    "in",     "on",     "at",    "me",    "my",      "please", "for",    "this",
      "which",  "one",    "some",   "can",    "you",   "i",     "what",    "find",   "retrieve", "bring",
      "get",    "pick",   "select", "fetch",  "give",  "show",  "grab",    "locate", "object", "thing",
      "should", "use",    "do",     "does",   "be",    "there", "here",    "from",   "feels",  "feel",
      "looks",  "look",   "like",   "made",   "are",   "by",    "we",      "us",     "need",   "want",
      "have",   "has",    "item",   "about",  "how",   "so",    "then",    "into",   "up",     "out",
      "as",     "if",     "would",  "could",  "let",   "lets",  "whose",  "am",     "your"};
  return words;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

FeatureVector normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw InvalidArgument("cannot normalize a zero feature");
  return (v / n).cast<float>();
}

Eigen::VectorXd normalized_d(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw InvalidArgument("cannot normalize a zero feature");
  return v / n;
}

// Fixed seeded map with orthonormal columns: dot products of summary codes
// survive the lift to 1024 dims unchanged.
const Eigen::MatrixXd& projection(Modality m, int basis_dim) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, Eigen::MatrixXd> cache;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(static_cast<int>(m), basis_dim);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Rng rng(mix(kProjectionSeed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(basis_dim)));
  Eigen::MatrixXd g(kFeatureDim, basis_dim);
  for (int c = 0; c < basis_dim; ++c)
    for (int r = 0; r < kFeatureDim; ++r) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(kFeatureDim, basis_dim);
  return cache.emplace(key, std::move(q)).first->second;
}

// Gaussian bumps on an evenly spaced grid of centers.
void rbf(Eigen::VectorXd& out, int offset, double x, double lo, double step, int count, double width) {
  for (int i = 0; i < count; ++i) {
    const double d = (x - (lo + step * i)) / width;
    out(offset + i) = std::exp(-0.5 * d * d);
  }
}

constexpr int kShapeCenters = 26;
Eigen::VectorXd shape_code(const Vec3& half) {
  Eigen::VectorXd b(3 * kShapeCenters);
  for (int a = 0; a < 3; ++a) rbf(b, a * kShapeCenters, std::log(std::max(half[a], 1e-4)), -4.6, 0.2, kShapeCenters, 0.15);
  return normalized_d(b);
}

FeatureVector lift(Modality m, const Eigen::VectorXd& code) {
  return normalized(projection(m, static_cast<int>(code.size())) * code);
}

FeatureVector encode_words(const std::vector<std::string>& words) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(kFeatureDim);
  for (const auto& w : words) acc += word_vector(w).cast<double>();
  return normalized(acc);
}

FeatureVector encode_text(std::string_view text) {
  auto words = content_words(text);
  if (words.empty()) {
    // Only function words: fall back to all of them.
    for (auto& w : split_whitespace(text)) {
      std::string lw;
      for (char c : w)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') lw += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (!lw.empty()) words.push_back(lw);
    }
  }
  require(!words.empty(), "cannot encode empty text");
  return encode_words(words);
}

FeatureVector encode_visual(const VisualPayload& v) {
  require(!v.category.empty(), "visual payload needs a category");
  const Eigen::VectorXd shape = projection(Modality::object_visual, 3 * kShapeCenters) * shape_code(v.half_extents);
  return normalized(word_vector(v.category).cast<double>() + 0.25 * shape);
}

FeatureVector encode_point_cloud(const PointCloud& pc) {
  require(!pc.points.empty(), "empty point cloud");
  Vec3 lo = pc.points.front();
  Vec3 hi = lo;
  for (const auto& p : pc.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  return lift(Modality::point_cloud, shape_code(0.5 * (hi - lo)));
}

FeatureVector encode_impact(const ImpactSoundClip& clip) {
  require(!clip.samples.empty() && clip.sample_rate > 0, "empty impact clip");
  const auto f = spectral_features(clip.samples, clip.sample_rate);
  constexpr int kC = 31, kD = 46;
  Eigen::VectorXd b(kC + kD);
  rbf(b, 0, std::log(std::max(f.centroid_hz, 1.0)), 6.0, 0.1, kC, 0.1);
  rbf(b, kC, std::log(std::max(f.decay_per_s, 1e-3)), 1.0, 0.1, kD, 0.1);
  b.head(kC) /= std::max(b.head(kC).norm(), 1e-300);
  b.tail(kD) /= std::max(b.tail(kD).norm(), 1e-300);
  return lift(Modality::impact_sound, b);
}

FeatureVector encode_tactile(const TactileReading& r) {
  require(!r.marker_init.empty() && r.marker_init.size() == r.marker_final.size(), "malformed tactile reading");
  constexpr int kN = 26;
  constexpr double kScale = 0.25;  // d_max of the default configuration
  Eigen::VectorXd b(2 * kN);
  rbf(b, 0, r.mean_displacement() / kScale, 0.0, 0.04, kN, 0.08);
  rbf(b, kN, r.max_displacement() / kScale, 0.0, 0.04, kN, 0.08);
  return lift(Modality::tactile, normalized_d(b));
}

FeatureVector encode_temperature(const TemperatureReading& t) {
  require(std::isfinite(t.celsius), "temperature must be finite");
  constexpr int kN = 25;
  Eigen::VectorXd b(kN);
  rbf(b, 0, t.celsius, -10.0, 5.0, kN, 6.0);
  if (b.norm() < 1e-200) throw InvalidArgument("temperature outside the encodable range");
  return lift(Modality::temperature, normalized_d(b));
}

}  // namespace

std::string_view to_string(Modality m) { return kModalityNames[static_cast<int>(m)]; }

Modality parse_modality(std::string_view s) {
  for (int i = 0; i < kModalityCount; ++i)
    if (s == kModalityNames[i]) return static_cast<Modality>(i);
  if (s == "visual") return Modality::object_visual;
  if (s == "audio") return Modality::impact_sound;
  throw InvalidArgument("unknown modality: " + std::string(s));
}

VisualPayload visual_payload(const ObjectInstance& o) { return {o.category, o.bbox.half}; }

std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.back() == '-') cur.pop_back();
    while (!cur.empty() && cur.front() == '-') cur.erase(cur.begin());
    if (!cur.empty() && !stopwords().contains(cur)) out.push_back(cur);
    cur.clear();
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '-')
      cur += static_cast<char>(std::tolower(uc));
    else
      flush();
  }
  flush();
  return out;
}

const FeatureVector& word_vector(std::string_view word) {
  static std::mutex mu;
  static std::unordered_map<std::string, FeatureVector> cache;
  std::lock_guard lock(mu);
  std::string key(word);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Rng rng(mix(kLexiconSeed, fnv1a64(word)));
  Eigen::VectorXd v(kFeatureDim);
  for (int i = 0; i < kFeatureDim; ++i) v(i) = rng.normal();
  return cache.emplace(std::move(key), normalized(v)).first->second;
}

FeatureVector encode(Modality modality, const SensorPayload& payload) {
  if (payload.index() != static_cast<std::size_t>(modality))
    throw InvalidArgument("payload type does not match modality " + std::string(to_string(modality)));
  switch (modality) {
    case Modality::object_visual: return encode_visual(std::get<VisualPayload>(payload));
    case Modality::point_cloud: return encode_point_cloud(std::get<PointCloud>(payload));
    case Modality::impact_sound: return encode_impact(std::get<ImpactSoundClip>(payload));
    case Modality::ambient_sound: {
      const auto& tag = std::get<AmbientSoundTag>(payload);
      return encode_text(tag.description.empty() ? tag.ontology_id : tag.description);
    }
    case Modality::tactile: return encode_tactile(std::get<TactileReading>(payload));
    case Modality::temperature: return encode_temperature(std::get<TemperatureReading>(payload));
    case Modality::text: return encode_text(std::get<std::string>(payload));
  }
  throw InvalidArgument("unknown modality");
}

FeatureVector position_code(const Vec3& center) {
  Eigen::VectorXd p(kFeatureDim);
  constexpr int kPerAxis = kFeatureDim / 3 + 1;
  for (int i = 0; i < kFeatureDim; ++i) {
    const int axis = i % 3;
    const int k = i / 3;
    const double omega = 10.0 * std::exp(-std::log(1000.0) * (k / 2) / (kPerAxis / 2.0));
    p(i) = (k % 2 == 0) ? std::sin(center[axis] * omega) : std::cos(center[axis] * omega);
  }
  return normalized(p);
}

SceneFeatureMatrix scene_features(const Scene& scene) {
  SceneFeatureMatrix m;
  m.rows.resize(static_cast<Eigen::Index>(scene.objects.size()), kFeatureDim);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (o.id != static_cast<int>(i)) throw InvalidArgument("scene object ids must be dense");
    const Eigen::VectorXd v = encode(Modality::object_visual, visual_payload(o)).cast<double>() +
                              0.05 * position_code(o.bbox.center).cast<double>();
    m.rows.row(static_cast<Eigen::Index>(i)) = normalized(v).transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------

namespace {
bool same_bits(const float* a, const float* b, Eigen::Index n) {
  return n == 0 || std::memcmp(a, b, static_cast<std::size_t>(n) * sizeof(float)) == 0;
}
bool same_matrix(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && same_bits(a.data(), b.data(), a.size());
}
bool same_vector(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return a.size() == b.size() && same_bits(a.data(), b.data(), a.size());
}
}  // namespace

FeatureVector LinearAdapter::apply(const FeatureVector& x) const {
  FeatureVector y = weight.size() == 0 ? x : FeatureVector(weight * x);
  if (bias.size() != 0) {
    if (bias.size() != y.size()) throw InvalidArgument("adapter bias dimension mismatch");
    y += bias;
  }
  return y;
}

bool operator==(const LinearAdapter& a, const LinearAdapter& b) {
  return same_matrix(a.weight, b.weight) && same_vector(a.bias, b.bias);
}

AdapterParams AdapterParams::identity() { return {}; }

bool operator==(const AdapterParams& a, const AdapterParams& b) {
  for (int i = 0; i < kModalityCount; ++i)
    if (!(a.adapters[static_cast<std::size_t>(i)] == b.adapters[static_cast<std::size_t>(i)])) return false;
  return same_matrix(a.select, b.select);
}

namespace {
constexpr char kMagic[4] = {'E', 'S', 'A', 'P'};
constexpr std::uint32_t kBlobVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_floats(std::string& out, const float* p, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, p + i, 4);
    put_u32(out, bits);
  }
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > bytes.size()) throw InvalidArgument("adapter blob truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  void floats(float* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::uint32_t bits = u32();
      std::memcpy(p + i, &bits, 4);
    }
  }
};
}  // namespace

std::string serialize(const AdapterParams& p) {
  const int d = kFeatureDim;
  std::string out(kMagic, 4);
  put_u32(out, kBlobVersion);
  put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, kModalityCount + 1);
  auto block = [&](const Eigen::MatrixXf& w, const Eigen::VectorXf* b) {
    if (w.size() != 0 && (w.rows() != d || w.cols() != d)) throw InvalidArgument("adapter weight must be 1024x1024");
    if (b && b->size() != 0 && b->size() != d) throw InvalidArgument("adapter bias must have 1024 entries");
    const std::uint32_t flags = (w.size() != 0 ? 1u : 0u) | (b && b->size() != 0 ? 2u : 0u);
    put_u32(out, flags);
    if (flags & 1u) {
      // Row-major on disk.
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = w;
      put_floats(out, rm.data(), rm.size());
    }
    if (flags & 2u) put_floats(out, b->data(), b->size());
  };
  for (const auto& a : p.adapters) block(a.weight, &a.bias);
  block(p.select, nullptr);
  return out;
}

AdapterParams deserialize_adapter_params(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw InvalidArgument("not an adapter blob");
  Reader r{bytes, 4};
  if (const auto v = r.u32(); v != kBlobVersion) throw InvalidArgument("unsupported adapter blob version " + std::to_string(v));
  const auto d = static_cast<Eigen::Index>(r.u32());
  if (d != kFeatureDim) throw InvalidArgument("adapter blob dimension mismatch");
  if (r.u32() != kModalityCount + 1) throw InvalidArgument("adapter blob block count mismatch");
  AdapterParams p;
  auto block = [&](Eigen::MatrixXf& w, Eigen::VectorXf* b) {
    const auto flags = r.u32();
    if (flags > 3u || (!b && (flags & 2u))) throw InvalidArgument("bad adapter block flags");
    if (flags & 1u) {
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(d, d);
      r.floats(rm.data(), rm.size());
      w = rm;
    }
    if (flags & 2u) {
      b->resize(d);
      r.floats(b->data(), d);
    }
  };
  for (auto& a : p.adapters) block(a.weight, &a.bias);
  block(p.select, nullptr);
  if (r.pos != bytes.size()) throw InvalidArgument("trailing bytes after adapter blob");
  return p;
}

FeatureVector adapt(const AdapterParams& params, Modality modality, const FeatureVector& feature) {
  return params.adapter(modality).apply(feature);
}

Eigen::VectorXd select_scores(const FeatureVector& query, const Eigen::MatrixXf& objects, const Eigen::MatrixXf& w) {
  require(objects.rows() >= 1, "select_scores needs at least one object");
  require(objects.cols() == query.size(), "object/query dimension mismatch");
  if (w.size() == 0) return Eigen::VectorXd::Constant(objects.rows(), 0.5);
  require(w.rows() == query.size() && w.cols() == objects.cols(), "select weight dimension mismatch");
  const Eigen::VectorXd wq = (w.transpose() * query).cast<double>();
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  const Eigen::VectorXd logits = scale * (objects.cast<double>() * wq);
  return logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

Eigen::VectorXd select_scores(const FeatureVector& query, const SceneFeatureMatrix& objects,
                              const AdapterParams& params) {
  return select_scores(query, objects.rows, params.select);
}

int argmax_lowest(const Eigen::VectorXd& v) {
  require(v.size() >= 1, "argmax of an empty vector");
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

double bce_loss(const Eigen::VectorXd& scores, int target) {
  require(scores.size() >= 1, "bce_loss needs at least one score");
  require(target >= 0 && target < scores.size(), "target index out of range");
  double loss = 0.0;
  for (int i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores(i), kBceEpsilon, 1.0 - kBceEpsilon);
    loss -= i == target ? std::log(s) : std::log(1.0 - s);
  }
  return loss / static_cast<double>(scores.size());
}

TrainingDiverged::TrainingDiverged(int e, double loss)
    : Error("SELECT training diverged at epoch " + std::to_string(e) + " (loss " + std::to_string(loss) + ")"),
      epoch(e) {}

SelectTrainResult train_select(const std::vector<SelectExample>& dataset, const SelectHyper& hyper,
                               const AdapterParams& init) {
  require(!dataset.empty(), "train_select needs a non-empty dataset");
  require(hyper.epochs >= 0, "epochs must be non-negative");
  require(hyper.lr > 0.0 && std::isfinite(hyper.lr), "learning rate must be positive");
  const Eigen::Index d = kFeatureDim;
  const auto n = static_cast<Eigen::Index>(dataset.size());

  Eigen::MatrixXd queries(d, n);
  // Consecutive examples over the same object matrix (one scene) form a group
  // so every epoch reads each matrix once.
  struct Group {
    Eigen::Index first = 0, count = 0;
    Eigen::MatrixXd objects;  // m x d
    Eigen::MatrixXd base;     // m x count, logits from W0
  };
  std::vector<Group> groups;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = dataset[static_cast<std::size_t>(i)];
    require(ex.query.size() == d, "query must have 1024 entries");
    require(ex.objects.rows() >= 1 && ex.objects.cols() == d, "objects must be O x 1024 with O >= 1");
    require(ex.target >= 0 && ex.target < ex.objects.rows(), "target index out of range");
    queries.col(i) = adapt(init, Modality::text, ex.query).cast<double>();
    const auto& prev = i > 0 ? dataset[static_cast<std::size_t>(i - 1)].objects : ex.objects;
    if (groups.empty() || prev.rows() != ex.objects.rows() || prev != ex.objects)
      groups.push_back({i, 0, ex.objects.cast<double>(), {}});
    ++groups.back().count;
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const bool has_w0 = init.select.size() != 0;
  if (has_w0) require(init.select.rows() == d && init.select.cols() == d, "select weight must be 1024x1024");

  // Every gradient step adds scale * sum_n q_n (sum_i g_ni o_ni)^T, so W - W0
  // stays in span(q) x R^d. Descend on coefficients in an orthonormal basis of span(q).
  // Queries come from f32 features; pivots under 1e-5 of the largest are rounding noise.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(queries);
  qr.setThreshold(1e-5);
  const auto rank = qr.rank();
  const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, rank);
  const Eigen::MatrixXd coords = basis.transpose() * queries;  // rank x n

  {
    const Eigen::MatrixXd w0t = has_w0 ? Eigen::MatrixXd(init.select.cast<double>().transpose()) : Eigen::MatrixXd();
    for (auto& g : groups) {
      g.base = has_w0 ? Eigen::MatrixXd(scale * (g.objects * (w0t * queries.middleCols(g.first, g.count))))
                      : Eigen::MatrixXd::Zero(g.objects.rows(), g.count);
    }
  }

  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(rank, d);
  SelectTrainResult res;
  res.params = init;

  auto pass = [&](Eigen::MatrixXd* grad) {
    double total = 0.0;
    const Eigen::MatrixXd v = delta.transpose() * coords;  // d x n, column i = delta^T c_i
    Eigen::MatrixXd u(d, n);                                // column i = o_i^T g_i
    for (const auto& grp : groups) {
      const Eigen::MatrixXd logits = grp.base + scale * (grp.objects * v.middleCols(grp.first, grp.count));
      const auto rows = grp.objects.rows();
      const auto m = static_cast<double>(rows);
      Eigen::MatrixXd g(rows, grp.count);
      for (Eigen::Index c = 0; c < grp.count; ++c) {
        const int target = dataset[static_cast<std::size_t>(grp.first + c)].target;
        double loss = 0.0;
        for (Eigen::Index j = 0; j < rows; ++j) {
          const double s = 1.0 / (1.0 + std::exp(-logits(j, c)));
          const double t = j == target ? 1.0 : 0.0;
          const double sc = std::clamp(s, kBceEpsilon, 1.0 - kBceEpsilon);
          loss -= t * std::log(sc) + (1.0 - t) * std::log(1.0 - sc);
          g(j, c) = (s - t) / m / static_cast<double>(n);
        }
        total += loss / m;
      }
      if (grad) u.middleCols(grp.first, grp.count).noalias() = grp.objects.transpose() * g;
    }
    if (grad) grad->noalias() = scale * coords * u.transpose();
    return total / static_cast<double>(n);
  };

  Eigen::MatrixXd grad;
  for (int e = 0; e < hyper.epochs; ++e) {
    const double loss = pass(&grad);
    if (!std::isfinite(loss) || loss > 1e3) throw TrainingDiverged(e, loss);
    res.loss_history.push_back(loss);
    delta -= hyper.lr * grad;
  }
  const double final_loss = pass(nullptr);
  if (!std::isfinite(final_loss) || final_loss > 1e3) throw TrainingDiverged(hyper.epochs, final_loss);
  res.loss_history.push_back(final_loss);

  if (hyper.epochs > 0) {
    Eigen::MatrixXd w = basis * delta;
    if (has_w0) w += init.select.cast<double>();
    res.params.select = w.cast<float>();
  }
  return res;
}

LinearAdapter fit_adapter(const std::vector<FeatureVector>& inputs, const std::vector<FeatureVector>& targets,
                          double ridge) {
  require(!inputs.empty() && inputs.size() == targets.size(), "fit_adapter needs matching non-empty sets");
  require(ridge > 0.0, "ridge must be positive");
  const auto n = static_cast<Eigen::Index>(inputs.size());
  const auto din = inputs.front().size();
  const auto dout = targets.front().size();
  Eigen::MatrixXd x(n, din), y(n, dout);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(inputs[static_cast<std::size_t>(i)].size() == din && targets[static_cast<std::size_t>(i)].size() == dout,
            "inconsistent feature sizes");
    x.row(i) = inputs[static_cast<std::size_t>(i)].cast<double>().transpose();
    y.row(i) = targets[static_cast<std::size_t>(i)].cast<double>().transpose();
  }
  const Eigen::RowVectorXd mx = x.colwise().mean();
  const Eigen::RowVectorXd my = y.colwise().mean();
  x.rowwise() -= mx;
  y.rowwise() -= my;
  Eigen::MatrixXd k = x * x.transpose();
  k.diagonal().array() += ridge;
  const Eigen::MatrixXd a = k.ldlt().solve(x);  // n x din
  const Eigen::MatrixXd w = y.transpose() * a;   // dout x din
  LinearAdapter out;
  out.weight = w.cast<float>();
  out.bias = (my.transpose() - w * mx.transpose()).cast<float>();
  return out;
}

AdapterParams align_modalities(const Catalog& catalog, const SensorConfig& cfg) {
  AdapterParams p;
  std::vector<FeatureVector> xs, ys;

  // Impact sound -> material word.
  for (const auto& mat : catalog.materials) {
    for (std::uint64_t s = 0; s < 6; ++s) {
      ObjectInstance o;
      o.material = mat.name;
      o.seed = mix(0xA11C4ULL, s);
      for (int sp = 0; sp < kStrikeSites; ++sp) {
        xs.push_back(encode(Modality::impact_sound, hit(o, catalog, sp, cfg.hit_force, cfg)));
        ys.push_back(word_vector(to_string(mat.name)));
      }
    }
  }
  p.adapter(Modality::impact_sound) = fit_adapter(xs, ys);
  xs.clear();
  ys.clear();

  // Tactile -> hardness adjective.
  for (const auto& mat : catalog.materials) {
    ObjectInstance o;
    o.material = mat.name;
    for (int site = 0; site < kTouchSites; ++site) {
      xs.push_back(encode(Modality::tactile, touch(o, catalog, site, cfg.touch_force, cfg)));
      ys.push_back(word_vector(to_string(hardness_class(mat.hardness))));
    }
  }
  p.adapter(Modality::tactile) = fit_adapter(xs, ys);
  xs.clear();
  ys.clear();

  // Temperature -> temperature adjective.
  for (auto label : kAllTempLabels) {
    for (std::uint64_t s = 0; s < 30; ++s) {
      xs.push_back(encode(Modality::temperature, sample_temperature(label, mix(0x7E4AULL, s))));
      ys.push_back(word_vector(temp_adjective(label)));
    }
  }
  p.adapter(Modality::temperature) = fit_adapter(xs, ys);
  return p;
}

const AdapterParams& aligned_params() {
  static const AdapterParams p = align_modalities(builtin_catalog());
  return p;
}

double cosine(const FeatureVector& a, const FeatureVector& b) {
  require(a.size() == b.size(), "cosine of vectors with different lengths");
  const Eigen::VectorXd x = a.cast<double>();
  const Eigen::VectorXd y = b.cast<double>();
  const double nx = x.norm();
  const double ny = y.norm();
  require(nx > 0.0 && ny > 0.0, "cosine of a zero vector");
  return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

}  // namespace esim
