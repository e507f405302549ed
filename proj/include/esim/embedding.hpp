#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "esim/scene.hpp"
#include "esim/sensors.hpp"

namespace esim {

inline constexpr int kFeatureDim = 1024;

using FeatureVector = Eigen::VectorXf;

enum class Modality { object_visual, point_cloud, impact_sound, ambient_sound, tactile, temperature, text };
inline constexpr int kModalityCount = 7;
std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

/// What a visual encoder sees of an object: its category and shape.
struct VisualPayload {
  std::string category;
  Vec3 half_extents;
};
VisualPayload visual_payload(const ObjectInstance& o);

/// Alternatives are ordered like Modality.
using SensorPayload = std::variant<VisualPayload, PointCloud, ImpactSoundClip, AmbientSoundTag, TactileReading,
                                   TemperatureReading, std::string>;

/// Lower-cased words of `text` with function words and request verbs removed.
std::vector<std::string> content_words(std::string_view text);

/// Seeded unit vector naming a word; shared by the text and visual encoders.
const FeatureVector& word_vector(std::string_view word);

/// Deterministic feature synthesis: a per-modality summary basis (attribute
/// hashes, RBF codes of signal statistics) mapped to 1024 dims by a fixed
/// seeded projection with orthonormal columns. Throws InvalidArgument when
/// the payload alternative does not match `modality`.
FeatureVector encode(Modality modality, const SensorPayload& payload);

/// Rows aligned to object ids: L2-normalized visual feature plus a small
/// sinusoidal code of the object's box center.
struct SceneFeatureMatrix {
  Eigen::MatrixXf rows;  // O x 1024
  int size() const { return static_cast<int>(rows.rows()); }
};
SceneFeatureMatrix scene_features(const Scene& scene);
FeatureVector position_code(const Vec3& center);

/// One-layer affine adapter. Empty weight means identity, empty bias means zero.
struct LinearAdapter {
  Eigen::MatrixXf weight;
  Eigen::VectorXf bias;

  bool is_identity() const { return weight.size() == 0 && bias.size() == 0; }
  FeatureVector apply(const FeatureVector& x) const;
  friend bool operator==(const LinearAdapter& a, const LinearAdapter& b);
};

struct AdapterParams {
  std::array<LinearAdapter, kModalityCount> adapters;
  Eigen::MatrixXf select;  // bilinear SELECT weight, 1024 x 1024

  /// Identity adapters and a zero SELECT head.
  static AdapterParams identity();

  LinearAdapter& adapter(Modality m) { return adapters[static_cast<std::size_t>(m)]; }
  const LinearAdapter& adapter(Modality m) const { return adapters[static_cast<std::size_t>(m)]; }
  friend bool operator==(const AdapterParams& a, const AdapterParams& b);
};

/// Little-endian f32 blob: 16-byte header ("ESAP", version, dim, block count),
/// then per block a u32 flag word (bit0 weight, bit1 bias) and the data.
std::string serialize(const AdapterParams& p);
AdapterParams deserialize_adapter_params(std::string_view bytes);

FeatureVector adapt(const AdapterParams& params, Modality modality, const FeatureVector& feature);

/// score_i = sigmoid(q^T W o_i / sqrt(d)).
Eigen::VectorXd select_scores(const FeatureVector& query, const SceneFeatureMatrix& objects,
                              const AdapterParams& params);
Eigen::VectorXd select_scores(const FeatureVector& query, const Eigen::MatrixXf& objects, const Eigen::MatrixXf& w);
/// Index of the maximum, lowest index on ties.
int argmax_lowest(const Eigen::VectorXd& v);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy against a one-hot target; scores are clamped to
/// [eps, 1 - eps] before the log.
double bce_loss(const Eigen::VectorXd& scores, int target);

template <typename Scalar>
struct SelectLossGrad {
  Scalar loss = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> grad_w;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad_query;
};

/// Loss and analytic gradient of the SELECT head for one (query, objects,
/// target) instance. `objects` holds one object per row; the feature
/// dimension d is taken from the query. The gradient is that of the
/// unclamped loss.
template <typename Scalar>
SelectLossGrad<Scalar> bce_loss_and_grad(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& w,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& query,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& objects,
                                         int target) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto n = objects.rows();
  if (n < 1) throw InvalidArgument("bce_loss_and_grad needs at least one object");
  if (target < 0 || target >= n) throw InvalidArgument("target index out of range");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(query.size()));
  const Scalar eps = static_cast<Scalar>(kBceEpsilon);

  const Vec wq = w.transpose() * query;  // o_i^T (W^T q) = q^T W o_i
  const Vec logits = scale * (objects * wq);
  SelectLossGrad<Scalar> r;
  r.scores.resize(n);
  Vec g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-logits(i)));
    r.scores(i) = s;
    const Scalar t = i == target ? Scalar(1) : Scalar(0);
    const Scalar sc = std::clamp(s, eps, Scalar(1) - eps);
    r.loss -= t * std::log(sc) + (Scalar(1) - t) * std::log(Scalar(1) - sc);
    g(i) = (s - t) / static_cast<Scalar>(n);
  }
  r.loss /= static_cast<Scalar>(n);
  const Vec og = objects.transpose() * g;  // sum_i g_i o_i
  r.grad_w = scale * query * og.transpose();
  r.grad_query = scale * (w * og);
  return r;
}

struct SelectExample {
  FeatureVector query;      // raw text feature; the text adapter is applied during training
  Eigen::MatrixXf objects;  // O x d
  int target = 0;
};

struct SelectHyper {
  // Step size sized to the 1/(4d) smoothness of the mean loss in W for
  // unit-norm features; smaller values barely move the sqrt(d)-scaled logits.
  double lr = 2048.0;
  int epochs = 200;
  std::uint64_t seed = 0;
};

struct SelectTrainResult {
  AdapterParams params;
  std::vector<double> loss_history;  // mean loss before each epoch, then the final loss
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, double loss);
  int epoch;
};

/// Full-batch gradient descent on the SELECT weight with adapters frozen.
/// Updates stay in span(queries) x R^d, so descent runs in that reduced
/// coordinate system and is lifted back exactly.
SelectTrainResult train_select(const std::vector<SelectExample>& dataset, const SelectHyper& hyper,
                               const AdapterParams& init);

/// Dual-form ridge regression fitting an affine adapter from features to targets.
LinearAdapter fit_adapter(const std::vector<FeatureVector>& inputs, const std::vector<FeatureVector>& targets,
                          double ridge = 1e-3);

/// Modality-alignment stage: fits impact-sound, tactile and temperature
/// adapters so their outputs land on the words for material, hardness and
/// temperature. Other adapters stay identity; the SELECT head is zero.
AdapterParams align_modalities(const Catalog& catalog, const SensorConfig& cfg = {});
/// Cached align_modalities(builtin_catalog()).
const AdapterParams& aligned_params();

/// Throws InvalidArgument for a zero vector.
double cosine(const FeatureVector& a, const FeatureVector& b);

}  // namespace esim
