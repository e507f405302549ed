#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "esim/builtin_data.hpp"
#include "esim/classifiers.hpp"
#include "esim/embedding.hpp"

namespace esim {
namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

struct Instance {
  MatD w;
  VecD q;
  MatD objects;
  int target;
};

Instance random_instance(Rng& rng, int d) {
  const int n = 1 + static_cast<int>(rng.index(8));
  Instance in{MatD(d, d), VecD(d), MatD(n, d), static_cast<int>(rng.index(static_cast<std::size_t>(n)))};
  for (int i = 0; i < d; ++i) {
    in.q(i) = rng.normal();
    for (int j = 0; j < d; ++j) in.w(i, j) = 0.5 * rng.normal();
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) in.objects(i, j) = rng.normal();
  return in;
}

// Unclamped mean BCE, written out independently of the analytic route.
double loss_of(const MatD& w, const VecD& q, const MatD& objects, int target) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  double loss = 0;
  for (int i = 0; i < objects.rows(); ++i) {
    const double z = scale * q.dot(w * objects.row(i).transpose());
    const double s = 1.0 / (1.0 + std::exp(-z));
    loss -= i == target ? std::log(s) : std::log(1.0 - s);
  }
  return loss / static_cast<double>(objects.rows());
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b))); }

TEST(SelectLoss, GradientMatchesFiniteDifferences) {
  Rng rng(99);
  const double h = 1e-4;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng, 6);
    const auto r = bce_loss_and_grad<double>(in.w, in.q, in.objects, in.target);
    EXPECT_NEAR(r.loss, loss_of(in.w, in.q, in.objects, in.target), 1e-12);
    for (int i = 0; i < in.w.rows(); ++i) {
      for (int j = 0; j < in.w.cols(); ++j) {
        MatD wp = in.w, wm = in.w;
        wp(i, j) += h;
        wm(i, j) -= h;
        const double fd = (loss_of(wp, in.q, in.objects, in.target) - loss_of(wm, in.q, in.objects, in.target)) / (2 * h);
        worst = std::max(worst, rel_err(fd, r.grad_w(i, j)));
      }
      VecD qp = in.q, qm = in.q;
      qp(i) += h;
      qm(i) -= h;
      const double fd = (loss_of(in.w, qp, in.objects, in.target) - loss_of(in.w, qm, in.objects, in.target)) / (2 * h);
      worst = std::max(worst, rel_err(fd, r.grad_query(i)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(SelectLoss, AnalyticValues) {
  const int d = 4;
  const MatD w = MatD::Zero(d, d);
  const VecD q = VecD::Ones(d);
  const MatD objs = MatD::Ones(3, d);
  const auto r = bce_loss_and_grad<double>(w, q, objs, 1);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(r.scores(i), 0.5);
  EXPECT_THROW(bce_loss_and_grad<double>(w, q, objs, 3), InvalidArgument);
  Eigen::VectorXd perfect(3);
  perfect << 0.0, 1.0, 0.0;
  EXPECT_LE(bce_loss(perfect, 1), 3 * -std::log(1 - kBceEpsilon));
}

TEST(SelectScores, ZeroHeadAndEquivariance) {
  Rng rng(3);
  Eigen::MatrixXf objs(5, kFeatureDim);
  for (int i = 0; i < objs.size(); ++i) objs.data()[i] = static_cast<float>(rng.normal());
  FeatureVector q(kFeatureDim);
  for (int i = 0; i < kFeatureDim; ++i) q(i) = static_cast<float>(rng.normal());
  const Eigen::MatrixXf zero = Eigen::MatrixXf::Zero(kFeatureDim, kFeatureDim);
  const auto s0 = select_scores(q, objs, zero);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s0(i), 0.5);
  EXPECT_EQ(argmax_lowest(s0), 0);

  Eigen::MatrixXf w(kFeatureDim, kFeatureDim);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.normal() * 0.05);
  const auto s = select_scores(q, objs, w);
  Eigen::MatrixXf perm = objs;
  perm.row(0).swap(perm.row(3));
  const auto sp = select_scores(q, perm, w);
  EXPECT_NEAR(sp(0), s(3), 1e-9);
  EXPECT_NEAR(sp(3), s(0), 1e-9);
}

TEST(SelectScores, ArgmaxInvariantUnderPositiveScaling) {
  Rng rng(8);
  const int d = kFeatureDim;
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXf w(d, d);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.normal() * 0.02);
    Eigen::MatrixXf objs(1 + static_cast<int>(rng.index(8)), d);
    for (int i = 0; i < objs.size(); ++i) objs.data()[i] = static_cast<float>(rng.normal());
    FeatureVector q(d);
    for (int i = 0; i < d; ++i) q(i) = static_cast<float>(rng.normal());
    const float scale = static_cast<float>(0.1 + 3.0 * rng.uniform());
    EXPECT_EQ(argmax_lowest(select_scores(q, objs, w)), argmax_lowest(select_scores(FeatureVector(q * scale), objs, w)));
  }
}

TEST(Encoders, ShapeAndDeterminism) {
  const auto a = encode(Modality::temperature, TemperatureReading{20.0, TempLabel::room});
  EXPECT_EQ(a.size(), kFeatureDim);
  EXPECT_EQ(a, encode(Modality::temperature, TemperatureReading{20.0, TempLabel::room}));
  EXPECT_THROW(encode(Modality::tactile, TemperatureReading{20.0, TempLabel::room}), InvalidArgument);
  const auto v = encode(Modality::object_visual, VisualPayload{"cup", {0.05, 0.05, 0.06}});
  EXPECT_NEAR(v.norm(), 1.0, 1e-5);
}

TEST(Encoders, TemperatureLocality) {
  auto e = [](double c) { return encode(Modality::temperature, TemperatureReading{c, TempLabel::room}); };
  EXPECT_GT(cosine(e(20), e(21)), cosine(e(20), e(90)));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    double x = rng.uniform(0, 95), y = rng.uniform(0, 95), z = rng.uniform(0, 95);
    if (std::abs(x - y) > std::abs(x - z)) std::swap(y, z);
    if (std::abs(x - z) - std::abs(x - y) < 5) continue;
    // Far pairs are orthogonal up to float rounding of the lifted code.
    EXPECT_GE(cosine(e(x), e(y)), cosine(e(x), e(z)) - 1e-8) << x << " " << y << " " << z;
  }
}

TEST(Encoders, TactileLocality) {
  ObjectInstance o;
  o.category = "cup";
  o.bbox = {{1, 1, 0.06}, {0.05, 0.05, 0.06}};
  std::vector<std::pair<double, FeatureVector>> pts;  // mean displacement, encoding
  for (auto m : kAllMaterials) {
    o.material = m;
    for (double force : {0.25, 0.5, 1.0}) {
      const auto r = touch(o, builtin_catalog(), 5, force);
      pts.emplace_back(r.mean_displacement(), encode(Modality::tactile, r));
    }
  }
  int checked = 0;
  for (const auto& [x, ex] : pts)
    for (const auto& [y, ey] : pts)
      for (const auto& [z, ez] : pts) {
        if (std::abs(x - z) - std::abs(x - y) < 0.02) continue;
        ++checked;
        EXPECT_GE(cosine(ex, ey), cosine(ex, ez)) << x << " " << y << " " << z;
      }
  EXPECT_GT(checked, 100);
}

TEST(Cosine, Properties) {
  Rng rng(6);
  for (int t = 0; t < 1000; ++t) {
    FeatureVector a(16), b(16);
    for (int i = 0; i < 16; ++i) {
      a(i) = static_cast<float>(rng.normal());
      b(i) = static_cast<float>(rng.normal());
    }
    EXPECT_EQ(cosine(a, b), cosine(b, a));
  }
  FeatureVector v = FeatureVector::Ones(8);
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-12);
  EXPECT_NEAR(cosine(v, FeatureVector(-v)), -1.0, 1e-12);
  EXPECT_THROW(cosine(v, FeatureVector::Zero(8)), InvalidArgument);
}

TEST(Adapters, IdentityAndBias) {
  Rng rng(2);
  FeatureVector x(kFeatureDim);
  for (int i = 0; i < kFeatureDim; ++i) x(i) = static_cast<float>(rng.normal());
  LinearAdapter id;
  EXPECT_EQ(id.apply(x), x);
  LinearAdapter eye{Eigen::MatrixXf::Identity(kFeatureDim, kFeatureDim), Eigen::VectorXf::Zero(kFeatureDim)};
  EXPECT_EQ(eye.apply(x), x);
  LinearAdapter bias{Eigen::MatrixXf::Zero(kFeatureDim, kFeatureDim), Eigen::VectorXf::Constant(kFeatureDim, 0.25f)};
  EXPECT_EQ(bias.apply(x), bias.bias);
  EXPECT_EQ(adapt(AdapterParams::identity(), Modality::impact_sound, x), x);
}

TEST(Adapters, AdaptedFeatureChangesScores) {
  const auto& p = aligned_params();
  ObjectInstance o;
  o.category = "cup";
  o.bbox = {{1, 1, 0.06}, {0.05, 0.05, 0.06}};
  o.material = Material::steel;
  const auto clip = hit(o, builtin_catalog(), 0, 1.0);
  const auto raw = encode(Modality::impact_sound, clip);
  const auto adapted = adapt(p, Modality::impact_sound, raw);
  EXPECT_NE(raw, adapted);
  // The aligned adapter lands on the material word.
  float best = -2;
  std::string best_word;
  for (auto m : kAllMaterials) {
    const float c = static_cast<float>(cosine(adapted, word_vector(to_string(m))));
    if (c > best) best = c, best_word = std::string(to_string(m));
  }
  EXPECT_EQ(best_word, "steel");
}

TEST(Adapters, SerializationRoundTrip) {
  const auto& p = aligned_params();
  const auto bytes = serialize(p);
  EXPECT_EQ(bytes.substr(0, 4), "ESAP");
  const auto back = deserialize_adapter_params(bytes);
  EXPECT_TRUE(back == p);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_THROW(deserialize_adapter_params(bytes.substr(0, bytes.size() - 3)), InvalidArgument);
}

TEST(TrainSelect, SeparableSetReachesFullAccuracy) {
  // Synthetic queries naming one of four orthogonal prototypes.
  Rng rng(12);
  const int d = kFeatureDim;
  std::vector<FeatureVector> proto(6);
  for (auto& v : proto) {
    v = FeatureVector(d);
    for (int i = 0; i < d; ++i) v(i) = static_cast<float>(rng.normal());
    v.normalize();
  }
  std::vector<SelectExample> set;
  for (int t = 0; t < 40; ++t) {
    SelectExample ex;
    ex.objects = Eigen::MatrixXf(4, d);
    std::vector<int> ids{0, 1, 2, 3, 4, 5};
    rng.shuffle(ids);
    for (int i = 0; i < 4; ++i) ex.objects.row(i) = proto[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])].transpose();
    ex.target = static_cast<int>(rng.index(4));
    ex.query = proto[static_cast<std::size_t>(ids[static_cast<std::size_t>(ex.target)])];
    set.push_back(ex);
  }
  // Zero head: every score ties, argmax is object 0.
  const auto r = train_select(set, {}, AdapterParams::identity());
  for (std::size_t i = 1; i < r.loss_history.size(); ++i) EXPECT_LE(r.loss_history[i], r.loss_history[i - 1] + 1e-12);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  int correct = 0;
  for (const auto& ex : set) correct += argmax_lowest(select_scores(ex.query, ex.objects, r.params.select)) == ex.target;
  EXPECT_EQ(correct, 40);
}

TEST(TrainSelect, ZeroEpochsIsNoOp) {
  SelectHyper h;
  h.epochs = 0;
  SelectExample ex{FeatureVector::Ones(kFeatureDim), Eigen::MatrixXf::Ones(2, kFeatureDim), 0};
  const auto init = aligned_params();
  EXPECT_TRUE(train_select({ex}, h, init).params == init);
}

TEST(Calibration, FrozenFileMatchesRecalibration) {
  const auto fresh = calibrate(builtin_catalog());
  const auto frozen = calibration_from_json(nlohmann::json::parse(builtin_data::calibration_json()));
  EXPECT_EQ(fresh.version, frozen.version);
  EXPECT_NEAR(fresh.cold_below, frozen.cold_below, 1e-9);
  EXPECT_NEAR(fresh.hot_above, frozen.hot_above, 1e-9);
  // Centroids are keyed by material in the file; compare per material.
  ASSERT_EQ(fresh.materials.size(), frozen.materials.size());
  for (std::size_t i = 0; i < fresh.materials.size(); ++i) {
    const auto it = std::find(frozen.materials.begin(), frozen.materials.end(), fresh.materials[i]);
    ASSERT_NE(it, frozen.materials.end());
    const auto j = static_cast<std::size_t>(it - frozen.materials.begin());
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(fresh.centroids[i][a], frozen.centroids[j][a], 1e-9);
  }
  for (int a = 0; a < 2; ++a) EXPECT_NEAR(fresh.scale[a], frozen.scale[a], 1e-9);
}

TEST(Calibration, ThresholdsSplitRanges) {
  const auto& c = builtin_calibration();
  EXPECT_GT(c.cold_below, temp_range(TempLabel::cold).hi);
  EXPECT_LT(c.cold_below, temp_range(TempLabel::room).lo);
  EXPECT_GT(c.hot_above, temp_range(TempLabel::room).hi);
  EXPECT_LT(c.hot_above, temp_range(TempLabel::hot).lo);
}

TEST(Classifiers, HardnessRecoveredFromTouch) {
  for (auto m : kAllMaterials) {
    ObjectInstance o;
    o.category = "cup";
    o.bbox = {{1, 1, 0.06}, {0.05, 0.05, 0.06}};
    o.material = m;
    for (int site = 0; site < 16; ++site) {
      const auto r = touch(o, builtin_catalog(), site, 0.5);
      EXPECT_EQ(classify_hardness(r), hardness_class(builtin_catalog().material(m).hardness));
    }
  }
}

}  // namespace
}  // namespace esim
