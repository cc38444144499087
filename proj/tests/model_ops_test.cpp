#include "weips/model/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <unordered_map>

#include "weips/rng.hpp"

namespace weips::model {
namespace {

// Straight transcription of the per-coordinate FTRL-Proximal closed form,
// kept independent from the library implementation on purpose.
struct FtrlRef {
  double z = 0.0, n = 0.0, w = 0.0;

  void step(const HyperParams& hp, double g) {
    const double sigma = (std::sqrt(n + g * g) - std::sqrt(n)) / hp.alpha;
    z = z + g - sigma * w;
    n = n + g * g;
    if (std::abs(z) <= hp.lambda1) {
      w = 0.0;
    } else {
      w = -(z - std::copysign(hp.lambda1, z)) /
          ((hp.beta + std::sqrt(n)) / hp.alpha + hp.lambda2);
    }
  }
};

void expect_rel_close(double a, double b, double rel) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  EXPECT_LE(std::abs(a - b), rel * scale) << a << " vs " << b;
}

TEST(FtrlUpdate, FirstStepFromZeroSlot) {
  HyperParams hp;  // alpha 0.1, beta 1, lambda1 0, lambda2 0
  const auto schema = ModelSchema::lr_ftrl(hp);
  const auto out = ftrl_update(hp, ParameterSlot::zero(schema), 1.0);
  EXPECT_DOUBLE_EQ(out.scalar("z"), 1.0);
  EXPECT_DOUBLE_EQ(out.scalar("n"), 1.0);
  EXPECT_DOUBLE_EQ(out.scalar("w"), -0.05);
}

TEST(FtrlUpdate, ScalarReferenceEquivalenceThousandCases) {
  Rng rng(1234);
  for (int case_i = 0; case_i < 1000; ++case_i) {
    HyperParams hp;
    hp.alpha = rng.uniform(0.01, 1.0);
    hp.beta = rng.uniform(0.0, 2.0);
    hp.lambda1 = rng.bernoulli(0.5) ? rng.uniform(0.0, 1.0) : 0.0;
    hp.lambda2 = rng.bernoulli(0.5) ? rng.uniform(0.0, 1.0) : 0.0;
    const auto schema = ModelSchema::lr_ftrl(hp);

    FtrlRef ref;
    ParameterSlot slot = ParameterSlot::zero(schema);
    const int steps = 1 + static_cast<int>(rng.next_below(8));
    for (int s = 0; s < steps; ++s) {
      const double g = rng.uniform(-3.0, 3.0);
      ref.step(hp, g);
      slot = ftrl_update(hp, slot, g);
      expect_rel_close(slot.scalar("z"), ref.z, 1e-10);
      expect_rel_close(slot.scalar("n"), ref.n, 1e-10);
      expect_rel_close(slot.scalar("w"), ref.w, 1e-10);
    }
  }
}

TEST(FtrlUpdate, L1DrivesSmallWeightsToExactZero) {
  HyperParams hp;
  hp.lambda1 = 10.0;
  const auto schema = ModelSchema::lr_ftrl(hp);
  ParameterSlot slot = ParameterSlot::zero(schema);
  slot = ftrl_update(hp, slot, 0.5);
  EXPECT_EQ(slot.scalar("w"), 0.0);  // |z| = 0.5 <= lambda1
  slot = ftrl_update(hp, slot, 0.5);
  EXPECT_EQ(slot.scalar("w"), 0.0);
}

TEST(FtrlUpdate, NonFiniteGradientRejected) {
  HyperParams hp;
  const auto schema = ModelSchema::lr_ftrl(hp);
  EXPECT_THROW(
      ftrl_update(hp, ParameterSlot::zero(schema),
                  std::numeric_limits<double>::infinity()),
      Error);
}

TEST(Predict, LrSigmoidOfDotProduct) {
  const auto schema = ModelSchema::lr_ftrl({});
  std::unordered_map<FeatureId, ParameterSlot> slots;
  auto s = ParameterSlot::zero(schema);
  s.set("w", {2.0});
  slots[7] = s;

  Sample sample;
  sample.features = {{7, 1.0}};
  EXPECT_DOUBLE_EQ(predict(schema, slots, sample, View::kTraining),
                   1.0 / (1.0 + std::exp(-2.0)));

  Sample absent;
  absent.features = {{9, 1.0}};
  EXPECT_DOUBLE_EQ(predict(schema, slots, absent, View::kTraining), 0.5);
}

// Brute-force FM score: linear term plus explicit sum over feature pairs.
double fm_score_bruteforce(const std::unordered_map<FeatureId, ParameterSlot>& slots,
                           const Sample& sample, std::uint32_t k) {
  double score = 0.0;
  for (const auto& [id, x] : sample.features) {
    auto it = slots.find(id);
    if (it != slots.end()) score += it->second.scalar("w") * x;
  }
  for (std::size_t i = 0; i < sample.features.size(); ++i) {
    for (std::size_t j = i + 1; j < sample.features.size(); ++j) {
      const auto a = slots.find(sample.features[i].first);
      const auto b = slots.find(sample.features[j].first);
      if (a == slots.end() || b == slots.end()) continue;
      const auto* va = a->second.find("v");
      const auto* vb = b->second.find("v");
      if (va == nullptr || vb == nullptr) continue;
      double dot = 0.0;
      for (std::uint32_t f = 0; f < k; ++f) dot += (*va)[f] * (*vb)[f];
      score += dot * sample.features[i].second * sample.features[j].second;
    }
  }
  return score;
}

TEST(Predict, FmMatchesBruteForcePairwiseSum) {
  HyperParams hp;
  hp.fm_k = 3;
  const auto schema = ModelSchema::fm_sgd(hp);
  Rng rng(77);
  for (int case_i = 0; case_i < 200; ++case_i) {
    std::unordered_map<FeatureId, ParameterSlot> slots;
    Sample sample;
    const int m = 2 + static_cast<int>(rng.next_below(6));
    for (int i = 0; i < m; ++i) {
      const FeatureId id = i;
      sample.features.emplace_back(id, rng.uniform(-2.0, 2.0));
      auto slot = ParameterSlot::zero(schema);
      slot.set("w", {rng.uniform(-1.0, 1.0)});
      slot.set("v", {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                     rng.uniform(-0.5, 0.5)});
      slots[id] = slot;
    }
    const double expected =
        sigmoid(fm_score_bruteforce(slots, sample, hp.fm_k));
    expect_rel_close(predict(schema, slots, sample, View::kTraining), expected,
                     1e-12);
  }
}

// Central-difference check of gradient_of_sample for both model kinds. The
// loss is logloss(label, predict(params)); analytic per-coordinate gradients
// must match (L(x+h) - L(x-h)) / 2h.
double loss_at(const ModelSchema& schema,
               const std::unordered_map<FeatureId, ParameterSlot>& slots,
               const Sample& sample) {
  return logloss(sample.label, predict(schema, slots, sample, View::kTraining));
}

TEST(Gradients, FiniteDifferenceLr) {
  const auto schema = ModelSchema::lr_ftrl({});
  Rng rng(99);
  for (int case_i = 0; case_i < 50; ++case_i) {
    std::unordered_map<FeatureId, ParameterSlot> slots;
    Sample sample;
    sample.label = rng.bernoulli(0.5) ? 1 : 0;
    const int m = 1 + static_cast<int>(rng.next_below(5));
    for (int i = 0; i < m; ++i) {
      sample.features.emplace_back(i, rng.uniform(-2.0, 2.0));
      auto slot = ParameterSlot::zero(schema);
      slot.set("w", {rng.uniform(-1.0, 1.0)});
      slots[i] = slot;
    }
    const double p = predict(schema, slots, sample, View::kTraining);
    auto grads = gradient_of_sample(schema, slots, sample, p);

    const double h = 1e-6;
    for (const auto& [id, x] : sample.features) {
      (void)x;
      auto bump = [&](double delta) {
        auto copy = slots;
        auto* w = copy[id].find("w");
        (*w)[0] += delta;
        return loss_at(schema, copy, sample);
      };
      const double fd = (bump(h) - bump(-h)) / (2.0 * h);
      const auto& gw = grads.at(id)[0];
      ASSERT_EQ(gw.first, "w");
      EXPECT_NEAR(gw.second[0], fd, 1e-5);
    }
  }
}

TEST(Gradients, FiniteDifferenceFm) {
  HyperParams hp;
  hp.fm_k = 2;
  const auto schema = ModelSchema::fm_sgd(hp);
  Rng rng(100);
  for (int case_i = 0; case_i < 30; ++case_i) {
    std::unordered_map<FeatureId, ParameterSlot> slots;
    Sample sample;
    sample.label = rng.bernoulli(0.5) ? 1 : 0;
    const int m = 2 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < m; ++i) {
      sample.features.emplace_back(i, rng.uniform(-1.5, 1.5));
      auto slot = ParameterSlot::zero(schema);
      slot.set("w", {rng.uniform(-1.0, 1.0)});
      slot.set("v", {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
      slots[i] = slot;
    }
    const double p = predict(schema, slots, sample, View::kTraining);
    auto grads = gradient_of_sample(schema, slots, sample, p);

    const double h = 1e-6;
    for (const auto& [id, x] : sample.features) {
      (void)x;
      for (const auto& [mat, width] :
           std::vector<std::pair<std::string, std::uint32_t>>{{"w", 1},
                                                              {"v", hp.fm_k}}) {
        for (std::uint32_t f = 0; f < width; ++f) {
          auto bump = [&](double delta) {
            auto copy = slots;
            auto* values = copy[id].find(mat);
            (*values)[f] += delta;
            return loss_at(schema, copy, sample);
          };
          const double fd = (bump(h) - bump(-h)) / (2.0 * h);
          double analytic = 0.0;
          for (const auto& [name, values] : grads.at(id)) {
            if (name == mat) analytic = values[f];
          }
          EXPECT_NEAR(analytic, fd, 1e-5)
              << "matrix " << mat << " coord " << f;
        }
      }
    }
  }
}

TEST(SgdUpdate, ElementwiseStepOverBothMatrices) {
  HyperParams hp;
  hp.sgd_eta = 0.5;
  hp.fm_k = 2;
  const auto schema = ModelSchema::fm_sgd(hp);
  auto slot = ParameterSlot::zero(schema);
  slot.set("w", {1.0});
  slot.set("v", {0.5, -0.5});
  const auto out =
      sgd_update(hp, slot, GradientMap{{"w", {2.0}}, {"v", {1.0, -1.0}}});
  EXPECT_DOUBLE_EQ(out.scalar("w"), 0.0);
  EXPECT_DOUBLE_EQ((*out.find("v"))[0], 0.0);
  EXPECT_DOUBLE_EQ((*out.find("v"))[1], 0.0);
}

TEST(SgdUpdate, WidthMismatchRejected) {
  HyperParams hp;
  hp.fm_k = 2;
  const auto schema = ModelSchema::fm_sgd(hp);
  EXPECT_THROW(sgd_update(hp, ParameterSlot::zero(schema),
                          GradientMap{{"v", {1.0}}}),
               Error);
}

TEST(Transform, ProjectsTrainingSlotToServingMatrices) {
  const auto schema = ModelSchema::lr_ftrl({});
  auto slot = ParameterSlot::zero(schema);
  slot.set("z", {3.0});
  slot.set("n", {4.0});
  slot.set("w", {-0.25});

  const auto serving = transform_for_serving(schema, slot);
  ASSERT_EQ(serving.matrices().size(), 1u);
  EXPECT_EQ(serving.matrices()[0].name, "w");
  EXPECT_DOUBLE_EQ(serving.scalar("w"), -0.25);
  EXPECT_NO_THROW(serving.validate(schema, View::kServing));

  // Idempotent: transforming an already-serving slot changes nothing.
  EXPECT_TRUE(bitwise_equal(transform_for_serving(schema, serving), serving));
}

TEST(Transform, FmKeepsSharedMatrices) {
  HyperParams hp;
  hp.fm_k = 2;
  const auto schema = ModelSchema::fm_sgd(hp);
  auto slot = ParameterSlot::zero(schema);
  slot.set("w", {0.5});
  slot.set("v", {0.1, 0.2});
  const auto serving = transform_for_serving(schema, slot);
  EXPECT_TRUE(bitwise_equal(serving, slot));
}

TEST(BitwiseEqual, DistinguishesSignedZeroAndMatrixOrder) {
  ParameterSlot a, b;
  a.set("w", {0.0});
  b.set("w", {-0.0});
  EXPECT_TRUE(a == b);  // value comparison says equal
  EXPECT_FALSE(bitwise_equal(a, b));

  ParameterSlot c, d;
  c.set("w", {1.0});
  c.set("v", {2.0});
  d.set("v", {2.0});
  d.set("w", {1.0});
  EXPECT_FALSE(bitwise_equal(c, d));
}

TEST(Logloss, HandValues) {
  EXPECT_NEAR(logloss(1, 0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(logloss(0, 0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(logloss(1, 1.0 - 1e-9), 1e-9, 1e-12);
  EXPECT_GT(logloss(1, 0.0), 30.0);  // clamped, finite
  EXPECT_TRUE(std::isfinite(logloss(1, 0.0)));
}

TEST(ApplyUpdate, DispatchesBySchemaKind) {
  const auto lr = ModelSchema::lr_ftrl({});
  const auto out =
      apply_update(lr, ParameterSlot::zero(lr), GradientMap{{"w", {1.0}}});
  EXPECT_DOUBLE_EQ(out.scalar("w"), -0.05);

  EXPECT_THROW(apply_update(lr, ParameterSlot::zero(lr), GradientMap{}), Error);

  HyperParams hp;
  hp.fm_k = 2;
  const auto fm = ModelSchema::fm_sgd(hp);
  const auto fm_out = apply_update(fm, ParameterSlot::zero(fm),
                                   GradientMap{{"w", {1.0}}, {"v", {0.0, 0.0}}});
  EXPECT_DOUBLE_EQ(fm_out.scalar("w"), -hp.sgd_eta);
}

TEST(Slots, ValidateCatchesShapeAndFiniteness) {
  const auto schema = ModelSchema::lr_ftrl({});
  ParameterSlot bad_name;
  bad_name.set("q", {1.0});
  EXPECT_THROW(bad_name.validate_shape(schema, View::kTraining), Error);

  ParameterSlot train_only;
  train_only.set("z", {1.0});
  EXPECT_THROW(train_only.validate_shape(schema, View::kServing), Error);

  ParameterSlot wide;
  wide.set("w", {1.0, 2.0});
  EXPECT_THROW(wide.validate_shape(schema, View::kTraining), Error);

  ParameterSlot nan;
  nan.set("w", {std::nan("")});
  EXPECT_NO_THROW(nan.validate_shape(schema, View::kTraining));
  EXPECT_THROW(nan.validate(schema, View::kTraining), Error);
}

}  // namespace
}  // namespace weips::model
