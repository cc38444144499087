#include "weips/model/ops.hpp"

#include <cmath>
#include <cstring>

namespace weips::model {

namespace {

const std::vector<double>* find_grad(const GradientMap& g, std::string_view name) {
  for (const auto& [n, v] : g) {
    if (n == name) return &v;
  }
  return nullptr;
}

double fm_score(const ModelSchema& schema, const SlotLookup& slots,
                const Sample& sample) {
  const std::uint32_t k = schema.hyperparams().fm_k;
  double linear = 0.0;
  std::vector<double> sum(k, 0.0), sum_sq(k, 0.0);
  for (const auto& [id, x] : sample.features) {
    const ParameterSlot* slot = slots(id);
    if (slot == nullptr) continue;
    linear += slot->scalar("w") * x;
    if (const auto* v = slot->find("v")) {
      for (std::uint32_t f = 0; f < k && f < v->size(); ++f) {
        const double vx = (*v)[f] * x;
        sum[f] += vx;
        sum_sq[f] += vx * vx;
      }
    }
  }
  double pairwise = 0.0;
  for (std::uint32_t f = 0; f < k; ++f) {
    pairwise += 0.5 * (sum[f] * sum[f] - sum_sq[f]);
  }
  return linear + pairwise;
}

}  // namespace

bool bitwise_equal(const ParameterSlot& a, const ParameterSlot& b) {
  const auto& ma = a.matrices();
  const auto& mb = b.matrices();
  if (ma.size() != mb.size()) return false;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (ma[i].name != mb[i].name) return false;
    if (ma[i].values.size() != mb[i].values.size()) return false;
    if (!ma[i].values.empty() &&
        std::memcmp(ma[i].values.data(), mb[i].values.data(),
                    ma[i].values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

double predict(const ModelSchema& schema, const SlotLookup& slots,
               const Sample& sample, View view) {
  double score = 0.0;
  switch (schema.kind()) {
    case ModelKind::kLrFtrl:
      for (const auto& [id, x] : sample.features) {
        const ParameterSlot* slot = slots(id);
        if (slot == nullptr) continue;
        slot->validate_shape(schema, view);
        score += slot->scalar("w") * x;
      }
      break;
    case ModelKind::kFmSgd:
      for (const auto& [id, x] : sample.features) {
        (void)x;
        if (const ParameterSlot* slot = slots(id)) {
          slot->validate_shape(schema, view);
        }
      }
      score = fm_score(schema, slots, sample);
      break;
  }
  return sigmoid(score);
}

double predict(const ModelSchema& schema,
               const std::unordered_map<FeatureId, ParameterSlot>& slots,
               const Sample& sample, View view) {
  return predict(
      schema,
      [&](FeatureId id) -> const ParameterSlot* {
        auto it = slots.find(id);
        return it == slots.end() ? nullptr : &it->second;
      },
      sample, view);
}

ParameterSlot ftrl_update(const HyperParams& hp, const ParameterSlot& slot,
                          double gradient) {
  const double g = gradient;
  const double z0 = slot.scalar("z");
  const double n0 = slot.scalar("n");
  const double w0 = slot.scalar("w");

  const double sigma = (std::sqrt(n0 + g * g) - std::sqrt(n0)) / hp.alpha;
  const double z1 = z0 + g - sigma * w0;
  const double n1 = n0 + g * g;
  double w1 = 0.0;
  if (std::abs(z1) > hp.lambda1) {
    const double sign = z1 >= 0.0 ? 1.0 : -1.0;
    w1 = -(z1 - sign * hp.lambda1) /
         ((hp.beta + std::sqrt(n1)) / hp.alpha + hp.lambda2);
  }
  if (!std::isfinite(z1) || !std::isfinite(n1) || !std::isfinite(w1)) {
    throw Error(ErrorCode::kNumericOverflow, "ftrl_update produced non-finite state");
  }

  ParameterSlot out;
  out.set("z", {z1});
  out.set("n", {n1});
  out.set("w", {w1});
  return out;
}

ParameterSlot sgd_update(const HyperParams& hp, const ParameterSlot& slot,
                         const GradientMap& gradients) {
  ParameterSlot out = slot;
  for (const auto& [name, grad] : gradients) {
    auto* values = out.find(name);
    if (values == nullptr || values->size() != grad.size()) {
      throw Error(ErrorCode::kInvalidSlot,
                  "gradient width mismatch for matrix '" + name + "'");
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      (*values)[i] -= hp.sgd_eta * grad[i];
    }
  }
  return out;
}

ParameterSlot transform_for_serving(const ModelSchema& schema,
                                    const ParameterSlot& slot) {
  ParameterSlot out;
  for (const auto& m : slot.matrices()) {
    const MatrixSpec* spec = schema.find(m.name);
    if (spec == nullptr) {
      throw Error(ErrorCode::kInvalidSlot, "unknown matrix '" + m.name + "'");
    }
    if (schema.served(*spec)) {
      out.set(m.name, m.values);
    }
  }
  return out;
}

std::unordered_map<FeatureId, GradientMap> gradient_of_sample(
    const ModelSchema& schema, const SlotLookup& slots, const Sample& sample,
    double prediction) {
  std::unordered_map<FeatureId, GradientMap> out;
  out.reserve(sample.features.size());
  const double g = prediction - static_cast<double>(sample.label);

  if (schema.kind() == ModelKind::kLrFtrl) {
    for (const auto& [id, x] : sample.features) {
      out[id] = GradientMap{{"w", {g * x}}};
    }
    return out;
  }

  // FM: d(score)/dw_i = x_i; d(score)/dv_if = x_i * S_f - v_if * x_i^2.
  const std::uint32_t k = schema.hyperparams().fm_k;
  std::vector<double> sum(k, 0.0);
  for (const auto& [id, x] : sample.features) {
    if (const ParameterSlot* slot = slots(id)) {
      if (const auto* v = slot->find("v")) {
        for (std::uint32_t f = 0; f < k && f < v->size(); ++f) {
          sum[f] += (*v)[f] * x;
        }
      }
    }
  }
  for (const auto& [id, x] : sample.features) {
    const ParameterSlot* slot = slots(id);
    std::vector<double> gv(k, 0.0);
    for (std::uint32_t f = 0; f < k; ++f) {
      double vif = 0.0;
      if (slot != nullptr) {
        if (const auto* v = slot->find("v"); v && f < v->size()) vif = (*v)[f];
      }
      gv[f] = g * (x * sum[f] - vif * x * x);
    }
    out[id] = GradientMap{{"w", {g * x}}, {"v", std::move(gv)}};
  }
  return out;
}

std::unordered_map<FeatureId, GradientMap> gradient_of_sample(
    const ModelSchema& schema,
    const std::unordered_map<FeatureId, ParameterSlot>& slots,
    const Sample& sample, double prediction) {
  return gradient_of_sample(
      schema,
      [&](FeatureId id) -> const ParameterSlot* {
        auto it = slots.find(id);
        return it == slots.end() ? nullptr : &it->second;
      },
      sample, prediction);
}

ParameterSlot apply_update(const ModelSchema& schema, const ParameterSlot& slot,
                           const GradientMap& gradients) {
  switch (schema.kind()) {
    case ModelKind::kLrFtrl: {
      const auto* gw = find_grad(gradients, "w");
      if (gw == nullptr || gw->size() != 1) {
        throw Error(ErrorCode::kInvalidSlot, "LR update requires a scalar w gradient");
      }
      return ftrl_update(schema.hyperparams(), slot, (*gw)[0]);
    }
    case ModelKind::kFmSgd:
      return sgd_update(schema.hyperparams(), slot, gradients);
  }
  throw Error(ErrorCode::kInternal, "unknown model kind");
}

double logloss(int label, double prediction) {
  const double eps = 1e-15;
  double p = prediction;
  if (p < eps) p = eps;
  if (p > 1.0 - eps) p = 1.0 - eps;
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace weips::model
