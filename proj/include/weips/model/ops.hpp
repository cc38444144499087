#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "weips/model/schema.hpp"

namespace weips::model {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-feature gradient, matrix-name keyed (same shape discipline as slots).
using GradientMap = std::vector<std::pair<std::string, std::vector<double>>>;

using SlotLookup = std::function<const ParameterSlot*(FeatureId)>;

// Sigmoid of the model score. Missing ids read as zero slots. For LR the
// score uses w in both views (w is materialized eagerly on every update);
// for FM it is the linear term plus the pairwise term.
double predict(const ModelSchema& schema, const SlotLookup& slots,
               const Sample& sample, View view);

double predict(const ModelSchema& schema,
               const std::unordered_map<FeatureId, ParameterSlot>& slots,
               const Sample& sample, View view);

// Per-coordinate FTRL-Proximal step on an LR slot; returns the updated slot
// with z, n and w all populated. Rejects non-finite intermediates without
// touching the input.
ParameterSlot ftrl_update(const HyperParams& hp, const ParameterSlot& slot,
                          double gradient);

// value -= eta * gradient, element-wise over both FM matrices.
ParameterSlot sgd_update(const HyperParams& hp, const ParameterSlot& slot,
                         const GradientMap& gradients);

// Projects a training slot down to its serve-only and shared matrices.
ParameterSlot transform_for_serving(const ModelSchema& schema,
                                    const ParameterSlot& slot);

// Logistic-loss gradients for every feature present in the sample.
std::unordered_map<FeatureId, GradientMap> gradient_of_sample(
    const ModelSchema& schema, const SlotLookup& slots, const Sample& sample,
    double prediction);

std::unordered_map<FeatureId, GradientMap> gradient_of_sample(
    const ModelSchema& schema,
    const std::unordered_map<FeatureId, ParameterSlot>& slots,
    const Sample& sample, double prediction);

// Applies the schema's optimizer to one slot. `gradients` carries the loss
// gradient per matrix; FTRL consumes the scalar w-gradient.
ParameterSlot apply_update(const ModelSchema& schema, const ParameterSlot& slot,
                           const GradientMap& gradients);

double logloss(int label, double prediction);

}  // namespace weips::model
