#include "weips/harness/workload.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "weips/error.hpp"
#include "weips/model/ops.hpp"

namespace weips::harness {

using nlohmann::json;

void WorkloadSpec::validate() const {
  if (num_features == 0)
    throw Error(ErrorCode::kInvalidArgument, "num_features must be > 0");
  if (features_per_sample == 0 || features_per_sample > num_features)
    throw Error(ErrorCode::kInvalidArgument,
                "features_per_sample must be in [1, num_features]");
  if (zipf_s < 0.0)
    throw Error(ErrorCode::kInvalidArgument, "zipf_s must be >= 0");
  if (corruption) {
    if (corruption->mode != "label-flip")
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown corruption mode: " + corruption->mode);
    if (corruption->flip_prob < 0.0 || corruption->flip_prob > 1.0)
      throw Error(ErrorCode::kInvalidArgument, "flip_prob must be in [0, 1]");
  }
}

std::string WorkloadSpec::to_json() const {
  json j{{"seed", seed},
         {"num_samples", num_samples},
         {"num_features", num_features},
         {"zipf_s", zipf_s},
         {"features_per_sample", features_per_sample},
         {"samples_per_second", samples_per_second}};
  if (corruption) {
    j["corruption"] = json{{"start_sample", corruption->start_sample},
                           {"mode", corruption->mode},
                           {"flip_prob", corruption->flip_prob}};
  }
  return j.dump(2);
}

WorkloadSpec WorkloadSpec::from_json(const std::string& text) {
  WorkloadSpec spec;
  try {
    const json j = json::parse(text);
    spec.seed = j.value("seed", spec.seed);
    spec.num_samples = j.value("num_samples", spec.num_samples);
    spec.num_features = j.value("num_features", spec.num_features);
    spec.zipf_s = j.value("zipf_s", spec.zipf_s);
    spec.features_per_sample =
        j.value("features_per_sample", spec.features_per_sample);
    spec.samples_per_second =
        j.value("samples_per_second", spec.samples_per_second);
    if (j.contains("corruption") && !j["corruption"].is_null()) {
      const json& c = j["corruption"];
      CorruptionSpec cs;
      cs.start_sample = c.value("start_sample", cs.start_sample);
      cs.mode = c.value("mode", cs.mode);
      cs.flip_prob = c.value("flip_prob", cs.flip_prob);
      spec.corruption = cs;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad workload json: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ (index * 0x9e3779b97f4a7c15ull);
  (void)splitmix64(s);
  return splitmix64(s);
}

}  // namespace

Workload::Workload(WorkloadSpec spec)
    : spec_(std::move(spec)),
      zipf_(spec_.num_features, spec_.zipf_s) {
  spec_.validate();
  hidden_w_.resize(spec_.num_features);
  Rng rng(spec_.seed);
  const double scale = 2.0 / std::sqrt(static_cast<double>(spec_.features_per_sample));
  for (auto& w : hidden_w_) w = rng.normal(0.0, scale);
}

bool Workload::corrupted_at(std::uint64_t index) const {
  if (!spec_.corruption || index < spec_.corruption->start_sample) return false;
  Rng rng(mix(spec_.seed ^ 0xc0deull, index));
  return rng.bernoulli(spec_.corruption->flip_prob);
}

model::Sample Workload::sample(std::uint64_t index) const {
  Rng rng(mix(spec_.seed, index));
  model::Sample s;
  s.features.reserve(spec_.features_per_sample);

  double score = 0.0;
  std::uint32_t attempts = 0;
  const std::uint32_t max_attempts = spec_.features_per_sample * 8 + 32;
  while (s.features.size() < spec_.features_per_sample) {
    FeatureId id;
    if (attempts++ < max_attempts) {
      id = static_cast<FeatureId>(zipf_.sample(rng));
    } else {
      // Dense fallback for tiny vocabularies: walk from a random start.
      id = (s.features.empty() ? 0 : s.features.back().first + 1) %
           spec_.num_features;
    }
    bool dup = false;
    for (const auto& [seen, _] : s.features) {
      if (seen == id) {
        dup = true;
        break;
      }
    }
    if (dup) continue;
    s.features.emplace_back(id, 1.0);
    score += hidden_w_[id];
  }

  s.label = rng.bernoulli(model::sigmoid(score)) ? 1 : 0;
  if (corrupted_at(index)) s.label = 1 - s.label;
  return s;
}

}  // namespace weips::harness
