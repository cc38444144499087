#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weips/model/schema.hpp"
#include "weips/rng.hpp"
#include "weips/types.hpp"

namespace weips::harness {

struct CorruptionSpec {
  std::uint64_t start_sample = 0;
  std::string mode = "label-flip";
  double flip_prob = 1.0;
};

struct WorkloadSpec {
  std::uint64_t seed = 42;
  std::uint64_t num_samples = 200'000;
  std::uint32_t num_features = 100'000;  // vocabulary size
  double zipf_s = 1.1;
  std::uint32_t features_per_sample = 16;
  std::uint64_t samples_per_second = 0;  // 0 = unthrottled
  std::optional<CorruptionSpec> corruption;

  void validate() const;
  std::string to_json() const;
  static WorkloadSpec from_json(const std::string& text);
};

// Deterministic synthetic click stream. Feature ids are zipf-skewed over the
// vocabulary; labels are Bernoulli draws from a hidden linear model fixed by
// the seed. sample(i) depends only on (spec, i), so any thread can generate
// any index and identical specs yield identical streams.
class Workload {
 public:
  explicit Workload(WorkloadSpec spec);

  model::Sample sample(std::uint64_t index) const;

  // The label the hidden model would emit before corruption is applied.
  bool corrupted_at(std::uint64_t index) const;

  const WorkloadSpec& spec() const { return spec_; }
  double hidden_weight(FeatureId id) const { return hidden_w_[id]; }

 private:
  WorkloadSpec spec_;
  std::vector<double> hidden_w_;
  ZipfSampler zipf_;
};

}  // namespace weips::harness
