#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weips/error.hpp"
#include "weips/types.hpp"

namespace weips::model {

enum class ModelKind : std::uint8_t {
  kLrFtrl = 0,
  kFmSgd = 1,
};

enum class MatrixRole : std::uint8_t {
  kTrainOnly = 0,
  kServeOnly = 1,
  kShared = 2,
};

enum class View : std::uint8_t {
  kTraining = 0,
  kServing = 1,
};

struct HyperParams {
  double alpha = 0.1;    // FTRL learning rate
  double beta = 1.0;     // FTRL smoothing
  double lambda1 = 0.0;  // L1
  double lambda2 = 0.0;  // L2
  double sgd_eta = 0.01;
  std::uint32_t fm_k = 4;

  void validate() const {
    if (!(alpha > 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be > 0");
    if (!(beta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be >= 0");
    if (!(lambda1 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda1 must be >= 0");
    if (!(lambda2 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda2 must be >= 0");
    if (!(sgd_eta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sgd_eta must be > 0");
    if (fm_k < 1) throw Error(ErrorCode::kInvalidArgument, "fm_k must be >= 1");
  }
};

struct MatrixSpec {
  std::string name;
  MatrixRole role;
  std::uint32_t width;
};

class ModelSchema {
 public:
  static ModelSchema lr_ftrl(HyperParams hp) {
    hp.validate();
    ModelSchema s;
    s.kind_ = ModelKind::kLrFtrl;
    s.hp_ = hp;
    s.matrices_ = {{"z", MatrixRole::kTrainOnly, 1},
                   {"n", MatrixRole::kTrainOnly, 1},
                   {"w", MatrixRole::kServeOnly, 1}};
    return s;
  }

  static ModelSchema fm_sgd(HyperParams hp) {
    hp.validate();
    ModelSchema s;
    s.kind_ = ModelKind::kFmSgd;
    s.hp_ = hp;
    s.matrices_ = {{"w", MatrixRole::kShared, 1},
                   {"v", MatrixRole::kShared, hp.fm_k}};
    return s;
  }

  ModelKind kind() const { return kind_; }
  const HyperParams& hyperparams() const { return hp_; }
  const std::vector<MatrixSpec>& matrices() const { return matrices_; }

  const MatrixSpec* find(std::string_view name) const {
    for (const auto& m : matrices_) {
      if (m.name == name) return &m;
    }
    return nullptr;
  }

  bool served(const MatrixSpec& m) const {
    return m.role == MatrixRole::kServeOnly || m.role == MatrixRole::kShared;
  }

  const char* kind_name() const {
    return kind_ == ModelKind::kLrFtrl ? "LR_FTRL" : "FM_SGD";
  }

 private:
  ModelKind kind_ = ModelKind::kLrFtrl;
  HyperParams hp_;
  std::vector<MatrixSpec> matrices_;
};

// One feature id's parameter values, matrix-name keyed. Matrices are stored
// in schema declaration order so the binary encoding is deterministic.
class ParameterSlot {
 public:
  struct Matrix {
    std::string name;
    std::vector<double> values;
    bool operator==(const Matrix&) const = default;
  };

  ParameterSlot() = default;

  static ParameterSlot zero(const ModelSchema& schema,
                            View view = View::kTraining) {
    ParameterSlot s;
    for (const auto& m : schema.matrices()) {
      if (view == View::kServing && !schema.served(m)) continue;
      s.mats_.push_back({m.name, std::vector<double>(m.width, 0.0)});
    }
    return s;
  }

  const std::vector<double>* find(std::string_view name) const {
    for (const auto& m : mats_) {
      if (m.name == name) return &m.values;
    }
    return nullptr;
  }

  std::vector<double>* find(std::string_view name) {
    for (auto& m : mats_) {
      if (m.name == name) return &m.values;
    }
    return nullptr;
  }

  void set(std::string_view name, std::vector<double> values) {
    if (auto* v = find(name)) {
      *v = std::move(values);
      return;
    }
    mats_.push_back({std::string(name), std::move(values)});
  }

  double scalar(std::string_view name) const {
    const auto* v = find(name);
    return (v && !v->empty()) ? (*v)[0] : 0.0;
  }

  const std::vector<Matrix>& matrices() const { return mats_; }
  std::vector<Matrix>& matrices() { return mats_; }
  bool empty() const { return mats_.empty(); }

  // Names must be in the schema with matching widths; `view` restricts which
  // roles may appear.
  void validate_shape(const ModelSchema& schema, View view) const {
    for (const auto& m : mats_) {
      const MatrixSpec* spec = schema.find(m.name);
      if (spec == nullptr) {
        throw Error(ErrorCode::kInvalidSlot, "unknown matrix '" + m.name + "'");
      }
      if (view == View::kServing && !schema.served(*spec)) {
        throw Error(ErrorCode::kInvalidSlot,
                    "training-only matrix '" + m.name + "' in serving slot");
      }
      if (m.values.size() != spec->width) {
        throw Error(ErrorCode::kInvalidSlot, "width mismatch for '" + m.name + "'");
      }
    }
  }

  // Shape plus all-scalars-finite.
  void validate(const ModelSchema& schema, View view) const {
    validate_shape(schema, view);
    for (const auto& m : mats_) {
      for (double x : m.values) {
        if (!std::isfinite(x)) {
          throw Error(ErrorCode::kInvalidSlot, "non-finite value in '" + m.name + "'");
        }
      }
    }
  }

  bool operator==(const ParameterSlot&) const = default;

 private:
  std::vector<Matrix> mats_;
};

// Exact comparison on the stored bit patterns (distinguishes -0.0 and 0.0);
// the consistency oracles demand bit equality, not numeric closeness.
bool bitwise_equal(const ParameterSlot& a, const ParameterSlot& b);

struct Sample {
  int label = 0;  // {0, 1}
  std::vector<std::pair<FeatureId, double>> features;
};

}  // namespace weips::model
