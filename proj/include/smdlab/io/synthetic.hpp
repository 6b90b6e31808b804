#pragma once

#include "smdlab/model.hpp"
#include "smdlab/random.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace smdlab::io {

struct SyntheticSpec {
  int n = 10;
  int d = 20;
  /// Hidden widths for an mlp teacher; empty means a linear teacher.
  std::vector<int> hidden;
  std::uint64_t seed = 0;
  double noise = 0.0;
  double teacher_scale = 1.0;
  int n_test = 0;
  /// When set, the teacher is this point plus N(0, teacher_scale²) noise, so a
  /// run started at teacher_center begins close to the interpolating set.
  std::optional<ParamVector> teacher_center;

  Model model() const {
    if (hidden.empty()) return Model::linear(d);
    std::vector<int> widths{d};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(1);
    return Model::mlp(std::move(widths));
  }
};

struct SyntheticData {
  Dataset data;
  ParamVector teacher;
  Model model;
};

/// Standard-normal inputs labelled by a teacher with i.i.d. N(0, teacher_scale²)
/// weights. With zero noise the teacher interpolates its own training set.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.d < 1) throw ConfigError("synthetic data needs n >= 1 and d >= 1");
  if (spec.n_test < 0) throw ConfigError("n_test must be >= 0");
  if (spec.noise < 0.0) throw ConfigError("noise must be >= 0");
  if (!(spec.teacher_scale > 0.0)) throw ConfigError("teacher_scale must be > 0");
  Model model = spec.model();
  if (model.param_count() <= spec.n)
    throw ConfigError("synthetic data: p = " + std::to_string(model.param_count()) +
                      " must exceed n = " + std::to_string(spec.n) + " for interpolation");
  Rng rng(spec.seed);
  SyntheticData out{Dataset{}, ParamVector{}, model};
  out.teacher = model.random_params(rng, spec.teacher_scale);
  if (spec.teacher_center) {
    smdlab::detail::require_same_size(spec.teacher_center->size(), model.param_count(), "teacher_center");
    out.teacher += *spec.teacher_center;
  }
  out.data.inputs = normal_matrix(rng, spec.n, spec.d);
  out.data.labels = model.predict_all(out.teacher, out.data.inputs);
  if (spec.noise > 0.0) out.data.labels += normal_vector(rng, spec.n, spec.noise);
  if (spec.n_test > 0) {
    Matrix xt = normal_matrix(rng, spec.n_test, spec.d);
    out.data.test_labels = model.predict_all(out.teacher, xt);
    out.data.test_inputs = std::move(xt);
  }
  return out;
}

}  // namespace smdlab::io
