#pragma once

// Grids of initializations x mirrors, distance matrices between initial and
// final points, weight histograms, held-out evaluation and the closeness
// report comparing a run against the oracle.

#include "smdlab/mirror.hpp"
#include "smdlab/model.hpp"
#include "smdlab/oracle.hpp"
#include "smdlab/random.hpp"
#include "smdlab/smd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace smdlab {

inline constexpr double kDefaultInitScale = 0.01;
inline constexpr double kNearZeroTau = 1e-3;
inline constexpr int kHistogramBins = 100;

struct InitSpec {
  std::uint64_t seed = 0;
  double scale = kDefaultInitScale;
};

/// How a mirror's step size is chosen. Fixed uses smd.eta as given. Auto
/// starts at the SGD bound and halves until the sampled convexity check passes
/// on a ball around w0. In both modes a run that fails to converge (or blows
/// up) is retried with η divided by eta_backoff, at most eta_retries times.
struct MirrorConfig {
  Potential pot = Potential::qnorm(2.0);
  SMDConfig smd;
  bool auto_eta = false;
  int eta_retries = 0;
  double eta_backoff = 3.0;
  /// When set, loss_threshold = relative_threshold * ‖y‖².
  std::optional<double> relative_threshold;
};

struct ExperimentGrid {
  std::vector<InitSpec> inits;
  std::vector<MirrorConfig> mirrors;
  Model model = Model::linear(1);
  Dataset data;
  LossFn loss = LossFn::square();

  void validate() const {
    if (inits.empty() || mirrors.empty()) throw ConfigError("grid needs at least one init and one mirror");
    for (const auto& in : inits)
      if (!(in.scale >= 0.0) || !std::isfinite(in.scale)) throw ConfigError("init scale must be finite and >= 0");
    for (const auto& m : mirrors) {
      m.smd.validate();
      if (m.eta_retries < 0) throw ConfigError("eta_retries must be >= 0");
      if (!(m.eta_backoff > 1.0)) throw ConfigError("eta_backoff must be > 1");
      if (m.relative_threshold && !(*m.relative_threshold >= 0.0))
        throw ConfigError("relative_threshold must be >= 0");
    }
    data.validate();
    detail::require_same_size(data.dim(), model.input_dim(), "grid data");
  }
  /// Fewer than 2 inits or mirrors still runs, but the matrices say little.
  bool meaningful() const { return inits.size() >= 2 && mirrors.size() >= 2; }
};

inline ParamVector make_init(const Model& model, const InitSpec& spec) {
  Rng rng(spec.seed);
  return model.random_params(rng, spec.scale);
}

struct RunRecord {
  std::size_t init_index = 0;
  std::size_t mirror_index = 0;
  Potential pot = Potential::qnorm(2.0);
  ParamVector w0;
  TrainResult result;
  double eta = 0.0;       // step size of the final attempt
  int attempts = 0;
  bool converged = false;
  double residual_inf = std::numeric_limits<double>::quiet_NaN();
  std::string error;      // last numeric error, if any
};

struct RunCollection {
  std::vector<RunRecord> runs;  // sorted by (init, mirror)
  std::size_t n_inits = 0;
  std::size_t n_mirrors = 0;

  const RunRecord& at(std::size_t init, std::size_t mirror) const { return runs.at(init * n_mirrors + mirror); }
  std::size_t converged_count() const {
    return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.converged; }));
  }
};

namespace detail {

/// Ball around w0 over which step sizes are checked: twice the linearized
/// distance to the interpolating set, at least 1e-3.
inline double step_check_radius(const Model& model, const Dataset& data, const ParamVector& w0) {
  try {
    return std::max(1e-3, 2.0 * std::sqrt(distance_to_manifold_estimate(model, data, w0)));
  } catch (const DegenerateDataError&) {
    return 1e-3;
  }
}

inline double auto_step_size(const Potential& pot, const Model& model, const LossFn& loss, const Dataset& data,
                             const ParamVector& w0, std::uint64_t seed) {
  return select_step_size(pot, model, loss, data, w0, step_check_radius(model, data, w0),
                          sgd_step_bound(model, data, w0), 16, seed);
}

}  // namespace detail

/// Trains every (init, mirror) cell. Numeric failures are recorded on the cell
/// and the grid moves on.
inline RunCollection run_cells(const ExperimentGrid& grid) {
  grid.validate();
  RunCollection out;
  out.n_inits = grid.inits.size();
  out.n_mirrors = grid.mirrors.size();
  for (std::size_t i = 0; i < grid.inits.size(); ++i) {
    const ParamVector w0 = make_init(grid.model, grid.inits[i]);
    for (std::size_t m = 0; m < grid.mirrors.size(); ++m) {
      const MirrorConfig& mc = grid.mirrors[m];
      RunRecord rec;
      rec.init_index = i;
      rec.mirror_index = m;
      rec.pot = mc.pot;
      rec.w0 = w0;
      SMDConfig cfg = mc.smd;
      if (mc.relative_threshold) cfg.loss_threshold = *mc.relative_threshold * grid.data.labels.squaredNorm();
      try {
        if (mc.auto_eta) cfg.eta = detail::auto_step_size(mc.pot, grid.model, grid.loss, grid.data, w0, mc.smd.seed);
      } catch (const Error& e) {
        rec.error = e.what();
        rec.result.w_final = w0;
        out.runs.push_back(std::move(rec));
        continue;
      }
      for (int attempt = 0; attempt <= mc.eta_retries; ++attempt) {
        if (attempt > 0) cfg.eta /= mc.eta_backoff;
        rec.eta = cfg.eta;
        rec.attempts = attempt + 1;
        try {
          rec.result = train(mc.pot, grid.model, grid.loss, grid.data, w0, cfg);
          rec.error.clear();
        } catch (const NumericError& e) {
          rec.error = e.what();
          rec.result = TrainResult{};
          rec.result.w_final = w0;
          continue;
        }
        if (rec.result.converged) break;
      }
      rec.converged = rec.result.converged;
      if (rec.result.w_final.size() == w0.size() && rec.result.w_final.allFinite())
        rec.residual_inf = residuals(grid.model, rec.result.w_final, grid.data).lpNorm<Eigen::Infinity>();
      out.runs.push_back(std::move(rec));
    }
  }
  return out;
}

/// run_cells, but a grid with no converged cell is an error.
inline RunCollection run_grid(const ExperimentGrid& grid) {
  RunCollection out = run_cells(grid);
  if (out.converged_count() == 0) {
    std::string why;
    for (const auto& r : out.runs)
      if (!r.error.empty()) why = " (last error: " + r.error + ")";
    throw ExperimentError("run_grid: no cell converged" + why);
  }
  return out;
}

enum class MatrixLayout { ByMirror, ByInit, FullCross };

inline const char* layout_name(MatrixLayout l) {
  switch (l) {
    case MatrixLayout::ByMirror: return "by-mirror";
    case MatrixLayout::ByInit: return "by-init";
    case MatrixLayout::FullCross: return "full-cross";
  }
  return "?";
}

inline MatrixLayout parse_layout(const std::string& s) {
  if (s == "by-mirror") return MatrixLayout::ByMirror;
  if (s == "by-init") return MatrixLayout::ByInit;
  if (s == "full-cross") return MatrixLayout::FullCross;
  throw ArgumentError("unknown matrix layout '" + s + "' (expected by-mirror, by-init or full-cross)");
}

/// Rows are initial points; entry (r, c) = D_measure(final_c, init_r).
/// Missing entries (non-converged cells) are NaN and never win an argmin.
struct DistanceMatrix {
  Potential measure = Potential::qnorm(2.0);
  MatrixLayout layout = MatrixLayout::FullCross;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix entries;
  std::vector<long> argmin;   // -1 when a row has no finite entry
  std::vector<long> matched;  // the column each row should pick, -1 if none
  bool diagonal_pass = false;

  bool missing(Eigen::Index r, Eigen::Index c) const { return std::isnan(entries(r, c)); }
};

namespace detail {

inline std::string run_label(const RunRecord& r) {
  return "init" + std::to_string(r.init_index) + "/" + r.pot.label();
}

inline long find_mirror(const RunCollection& runs, const Potential& pot) {
  if (runs.runs.empty()) return -1;
  for (std::size_t m = 0; m < runs.n_mirrors; ++m)
    if (runs.at(0, m).pot == pot) return static_cast<long>(m);
  return -1;
}

}  // namespace detail

/// by-mirror: columns are the runs of every mirror from the row's init; the
/// matched column is the mirror equal to the measure.
/// by-init: columns are the runs of the measure's own mirror from every init;
/// the matched column is the row's init. full-cross: columns are all runs in
/// (init, mirror) order; the matched column is (row init, measure mirror).
inline DistanceMatrix distance_matrix(const RunCollection& runs, const Potential& measure, MatrixLayout layout) {
  if (runs.runs.empty() || runs.n_inits * runs.n_mirrors != runs.runs.size())
    throw ArgumentError("distance_matrix: incomplete run collection");
  DistanceMatrix dm;
  dm.measure = measure;
  dm.layout = layout;
  const long mirror = detail::find_mirror(runs, measure);
  const auto rows = static_cast<Eigen::Index>(runs.n_inits);

  std::vector<const RunRecord*> cols;
  if (layout == MatrixLayout::ByInit) {
    if (mirror < 0) throw ArgumentError("distance_matrix: by-init needs a mirror equal to the measure");
    for (std::size_t i = 0; i < runs.n_inits; ++i) cols.push_back(&runs.at(i, static_cast<std::size_t>(mirror)));
  } else if (layout == MatrixLayout::FullCross) {
    for (const auto& r : runs.runs) cols.push_back(&r);
  }
  const Eigen::Index ncols =
      layout == MatrixLayout::ByMirror ? static_cast<Eigen::Index>(runs.n_mirrors) : static_cast<Eigen::Index>(cols.size());
  dm.entries = Matrix::Constant(rows, ncols, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto ri = static_cast<std::size_t>(r);
    const ParamVector& w0 = runs.at(ri, 0).w0;
    dm.row_labels.push_back("init" + std::to_string(r));
    for (Eigen::Index c = 0; c < ncols; ++c) {
      const RunRecord& run =
          layout == MatrixLayout::ByMirror ? runs.at(ri, static_cast<std::size_t>(c)) : *cols[static_cast<std::size_t>(c)];
      if (r == 0) dm.col_labels.push_back(layout == MatrixLayout::ByMirror ? run.pot.label() : detail::run_label(run));
      if (!run.converged) continue;
      dm.entries(r, c) = bregman(measure, run.result.w_final, w0);
    }
    long match = -1;
    if (layout == MatrixLayout::ByMirror) match = mirror;
    else if (layout == MatrixLayout::ByInit) match = static_cast<long>(r);
    else if (mirror >= 0) match = static_cast<long>(ri * runs.n_mirrors + static_cast<std::size_t>(mirror));
    dm.matched.push_back(match);
  }

  dm.diagonal_pass = rows > 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    long best = -1;
    double bv = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < ncols; ++c) {
      const double v = dm.entries(r, c);
      if (std::isnan(v)) continue;
      if (best < 0 || v < bv) {
        best = static_cast<long>(c);
        bv = v;
      }
    }
    dm.argmin.push_back(best);
    const long match = dm.matched[static_cast<std::size_t>(r)];
    if (best < 0 || match < 0 || best != match) dm.diagonal_pass = false;
  }
  return dm;
}

struct HistogramSummary {
  std::string label;
  std::vector<double> edges;  // bins + 1 edges over [0, max|w|]
  std::vector<std::size_t> counts;
  double tau = kNearZeroTau;
  double near_zero_fraction = 0.0;  // fraction of |w_j| <= tau
};

inline HistogramSummary histogram(const Eigen::Ref<const ParamVector>& w, int bins = kHistogramBins,
                                  double tau = kNearZeroTau, std::string label = {}) {
  if (bins < 1) throw ArgumentError("histogram: bins must be >= 1");
  if (!(tau >= 0.0)) throw ArgumentError("histogram: tau must be >= 0");
  HistogramSummary h;
  h.label = std::move(label);
  h.tau = tau;
  const Vector a = w.cwiseAbs();
  double top = a.size() ? a.maxCoeff() : 0.0;
  if (!(top > 0.0)) top = 1.0;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = top * b / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  std::size_t near = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    auto b = static_cast<int>(a[j] / top * bins);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
    if (a[j] <= tau) ++near;
  }
  h.near_zero_fraction = a.size() ? static_cast<double>(near) / static_cast<double>(a.size()) : 0.0;
  return h;
}

struct GeneralizationReport {
  double mse = 0.0;
  std::optional<double> accuracy;  // only for ±1 labels
  std::size_t n_test = 0;
};

inline GeneralizationReport generalization_eval(const Model& model, const Eigen::Ref<const ParamVector>& w,
                                                const Eigen::Ref<const Matrix>& test_inputs,
                                                const Eigen::Ref<const Vector>& test_labels) {
  if (test_inputs.rows() == 0) throw DataError("generalization_eval: empty test split");
  detail::require_same_size(test_inputs.rows(), test_labels.size(), "generalization_eval");
  GeneralizationReport rep;
  rep.n_test = static_cast<std::size_t>(test_inputs.rows());
  const Vector f = model.predict_all(w, test_inputs);
  rep.mse = (test_labels - f).squaredNorm() / static_cast<double>(test_labels.size());
  const bool pm1 = (test_labels.array().abs() == 1.0).all();
  if (pm1) {
    std::size_t ok = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) ok += (f[i] >= 0.0 ? 1.0 : -1.0) == test_labels[i];
    rep.accuracy = static_cast<double>(ok) / static_cast<double>(f.size());
  }
  return rep;
}

inline GeneralizationReport generalization_eval(const Model& model, const Eigen::Ref<const ParamVector>& w,
                                                const Dataset& data) {
  if (!data.has_test()) throw DataError("generalization_eval: dataset has no test split");
  return generalization_eval(model, w, *data.test_inputs, *data.test_labels);
}

struct ClosenessReport {
  double d_star_final = 0.0;  // D_ψ(w*, w_∞)
  double d_star_init = 0.0;   // D_ψ(w*, w0)
  double ratio = 0.0;
  double d_final_init = 0.0;  // D_ψ(w_∞, w0)
  /// λᵀ(f(w_∞) - y): first-order change of the optimal divergence when the
  /// constraints are moved to the run's own (slightly nonzero) residuals.
  double feasibility_correction = 0.0;
  /// The run itself found an interpolant closer to w0 than the oracle did,
  /// after the correction above, so the oracle stopped at a worse local minimum.
  bool oracle_suboptimal = false;
  /// Summed identity D_ψ(w*, w0) - D_ψ(w*, w_∞) = accumulated terms; absent
  /// when the run kept no trace.
  bool identity_checked = false;
  double identity_lhs = 0.0;
  double identity_rhs = 0.0;
  double identity_residual = 0.0;
};

inline ClosenessReport closeness_report(const Potential& pot, const Model& model, const LossFn& loss,
                                      const Dataset& data, const Eigen::Ref<const ParamVector>& w0,
                                      const TrainResult& run, const OracleResult& oracle) {
  if (!run.converged) throw PreconditionError("closeness_report: run did not converge");
  if (!(oracle.constraint_violation <= kNonlinearFeasibilityTol) || !oracle.w_star.allFinite())
    throw PreconditionError("closeness_report: oracle point is not feasible");
  detail::require_same_size(run.w_final.size(), w0.size(), "closeness_report");
  detail::require_same_size(oracle.w_star.size(), w0.size(), "closeness_report");
  ClosenessReport rep;
  const ParamVector& ws = oracle.w_star;
  rep.d_star_final = bregman(pot, ws, run.w_final);
  rep.d_star_init = bregman(pot, ws, w0);
  rep.d_final_init = bregman(pot, run.w_final, w0);
  if (rep.d_star_init > 0.0) rep.ratio = rep.d_star_final / rep.d_star_init;
  else rep.ratio = rep.d_star_final > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  // w_∞ only interpolates to the stopping threshold, and a slightly
  // infeasible point can undercut D(w*, w0) without w* being beaten.
  const Matrix J = model.jacobian(ws, data.inputs);
  const Vector lambda = J.transpose().colPivHouseholderQr().solve(mirror_map(pot, ws) - mirror_map(pot, w0));
  if (lambda.allFinite())
    rep.feasibility_correction = lambda.dot(model.predict_all(run.w_final, data.inputs) - data.labels);
  const double bound = rep.d_star_init + rep.feasibility_correction;
  rep.oracle_suboptimal = rep.d_final_init < bound - 1e-9 * rep.d_star_init;
  if (run.sums) {
    const IdentitySums& s = *run.sums;
    double visited_loss = 0.0;
    for (std::size_t i = 0; i < s.visits.size(); ++i) {
      if (s.visits[i] == 0) continue;
      const auto idx = static_cast<Eigen::Index>(i);
      visited_loss += static_cast<double>(s.visits[i]) *
                      loss_value(loss, model, ws, data.inputs.row(idx).transpose(), data.labels[idx]);
    }
    rep.identity_checked = true;
    rep.identity_lhs = rep.d_star_init - rep.d_star_final;
    rep.identity_rhs = s.scalar + s.eta * visited_loss - s.grad_sum.dot(ws);
    rep.identity_residual = rep.identity_lhs - rep.identity_rhs;
  }
  return rep;
}

}  // namespace smdlab
