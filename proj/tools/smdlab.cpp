// Command-line front end: train, grid, verify-identity, oracle-compare,
// distance-matrix, histogram, check-stepsize.

#include "smdlab/experiments.hpp"
#include "smdlab/io/checkpoint.hpp"
#include "smdlab/io/config.hpp"
#include "smdlab/io/emit.hpp"
#include "smdlab/io/format.hpp"
#include "smdlab/oracle.hpp"
#include "smdlab/smd.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <string>

using namespace smdlab;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

io::ExperimentConfig load(const Globals& g) {
  if (g.config_path.empty()) throw ConfigError("this command needs --config <path>");
  io::ExperimentConfig c = io::load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

std::string out_dir(const Globals& g, const std::string& fallback = "out") { return g.out.empty() ? fallback : g.out; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string init_ckpt(std::size_t i) { return "init" + std::to_string(i) + ".ckpt"; }
std::string final_ckpt(std::size_t i, std::size_t m) {
  return "final_i" + std::to_string(i) + "_m" + std::to_string(m) + ".ckpt";
}

void save_run_checkpoints(const io::Prepared& p, const RunCollection& runs, const std::string& dir) {
  ensure_dir(dir);
  for (const auto& r : runs.runs) {
    const std::uint64_t seed = p.grid.inits[r.init_index].seed;
    if (r.mirror_index == 0)
      io::save_checkpoint((fs::path(dir) / init_ckpt(r.init_index)).string(),
                          io::make_checkpoint(p.model, r.pot, r.w0, seed, 0));
    if (r.converged)
      io::save_checkpoint((fs::path(dir) / final_ckpt(r.init_index, r.mirror_index)).string(),
                          io::make_checkpoint(p.model, r.pot, r.result.w_final, seed, r.result.steps_taken));
  }
}

std::vector<DistanceMatrix> all_matrices(const RunCollection& runs) {
  std::vector<DistanceMatrix> out;
  std::vector<Potential> measures;
  for (std::size_t m = 0; m < runs.n_mirrors; ++m) measures.push_back(runs.at(0, m).pot);
  for (const auto& pot : measures)
    for (auto layout : {MatrixLayout::ByMirror, MatrixLayout::ByInit, MatrixLayout::FullCross})
      out.push_back(distance_matrix(runs, pot, layout));
  return out;
}

void print_runs(const RunCollection& runs) {
  for (const auto& r : runs.runs)
    std::cout << "init " << r.init_index << "  " << r.pot.label() << "  eta=" << io::sig6(r.eta)
              << "  steps=" << r.result.steps_taken << "  loss=" << io::sig6(r.result.final_total_loss)
              << (r.converged ? "  converged" : "  NOT converged") << (r.error.empty() ? "" : "  (" + r.error + ")")
              << '\n';
}

int cmd_train(const Globals& g, std::size_t init, std::size_t mirror) {
  const auto cfg = load(g);
  io::Prepared p = io::prepare(cfg);
  if (init >= p.grid.inits.size() || mirror >= p.grid.mirrors.size())
    throw ConfigError("--init / --mirror index out of range");
  ExperimentGrid one = p.grid;
  one.inits = {p.grid.inits[init]};
  one.mirrors = {p.grid.mirrors[mirror]};
  const RunCollection runs = run_cells(one);
  const RunRecord& r = runs.runs.front();
  io::ResultsBundle b;
  b.config = io::config_to_json(cfg);
  b.runs = &runs;
  io::emit_results(b, cfg.output_dir);
  io::save_checkpoint((fs::path(cfg.output_dir) / "final.ckpt").string(),
                      io::make_checkpoint(p.model, r.pot, r.result.w_final, one.inits[0].seed, r.result.steps_taken));
  if (!g.quiet) print_runs(runs);
  return r.converged ? 0 : 2;
}

int cmd_grid(const Globals& g) {
  const auto cfg = load(g);
  io::Prepared p = io::prepare(cfg);
  const RunCollection runs = run_grid(p.grid);
  io::ResultsBundle b;
  b.config = io::config_to_json(cfg);
  b.runs = &runs;
  b.matrices = all_matrices(runs);
  for (const auto& r : runs.runs) {
    const std::string label = "init" + std::to_string(r.init_index) + "/" + r.pot.label();
    if (!r.converged) continue;
    b.histograms.push_back(histogram(r.result.w_final, kHistogramBins, kNearZeroTau, label));
    if (p.data.has_test()) b.generalization.push_back({label, generalization_eval(p.model, r.result.w_final, p.data)});
  }
  io::emit_results(b, cfg.output_dir);
  save_run_checkpoints(p, runs, (fs::path(cfg.output_dir) / "ckpt").string());
  if (!g.quiet) {
    print_runs(runs);
    for (const auto& m : b.matrices)
      std::cout << layout_name(m.layout) << " " << m.measure.label() << ": diagonal "
                << (m.diagonal_pass ? "pass" : "FAIL") << '\n';
  }
  return 0;
}

double mirror_eta(const io::Prepared& p, std::size_t m, const ParamVector& w0) {
  const MirrorConfig& mc = p.grid.mirrors[m];
  if (!mc.auto_eta) return mc.smd.eta;
  return detail::auto_step_size(mc.pot, p.model, p.loss, p.data, w0, mc.smd.seed);
}

int cmd_verify_identity(const Globals& g) {
  const auto cfg = load(g);
  io::Prepared p = io::prepare(cfg);
  if (!p.teacher || cfg.dataset.noise != 0.0)
    throw ConfigError("verify-identity needs noiseless synthetic data (the teacher is the interpolating reference)");
  const ParamVector w0 = make_init(p.model, p.grid.inits.front());
  bool all_ok = true;
  for (std::size_t m = 0; m < p.grid.mirrors.size(); ++m) {
    const MirrorConfig& mc = p.grid.mirrors[m];
    const double eta = mirror_eta(p, m, w0);
    IndexOrder order(p.data.size(), mc.smd.order, mc.smd.seed);
    ParamVector w = w0;
    double worst = 0.0, worst_lhs = 0.0;
    std::size_t steps = 0;
    for (; steps < mc.smd.max_steps; ++steps) {
      const Eigen::Index i = order.next();
      const Vector x = p.data.inputs.row(i).transpose();
      const double y = p.data.labels[i];
      const IdentityReport rep = verify_identity(mc.pot, p.model, p.loss, *p.teacher, w, x, y, eta);
      if (rep.relative_residual() > worst) {
        worst = rep.relative_residual();
        worst_lhs = rep.lhs;
      }
      w = smd_step(mc.pot, p.model, p.loss, w, x, y, eta);
      if (!w.allFinite()) throw NumericError("verify-identity: iterate became non-finite");
    }
    const bool ok = worst <= kIdentityRelTolerance;
    all_ok = all_ok && ok;
    if (!g.quiet)
      std::cout << mc.pot.label() << "  eta=" << io::sig6(eta) << "  steps=" << steps
                << "  max |residual|/max(1,|lhs|)=" << io::sig6(worst) << " (lhs " << io::sig6(worst_lhs) << ")  "
                << (ok ? "ok" : "FAIL") << '\n';
  }
  return all_ok ? 0 : 2;
}

int cmd_oracle_compare(const Globals& g) {
  const auto cfg = load(g);
  io::Prepared p = io::prepare(cfg);
  const ParamVector w0 = make_init(p.model, p.grid.inits.front());
  io::ResultsBundle b;
  b.config = io::config_to_json(cfg);
  for (std::size_t m = 0; m < p.grid.mirrors.size(); ++m) {
    const MirrorConfig& mc = p.grid.mirrors[m];
    ExperimentGrid one = p.grid;
    one.inits = {p.grid.inits.front()};
    one.mirrors = {mc};
    one.mirrors[0].smd.record_trace = true;
    RunCollection runs;
    try {
      runs = run_grid(one);
    } catch (const ExperimentError&) {
      if (!g.quiet) std::cout << mc.pot.label() << "  run did not converge, no report\n";
      continue;
    }
    const RunRecord& r = runs.runs.front();
    OracleResult orc;
    if (p.model.is_linear()) {
      orc = closest_interpolant_linear(mc.pot, p.data, w0);
    } else {
      NonlinearOracleOptions oo;
      oo.seed = derive_seed(cfg.seed, 300 + m);
      if (p.teacher) oo.feasible_points.push_back(*p.teacher);
      orc = closest_interpolant_nonlinear(mc.pot, p.model, p.data, w0, oo);
    }
    const ClosenessReport rep = closeness_report(mc.pot, p.model, p.loss, p.data, w0, r.result, orc);
    b.closeness.push_back({mc.pot.label(), rep});
    if (!g.quiet) {
      std::cout << mc.pot.label() << "  oracle=" << method_name(orc.method) << "  D(w*,w0)=" << io::sig6(rep.d_star_init)
                << "  D(w_final,w0)=" << io::sig6(rep.d_final_init) << "  D(w*,w_final)=" << io::sig6(rep.d_star_final)
                << "  ratio=" << io::sig6(rep.ratio);
      if (rep.identity_checked)
        std::cout << "  summed-identity residual=" << io::sig6(rep.identity_residual);
      if (rep.oracle_suboptimal) std::cout << "  [oracle found a worse local minimum]";
      std::cout << '\n';
    }
  }
  io::emit_results(b, cfg.output_dir);
  return 0;
}

int cmd_distance_matrix(const Globals& g, const std::string& from) {
  const std::string src = from.empty() ? (fs::path(out_dir(g)) / "ckpt").string() : from;
  if (!fs::is_directory(src)) throw IoError("checkpoint directory '" + src + "' does not exist");
  std::map<std::size_t, io::Checkpoint> inits;
  std::map<std::pair<std::size_t, std::size_t>, io::Checkpoint> finals;
  const std::regex init_re(R"(init(\d+)\.ckpt)"), final_re(R"(final_i(\d+)_m(\d+)\.ckpt)");
  for (const auto& e : fs::directory_iterator(src)) {
    const std::string name = e.path().filename().string();
    std::smatch mt;
    if (std::regex_match(name, mt, init_re)) inits[std::stoul(mt[1])] = io::load_checkpoint(e.path().string());
    else if (std::regex_match(name, mt, final_re))
      finals[{std::stoul(mt[1]), std::stoul(mt[2])}] = io::load_checkpoint(e.path().string());
  }
  if (inits.empty()) throw IoError("no init checkpoints in '" + src + "'");
  std::size_t n_mirrors = 0;
  for (const auto& [key, c] : finals) n_mirrors = std::max(n_mirrors, key.second + 1);
  if (n_mirrors == 0) throw DataError("no final checkpoints in '" + src + "'");
  std::vector<std::optional<Potential>> pots(n_mirrors);
  for (const auto& [key, c] : finals) pots[key.second] = c.pot;
  const std::uint64_t hash = inits.begin()->second.spec_hash;
  RunCollection runs;
  runs.n_inits = inits.size();
  runs.n_mirrors = n_mirrors;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    if (!inits.count(i)) throw DataError("init checkpoints are not numbered 0..k-1");
    for (std::size_t m = 0; m < n_mirrors; ++m) {
      RunRecord r;
      r.init_index = i;
      r.mirror_index = m;
      r.w0 = inits[i].w;
      if (!pots[m]) throw DataError("mirror " + std::to_string(m) + " has no converged checkpoint");
      r.pot = *pots[m];
      auto it = finals.find({i, m});
      if (it != finals.end()) {
        if (it->second.spec_hash != hash) throw FormatError("checkpoints come from different models");
        r.converged = true;
        r.result.converged = true;
        r.result.w_final = it->second.w;
        r.result.steps_taken = it->second.steps;
      }
      runs.runs.push_back(std::move(r));
    }
  }
  io::ResultsBundle b;
  b.runs = &runs;
  b.include_weights = false;
  b.matrices = all_matrices(runs);
  io::emit_results(b, out_dir(g));
  if (!g.quiet)
    for (const auto& m : b.matrices) std::cout << io::matrix_table(m) << '\n';
  return 0;
}

int cmd_histogram(const Globals& g, const std::string& path, int bins, double tau) {
  if (path.empty()) throw ConfigError("histogram needs --checkpoint <path>");
  const io::Checkpoint c = io::load_checkpoint(path);
  const HistogramSummary h = histogram(c.w, bins, tau, c.pot.label());
  if (!g.quiet) {
    std::cout << "p=" << c.w.size() << "  potential=" << c.pot.label() << "  tau=" << io::sig6(tau)
              << "  near_zero_fraction=" << io::sig6(h.near_zero_fraction) << '\n';
    for (std::size_t k = 0; k < h.counts.size(); ++k)
      if (h.counts[k]) std::cout << "  [" << io::sig6(h.edges[k]) << ", " << io::sig6(h.edges[k + 1]) << ")  " << h.counts[k] << '\n';
  }
  return 0;
}

int cmd_check_stepsize(const Globals& g, std::size_t samples) {
  const auto cfg = load(g);
  io::Prepared p = io::prepare(cfg);
  const ParamVector w0 = make_init(p.model, p.grid.inits.front());
  const double radius = detail::step_check_radius(p.model, p.data, w0);
  for (std::size_t m = 0; m < p.grid.mirrors.size(); ++m) {
    const MirrorConfig& mc = p.grid.mirrors[m];
    const double eta = mirror_eta(p, m, w0);
    const StepSizeReport rep =
        step_size_check_general(mc.pot, p.model, p.loss, p.data, eta, w0, radius, samples, mc.smd.seed);
    if (!g.quiet)
      std::cout << mc.pot.label() << "  eta=" << io::sig6(eta) << (mc.auto_eta ? " (auto)" : "")
                << "  radius=" << io::sig6(radius) << "  pairs=" << rep.pairs_checked
                << "  worst margin=" << io::sig6(rep.worst_margin) << "  " << (rep.passed ? "pass" : "FAIL") << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic mirror descent experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--quiet", g.quiet, "print nothing on success");

  std::size_t init = 0, mirror = 0, samples = 16;
  std::string from, ckpt;
  int bins = kHistogramBins;
  double tau = kNearZeroTau;
  auto* train = app.add_subcommand("train", "train one (init, mirror) cell");
  train->add_option("--init", init, "init index");
  train->add_option("--mirror", mirror, "mirror index");
  auto* grid = app.add_subcommand("grid", "run the full init x mirror grid");
  auto* vid = app.add_subcommand("verify-identity", "check the per-step identity along SMD runs");
  auto* orc = app.add_subcommand("oracle-compare", "compare converged runs with the closest interpolant");
  auto* dm = app.add_subcommand("distance-matrix", "recompute distance matrices from grid checkpoints");
  dm->add_option("--from", from, "checkpoint directory (default <out>/ckpt)");
  auto* hist = app.add_subcommand("histogram", "histogram of |w| for a checkpoint");
  hist->add_option("--checkpoint", ckpt, "checkpoint file");
  hist->add_option("--bins", bins, "number of bins");
  hist->add_option("--tau", tau, "near-zero threshold");
  auto* css = app.add_subcommand("check-stepsize", "sampled convexity check of psi - eta*L_i");
  css->add_option("--samples", samples, "sample pairs per data point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, init, mirror);
    if (*grid) return cmd_grid(g);
    if (*vid) return cmd_verify_identity(g);
    if (*orc) return cmd_oracle_compare(g);
    if (*dm) return cmd_distance_matrix(g, from);
    if (*hist) return cmd_histogram(g, ckpt, bins, tau);
    if (*css) return cmd_check_stepsize(g, samples);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
