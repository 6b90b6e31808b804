#pragma once

// Result files: results.json (full precision), one CSV per distance matrix
// and tables.txt for people.

#include "smdlab/experiments.hpp"
#include "smdlab/io/format.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace smdlab::io {

struct NamedGeneralization {
  std::string label;
  GeneralizationReport report;
};

struct NamedCloseness {
  std::string label;
  ClosenessReport report;
};

struct ResultsBundle {
  nlohmann::json config;  // echoed verbatim, may be null
  const RunCollection* runs = nullptr;
  bool include_weights = true;
  std::vector<DistanceMatrix> matrices;
  std::vector<HistogramSummary> histograms;
  std::vector<NamedGeneralization> generalization;
  std::vector<NamedCloseness> closeness;
};

namespace detail {

// JSON has no NaN; missing cells become null.
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json vec_json(const Eigen::Ref<const Vector>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) a.push_back(num(v[j]));
  return a;
}

inline std::string matrix_file_name(const DistanceMatrix& m) {
  std::string label = m.measure.label();
  for (char& ch : label)
    if (ch == '=' || ch == '.') ch = '_';
  return std::string("matrix_") + layout_name(m.layout) + "_" + label + ".csv";
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

}  // namespace detail

inline std::string matrix_csv(const DistanceMatrix& m) {
  std::ostringstream os;
  os << "row";
  for (const auto& c : m.col_labels) os << ',' << c;
  os << ",argmin\n";
  for (Eigen::Index r = 0; r < m.entries.rows(); ++r) {
    os << m.row_labels[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < m.entries.cols(); ++c)
      os << ',' << (m.missing(r, c) ? std::string("missing") : shortest(m.entries(r, c)));
    os << ',' << m.argmin[static_cast<std::size_t>(r)] << '\n';
  }
  return os.str();
}

inline std::string matrix_table(const DistanceMatrix& m) {
  std::ostringstream os;
  os << layout_name(m.layout) << " distances D(final, init) measured with " << m.measure.label()
     << "  [diagonal " << (m.diagonal_pass ? "PASS" : "FAIL") << "]\n";
  auto pad = [](const std::string& s) { return std::string(s.size() < 14 ? 14 - s.size() : 0, ' ') + s; };
  os << "          ";
  for (const auto& c : m.col_labels) os << ' ' << pad(c);
  os << '\n';
  for (Eigen::Index r = 0; r < m.entries.rows(); ++r) {
    std::string lab = m.row_labels[static_cast<std::size_t>(r)];
    lab.resize(10, ' ');
    os << lab;
    for (Eigen::Index c = 0; c < m.entries.cols(); ++c) {
      std::string cell = sig6(m.entries(r, c));
      if (static_cast<long>(c) == m.argmin[static_cast<std::size_t>(r)]) cell = "*" + cell;
      os << ' ' << pad(cell);
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json results_json(const ResultsBundle& b) {
  using nlohmann::json;
  json j;
  j["config"] = b.config;
  json runs = json::array();
  if (b.runs) {
    for (const auto& r : b.runs->runs) {
      json jr = {{"init", r.init_index},
                 {"mirror", r.mirror_index},
                 {"potential", r.pot.label()},
                 {"eta", detail::num(r.eta)},
                 {"attempts", r.attempts},
                 {"converged", r.converged},
                 {"steps", r.result.steps_taken},
                 {"final_loss", detail::num(r.result.final_total_loss)},
                 {"residual_inf", detail::num(r.residual_inf)},
                 {"error", r.error}};
      if (b.include_weights) {
        jr["w0"] = detail::vec_json(r.w0);
        jr["w_final"] = detail::vec_json(r.result.w_final);
      }
      runs.push_back(std::move(jr));
    }
  }
  j["runs"] = std::move(runs);
  json mats = json::array();
  for (const auto& m : b.matrices) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.entries.rows(); ++r) rows.push_back(detail::vec_json(m.entries.row(r).transpose()));
    mats.push_back({{"layout", layout_name(m.layout)},
                    {"measure", m.measure.label()},
                    {"row_labels", m.row_labels},
                    {"col_labels", m.col_labels},
                    {"entries", rows},
                    {"argmin", m.argmin},
                    {"matched", m.matched},
                    {"diagonal_pass", m.diagonal_pass},
                    {"csv", detail::matrix_file_name(m)}});
  }
  j["matrices"] = std::move(mats);
  json hists = json::array();
  for (const auto& h : b.histograms)
    hists.push_back({{"label", h.label},
                     {"tau", h.tau},
                     {"near_zero_fraction", h.near_zero_fraction},
                     {"edges", h.edges},
                     {"counts", h.counts}});
  j["histograms"] = std::move(hists);
  json gens = json::array();
  for (const auto& g : b.generalization)
    gens.push_back({{"label", g.label},
                    {"mse", detail::num(g.report.mse)},
                    {"accuracy", g.report.accuracy ? json(*g.report.accuracy) : json(nullptr)},
                    {"n_test", g.report.n_test}});
  j["generalization"] = std::move(gens);
  json t2 = json::array();
  for (const auto& t : b.closeness) {
    const auto& r = t.report;
    json e = {{"label", t.label},
              {"d_star_final", detail::num(r.d_star_final)},
              {"d_star_init", detail::num(r.d_star_init)},
              {"d_final_init", detail::num(r.d_final_init)},
              {"ratio", detail::num(r.ratio)},
              {"feasibility_correction", detail::num(r.feasibility_correction)},
              {"oracle_suboptimal", r.oracle_suboptimal},
              {"identity_checked", r.identity_checked}};
    if (r.identity_checked) {
      e["identity_lhs"] = detail::num(r.identity_lhs);
      e["identity_rhs"] = detail::num(r.identity_rhs);
      e["identity_residual"] = detail::num(r.identity_residual);
    }
    t2.push_back(std::move(e));
  }
  j["closeness"] = std::move(t2);
  return j;
}

inline std::string tables_text(const ResultsBundle& b) {
  std::ostringstream os;
  if (b.runs) {
    os << "runs\n";
    os << "  init  potential      eta          steps      final_loss   converged\n";
    for (const auto& r : b.runs->runs) {
      char line[256];
      std::snprintf(line, sizeof line, "  %-5zu %-14s %-12s %-10zu %-12s %s\n", r.init_index, r.pot.label().c_str(),
                    sig6(r.eta).c_str(), r.result.steps_taken, sig6(r.result.final_total_loss).c_str(),
                    r.converged ? "yes" : "no");
      os << line;
    }
    os << '\n';
  }
  for (const auto& m : b.matrices) os << matrix_table(m) << '\n';
  if (!b.histograms.empty()) {
    os << "near-zero fractions\n";
    for (const auto& h : b.histograms)
      os << "  " << h.label << "  tau=" << sig6(h.tau) << "  fraction=" << sig6(h.near_zero_fraction) << '\n';
    os << '\n';
  }
  if (!b.generalization.empty()) {
    os << "held-out performance\n";
    for (const auto& g : b.generalization) {
      os << "  " << g.label << "  mse=" << sig6(g.report.mse);
      if (g.report.accuracy) os << "  accuracy=" << sig6(*g.report.accuracy);
      os << '\n';
    }
    os << '\n';
  }
  if (!b.closeness.empty()) {
    os << "closeness to the oracle point\n";
    for (const auto& t : b.closeness)
      os << "  " << t.label << "  D(w*,w_final)=" << sig6(t.report.d_star_final)
         << "  D(w*,w0)=" << sig6(t.report.d_star_init) << "  ratio=" << sig6(t.report.ratio)
         << (t.report.oracle_suboptimal ? "  [oracle suboptimal]" : "") << '\n';
  }
  return os.str();
}

/// Writes results.json, one CSV per matrix and tables.txt under outdir.
inline void emit_results(const ResultsBundle& b, const std::string& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create output directory '" + outdir + "': " + ec.message());
  const std::filesystem::path dir(outdir);
  detail::write_text(dir / "results.json", results_json(b).dump(2) + "\n");
  for (const auto& m : b.matrices) detail::write_text(dir / detail::matrix_file_name(m), matrix_csv(m));
  detail::write_text(dir / "tables.txt", tables_text(b));
}

/// Reads a CSV written by matrix_csv back into entries and argmin.
struct ParsedMatrixCsv {
  std::vector<std::string> row_labels, col_labels;
  Matrix entries;
  std::vector<long> argmin;
};

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

inline ParsedMatrixCsv parse_matrix_csv(const std::string& text) {
  ParsedMatrixCsv out;
  std::istringstream is(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ls(s);
    while (std::getline(ls, cur, ',')) f.push_back(cur);
    return f;
  };
  if (!std::getline(is, line)) throw FormatError("matrix csv: missing header");
  auto head = split(line);
  if (head.size() < 2 || head.front() != "row" || head.back() != "argmin") throw FormatError("matrix csv: bad header");
  out.col_labels.assign(head.begin() + 1, head.end() - 1);
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != out.col_labels.size() + 2) throw FormatError("matrix csv: ragged row");
    out.row_labels.push_back(f.front());
    std::vector<double> vals;
    for (std::size_t k = 1; k + 1 < f.size(); ++k)
      vals.push_back(f[k] == "missing" ? std::numeric_limits<double>::quiet_NaN() : parse_double(f[k]));
    rows.push_back(std::move(vals));
    out.argmin.push_back(std::stol(f.back()));
  }
  out.entries.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.col_labels.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      out.entries(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return out;
}

}  // namespace smdlab::io
