#pragma once

// JSON experiment configs. Every key has a default, unknown keys are errors,
// and render() writes every field so parse(render(c)) == c.

#include "smdlab/experiments.hpp"
#include "smdlab/io/idx.hpp"
#include "smdlab/io/synthetic.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace smdlab::io {

using json = nlohmann::json;

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx
  // synthetic
  int n = 10;
  int d = 20;
  double teacher_scale = 1.0;
  double noise = 0.0;
  int n_test = 0;
  /// Center the teacher on the first init, so that init starts next to the
  /// interpolating set.
  bool anchor_to_init = false;
  // idx
  std::string images;
  std::string labels;
  std::size_t count = 100;
  std::array<int, 2> classes{0, 1};

  bool operator==(const DatasetConfig&) const = default;
};

struct MirrorEntry {
  Potential pot = Potential::qnorm(2.0);
  std::optional<double> eta;  // empty = choose automatically
  int eta_retries = 0;
  double eta_backoff = 3.0;
  std::string order = "cyclic";  // cyclic | shuffled

  bool operator==(const MirrorEntry&) const = default;
};

struct StoppingConfig {
  double loss_threshold = kDefaultLossThreshold;
  std::optional<double> relative_threshold;
  std::size_t max_steps = 100000;
  std::optional<double> accuracy_target;

  bool operator==(const StoppingConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  std::vector<int> hidden;  // empty = linear model
  std::string loss = "square";
  std::vector<MirrorEntry> mirrors{MirrorEntry{}};
  int init_count = 1;
  double init_scale = kDefaultInitScale;
  StoppingConfig stopping;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline void read_opt(const json& obj, const char* key, std::optional<double>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (v.is_null()) out.reset();
  else if (v.is_number()) out = v.get<double>();
  else throw ConfigError(where + "." + key + " must be a number or null");
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::check_keys(j, {"seed", "dataset", "hidden", "loss", "mirrors", "inits", "stopping", "output_dir"}, "config");
  read(j, "seed", c.seed, "config");
  read(j, "hidden", c.hidden, "config");
  read(j, "loss", c.loss, "config");
  read(j, "output_dir", c.output_dir, "config");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::check_keys(d, {"kind", "n", "d", "teacher_scale", "noise", "n_test", "anchor_to_init", "images", "labels",
                           "count", "classes"},
                       "dataset");
    auto& ds = c.dataset;
    read(d, "kind", ds.kind, "dataset");
    read(d, "n", ds.n, "dataset");
    read(d, "d", ds.d, "dataset");
    read(d, "teacher_scale", ds.teacher_scale, "dataset");
    read(d, "noise", ds.noise, "dataset");
    read(d, "n_test", ds.n_test, "dataset");
    read(d, "anchor_to_init", ds.anchor_to_init, "dataset");
    read(d, "images", ds.images, "dataset");
    read(d, "labels", ds.labels, "dataset");
    read(d, "count", ds.count, "dataset");
    read(d, "classes", ds.classes, "dataset");
  }
  if (j.contains("mirrors")) {
    const json& ms = j.at("mirrors");
    if (!ms.is_array()) throw ConfigError("config.mirrors must be an array");
    c.mirrors.clear();
    for (std::size_t k = 0; k < ms.size(); ++k) {
      const std::string where = "mirrors[" + std::to_string(k) + "]";
      const json& m = ms[k];
      detail::check_keys(m, {"q", "eta", "eta_retries", "eta_backoff", "order"}, where);
      MirrorEntry e;
      if (m.contains("q")) {
        const json& q = m.at("q");
        try {
          if (q.is_string() && q.get<std::string>() == "entropy") e.pot = Potential::entropy();
          else if (q.is_number()) e.pot = Potential::qnorm(q.get<double>());
          else throw ConfigError(where + ".q must be a number > 1 or \"entropy\"");
        } catch (const ArgumentError& err) {
          throw ConfigError(where + ".q: " + err.what());
        }
      }
      if (m.contains("eta")) {
        const json& v = m.at("eta");
        if (v.is_string() && v.get<std::string>() == "auto") e.eta.reset();
        else if (v.is_number()) e.eta = v.get<double>();
        else throw ConfigError(where + ".eta must be a number or \"auto\"");
      }
      read(m, "eta_retries", e.eta_retries, where);
      read(m, "eta_backoff", e.eta_backoff, where);
      read(m, "order", e.order, where);
      c.mirrors.push_back(e);
    }
  }
  if (j.contains("inits")) {
    const json& in = j.at("inits");
    detail::check_keys(in, {"count", "scale"}, "inits");
    read(in, "count", c.init_count, "inits");
    read(in, "scale", c.init_scale, "inits");
  }
  if (j.contains("stopping")) {
    const json& s = j.at("stopping");
    detail::check_keys(s, {"loss_threshold", "relative_threshold", "max_steps", "accuracy_target"}, "stopping");
    read(s, "loss_threshold", c.stopping.loss_threshold, "stopping");
    detail::read_opt(s, "relative_threshold", c.stopping.relative_threshold, "stopping");
    read(s, "max_steps", c.stopping.max_steps, "stopping");
    detail::read_opt(s, "accuracy_target", c.stopping.accuracy_target, "stopping");
  }
  return c;
}

/// Semantic checks that do not need the data.
inline void validate_config(const ExperimentConfig& c) {
  const auto& ds = c.dataset;
  if (ds.kind != "synthetic" && ds.kind != "idx") throw ConfigError("dataset.kind must be \"synthetic\" or \"idx\"");
  if (ds.kind == "synthetic") {
    if (ds.n < 1 || ds.d < 1) throw ConfigError("dataset.n and dataset.d must be >= 1");
    if (!(ds.teacher_scale > 0.0)) throw ConfigError("dataset.teacher_scale must be > 0");
    if (!(ds.noise >= 0.0)) throw ConfigError("dataset.noise must be >= 0");
    if (ds.n_test < 0) throw ConfigError("dataset.n_test must be >= 0");
  } else {
    if (ds.images.empty() || ds.labels.empty()) throw ConfigError("idx datasets need dataset.images and dataset.labels");
    if (ds.count == 0) throw ConfigError("dataset.count must be >= 1");
    if (ds.anchor_to_init) throw ConfigError("dataset.anchor_to_init only applies to synthetic data");
  }
  for (int h : c.hidden)
    if (h < 1) throw ConfigError("hidden widths must be >= 1");
  if (c.loss != "square" && c.loss != "cross-entropy") throw ConfigError("loss must be \"square\" or \"cross-entropy\"");
  if (c.mirrors.empty()) throw ConfigError("at least one mirror is required");
  for (const auto& m : c.mirrors) {
    if (m.eta && !(*m.eta > 0.0)) throw ConfigError("mirror eta must be > 0");
    if (m.eta_retries < 0) throw ConfigError("eta_retries must be >= 0");
    if (!(m.eta_backoff > 1.0)) throw ConfigError("eta_backoff must be > 1");
    if (m.order != "cyclic" && m.order != "shuffled") throw ConfigError("order must be \"cyclic\" or \"shuffled\"");
  }
  if (c.init_count < 1) throw ConfigError("inits.count must be >= 1");
  if (!(c.init_scale >= 0.0)) throw ConfigError("inits.scale must be >= 0");
  if (!(c.stopping.loss_threshold >= 0.0)) throw ConfigError("stopping.loss_threshold must be >= 0");
  if (c.stopping.max_steps < 1) throw ConfigError("stopping.max_steps must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

inline json config_to_json(const ExperimentConfig& c) {
  json mirrors = json::array();
  for (const auto& m : c.mirrors) {
    mirrors.push_back({{"q", m.pot.is_entropy() ? json("entropy") : json(m.pot.q)},
                       {"eta", m.eta ? json(*m.eta) : json("auto")},
                       {"eta_retries", m.eta_retries},
                       {"eta_backoff", m.eta_backoff},
                       {"order", m.order}});
  }
  const auto& ds = c.dataset;
  return {{"seed", c.seed},
          {"dataset",
           {{"kind", ds.kind},
            {"n", ds.n},
            {"d", ds.d},
            {"teacher_scale", ds.teacher_scale},
            {"noise", ds.noise},
            {"n_test", ds.n_test},
            {"anchor_to_init", ds.anchor_to_init},
            {"images", ds.images},
            {"labels", ds.labels},
            {"count", ds.count},
            {"classes", ds.classes}}},
          {"hidden", c.hidden},
          {"loss", c.loss},
          {"mirrors", mirrors},
          {"inits", {{"count", c.init_count}, {"scale", c.init_scale}}},
          {"stopping",
           {{"loss_threshold", c.stopping.loss_threshold},
            {"relative_threshold", detail::opt_json(c.stopping.relative_threshold)},
            {"max_steps", c.stopping.max_steps},
            {"accuracy_target", detail::opt_json(c.stopping.accuracy_target)}}},
          {"output_dir", c.output_dir}};
}

inline std::string render_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = config_from_json(j);
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Seeds of every random stream, all derived from the config seed.
inline std::uint64_t dataset_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 0); }
inline std::uint64_t init_seed(const ExperimentConfig& c, int k) {
  return derive_seed(c.seed, 100 + static_cast<std::uint64_t>(k));
}
inline std::uint64_t order_seed(const ExperimentConfig& c, std::size_t m) { return derive_seed(c.seed, 200 + m); }

inline Model build_model(const ExperimentConfig& c, int input_dim) {
  if (c.hidden.empty()) return Model::linear(input_dim);
  std::vector<int> widths{input_dim};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(1);
  return Model::mlp(std::move(widths));
}

struct Prepared {
  Model model = Model::linear(1);
  Dataset data;
  std::optional<ParamVector> teacher;
  LossFn loss = LossFn::square();
  ExperimentGrid grid;
};

inline Prepared prepare(const ExperimentConfig& c) {
  validate_config(c);
  Prepared out;
  out.loss = c.loss == "square" ? LossFn::square() : LossFn::cross_entropy_binary();
  std::vector<InitSpec> inits;
  for (int k = 0; k < c.init_count; ++k) inits.push_back({init_seed(c, k), c.init_scale});
  if (c.dataset.kind == "synthetic") {
    SyntheticSpec sp;
    sp.n = c.dataset.n;
    sp.d = c.dataset.d;
    sp.hidden = c.hidden;
    sp.seed = dataset_seed(c);
    sp.noise = c.dataset.noise;
    sp.teacher_scale = c.dataset.teacher_scale;
    sp.n_test = c.dataset.n_test;
    if (c.dataset.anchor_to_init) sp.teacher_center = make_init(sp.model(), inits.front());
    SyntheticData sd = generate_synthetic(sp);
    out.model = sd.model;
    out.data = std::move(sd.data);
    out.teacher = std::move(sd.teacher);
  } else {
    out.data = load_idx_subset(c.dataset.images, c.dataset.labels, c.dataset.count,
                               {c.dataset.classes[0], c.dataset.classes[1]});
    out.model = build_model(c, static_cast<int>(out.data.dim()));
  }
  ExperimentGrid& g = out.grid;
  g.inits = std::move(inits);
  g.model = out.model;
  g.data = out.data;
  g.loss = out.loss;
  for (std::size_t m = 0; m < c.mirrors.size(); ++m) {
    const MirrorEntry& e = c.mirrors[m];
    MirrorConfig mc;
    mc.pot = e.pot;
    mc.auto_eta = !e.eta.has_value();
    mc.smd.eta = e.eta.value_or(1.0);
    mc.smd.order = e.order == "shuffled" ? SMDConfig::Order::Shuffled : SMDConfig::Order::Cyclic;
    mc.smd.seed = order_seed(c, m);
    mc.smd.loss_threshold = c.stopping.loss_threshold;
    mc.smd.max_steps = c.stopping.max_steps;
    mc.smd.accuracy_target = c.stopping.accuracy_target;
    mc.relative_threshold = c.stopping.relative_threshold;
    mc.eta_retries = e.eta_retries;
    mc.eta_backoff = e.eta_backoff;
    g.mirrors.push_back(mc);
  }
  return out;
}

}  // namespace smdlab::io
