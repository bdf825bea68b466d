#pragma once

// Experiment configs and the runners behind the command-line subcommands.
// Configs are JSON objects; relative paths inside them resolve against the
// directory holding the config file.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "darse/error.hpp"
#include "darse/evaluator.hpp"
#include "darse/importance.hpp"
#include "darse/io.hpp"
#include "darse/lowrank.hpp"
#include "darse/matrix.hpp"
#include "darse/objectives.hpp"
#include "darse/oracle.hpp"
#include "darse/search.hpp"
#include "darse/toy_multitask.hpp"

namespace darse {

namespace fs = std::filesystem;

/// 0 success, 1 config or usage error, 2 degenerate input, 3 numeric or
/// evaluator failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::degenerate_input: return 2;
    case ErrorKind::numeric_failure:
    case ErrorKind::evaluator_failure: return 3;
    default: return 1;
  }
}

struct AllocationConfig {
  std::optional<int> rank_budget;
  std::vector<int> caps;           // empty: each layer's maximum rank
  std::vector<fs::path> matrices;  // empty: the objective's own matrices
};

struct GroupSpec {
  int first = 0;  // inclusive layer ids
  int last = 0;
  std::vector<int> ranks;
};

struct SweepConfig {
  std::vector<GroupSpec> groups;
  double cap = 1e5;
};

enum class OracleMethod { automatic, dp, brute_force };

struct OracleConfig {
  OracleMethod method = OracleMethod::automatic;
  double cap = 1e6;
};

struct ExperimentConfig {
  fs::path base_dir = ".";
  std::optional<std::vector<LayerSpec>> layers;
  json space = json::object();  // resolved once the layers are known
  SearchConfig search;
  std::string objective_kind;
  json objective = json::object();
  MultiTaskWeights weights;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  AllocationConfig allocation;
  SweepConfig sweep;
  OracleConfig oracle;
};

namespace detail {

inline void allow_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw InvalidInput("config: " + where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw InvalidInput("config: unknown key '" + k + "' in " + where);
  }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline fs::path existing_file(const fs::path& base, const std::string& p) {
  const fs::path path = resolve(base, p);
  if (!fs::is_regular_file(path)) throw InvalidInput("config: file not found: " + path.string());
  return path;
}

inline std::vector<LayerSpec> parse_layers(const json& j) {
  if (!j.is_array() || j.empty()) throw InvalidInput("config: layers must be a non-empty array");
  std::vector<std::pair<int, int>> shapes;
  for (const auto& l : j) {
    if (l.is_array() && l.size() == 2) {
      shapes.emplace_back(l[0].get<int>(), l[1].get<int>());
    } else if (l.is_object()) {
      allow_keys(l, "layers[]", {"rows", "cols"});
      shapes.emplace_back(l.at("rows").get<int>(), l.at("cols").get<int>());
    } else {
      throw InvalidInput("config: each layer is [rows, cols] or {rows, cols}");
    }
  }
  return make_layers(shapes);
}

inline SweepOrder parse_sweep_order(const std::string& s) {
  if (s == "ascending") return SweepOrder::ascending;
  if (s == "descending") return SweepOrder::descending;
  if (s == "permuted") return SweepOrder::permuted;
  throw InvalidInput("config: unknown sweep_order '" + s + "'");
}

inline SearchConfig parse_search(const json& j) {
  allow_keys(j, "search", {"epsilon", "max_iter", "param_budget", "tie_break", "sweep_order",
                           "order_seed", "memoize"});
  SearchConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.max_iter = j.value("max_iter", c.max_iter);
  if (j.contains("param_budget") && !j.at("param_budget").is_null()) {
    c.param_budget = j.at("param_budget").get<long long>();
  }
  if (j.value("tie_break", std::string("smaller_rank")) != "smaller_rank") {
    throw InvalidInput("config: tie_break must be \"smaller_rank\"");
  }
  c.sweep_order = parse_sweep_order(j.value("sweep_order", std::string("ascending")));
  c.order_seed = j.value("order_seed", c.order_seed);
  c.memoize = j.value("memoize", c.memoize);
  c.validate();
  return c;
}

inline FitConfig parse_fit(const json& j) {
  allow_keys(j, "fit", {"reg_strength", "step_size", "max_steps", "stop_tolerance"});
  FitConfig c;
  c.reg_strength = j.value("reg_strength", c.reg_strength);
  c.step_size = j.value("step_size", c.step_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.stop_tolerance = j.value("stop_tolerance", c.stop_tolerance);
  c.validate();
  return c;
}

inline ToyModelSpec parse_toy_model(const json& j) {
  allow_keys(j, "model", {"feature_dim", "layers", "dropped_per_layer", "regression_hidden",
                          "classification_hidden", "dropout"});
  ToyModelSpec s;
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.layers = j.value("layers", s.layers);
  s.dropped_per_layer = j.value("dropped_per_layer", s.dropped_per_layer);
  s.regression_hidden = j.value("regression_hidden", s.regression_hidden);
  s.classification_hidden = j.value("classification_hidden", s.classification_hidden);
  s.dropout = j.value("dropout", s.dropout);
  s.validate();
  return s;
}

inline ToyTrainConfig parse_toy_train(const json& j) {
  allow_keys(j, "train", {"step_size", "max_steps"});
  ToyTrainConfig c;
  c.step_size = j.value("step_size", c.step_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.validate();
  return c;
}

inline void check_objective(const ExperimentConfig& cfg) {
  const json& o = cfg.objective;
  const std::string& kind = cfg.objective_kind;
  auto check_paths = [&](const char* key) {
    if (!o.contains(key)) return;
    for (const auto& p : o.at(key)) existing_file(cfg.base_dir, p.get<std::string>());
  };
  if (kind == "spectral_tail") {
    allow_keys(o, "objective", {"kind", "spectra", "matrices", "synthetic"});
    const int given = int(o.contains("spectra")) + int(o.contains("matrices")) +
                      int(o.contains("synthetic"));
    if (given != 1) {
      throw InvalidInput("config: spectral_tail needs exactly one of spectra, matrices, synthetic");
    }
    if (o.contains("synthetic")) {
      allow_keys(o.at("synthetic"), "objective.synthetic", {"scale", "decay"});
    }
    check_paths("matrices");
  } else if (kind == "matrix_fit") {
    allow_keys(o, "objective", {"kind", "bases", "targets", "synthetic", "fit"});
    if (o.contains("synthetic") == (o.contains("bases") || o.contains("targets"))) {
      throw InvalidInput("config: matrix_fit needs either bases+targets or synthetic");
    }
    if (o.contains("synthetic")) {
      allow_keys(o.at("synthetic"), "objective.synthetic", {"noise"});
    } else if (!o.contains("bases") || !o.contains("targets")) {
      throw InvalidInput("config: matrix_fit needs both bases and targets");
    }
    check_paths("bases");
    check_paths("targets");
    parse_fit(o.value("fit", json::object()));
  } else if (kind == "toy_multitask") {
    allow_keys(o, "objective", {"kind", "model", "data", "train"});
    parse_toy_model(o.value("model", json::object()));
    parse_toy_train(o.value("train", json::object()));
    const json data = o.value("data", json::object());
    allow_keys(data, "objective.data", {"path", "count", "noise_std"});
    if (data.contains("path")) existing_file(cfg.base_dir, data.at("path").get<std::string>());
  } else if (kind == "scripted") {
    allow_keys(o, "objective", {"kind", "table", "default"});
    if (!o.contains("table") || !o.at("table").is_array()) {
      throw InvalidInput("config: scripted objective needs a table array");
    }
    for (const auto& row : o.at("table")) allow_keys(row, "objective.table[]", {"ranks", "metric"});
  } else {
    throw InvalidInput("config: unknown objective kind '" + kind + "'");
  }
}

}  // namespace detail

/// Validates structure, defaults, and referenced files. `base_dir` anchors
/// relative paths.
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  try {
    detail::allow_keys(j, "config", {"layers", "space", "search", "objective", "weights",
                                     "seed", "output_dir", "allocation", "sweep", "oracle"});
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    if (j.contains("layers")) cfg.layers = detail::parse_layers(j.at("layers"));
    if (j.contains("space")) {
      cfg.space = j.at("space");
      detail::allow_keys(cfg.space, "space",
                         {"r_min", "r_max", "coarse_grid", "fine_delta", "r_step", "mode"});
    }
    cfg.search = detail::parse_search(j.value("search", json::object()));
    if (!j.contains("objective")) throw InvalidInput("config: missing objective");
    cfg.objective = j.at("objective");
    if (!cfg.objective.is_object() || !cfg.objective.contains("kind")) {
      throw InvalidInput("config: objective needs a kind");
    }
    cfg.objective_kind = cfg.objective.at("kind").get<std::string>();
    detail::check_objective(cfg);
    if (j.contains("weights")) {
      detail::allow_keys(j.at("weights"), "weights", {"regression", "classification"});
      cfg.weights.regression = j.at("weights").value("regression", cfg.weights.regression);
      cfg.weights.classification =
          j.at("weights").value("classification", cfg.weights.classification);
    }
    cfg.weights.validate();
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string("out")));
    if (j.contains("allocation")) {
      const json& a = j.at("allocation");
      detail::allow_keys(a, "allocation", {"rank_budget", "caps", "matrices"});
      if (a.contains("rank_budget")) cfg.allocation.rank_budget = a.at("rank_budget").get<int>();
      cfg.allocation.caps = a.value("caps", std::vector<int>{});
      for (const auto& p : a.value("matrices", std::vector<std::string>{})) {
        cfg.allocation.matrices.push_back(detail::existing_file(base_dir, p));
      }
    }
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      detail::allow_keys(s, "sweep", {"groups", "cap"});
      cfg.sweep.cap = s.value("cap", cfg.sweep.cap);
      for (const auto& g : s.value("groups", json::array())) {
        detail::allow_keys(g, "sweep.groups[]", {"first", "last", "ranks"});
        cfg.sweep.groups.push_back(
            {g.at("first").get<int>(), g.at("last").get<int>(), g.at("ranks").get<std::vector<int>>()});
      }
    }
    if (j.contains("oracle")) {
      const json& o = j.at("oracle");
      detail::allow_keys(o, "oracle", {"method", "cap"});
      const std::string m = o.value("method", std::string("auto"));
      if (m == "auto") cfg.oracle.method = OracleMethod::automatic;
      else if (m == "dp") cfg.oracle.method = OracleMethod::dp;
      else if (m == "brute_force") cfg.oracle.method = OracleMethod::brute_force;
      else throw InvalidInput("config: unknown oracle method '" + m + "'");
      cfg.oracle.cap = o.value("cap", cfg.oracle.cap);
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// A config turned into live objects.
struct Experiment {
  std::vector<LayerSpec> layers;
  RankSpace space;
  std::shared_ptr<const ObjectiveEvaluator> objective;
  // Frozen matrices the importance scores are taken from, when the objective
  // has them; spectra-only objectives report their energies directly.
  std::vector<Matrix> base_matrices;
  std::vector<double> spectral_energies;
};

namespace detail {

inline Matrix load_matrix(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidInput("cannot open " + p.string());
  return read_matrix(in);
}

inline std::vector<Matrix> load_matrices(const ExperimentConfig& cfg, const json& list) {
  std::vector<Matrix> out;
  for (const auto& p : list) out.push_back(load_matrix(existing_file(cfg.base_dir, p.get<std::string>())));
  return out;
}

inline std::vector<LayerSpec> layers_of(const std::vector<Matrix>& ms) {
  std::vector<std::pair<int, int>> shapes;
  for (const auto& m : ms) shapes.emplace_back(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  return make_layers(shapes);
}

inline const std::vector<LayerSpec>& require_layers(const ExperimentConfig& cfg,
                                                    const char* what) {
  if (!cfg.layers) throw InvalidInput(std::string("config: ") + what + " needs layers");
  return *cfg.layers;
}

inline void check_layers_match(const ExperimentConfig& cfg, const std::vector<LayerSpec>& derived) {
  if (!cfg.layers) return;
  const auto& given = *cfg.layers;
  bool same = given.size() == derived.size();
  for (std::size_t i = 0; same && i < given.size(); ++i) {
    same = given[i].rows == derived[i].rows && given[i].cols == derived[i].cols;
  }
  if (!same) throw InvalidInput("config: layers disagree with the objective's matrices");
}

inline RankSpace resolve_space(const json& s, const std::vector<LayerSpec>& layers) {
  int top = 0;
  for (const auto& l : layers) top = std::max(top, l.max_rank());
  RankSpace space;
  space.r_min = s.value("r_min", 1);
  space.r_max = s.value("r_max", top);
  space.fine_delta = s.value("fine_delta", 2);
  space.r_step = s.value("r_step", 1);
  const std::string mode = s.value("mode", std::string("grid"));
  if (mode == "grid") space.mode = CandidateMode::grid;
  else if (mode == "arithmetic") space.mode = CandidateMode::arithmetic;
  else throw InvalidInput("config: unknown space mode '" + mode + "'");
  space.coarse_grid = s.contains("coarse_grid") ? s.at("coarse_grid").get<std::vector<int>>()
                                                : RankSpace::default_grid(space.r_min, space.r_max);
  space.validate();
  return space;
}

}  // namespace detail

inline Experiment build_experiment(const ExperimentConfig& cfg) {
  try {
    Experiment ex;
    const json& o = cfg.objective;
    const std::string& kind = cfg.objective_kind;
    if (kind == "spectral_tail") {
      std::vector<Spectrum> spectra;
      if (o.contains("spectra")) {
        for (const auto& s : o.at("spectra")) spectra.emplace_back(s.get<std::vector<double>>());
        ex.layers = detail::require_layers(cfg, "spectral_tail with spectra");
        if (spectra.size() != ex.layers.size()) {
          throw InvalidInput("config: " + std::to_string(spectra.size()) + " spectra for " +
                             std::to_string(ex.layers.size()) + " layers");
        }
        for (std::size_t i = 0; i < spectra.size(); ++i) {
          if (spectra[i].size() != static_cast<std::size_t>(ex.layers[i].max_rank())) {
            throw InvalidInput("config: spectrum " + std::to_string(i) + " needs " +
                               std::to_string(ex.layers[i].max_rank()) + " values");
          }
        }
      } else if (o.contains("matrices")) {
        ex.base_matrices = detail::load_matrices(cfg, o.at("matrices"));
        ex.layers = detail::layers_of(ex.base_matrices);
        detail::check_layers_match(cfg, ex.layers);
        for (const auto& m : ex.base_matrices) spectra.push_back(svd(m).spectrum);
      } else {
        const json& syn = o.at("synthetic");
        ex.layers = detail::require_layers(cfg, "synthetic spectral_tail");
        const double scale = syn.value("scale", 1.0);
        const double decay = syn.value("decay", 0.7);
        std::mt19937_64 rng(mix_seed(cfg.seed, 100));
        std::uniform_real_distribution<double> jitter(0.5, 1.5);
        for (const auto& l : ex.layers) {
          spectra.push_back(geometric_spectrum(static_cast<std::size_t>(l.max_rank()),
                                               scale * jitter(rng), decay));
        }
      }
      for (const auto& s : spectra) ex.spectral_energies.push_back(s.total_energy());
      ex.objective = std::make_shared<SpectralTailObjective>(std::move(spectra));
    } else if (kind == "matrix_fit") {
      std::vector<Matrix> targets;
      if (o.contains("synthetic")) {
        ex.layers = detail::require_layers(cfg, "synthetic matrix_fit");
        const double noise = o.at("synthetic").value("noise", 1.0);
        for (const auto& l : ex.layers) {
          std::mt19937_64 rng(mix_seed(cfg.seed, 200 + static_cast<std::uint64_t>(l.id)));
          const auto rows = static_cast<std::size_t>(l.rows);
          const auto cols = static_cast<std::size_t>(l.cols);
          Matrix base = Matrix::uniform(rows, cols, rng, -1.0, 1.0);
          targets.push_back(base + Matrix::uniform(rows, cols, rng, -noise, noise));
          ex.base_matrices.push_back(std::move(base));
        }
      } else {
        ex.base_matrices = detail::load_matrices(cfg, o.at("bases"));
        targets = detail::load_matrices(cfg, o.at("targets"));
        ex.layers = detail::layers_of(ex.base_matrices);
        detail::check_layers_match(cfg, ex.layers);
      }
      ex.objective = std::make_shared<MatrixFitObjective>(
          ex.base_matrices, std::move(targets), detail::parse_fit(o.value("fit", json::object())),
          cfg.seed);
    } else if (kind == "toy_multitask") {
      const ToyModelSpec spec = detail::parse_toy_model(o.value("model", json::object()));
      const ToyTrainConfig train = detail::parse_toy_train(o.value("train", json::object()));
      const json data = o.value("data", json::object());
      std::vector<SentimentSample> samples;
      if (data.contains("path")) {
        std::ifstream in(detail::existing_file(cfg.base_dir, data.at("path").get<std::string>()));
        samples = read_dataset(in);
      } else {
        samples = generate_synthetic_sentiment(data.value("count", 200), spec.feature_dim,
                                               data.value("noise_std", 0.0),
                                               mix_seed(cfg.seed, 300));
      }
      ToyMultiTaskModel model = make_toy_model(spec, cfg.seed);
      ex.layers = model.layer_specs();
      detail::check_layers_match(cfg, ex.layers);
      ex.base_matrices = model.bases;
      ex.objective = std::make_shared<ToyMultiTaskObjective>(std::move(model), samples, train,
                                                             cfg.weights, cfg.seed);
    } else {
      ex.layers = detail::require_layers(cfg, "scripted objective");
      std::map<RankVector, double> table;
      for (const auto& row : o.at("table")) {
        table[RankVector(row.at("ranks").get<std::vector<int>>())] = row.at("metric").get<double>();
      }
      std::optional<double> fallback;
      if (o.contains("default")) fallback = o.at("default").get<double>();
      ex.objective = std::make_shared<ScriptedObjective>(ex.layers.size(), std::move(table), fallback);
    }
    ex.space = detail::resolve_space(cfg.space, ex.layers);
    return ex;
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Result records. Each one serializes to JSON and parses back to an equal
// value.

struct AllocationReport {
  std::vector<double> importances;
  int rank_budget = 0;
  std::vector<int> caps;
  RankVector ranks;
  long long rank_total = 0;
  long long param_count = 0;

  friend bool operator==(const AllocationReport&, const AllocationReport&) = default;
};

inline json to_json(const AllocationReport& r) {
  return json{{"importances", r.importances}, {"rank_budget", r.rank_budget},
              {"caps", r.caps},               {"ranks", r.ranks.ranks},
              {"rank_total", r.rank_total},   {"param_count", r.param_count}};
}

inline AllocationReport allocation_report_from_json(const json& j) {
  AllocationReport r;
  r.importances = j.at("importances").get<std::vector<double>>();
  r.rank_budget = j.at("rank_budget").get<int>();
  r.caps = j.at("caps").get<std::vector<int>>();
  r.ranks = RankVector(j.at("ranks").get<std::vector<int>>());
  r.rank_total = j.at("rank_total").get<long long>();
  r.param_count = j.at("param_count").get<long long>();
  return r;
}

struct PhaseSummary {
  RankVector ranks;
  double metric = 0.0;
  int iterations = 0;
  long long evaluations = 0;

  friend bool operator==(const PhaseSummary&, const PhaseSummary&) = default;
};

struct SearchReport {
  std::string status = "ok";  // "ok" or "failed"
  std::string objective;
  std::uint64_t seed = 0;
  std::optional<long long> param_budget;
  RankVector best;
  double metric = 0.0;
  long long param_count = 0;
  long long evaluations = 0;
  PhaseSummary coarse;
  PhaseSummary fine;
  std::vector<std::string> warnings;
  std::string error;         // failed runs only
  RankVector failed_ranks;   // failed runs only

  friend bool operator==(const SearchReport&, const SearchReport&) = default;
};

inline json to_json(const PhaseSummary& p) {
  return json{{"ranks", p.ranks.ranks},
              {"metric", p.metric},
              {"iterations", p.iterations},
              {"evaluations", p.evaluations}};
}

inline PhaseSummary phase_summary_from_json(const json& j) {
  return {RankVector(j.at("ranks").get<std::vector<int>>()), j.at("metric").get<double>(),
          j.at("iterations").get<int>(), j.at("evaluations").get<long long>()};
}

inline json to_json(const SearchReport& r) {
  json j{{"status", r.status},
         {"objective", r.objective},
         {"seed", r.seed},
         {"param_budget", r.param_budget ? json(*r.param_budget) : json(nullptr)}};
  if (r.status == "ok") {
    j["best"] = r.best.ranks;
    j["metric"] = r.metric;
    j["param_count"] = r.param_count;
    j["evaluations"] = r.evaluations;
    j["phases"] = json{{"coarse", to_json(r.coarse)}, {"fine", to_json(r.fine)}};
    j["warnings"] = r.warnings;
  } else {
    j["error"] = r.error;
    j["rank_vector"] = r.failed_ranks.ranks;
  }
  return j;
}

inline SearchReport search_report_from_json(const json& j) {
  SearchReport r;
  r.status = j.at("status").get<std::string>();
  r.objective = j.at("objective").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("param_budget").is_null()) r.param_budget = j.at("param_budget").get<long long>();
  if (r.status == "ok") {
    r.best = RankVector(j.at("best").get<std::vector<int>>());
    r.metric = j.at("metric").get<double>();
    r.param_count = j.at("param_count").get<long long>();
    r.evaluations = j.at("evaluations").get<long long>();
    r.coarse = phase_summary_from_json(j.at("phases").at("coarse"));
    r.fine = phase_summary_from_json(j.at("phases").at("fine"));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } else {
    r.error = j.at("error").get<std::string>();
    r.failed_ranks = RankVector(j.at("rank_vector").get<std::vector<int>>());
  }
  return r;
}

struct OracleReport {
  std::string method;  // "dp" or "brute_force"
  std::optional<long long> param_budget;
  RankVector best;
  double metric = 0.0;
  long long param_count = 0;
  long long evaluated_count = 0;

  friend bool operator==(const OracleReport&, const OracleReport&) = default;
};

inline json to_json(const OracleReport& r) {
  return json{{"method", r.method},
              {"param_budget", r.param_budget ? json(*r.param_budget) : json(nullptr)},
              {"best", r.best.ranks},
              {"metric", r.metric},
              {"param_count", r.param_count},
              {"evaluated_count", r.evaluated_count}};
}

inline OracleReport oracle_report_from_json(const json& j) {
  OracleReport r;
  r.method = j.at("method").get<std::string>();
  if (!j.at("param_budget").is_null()) r.param_budget = j.at("param_budget").get<long long>();
  r.best = RankVector(j.at("best").get<std::vector<int>>());
  r.metric = j.at("metric").get<double>();
  r.param_count = j.at("param_count").get<long long>();
  r.evaluated_count = j.at("evaluated_count").get<long long>();
  return r;
}

struct SweepRow {
  std::string config;
  RankVector ranks;  // per layer
  double metric = 0.0;
  long long param_count = 0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct ReportRow {
  std::string source;
  long long evaluation_index = 0;
  Phase phase = Phase::seed;
  int iteration = 0;
  RankVector ranks;
  double metric = 0.0;
  double running_min = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct UniformRow {
  int rank = 0;
  RankVector ranks;  // the uniform rank clamped to each layer's maximum
  double metric = 0.0;
  long long param_count = 0;
  std::optional<double> marginal_improvement;  // absent on the first row

  friend bool operator==(const UniformRow&, const UniformRow&) = default;
};

inline constexpr const char* kSweepHeader = "config,ranks,metric,param_count";
inline constexpr const char* kReportHeader =
    "source,evaluation_index,phase,iteration,ranks,metric,running_min";
inline constexpr const char* kUniformHeader = "rank,ranks,metric,param_count,marginal_improvement";

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_cell(r.config) + ',' + join_ranks(r.ranks) + ',' + format_double(r.metric) + ',' +
           std::to_string(r.param_count) + '\n';
  }
  return out;
}

inline std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_cell(r.source) + ',' + std::to_string(r.evaluation_index) + ',' +
           to_string(r.phase) + ',' + std::to_string(r.iteration) + ',' + join_ranks(r.ranks) +
           ',' + format_double(r.metric) + ',' + format_double(r.running_min) + '\n';
  }
  return out;
}

inline std::string format_uniform_csv(const std::vector<UniformRow>& rows) {
  std::string out = std::string(kUniformHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.rank) + ',' + join_ranks(r.ranks) + ',' + format_double(r.metric) +
           ',' + std::to_string(r.param_count) + ',' +
           (r.marginal_improvement ? format_double(*r.marginal_improvement) : std::string()) +
           '\n';
  }
  return out;
}

namespace detail {

template <typename Row, typename F>
std::vector<Row> parse_csv(const std::string& text, const char* header, std::size_t columns,
                           F&& make) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(std::string("csv: expected header '") + header + "'", 1);
  }
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != columns) throw ParseError("csv: wrong column count", line_no);
    try {
      rows.push_back(make(cells));
    } catch (const std::exception& e) {
      throw ParseError(std::string("csv: ") + e.what(), line_no);
    }
  }
  return rows;
}

}  // namespace detail

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  return detail::parse_csv<SweepRow>(text, kSweepHeader, 4, [](const auto& c) {
    return SweepRow{c[0], split_ranks(c[1]), parse_double(c[2]), std::stoll(c[3])};
  });
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  return detail::parse_csv<ReportRow>(text, kReportHeader, 7, [](const auto& c) {
    return ReportRow{c[0],           std::stoll(c[1]),     parse_phase(c[2]),  std::stoi(c[3]),
                     split_ranks(c[4]), parse_double(c[5]), parse_double(c[6])};
  });
}

inline std::vector<UniformRow> parse_uniform_csv(const std::string& text) {
  return detail::parse_csv<UniformRow>(text, kUniformHeader, 5, [](const auto& c) {
    UniformRow r{std::stoi(c[0]), split_ranks(c[1]), parse_double(c[2]), std::stoll(c[3]), {}};
    if (!c[4].empty()) r.marginal_improvement = parse_double(c[4]);
    return r;
  });
}

inline std::string format_json_file(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Runners.

inline AllocationReport run_allocate(const ExperimentConfig& cfg, const Experiment& ex) {
  if (!cfg.allocation.rank_budget) throw InvalidInput("config: allocation.rank_budget is required");
  AllocationReport rep;
  rep.rank_budget = *cfg.allocation.rank_budget;
  if (rep.rank_budget < 1) throw InvalidInput("config: allocation.rank_budget must be positive");
  std::vector<LayerSpec> layers = ex.layers;
  if (!cfg.allocation.matrices.empty()) {
    std::vector<Matrix> ms;
    for (const auto& p : cfg.allocation.matrices) ms.push_back(detail::load_matrix(p));
    layers = detail::layers_of(ms);
    for (const auto& m : ms) rep.importances.push_back(importance_score(m));
  } else if (!ex.base_matrices.empty()) {
    for (const auto& m : ex.base_matrices) rep.importances.push_back(importance_score(m));
  } else if (!ex.spectral_energies.empty()) {
    rep.importances = ex.spectral_energies;
  } else {
    throw InvalidInput("allocate: objective '" + cfg.objective_kind +
                       "' has no matrices; set allocation.matrices");
  }
  rep.caps = cfg.allocation.caps;
  if (rep.caps.empty()) {
    for (const auto& l : layers) rep.caps.push_back(l.max_rank());
  }
  rep.ranks = allocate_ranks(rep.importances, rep.rank_budget, rep.caps);
  rep.rank_total = rep.ranks.total();
  rep.param_count = param_count(rep.ranks, layers);
  return rep;
}

/// Runs explore; evaluator failures come back as a failed report rather
/// than an exception.
inline SearchReport run_search(const ExperimentConfig& cfg, const Experiment& ex,
                               const SearchConfig& search, HistorySink sink = {}) {
  SearchReport rep;
  rep.objective = cfg.objective_kind;
  rep.seed = cfg.seed;
  rep.param_budget = search.param_budget;
  try {
    const auto res = explore(*ex.objective, ex.layers, ex.space, search, std::move(sink));
    rep.best = res.best;
    rep.metric = res.metric;
    rep.param_count = param_count(res.best, ex.layers);
    rep.evaluations = static_cast<long long>(res.history.size());
    rep.coarse = {res.coarse.ranks, res.coarse.metric, res.coarse.iterations, res.coarse.evaluations};
    rep.fine = {res.fine.ranks, res.fine.metric, res.fine.iterations, res.fine.evaluations};
    rep.warnings = res.history.warnings();
  } catch (const EvaluationError& e) {
    rep.status = "failed";
    rep.error = e.what();
    rep.failed_ranks = RankVector(e.ranks());
  }
  return rep;
}

inline OracleReport run_oracle(const ExperimentConfig& cfg, const Experiment& ex, int jobs = 0) {
  const auto sets = full_candidate_sets(ex.layers, ex.space);
  const auto* separable = dynamic_cast<const SeparableObjective*>(ex.objective.get());
  OracleMethod method = cfg.oracle.method;
  if (method == OracleMethod::automatic) {
    method = separable ? OracleMethod::dp : OracleMethod::brute_force;
  }
  OracleReport rep;
  rep.param_budget = cfg.search.param_budget;
  OracleResult res;
  if (method == OracleMethod::dp) {
    if (!separable) throw InvalidInput("oracle: dp needs a separable objective");
    rep.method = "dp";
    res = dp_separable_search(parameter_options(*separable, ex.layers, sets), rep.param_budget);
  } else {
    rep.method = "brute_force";
    BruteForceOptions opts;
    opts.cap = cfg.oracle.cap;
    opts.jobs = jobs;
    res = brute_force_search(*ex.objective, ex.layers, sets, rep.param_budget, opts);
  }
  rep.best = res.best;
  rep.metric = res.metric;
  rep.param_count = param_count(res.best, ex.layers);
  rep.evaluated_count = res.evaluated_count;
  return rep;
}

/// Every combination of per-group ranks, each group's rank applied to all of
/// its layers. Rows sort by metric, then by name.
inline std::vector<SweepRow> run_group_sweep(const ExperimentConfig& cfg, const Experiment& ex,
                                             int jobs = 0) {
  const auto& groups = cfg.sweep.groups;
  if (groups.empty()) throw InvalidInput("config: sweep.groups is required");
  int expect = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].first != expect || groups[g].last < groups[g].first) {
      throw InvalidInput("config: sweep group " + std::to_string(g) +
                         " must start at layer " + std::to_string(expect));
    }
    if (groups[g].ranks.empty()) {
      throw InvalidInput("config: sweep group " + std::to_string(g) + " has no ranks");
    }
    for (int l = groups[g].first; l <= groups[g].last; ++l) {
      if (l >= static_cast<int>(ex.layers.size())) {
        throw InvalidInput("config: sweep group " + std::to_string(g) + " runs past the last layer");
      }
      for (int r : groups[g].ranks) {
        if (r < 0 || r > ex.layers[static_cast<std::size_t>(l)].max_rank()) {
          throw InvalidRank("config: sweep rank " + std::to_string(r) + " invalid for layer " +
                            std::to_string(l));
        }
      }
    }
    expect = groups[g].last + 1;
  }
  if (expect != static_cast<int>(ex.layers.size())) {
    throw InvalidInput("config: sweep groups must cover every layer exactly once");
  }
  double count = 1.0;
  for (const auto& g : groups) count *= static_cast<double>(g.ranks.size());
  if (count > cfg.sweep.cap) {
    throw CapExceeded("sweep: " + std::to_string(static_cast<long double>(count)) +
                          " configurations exceed the cap of " +
                          std::to_string(static_cast<long double>(cfg.sweep.cap)),
                      count);
  }

  std::vector<SweepRow> rows;
  std::vector<std::size_t> idx(groups.size(), 0);
  for (;;) {
    SweepRow row;
    row.config = "G" + std::to_string(groups.size()) + "-";
    std::vector<int> ranks;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const int r = groups[g].ranks[idx[g]];
      if (g) row.config += '@';
      row.config += std::to_string(r);
      for (int l = groups[g].first; l <= groups[g].last; ++l) ranks.push_back(r);
    }
    row.ranks = RankVector(std::move(ranks));
    row.param_count = param_count(row.ranks, ex.layers);
    rows.push_back(std::move(row));
    std::size_t k = groups.size();
    while (k > 0 && ++idx[k - 1] == groups[k - 1].ranks.size()) idx[--k] = 0;
    if (k == 0) break;
  }

  std::vector<std::exception_ptr> errors(rows.size());
  auto work = [&](std::size_t i) {
    try {
      rows[i].metric = checked_evaluate(*ex.objective, rows[i].ranks);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers =
      jobs > 1 && ex.objective->concurrent_safe()
          ? std::min(rows.size(), static_cast<std::size_t>(jobs))
          : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.metric != b.metric ? a.metric < b.metric : a.config < b.config;
  });
  return rows;
}

/// History rows with a per-source running minimum.
inline std::vector<ReportRow> history_report(
    const std::vector<std::pair<std::string, ExplorationHistory>>& sources) {
  std::vector<ReportRow> rows;
  for (const auto& [name, h] : sources) {
    double running = std::numeric_limits<double>::infinity();
    for (const auto& e : h.entries()) {
      running = std::min(running, e.metric);
      rows.push_back({name, e.evaluation_index, e.phase, e.iteration, e.rank_vector, e.metric,
                      running});
    }
  }
  return rows;
}

/// Metric at each coarse-grid rank applied to every layer (clamped to the
/// layer's maximum), with the improvement over the previous grid rank.
inline std::vector<UniformRow> uniform_rank_table(const Experiment& ex) {
  std::vector<UniformRow> rows;
  for (int r : ex.space.coarse_candidates()) {
    std::vector<int> ranks;
    for (const auto& l : ex.layers) ranks.push_back(std::min(r, l.max_rank()));
    UniformRow row{r, RankVector(std::move(ranks)), 0.0, 0, {}};
    if (!rows.empty() && row.ranks == rows.back().ranks) continue;
    row.metric = checked_evaluate(*ex.objective, row.ranks);
    row.param_count = param_count(row.ranks, ex.layers);
    if (!rows.empty()) row.marginal_improvement = rows.back().metric - row.metric;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace darse
