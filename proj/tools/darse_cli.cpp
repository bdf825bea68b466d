// darse: rank-space exploration for budget-constrained low-rank adapters.
//
//   darse allocate --config exp.json [--out dir]
//   darse search   --config exp.json [--seed N] [--jobs N] [--out dir]
//   darse oracle   --config exp.json [--jobs N] [--out dir]
//   darse sweep    --config exp.json [--jobs N] [--out dir]
//   darse report   --history a.log [--history b.log ...] [--config exp.json] [--out dir]
//
// Exit codes: 0 success, 1 config or usage error, 2 degenerate input,
// 3 numeric or evaluator failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "darse/experiment.hpp"

namespace fs = std::filesystem;
using namespace darse;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory (default: the config's output_dir)");
  cmd->add_option("--jobs", c.jobs, "parallel evaluations; 0 = sequential")
      ->check(CLI::NonNegativeNumber);
}

struct Loaded {
  ExperimentConfig cfg;
  Experiment ex;
  fs::path out;
};

Loaded load(const Common& c) {
  Loaded l{load_config(c.config), {}, {}};
  if (c.seed) l.cfg.seed = *c.seed;
  l.cfg.search.jobs = c.jobs;
  l.ex = build_experiment(l.cfg);
  l.out = c.out.empty() ? l.cfg.output_dir : fs::path(c.out);
  fs::create_directories(l.out);
  return l;
}

int cmd_allocate(const Common& c) {
  Loaded l = load(c);
  const AllocationReport rep = run_allocate(l.cfg, l.ex);
  write_text_file(l.out / "allocation.result", format_json_file(to_json(rep)));
  std::cout << "ranks " << rep.ranks.to_string() << " params " << rep.param_count << '\n';
  return 0;
}

int cmd_search(const Common& c) {
  Loaded l = load(c);
  HistoryFileWriter history(l.out / "history.log");
  const SearchReport rep = run_search(l.cfg, l.ex, l.cfg.search, history.sink());
  write_text_file(l.out / "best.result", format_json_file(to_json(rep)));
  if (rep.status != "ok") {
    std::cerr << "darse: " << rep.error << '\n';
    return 3;
  }
  std::cout << "best " << rep.best.to_string() << " metric " << format_double(rep.metric)
            << " evaluations " << rep.evaluations << '\n';
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

int cmd_oracle(const Common& c) {
  Loaded l = load(c);
  const OracleReport rep = run_oracle(l.cfg, l.ex, c.jobs);
  write_text_file(l.out / "oracle.result", format_json_file(to_json(rep)));
  std::cout << rep.method << " best " << rep.best.to_string() << " metric "
            << format_double(rep.metric) << '\n';
  return 0;
}

int cmd_sweep(const Common& c) {
  Loaded l = load(c);
  const auto rows = run_group_sweep(l.cfg, l.ex, c.jobs);
  write_text_file(l.out / "sweep.csv", format_sweep_csv(rows));
  std::cout << rows.size() << " configurations; best " << rows.front().config << " metric "
            << format_double(rows.front().metric) << '\n';
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& histories) {
  std::vector<std::pair<std::string, ExplorationHistory>> sources;
  for (const auto& h : histories) {
    std::ifstream in(h, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + h);
    try {
      sources.emplace_back(h, read_history(in));
    } catch (const ParseError& e) {
      throw ParseError(h + ": " + e.what(), e.line());
    }
  }
  fs::path out = c.out.empty() ? fs::path("out") : fs::path(c.out);
  std::optional<Loaded> l;
  if (!c.config.empty()) {
    l = load(c);
    if (c.out.empty()) out = l->out;
  }
  fs::create_directories(out);
  write_text_file(out / "report.csv", format_report_csv(history_report(sources)));
  if (l) write_text_file(out / "uniform.csv", format_uniform_csv(uniform_rank_table(l->ex)));
  std::cout << "wrote " << (out / "report.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-space exploration for budget-constrained low-rank adapters"};
  app.require_subcommand(1);
  app.footer(
      "Toy datasets are headerless CSV rows f0,...,f<d-1>,score,label with score in\n"
      "[-1,1] and label the class of the score (0..4).\n"
      "Exit codes: 0 ok, 1 config/usage, 2 degenerate input, 3 numeric/evaluator failure.");

  Common common;
  std::vector<std::string> histories;
  auto* allocate = app.add_subcommand("allocate", "importance-proportional rank allocation");
  auto* search = app.add_subcommand("search", "coarse-to-fine rank exploration");
  auto* oracle = app.add_subcommand("oracle", "exact optimum by DP or enumeration");
  auto* sweep = app.add_subcommand("sweep", "every combination of per-group ranks");
  auto* report = app.add_subcommand("report", "CSV summaries of history files");
  for (auto* cmd : {allocate, search, oracle, sweep}) add_common(cmd, common, true);
  add_common(report, common, false);
  report->add_option("--history", histories, "history.log file (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*allocate) return cmd_allocate(common);
    if (*search) return cmd_search(common);
    if (*oracle) return cmd_oracle(common);
    if (*sweep) return cmd_sweep(common);
    return cmd_report(common, histories);
  } catch (const Error& e) {
    std::cerr << "darse: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "darse: " << e.what() << '\n';
    return 1;
  }
}
