// Acceptance suite: one PASS/FAIL line per criterion, with wall time.
// Exit status is nonzero when any criterion fails.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "darse/experiment.hpp"
#include "test_support.hpp"

using namespace darse;
using darse::testing::finite_difference_gradient;
using darse::testing::matches_tail;
using darse::testing::random_matrix;
using darse::testing::vector_relative_error;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail_if(bool bad, Outcome o, const std::string& why) {
  if (bad) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + why;
  }
  return o;
}

// 1. Truncation error against an independent SVD.
Outcome eckart_young() {
  int checked = 0, bad = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(1, 16);
    const auto rows = static_cast<std::size_t>(dim(rng));
    const auto cols = static_cast<std::size_t>(dim(rng));
    const Matrix m = random_matrix(rows, cols, 5000 + seed);
    Eigen::MatrixXd a(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
    const double norm = frobenius_norm(m);
    for (int r = 0; r <= static_cast<int>(std::min(rows, cols)); ++r) {
      long double tail = 0.0L;
      for (Eigen::Index i = r; i < sv.size(); ++i) tail += static_cast<long double>(sv(i)) * sv(i);
      const double expected = std::sqrt(static_cast<double>(tail));
      const double err = reconstruction_error(m, truncated_factorization(m, r));
      ++checked;
      if (!matches_tail(err, expected, norm)) ++bad;
    }
  }
  return fail_if(bad > 0, {true, std::to_string(checked - bad) + "/" + std::to_string(checked) + " (matrix, rank) pairs"},
                 std::to_string(bad) + " mismatches");
}

// 2. Importance equals a directly summed Frobenius square.
Outcome importance_identity() {
  int bad = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Matrix m = random_matrix(1 + seed % 16, 1 + (seed * 7) % 16, 9000 + seed);
    long double direct = 0.0L;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) direct += static_cast<long double>(m(i, j)) * m(i, j);
    const double d = static_cast<double>(direct);
    if (std::abs(importance_score(m) - d) > 1e-9 * d) ++bad;
  }
  return fail_if(bad > 0, {true, std::to_string(200 - bad) + "/200 matrices"}, "mismatches");
}

// 3. Floor allocation examples and properties.
Outcome allocation_arithmetic() {
  Outcome o{true, ""};
  const std::vector<int> c8{8, 8}, c10{10, 10, 10}, c28{2, 8};
  o = fail_if(allocate_ranks(std::vector<double>{3, 1}, 8, c8) != RankVector{6, 2}, o, "3:1 example");
  o = fail_if(allocate_ranks(std::vector<double>{1, 1, 1}, 10, c10) != RankVector{3, 3, 3}, o, "equal example");
  o = fail_if(allocate_ranks(std::vector<double>{1, 1}, 9, c28) != RankVector{2, 4}, o, "capped example");
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> imp(0.0, 10.0), scale(1e-3, 1e3);
  std::uniform_int_distribution<int> budget(1, 512), width(1, 12);
  int over = 0, variant = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(static_cast<std::size_t>(width(rng)));
    for (double& x : v) x = imp(rng);
    v[0] += 0.1;
    const int b = budget(rng);
    const RankVector r = proportional_ranks(v, b);
    if (r.total() > b) ++over;
    const double c = scale(rng);
    for (double& x : v) x *= c;
    if (proportional_ranks(v, b) != r) ++variant;
  }
  o = fail_if(over > 0, o, std::to_string(over) + " over budget");
  o = fail_if(variant > 0, o, std::to_string(variant) + " not scale invariant");
  if (o.pass) o.detail = "3 examples, 1000 random vectors";
  return o;
}

// 4. Greedy against the exact optimum on fixed seeded instances.
Outcome greedy_vs_oracle() {
  const auto layers = make_layers(std::vector<std::pair<int, int>>(4, {8, 8}));
  RankSpace space;
  space.r_min = 1;
  space.r_max = 8;
  space.coarse_grid = {1, 2, 4, 8};
  const long long binding = param_count(RankVector{4, 4, 4, 4}, layers);
  const long long loose = param_count(RankVector{8, 8, 8, 8}, layers);
  int below = 0, within = 0, equal_loose = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(1000 + s);
    std::uniform_real_distribution<double> scale(1.0, 10.0), decay(0.5, 0.95);
    std::vector<Spectrum> spectra;
    for (int i = 0; i < 4; ++i) spectra.push_back(geometric_spectrum(8, scale(rng), decay(rng)));
    const SpectralTailObjective obj(spectra);
    const auto options = parameter_options(obj, layers, full_candidate_sets(layers, space));
    for (long long budget : {binding, loose}) {
      SearchConfig cfg;
      cfg.param_budget = budget;
      const auto res = explore(obj, layers, space, cfg);
      const auto opt = dp_separable_search(options, budget);
      if (budget == binding) {
        if (res.metric < opt.metric) ++below;
        if (res.metric <= 1.10 * opt.metric) ++within;
        worst = std::max(worst, res.metric / opt.metric);
      } else if (res.metric == opt.metric) {
        ++equal_loose;
      }
    }
  }
  std::ostringstream d;
  d << "binding: >= optimum " << 50 - below << "/50, within 1.10x " << within
    << "/50 (need 45, worst ratio " << worst << "); non-binding equal " << equal_loose << "/50";
  return {below == 0 && within >= 45 && equal_loose == 50, d.str()};
}

// 5. Enumeration and DP agree exactly.
Outcome cross_oracle() {
  int bad = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(700 + s);
    std::uniform_int_distribution<int> count(2, 4), size(3, 7);
    std::uniform_real_distribution<double> scale(0.5, 10.0), decay(0.3, 0.95), frac(0.2, 1.0);
    std::vector<std::pair<int, int>> shapes;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) shapes.emplace_back(size(rng), size(rng));
    const auto layers = make_layers(shapes);
    std::vector<Spectrum> spectra;
    for (const auto& l : layers) {
      spectra.push_back(geometric_spectrum(static_cast<std::size_t>(l.max_rank()), scale(rng), decay(rng)));
    }
    const SpectralTailObjective obj(spectra);
    RankSpace space;
    space.r_min = 0;
    space.r_max = 7;
    const auto sets = full_candidate_sets(layers, space);
    std::vector<int> tops;
    for (const auto& l : layers) tops.push_back(l.max_rank());
    const long long budget = std::max(1LL, static_cast<long long>(
        frac(rng) * static_cast<double>(param_count(RankVector(tops), layers))));
    const auto dp = dp_separable_search(parameter_options(obj, layers, sets), budget);
    const auto bf = brute_force_search(obj, layers, sets, budget);
    if (dp.metric != bf.metric || dp.best != bf.best) ++bad;
  }
  return fail_if(bad > 0, {true, std::to_string(50 - bad) + "/50 instances identical"},
                 std::to_string(bad) + " disagreements");
}

// 6. Analytic gradients against central differences.
Outcome gradient_checks() {
  double worst_fit = 0.0, worst_toy = 0.0;
  std::mt19937_64 rng(77);
  for (int point = 0; point < 20; ++point) {
    const std::size_t m = 3 + point % 4, n = 2 + point % 5, r = 1 + point % 2;
    const Matrix base = random_matrix(m, n, 100 + point);
    const Matrix target = random_matrix(m, n, 200 + point);
    const double reg = 0.1 * (point % 4);
    LowRankFactors f{Matrix::gaussian(m, r, rng), Matrix::gaussian(n, r, rng)};
    const auto g = fit_gradient(base, target, f, reg);
    std::vector<double> analytic(g.du.data().begin(), g.du.data().end());
    analytic.insert(analytic.end(), g.dv.data().begin(), g.dv.data().end());
    std::vector<double> x(f.u.data().begin(), f.u.data().end());
    x.insert(x.end(), f.v.data().begin(), f.v.data().end());
    const auto numeric = finite_difference_gradient(
        [&](const std::vector<double>& y) {
          LowRankFactors h{Matrix(m, r), Matrix(n, r)};
          std::copy(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(m * r), h.u.data().begin());
          std::copy(y.begin() + static_cast<std::ptrdiff_t>(m * r), y.end(), h.v.data().begin());
          return fit_objective(base, target, h, reg);
        },
        x, 1e-5);
    worst_fit = std::max(worst_fit, vector_relative_error(analytic, numeric));
  }

  ToyModelSpec spec;
  spec.feature_dim = 6;
  spec.layers = 2;
  spec.dropped_per_layer = 1;
  spec.regression_hidden = 4;
  spec.classification_hidden = 3;
  const auto model = make_toy_model(spec, 1);
  const auto data = generate_synthetic_sentiment(12, 6, 0.3, 2);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const ToyBatch batch = make_batch(data, idx);
  std::normal_distribution<double> jitter(0.0, 0.5);
  for (int point = 0; point < 20; ++point) {
    ToyParams p = init_toy_params(model, RankVector{point % 3, 1 + point % 2}, static_cast<std::uint64_t>(point));
    std::vector<double> flat = p.flatten();
    for (double& v : flat) v += jitter(rng);
    p.assign(flat);
    const MultiTaskWeights w{0.3 + 0.05 * point, 0.7};
    ToyParams grad;
    toy_loss_and_gradient(model, p, batch, w, nullptr, &grad);
    const auto numeric = finite_difference_gradient(
        [&](const std::vector<double>& y) {
          ToyParams q = p;
          q.assign(y);
          return toy_loss_and_gradient(model, q, batch, w, nullptr, nullptr);
        },
        flat, 1e-5);
    worst_toy = std::max(worst_toy, vector_relative_error(grad.flatten(), numeric));
  }
  std::ostringstream d;
  d << "worst relative error: fit " << worst_fit << " (<= 1e-5), toy " << worst_toy << " (<= 1e-4)";
  return {worst_fit <= 1e-5 && worst_toy <= 1e-4, d.str()};
}

// 7. Score-to-class mapping.
Outcome mapping() {
  Outcome o{true, ""};
  const std::vector<std::pair<double, int>> examples{{0.7, 4},    {0.5, 3},  {0.049, 2}, {0.0, 2},
                                                     {-0.049, 2}, {-0.3, 1}, {-0.5, 1},  {-0.9, 0}};
  for (const auto& [y, c] : examples) o = fail_if(map_score_to_class(y) != c, o, "example " + std::to_string(y));
  int previous = -1;
  for (int i = 0; i <= 10000; ++i) {
    const double y = -1.0 + 2.0 * i / 10000.0;
    const int c = map_score_to_class(y);
    if (c < previous || c < 0 || c > 4) {
      o = fail_if(true, o, "scan breaks at " + std::to_string(y));
      break;
    }
    previous = c;
  }
  if (o.pass) o.detail = "8 examples, 10001-point scan";
  return o;
}

// 8. Uniform-rank table on geometric spectra: marginal gains shrink.
Outcome diminishing_returns() {
  const std::vector<double> scales{4.0, 2.5, 7.0, 1.0};
  json spectra = json::array();
  std::vector<std::vector<double>> raw;
  for (double s : scales) {
    raw.push_back(geometric_spectrum(16, s, 0.7).values);
    spectra.push_back(raw.back());
  }
  const json j{{"layers", {{16, 16}, {16, 16}, {16, 16}, {16, 16}}},
               {"objective", {{"kind", "spectral_tail"}, {"spectra", spectra}}}};
  const auto rows = parse_uniform_csv(format_uniform_csv(uniform_rank_table(build_experiment(parse_config(j)))));
  Outcome o{true, ""};
  o = fail_if(rows.size() != 5, o, "expected ranks 1,2,4,8,16");
  std::ostringstream gains;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    long double expect = 0.0L;
    for (const auto& v : raw)
      for (std::size_t k = static_cast<std::size_t>(rows[i].rank); k < v.size(); ++k) expect += static_cast<long double>(v[k]) * v[k];
    const double e = static_cast<double>(expect);
    o = fail_if(std::abs(rows[i].metric - e) > 1e-12 * std::max(1.0, e), o, "metric at rank " + std::to_string(rows[i].rank));
    if (i >= 1) gains << (i > 1 ? ", " : "") << *rows[i].marginal_improvement;
    if (i >= 2) {
      o = fail_if(!(*rows[i].marginal_improvement < *rows[i - 1].marginal_improvement), o,
                  "gain at rank " + std::to_string(rows[i].rank) + " did not shrink");
    }
  }
  if (o.pass) o.detail = "gains " + gains.str();
  return o;
}

// 9. Identical inputs give identical bytes; every result file parses back.
Outcome determinism_round_trip() {
  const json j{{"layers", {{8, 8}, {8, 8}, {6, 10}, {8, 8}}},
               {"space", {{"coarse_grid", {1, 2, 4, 8}}}},
               {"objective", {{"kind", "spectral_tail"}, {"synthetic", {{"scale", 3.0}, {"decay", 0.8}}}}},
               {"search", {{"param_budget", 300}}},
               {"allocation", {{"rank_budget", 12}}},
               {"sweep", {{"groups", {{{"first", 0}, {"last", 1}, {"ranks", {1, 4}}},
                                      {{"first", 2}, {"last", 3}, {"ranks", {2, 6}}}}}}},
               {"seed", 21}};
  auto produce = [&] {
    const auto cfg = parse_config(j);
    const auto ex = build_experiment(cfg);
    std::string log;
    const auto rep = run_search(cfg, ex, cfg.search, [&](const HistoryEntry& e) { log += format_history_line(e) + "\n"; });
    std::istringstream in(log);
    const auto history = read_history(in);
    return std::vector<std::string>{format_json_file(to_json(rep)),
                                    log,
                                    format_report_csv(history_report({{"run", history}})),
                                    format_uniform_csv(uniform_rank_table(ex)),
                                    format_json_file(to_json(run_allocate(cfg, ex))),
                                    format_json_file(to_json(run_oracle(cfg, ex))),
                                    format_sweep_csv(run_group_sweep(cfg, ex))};
  };
  const auto a = produce();
  const auto b = produce();
  Outcome o{true, ""};
  o = fail_if(a != b, o, "outputs differ between runs");
  o = fail_if(format_json_file(to_json(search_report_from_json(json::parse(a[0])))) != a[0], o, "best.result");
  std::istringstream hist(a[1]);
  std::string rewritten;
  const auto reread = read_history(hist);
  for (const auto& e : reread.entries()) rewritten += format_history_line(e) + "\n";
  o = fail_if(rewritten != a[1], o, "history.log");
  o = fail_if(format_report_csv(parse_report_csv(a[2])) != a[2], o, "report.csv");
  o = fail_if(format_uniform_csv(parse_uniform_csv(a[3])) != a[3], o, "uniform.csv");
  o = fail_if(format_json_file(to_json(allocation_report_from_json(json::parse(a[4])))) != a[4], o, "allocation.result");
  o = fail_if(format_json_file(to_json(oracle_report_from_json(json::parse(a[5])))) != a[5], o, "oracle.result");
  o = fail_if(format_sweep_csv(parse_sweep_csv(a[6])) != a[6], o, "sweep.csv");
  if (o.pass) o.detail = "7 artifacts byte-identical and lossless";
  return o;
}

// 10. Planted teacher is learnable; adapters never hurt.
Outcome toy_realizability() {
  ToyModelSpec spec;
  spec.feature_dim = 12;
  spec.layers = 3;
  spec.dropped_per_layer = 2;
  const ToyTrainConfig train{0.2, 400};
  Outcome o{true, ""};
  double worst = 0.0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto data = generate_synthetic_sentiment(200, 12, 0.0, 7 + seed);
    const ToyMultiTaskObjective obj(make_toy_model(spec, seed), data, train, {}, seed);
    const double generous = obj.evaluate(RankVector{3, 3, 3});
    const double zeros = obj.evaluate(RankVector{0, 0, 0});
    worst = std::max(worst, generous);
    o = fail_if(generous > 0.01, o, "seed " + std::to_string(seed) + " generous MSE " + std::to_string(generous));
    o = fail_if(zeros < generous, o, "seed " + std::to_string(seed) + " zero ranks win");
  }
  if (o.pass) o.detail = "worst generous validation MSE " + std::to_string(worst) + " over 3 seeds";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"1 eckart-young truncation", 10, eckart_young},
      {"2 importance identity", 1, importance_identity},
      {"3 allocation arithmetic", 1, allocation_arithmetic},
      {"4 greedy vs oracle", 30, greedy_vs_oracle},
      {"5 cross-oracle agreement", 10, cross_oracle},
      {"6 gradient checks", 20, gradient_checks},
      {"7 score-to-class mapping", 1, mapping},
      {"8 diminishing returns", 5, diminishing_returns},
      {"9 determinism and round trip", 5, determinism_round_trip},
      {"10 toy realizability", 60, toy_realizability},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= c.limit_s) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(c.limit_s)) + " s limit";
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
