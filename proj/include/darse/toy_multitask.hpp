#pragma once

// Toy multi-task model used as an objective evaluator: a frozen linear encoder
// with per-layer low-rank adapters feeding a regression head (linear, sigmoid,
// linear) and a five-way classification head (dropout, linear, tanh, dropout,
// linear), trained jointly on w_r·MSE + w_c·CE by full-batch gradient descent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "darse/error.hpp"
#include "darse/evaluator.hpp"
#include "darse/losses.hpp"
#include "darse/lowrank.hpp"
#include "darse/matrix.hpp"
#include "darse/objectives.hpp"

namespace darse {

struct SentimentSample {
  std::vector<double> features;
  double score = 0.0;  // polarity in [-1, 1]
  int label = 2;       // map_score_to_class(score)

  friend bool operator==(const SentimentSample&, const SentimentSample&) = default;
};

/// Gaussian features with scores from a planted teacher:
/// score = tanh(wᵀx / ‖w‖ + noise), w drawn once from the same seed.
inline std::vector<SentimentSample> generate_synthetic_sentiment(int count,
                                                                 int feature_dim,
                                                                 double noise_std,
                                                                 std::uint64_t seed) {
  if (count < 10) throw InvalidInput("synthetic sentiment: count must be >= 10");
  if (feature_dim < 1) throw InvalidInput("synthetic sentiment: feature_dim must be >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw InvalidInput("synthetic sentiment: noise_std must be >= 0");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> teacher(static_cast<std::size_t>(feature_dim));
  double norm = 0.0;
  for (double& w : teacher) {
    w = normal(rng);
    norm += w * w;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;

  std::vector<SentimentSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    SentimentSample sample;
    sample.features.resize(teacher.size());
    double z = 0.0;
    for (std::size_t j = 0; j < teacher.size(); ++j) {
      sample.features[j] = normal(rng);
      z += teacher[j] * sample.features[j];
    }
    const double noise = noise_std > 0.0 ? noise_std * normal(rng) : 0.0;
    sample.score = std::tanh(z / norm + noise);
    sample.label = map_score_to_class(sample.score);
    out.push_back(std::move(sample));
  }
  return out;
}

// Dataset text format: one sample per line, comma-separated:
// feature_1,...,feature_d,score,label

inline void write_dataset(std::ostream& os, std::span<const SentimentSample> data) {
  std::ostringstream line;
  line.precision(17);
  for (const auto& s : data) {
    line.str({});
    for (double f : s.features) line << f << ',';
    line << s.score << ',' << s.label;
    os << line.str() << '\n';
  }
}

inline std::vector<SentimentSample> read_dataset(std::istream& is) {
  std::vector<SentimentSample> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw ParseError("dataset: need features, score, label", line_no);
    if (width == 0) width = cells.size();
    if (cells.size() != width) throw ParseError("dataset: inconsistent column count", line_no);
    auto number = [&](const std::string& text) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != text.size() || !std::isfinite(v)) {
        throw ParseError("dataset: bad number '" + text + "'", line_no);
      }
      return v;
    };
    SentimentSample s;
    for (std::size_t j = 0; j + 2 < cells.size(); ++j) s.features.push_back(number(cells[j]));
    s.score = number(cells[cells.size() - 2]);
    const double label = number(cells.back());
    if (label != std::floor(label)) throw ParseError("dataset: label must be an integer", line_no);
    s.label = static_cast<int>(label);
    if (s.score < -1.0 || s.score > 1.0) throw ParseError("dataset: score outside [-1, 1]", line_no);
    if (s.label != map_score_to_class(s.score)) {
      throw ParseError("dataset: label does not match score", line_no);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct ToyModelSpec {
  int feature_dim = 32;
  int layers = 4;
  int dropped_per_layer = 4;  // coordinates each frozen base discards
  int regression_hidden = 16;
  int classification_hidden = 16;
  double dropout = 0.1;

  void validate() const {
    if (feature_dim < 1 || layers < 1) throw InvalidInput("toy model: empty encoder");
    if (dropped_per_layer < 0 ||
        static_cast<long long>(dropped_per_layer) * layers > feature_dim) {
      throw InvalidInput("toy model: dropped coordinates must fit disjointly in feature_dim");
    }
    if (regression_hidden < 1 || classification_hidden < 1) {
      throw InvalidInput("toy model: hidden widths must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("toy model: dropout in [0, 1)");
  }
};

struct ToyTrainConfig {
  double step_size = 0.1;
  int max_steps = 500;

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) {
      throw InvalidInput("toy training: step_size must be > 0");
    }
    if (max_steps < 1) throw InvalidInput("toy training: max_steps must be >= 1");
  }
};

/// Frozen encoder: layer l is the identity with a layer-specific, disjoint set
/// of coordinates zeroed. An adapter of rank >= dropped_per_layer can restore
/// what its layer discards; lower ranks cannot.
struct ToyMultiTaskModel {
  ToyModelSpec spec;
  std::vector<Matrix> bases;

  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> out;
    for (std::size_t i = 0; i < bases.size(); ++i) {
      out.push_back({static_cast<int>(i), static_cast<int>(bases[i].rows()),
                     static_cast<int>(bases[i].cols())});
    }
    return out;
  }
};

inline ToyMultiTaskModel make_toy_model(const ToyModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto d = static_cast<std::size_t>(spec.feature_dim);
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  std::shuffle(perm.begin(), perm.end(), rng);

  ToyMultiTaskModel model{spec, {}};
  std::size_t next = 0;
  for (int l = 0; l < spec.layers; ++l) {
    Matrix base = Matrix::identity(d);
    for (int k = 0; k < spec.dropped_per_layer; ++k) {
      const std::size_t c = perm[next++];
      base(c, c) = 0.0;
    }
    model.bases.push_back(std::move(base));
  }
  return model;
}

/// Trainable state: adapters plus both heads. Biases are column matrices.
struct ToyParams {
  std::vector<LowRankFactors> adapters;
  Matrix reg_w1, reg_b1, reg_w2, reg_b2;  // hr×d, hr×1, 1×hr, 1×1
  Matrix cls_w1, cls_b1, cls_w2, cls_b2;  // hc×d, hc×1, 5×hc, 5×1

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    for (auto& a : self.adapters) {
      f(a.u);
      f(a.v);
    }
    f(self.reg_w1);
    f(self.reg_b1);
    f(self.reg_w2);
    f(self.reg_b2);
    f(self.cls_w1);
    f(self.cls_b1);
    f(self.cls_w2);
    f(self.cls_b2);
  }

  template <typename F>
  void for_each_block(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_block(F&& f) const {
    visit(*this, f);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for_each_block([&](const Matrix& m) {
      out.insert(out.end(), m.data().begin(), m.data().end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    std::size_t pos = 0;
    for_each_block([&](Matrix& m) {
      for (double& x : m.data()) x = flat[pos++];
    });
    if (pos != flat.size()) throw InvalidInput("toy params: flat size mismatch");
  }

  ToyParams zeros_like() const {
    ToyParams z = *this;
    z.for_each_block([](Matrix& m) {
      for (double& x : m.data()) x = 0.0;
    });
    return z;
  }
};

/// Adapters start as u = 0 with v uniform(±1/√d); head weights uniform
/// (±1/√fan_in), biases zero. Heads draw from their own seed stream so every
/// rank vector starts from identical heads.
inline ToyParams init_toy_params(const ToyMultiTaskModel& model, const RankVector& ranks,
                                 std::uint64_t seed) {
  const auto& spec = model.spec;
  if (ranks.size() != model.bases.size()) {
    throw InvalidInput("toy model: rank vector " + ranks.to_string() + " has wrong length");
  }
  const auto d = static_cast<std::size_t>(spec.feature_dim);
  const auto hr = static_cast<std::size_t>(spec.regression_hidden);
  const auto hc = static_cast<std::size_t>(spec.classification_hidden);
  ToyParams p;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    if (ranks[l] < 0 || static_cast<std::size_t>(ranks[l]) > d) {
      throw InvalidRank("toy model: rank " + std::to_string(ranks[l]) + " outside [0, " +
                        std::to_string(d) + "]");
    }
    const auto r = static_cast<std::size_t>(ranks[l]);
    std::mt19937_64 rng(mix_seed(seed, 100 + l));
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    p.adapters.push_back({Matrix(d, r), Matrix::uniform(d, r, rng, -a, a)});
  }
  std::mt19937_64 rng(mix_seed(seed, 1));
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  p.reg_w1 = Matrix::uniform(hr, d, rng, -fan(d), fan(d));
  p.reg_b1 = Matrix(hr, 1);
  p.reg_w2 = Matrix::uniform(1, hr, rng, -fan(hr), fan(hr));
  p.reg_b2 = Matrix(1, 1);
  p.cls_w1 = Matrix::uniform(hc, d, rng, -fan(d), fan(d));
  p.cls_b1 = Matrix(hc, 1);
  p.cls_w2 = Matrix::uniform(kSentimentClasses, hc, rng, -fan(hc), fan(hc));
  p.cls_b2 = Matrix(kSentimentClasses, 1);
  return p;
}

/// Inverted-dropout multipliers (0 or 1/(1-p)) for the two classification
/// dropout stages.
struct DropoutMasks {
  Matrix input;   // n×d, applied to the encoder output
  Matrix hidden;  // n×hc, applied after tanh
};

template <typename Rng>
DropoutMasks sample_dropout(std::size_t n, std::size_t d, std::size_t hc, double rate,
                            Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  DropoutMasks m{Matrix(n, d), Matrix(n, hc)};
  for (double& x : m.input.data()) x = keep(rng) ? scale : 0.0;
  for (double& x : m.hidden.data()) x = keep(rng) ? scale : 0.0;
  return m;
}

/// Samples in matrix form: one row per sample.
struct ToyBatch {
  Matrix features;          // n×d
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }
};

inline ToyBatch make_batch(std::span<const SentimentSample> data,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInput("toy batch: empty");
  const std::size_t d = data[indices[0]].features.size();
  ToyBatch b{Matrix(indices.size(), d), {}, {}};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = data[indices[i]];
    if (s.features.size() != d) throw InvalidInput("toy batch: ragged features");
    std::copy(s.features.begin(), s.features.end(), b.features.row(i).begin());
    b.scores.push_back(s.score);
    b.labels.push_back(s.label);
  }
  return b;
}

namespace detail {

inline Matrix effective_weight(const Matrix& base, const LowRankFactors& adapter) {
  if (adapter.rank() == 0) return base;
  return base + adapter.product();
}

inline void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += bias(j, 0);
}

inline Matrix column_sums(const Matrix& m) {
  Matrix s(m.cols(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s(j, 0) += m(i, j);
  return s;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

/// Encoder output H (n×d) for the given adapters.
inline Matrix encode(const ToyMultiTaskModel& model, const ToyParams& p,
                     const Matrix& features) {
  Matrix h = features;
  for (std::size_t l = 0; l < model.bases.size(); ++l) {
    h = multiply_transposed(h, detail::effective_weight(model.bases[l], p.adapters[l]));
  }
  return h;
}

/// Raw (unclamped) regression head outputs, one per row of `features`.
inline std::vector<double> predict_scores(const ToyMultiTaskModel& model, const ToyParams& p,
                                          const Matrix& features) {
  const Matrix h = encode(model, p, features);
  Matrix z1 = multiply_transposed(h, p.reg_w1);
  detail::add_row_bias(z1, p.reg_b1);
  for (double& x : z1.data()) x = detail::sigmoid(x);
  const Matrix s = multiply_transposed(z1, p.reg_w2);
  std::vector<double> out(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) out[i] = s(i, 0) + p.reg_b2(0, 0);
  return out;
}

/// Multi-task loss on `batch`; when `grad` is non-null it receives the
/// gradient with respect to every block of `p`. `masks == nullptr` disables
/// dropout.
inline double toy_loss_and_gradient(const ToyMultiTaskModel& model, const ToyParams& p,
                                    const ToyBatch& batch, const MultiTaskWeights& w,
                                    const DropoutMasks* masks, ToyParams* grad) {
  const std::size_t n = batch.size();
  const std::size_t layers = model.bases.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<Matrix> weights;
  std::vector<Matrix> acts{batch.features};
  for (std::size_t l = 0; l < layers; ++l) {
    weights.push_back(detail::effective_weight(model.bases[l], p.adapters[l]));
    acts.push_back(multiply_transposed(acts.back(), weights.back()));
  }
  const Matrix& h = acts.back();

  // Regression head.
  Matrix s1 = multiply_transposed(h, p.reg_w1);
  detail::add_row_bias(s1, p.reg_b1);
  for (double& x : s1.data()) x = detail::sigmoid(x);
  Matrix pred = multiply_transposed(s1, p.reg_w2);
  for (double& x : pred.data()) x += p.reg_b2(0, 0);

  // Classification head.
  Matrix hd = h;
  if (masks) {
    auto hv = hd.data();
    auto mv = masks->input.data();
    for (std::size_t i = 0; i < hv.size(); ++i) hv[i] *= mv[i];
  }
  Matrix t = multiply_transposed(hd, p.cls_w1);
  detail::add_row_bias(t, p.cls_b1);
  for (double& x : t.data()) x = std::tanh(x);
  Matrix td = t;
  if (masks) {
    auto tv = td.data();
    auto mv = masks->hidden.data();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] *= mv[i];
  }
  Matrix logits = multiply_transposed(td, p.cls_w2);
  detail::add_row_bias(logits, p.cls_b2);

  std::vector<double> pred_vec(pred.data().begin(), pred.data().end());
  const double l_r = mse_loss(pred_vec, batch.scores);
  const double l_c = ce_loss(logits, batch.labels);
  const double loss = multitask_loss(l_r, l_c, w);
  if (!grad) return loss;

  *grad = p.zeros_like();

  Matrix d_pred(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    d_pred(i, 0) = w.regression * 2.0 * (pred(i, 0) - batch.scores[i]) * inv_n;
  }
  grad->reg_w2 = transposed_multiply(d_pred, s1);
  grad->reg_b2 = detail::column_sums(d_pred);
  Matrix d_z1 = multiply(d_pred, p.reg_w2);
  {
    auto dz = d_z1.data();
    auto sv = s1.data();
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= sv[i] * (1.0 - sv[i]);
  }
  grad->reg_w1 = transposed_multiply(d_z1, h);
  grad->reg_b1 = detail::column_sums(d_z1);
  Matrix d_h = multiply(d_z1, p.reg_w1);

  Matrix d_logits = logits;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = d_logits.row(i);
    const double lse = log_sum_exp(logits.row(i));
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = std::exp(logits(i, k) - lse);
    row[static_cast<std::size_t>(batch.labels[i])] -= 1.0;
    for (double& x : row) x *= w.classification * inv_n;
  }
  grad->cls_w2 = transposed_multiply(d_logits, td);
  grad->cls_b2 = detail::column_sums(d_logits);
  Matrix d_t = multiply(d_logits, p.cls_w2);
  {
    auto dt = d_t.data();
    auto tv = t.data();
    for (std::size_t i = 0; i < dt.size(); ++i) {
      if (masks) dt[i] *= masks->hidden.data()[i];
      dt[i] *= 1.0 - tv[i] * tv[i];
    }
  }
  grad->cls_w1 = transposed_multiply(d_t, hd);
  grad->cls_b1 = detail::column_sums(d_t);
  Matrix d_hd = multiply(d_t, p.cls_w1);
  if (masks) {
    auto dv = d_hd.data();
    auto mv = masks->input.data();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= mv[i];
  }
  d_h = d_h + d_hd;

  // Encoder: acts[l+1] = acts[l] · W_lᵀ.
  Matrix delta = std::move(d_h);
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix d_w = transposed_multiply(delta, acts[l]);
    const auto& a = p.adapters[l];
    if (a.rank() > 0) {
      grad->adapters[l].u = multiply(d_w, a.v);
      grad->adapters[l].v = transposed_multiply(d_w, a.u);
    }
    if (l > 0) delta = multiply(delta, weights[l]);
  }
  return loss;
}

/// Indices of a seeded 90/10 train/validation split.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

inline DataSplit split_dataset(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5711));
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = count * 9 / 10;
  DataSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  if (s.train.empty() || s.validation.empty()) {
    throw InvalidInput("toy objective: dataset of " + std::to_string(count) +
                       " samples leaves an empty train or validation split");
  }
  return s;
}

struct ToyTrainResult {
  ToyParams params;
  double final_train_loss = 0.0;
};

/// Full-batch gradient descent with a fixed step; dropout on during training.
inline ToyTrainResult train_toy_model(const ToyMultiTaskModel& model, const RankVector& ranks,
                                      const ToyBatch& train, const ToyTrainConfig& cfg,
                                      const MultiTaskWeights& w, std::uint64_t seed) {
  cfg.validate();
  w.validate();
  ToyTrainResult out{init_toy_params(model, ranks, seed), 0.0};
  ToyParams grad;
  std::mt19937_64 drop_rng(mix_seed(seed, 2));
  const auto d = static_cast<std::size_t>(model.spec.feature_dim);
  const auto hc = static_cast<std::size_t>(model.spec.classification_hidden);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    DropoutMasks masks;
    const bool use_dropout = model.spec.dropout > 0.0;
    if (use_dropout) masks = sample_dropout(train.size(), d, hc, model.spec.dropout, drop_rng);
    const double loss = toy_loss_and_gradient(model, out.params, train, w,
                                              use_dropout ? &masks : nullptr, &grad);
    if (!std::isfinite(loss)) {
      throw NumericFailure("toy training diverged at step " + std::to_string(step));
    }
    out.final_train_loss = loss;
    std::vector<Matrix*> dst;
    out.params.for_each_block([&](Matrix& m) { dst.push_back(&m); });
    std::size_t k = 0;
    grad.for_each_block([&](const Matrix& g) {
      auto pv = dst[k++]->data();
      auto gv = g.data();
      for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= cfg.step_size * gv[i];
    });
  }
  for (double x : out.params.flatten()) {
    if (!std::isfinite(x)) {
      throw NumericFailure("toy training diverged at step " + std::to_string(cfg.max_steps));
    }
  }
  return out;
}

/// evaluate(r): train adapters at ranks r together with both heads, then
/// report the validation MSE of the regression head with predictions clamped
/// to [-1, 1].
class ToyMultiTaskObjective final : public ObjectiveEvaluator {
 public:
  ToyMultiTaskObjective(ToyMultiTaskModel model, std::span<const SentimentSample> dataset,
                        ToyTrainConfig train_cfg, MultiTaskWeights weights,
                        std::uint64_t seed)
      : model_(std::move(model)), train_cfg_(train_cfg), weights_(weights), seed_(seed) {
    model_.spec.validate();
    train_cfg_.validate();
    weights_.validate();
    if (dataset.empty()) throw InvalidInput("toy objective: empty dataset");
    for (const auto& s : dataset) {
      if (s.features.size() != static_cast<std::size_t>(model_.spec.feature_dim)) {
        throw InvalidInput("toy objective: sample feature width " +
                           std::to_string(s.features.size()) + " != feature_dim " +
                           std::to_string(model_.spec.feature_dim));
      }
    }
    const DataSplit split = split_dataset(dataset.size(), seed_);
    train_ = make_batch(dataset, split.train);
    validation_ = make_batch(dataset, split.validation);
  }

  double evaluate(const RankVector& r) const override {
    const ToyTrainResult trained =
        train_toy_model(model_, r, train_, train_cfg_, weights_, seed_);
    std::vector<double> pred = predict_scores(model_, trained.params, validation_.features);
    for (double& x : pred) x = std::clamp(x, -1.0, 1.0);
    return mse_loss(pred, validation_.scores);
  }

  bool concurrent_safe() const override { return true; }
  std::size_t layer_count() const override { return model_.bases.size(); }

  const ToyMultiTaskModel& model() const { return model_; }
  const ToyBatch& train_batch() const { return train_; }
  const ToyBatch& validation_batch() const { return validation_; }

 private:
  ToyMultiTaskModel model_;
  ToyTrainConfig train_cfg_;
  MultiTaskWeights weights_;
  std::uint64_t seed_;
  ToyBatch train_;
  ToyBatch validation_;
};

}  // namespace darse
