#pragma once

// Adam training loop over BPR minibatches, plus the memory and rounding reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "actkg/data.hpp"
#include "actkg/metrics.hpp"
#include "actkg/model.hpp"
#include "actkg/random.hpp"
#include "actkg/tape.hpp"

namespace actkg {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 1024;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double lambda = 1e-5;
  std::size_t k = 20;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (k < 1) throw ConfigError("K must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  }
};

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<DenseMatrix<T>> m;
  std::vector<DenseMatrix<T>> v;
  std::uint64_t step = 0;
};

/// Parameters in ParamId order: E^(0), then Theta^(0..L-1).
template <typename T>
std::vector<DenseMatrix<T>*> parameter_list(ModelParams<T>& p) {
  std::vector<DenseMatrix<T>*> out{&p.embeddings};
  for (auto& t : p.thetas) out.push_back(&t);
  return out;
}

/// Bias-corrected Adam update; moments are created lazily on the first step.
template <typename T>
void adam_step(std::span<DenseMatrix<T>* const> params, const GradientSet<T>& grads, AdamState<T>& state, double lr) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient count does not match parameters");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads.grads[i]) || !params[i]->same_shape(state.m[i]))
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState<T>::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState<T>::beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    const auto g = grads.grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = AdamState<T>::beta1 * static_cast<double>(m[j]) + (1.0 - AdamState<T>::beta1) * gj;
      const double vj = AdamState<T>::beta2 * static_cast<double>(v[j]) + (1.0 - AdamState<T>::beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + AdamState<T>::epsilon);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
    }
  }
}

/// Computes loss and gradients for one minibatch; the tape-based engine is the default,
/// tests plug in an uncompressed reference.
template <typename T>
using GradientEngine = std::function<StepResult<T>(const ModelParams<T>&, const BprBatch&, std::uint64_t)>;

template <typename T>
GradientEngine<T> tape_engine(std::shared_ptr<const CsrMatrix<T>> adjacency, ModelConfig cfg, double lambda) {
  return [adjacency = std::move(adjacency), cfg, lambda](const ModelParams<T>& params, const BprBatch& batch,
                                                         std::uint64_t tape_seed) {
    return compute_gradients(params, adjacency, cfg, batch, lambda, tape_seed);
  };
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::size_t batches = 0;
  ContextLedger ledger;  // from the epoch's largest batch
  std::size_t max_retained_bytes = 0;
  double seconds = 0.0;
};

struct MemoryReport {
  std::size_t activation_bytes = 0;
  std::size_t fp32_bytes = 0;
  std::size_t quantized_bytes = 0;
  std::size_t mask_bytes = 0;
  std::size_t adjacency_bytes = 0;
  double ratio = 0.0;  // fp32_bytes / activation_bytes
};

inline MemoryReport memory_report(const ContextLedger& ledger) {
  MemoryReport r;
  r.activation_bytes = ledger.peak;
  r.fp32_bytes = ledger.fp32_bytes;
  r.quantized_bytes = ledger.quantized_bytes;
  r.mask_bytes = ledger.mask_bytes;
  r.adjacency_bytes = ledger.adjacency_bytes;
  r.ratio = ledger.peak == 0 ? 0.0 : static_cast<double>(ledger.fp32_bytes) / static_cast<double>(ledger.peak);
  return r;
}

/// Median of the epoch times with the first (warm-up) epoch excluded when possible.
inline double median_epoch_seconds(const std::vector<EpochStats>& epochs) {
  std::vector<double> t;
  for (const auto& e : epochs)
    if (e.epoch >= 2 || epochs.size() == 1) t.push_back(e.seconds);
  if (t.empty()) return 0.0;
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 == 1 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

/// BPR batch in node space for `pairs`, one sampled negative each.
inline BprBatch make_bpr_batch(const KgDataset& ds, const NegativeSampler& sampler, std::span<const Interaction> pairs,
                               Rng& rng) {
  BprBatch batch;
  for (const auto& x : pairs) {
    batch.users.push_back(ds.user_node(x.user));
    batch.positives.push_back(ds.item_node(x.item));
    batch.negatives.push_back(ds.item_node(sampler.sample(x.user, rng)));
  }
  return batch;
}

/// Shuffled train pairs for a 1-based epoch, as the trainer visits them.
inline std::vector<Interaction> epoch_order(const KgDataset& ds, std::uint64_t seed, std::size_t epoch, Rng& rng) {
  rng = Rng(hash_combine(seed, epoch));
  std::vector<Interaction> order = ds.train;
  rng.shuffle(order.begin(), order.end());
  return order;
}

template <typename T>
class Trainer {
 public:
  Trainer(const KgDataset& ds, ModelConfig model_cfg, TrainConfig train_cfg)
      : ds_(&ds),
        model_cfg_(model_cfg),
        train_cfg_(train_cfg),
        adjacency_(std::make_shared<const CsrMatrix<T>>(build_adjacency<T>(ds))),
        sampler_(ds.train, ds.num_items),
        params_(init_params<T>(ds.num_nodes(), model_cfg, train_cfg.seed)) {
    model_cfg_.validate();
    train_cfg_.validate();
    if (ds.train.empty()) throw ConfigError("trainer: dataset has no training interactions");
    engine_ = tape_engine<T>(adjacency_, model_cfg_, train_cfg_.lambda);
  }

  Trainer(const KgDataset& ds, ModelConfig model_cfg, TrainConfig train_cfg, GradientEngine<T> engine)
      : Trainer(ds, model_cfg, train_cfg) {
    engine_ = std::move(engine);
  }

  /// Shuffled pass over the train pairs, one sampled negative per pair.
  EpochStats train_epoch() {
    const auto start = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.epoch = ++epoch_;
    const std::uint64_t epoch_seed = hash_combine(train_cfg_.seed, epoch_);
    Rng rng(epoch_seed);
    const auto order = epoch_order(*ds_, train_cfg_.seed, epoch_, rng);

    double loss_sum = 0.0;
    const auto params = parameter_list(params_);
    for (std::size_t begin = 0; begin < order.size(); begin += train_cfg_.batch) {
      const std::size_t end = std::min(order.size(), begin + train_cfg_.batch);
      const auto batch = make_bpr_batch(*ds_, sampler_, std::span(order).subspan(begin, end - begin), rng);
      auto step = engine_(params_, batch, hash_combine(epoch_seed, stats.batches + 1));
      if (!step.grads.all_finite()) throw std::runtime_error("non-finite gradient in epoch " + std::to_string(epoch_));
      loss_sum += step.loss;
      if (step.ledger.peak > stats.ledger.peak) stats.ledger = step.ledger;
      stats.max_retained_bytes = std::max(stats.max_retained_bytes, step.retained_bytes);
      adam_step<T>(params, step.grads, adam_, train_cfg_.lr);
      ++stats.batches;
    }
    stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
  }

  std::vector<EpochStats> train() {
    std::vector<EpochStats> out;
    for (std::size_t e = 0; e < train_cfg_.epochs; ++e) out.push_back(train_epoch());
    return out;
  }

  DenseMatrix<T> readout() const { return infer(params_, *adjacency_, model_cfg_.aggregation); }

  RankingMetrics evaluate(SplitKind which = SplitKind::test) const {
    return actkg::evaluate(*ds_, readout(), train_cfg_.k, which);
  }

  const ModelParams<T>& params() const noexcept { return params_; }
  ModelParams<T>& params() noexcept { return params_; }
  const AdamState<T>& optimizer_state() const noexcept { return adam_; }
  std::shared_ptr<const CsrMatrix<T>> adjacency() const noexcept { return adjacency_; }
  const ModelConfig& model_config() const noexcept { return model_cfg_; }
  const TrainConfig& train_config() const noexcept { return train_cfg_; }

 private:
  const KgDataset* ds_;
  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  std::shared_ptr<const CsrMatrix<T>> adjacency_;
  NegativeSampler sampler_;
  ModelParams<T> params_;
  AdamState<T> adam_;
  GradientEngine<T> engine_;
  std::size_t epoch_ = 0;
};

template <typename T>
struct TrainingRun {
  ModelParams<T> params;
  std::vector<EpochStats> epochs;
  RankingMetrics metrics;
  MemoryReport memory;

  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().mean_loss; }
  std::vector<double> loss_curve() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.mean_loss);
    return out;
  }
  std::size_t max_retained_bytes() const {
    std::size_t m = 0;
    for (const auto& e : epochs) m = std::max(m, e.max_retained_bytes);
    return m;
  }
};

/// Trains for train_cfg.epochs and evaluates on the test split.
template <typename T>
TrainingRun<T> run_training(const KgDataset& ds, const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  Trainer<T> trainer(ds, model_cfg, train_cfg);
  TrainingRun<T> run;
  run.epochs = trainer.train();
  run.metrics = trainer.evaluate();
  if (!run.epochs.empty()) run.memory = memory_report(run.epochs.front().ledger);
  run.params = trainer.params();
  return run;
}

struct RoundingPair {
  std::uint64_t seed = 0;
  double stochastic_loss = 0.0;
  double nearest_loss = 0.0;
  RankingMetrics stochastic;
  RankingMetrics nearest;
  std::vector<double> stochastic_curve;
  std::vector<double> nearest_curve;
};

/// Twin runs that differ only in the rounding mode.
template <typename T>
std::vector<RoundingPair> compare_rounding(const KgDataset& ds, ModelConfig model_cfg, TrainConfig train_cfg,
                                           std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("compare_rounding: need at least one seed");
  std::vector<RoundingPair> out;
  for (const auto seed : seeds) {
    train_cfg.seed = seed;
    RoundingPair pair;
    pair.seed = seed;
    model_cfg.quant.rounding = Rounding::stochastic;
    const auto sr = run_training<T>(ds, model_cfg, train_cfg);
    model_cfg.quant.rounding = Rounding::nearest;
    const auto nr = run_training<T>(ds, model_cfg, train_cfg);
    pair.stochastic_loss = sr.final_loss();
    pair.nearest_loss = nr.final_loss();
    pair.stochastic = sr.metrics;
    pair.nearest = nr.metrics;
    pair.stochastic_curve = sr.loss_curve();
    pair.nearest_curve = nr.loss_curve();
    out.push_back(std::move(pair));
  }
  return out;
}

struct MemoryRow {
  int bits = 32;
  MemoryReport memory;
  std::size_t retained_bytes = 0;
  double seconds = 0.0;
};

/// One training step per bit width on the same parameters and first epoch-1 batch.
template <typename T>
std::vector<MemoryRow> bench_memory(const KgDataset& ds, ModelConfig model_cfg, const TrainConfig& train_cfg,
                                    std::span<const int> bits) {
  model_cfg.validate();
  train_cfg.validate();
  const auto adjacency = std::make_shared<const CsrMatrix<T>>(build_adjacency<T>(ds));
  const auto params = init_params<T>(ds.num_nodes(), model_cfg, train_cfg.seed);
  const NegativeSampler sampler(ds.train, ds.num_items);
  Rng rng(0);
  const auto order = epoch_order(ds, train_cfg.seed, 1, rng);
  const std::size_t n = std::min(order.size(), train_cfg.batch);
  const auto batch = make_bpr_batch(ds, sampler, std::span(order).first(n), rng);
  const std::uint64_t tape_seed = hash_combine(hash_combine(train_cfg.seed, 1), 1);

  std::vector<MemoryRow> rows;
  for (const int b : bits) {
    model_cfg.quant.bits = b;
    model_cfg.quant.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto step = compute_gradients(params, adjacency, model_cfg, batch, train_cfg.lambda, tape_seed);
    MemoryRow row;
    row.bits = b;
    row.memory = memory_report(step.ledger);
    row.retained_bytes = step.retained_bytes;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace actkg
