#pragma once

// Graph-convolution backbone E^(l+1) = relu(A E^(l) Theta^(l)) over the unified
// user/entity node space, with sum or last-layer readout and dot-product scoring.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "actkg/quant.hpp"
#include "actkg/random.hpp"
#include "actkg/tape.hpp"
#include "actkg/tensor.hpp"

namespace actkg {

enum class Aggregation { sum, last };

inline const char* to_string(Aggregation a) { return a == Aggregation::sum ? "sum" : "last"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "last") return Aggregation::last;
  throw ConfigError("unknown aggregation '" + s + "' (expected sum or last)");
}

struct ModelConfig {
  std::size_t layers = 3;
  std::size_t dim = 64;
  Aggregation aggregation = Aggregation::sum;
  QuantConfig quant{};

  void validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    quant.validate();
  }
};

template <typename T>
struct ModelParams {
  DenseMatrix<T> embeddings;          // E^(0), N x d
  std::vector<DenseMatrix<T>> thetas;  // Theta^(l), d x d each

  std::size_t num_nodes() const noexcept { return embeddings.rows(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }
  std::size_t layers() const noexcept { return thetas.size(); }

  bool all_finite() const {
    if (!embeddings.all_finite()) return false;
    for (const auto& t : thetas)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

namespace detail {

template <typename T>
DenseMatrix<T> xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  DenseMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

}  // namespace detail

/// Xavier-uniform initialization, bound sqrt(6 / (fan_in + fan_out)).
template <typename T>
ModelParams<T> init_params(std::size_t num_nodes, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (num_nodes < 1) throw ConfigError("init_params: need at least one node");
  Rng rng(hash_combine(seed, 0x1A17));
  ModelParams<T> p;
  p.embeddings = detail::xavier_uniform<T>(num_nodes, cfg.dim, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) p.thetas.push_back(detail::xavier_uniform<T>(cfg.dim, cfg.dim, rng));
  return p;
}

struct ModelHandles {
  ParamId embeddings;
  std::vector<ParamId> thetas;
};

/// Registers E^(0) first, then Theta^(0..L-1).
template <typename T>
ModelHandles register_model(Tape<T>& tape, const ModelParams<T>& params) {
  ModelHandles h;
  h.embeddings = tape.register_parameter(params.embeddings);
  for (const auto& t : params.thetas) h.thetas.push_back(tape.register_parameter(t));
  return h;
}

/// Records L (spmm -> mm -> relu) blocks and the readout on the tape.
template <typename T>
Var<T> forward_all(Tape<T>& tape, const ModelHandles& handles, std::shared_ptr<const CsrMatrix<T>> adjacency,
                   Aggregation aggregation) {
  if (!adjacency) throw UsageError("forward_all: null adjacency");
  if (handles.thetas.empty()) throw ConfigError("forward_all: model has no layers");
  const auto& e0 = tape.parameter(handles.embeddings);
  if (adjacency->rows() != e0.rows() || adjacency->cols() != e0.rows())
    throw DimensionError("forward_all: adjacency " + shape_str(adjacency->rows(), adjacency->cols()) +
                         " does not match " + std::to_string(e0.rows()) + " nodes");
  Var<T> e = tape.leaf(handles.embeddings);
  std::vector<Var<T>> layers;
  layers.reserve(handles.thetas.size());
  for (const ParamId theta : handles.thetas) {
    auto h = tape.spmm(adjacency, e);
    auto j = tape.mm(h, theta);
    e = tape.relu(j);
    layers.push_back(e);
  }
  if (aggregation == Aggregation::last) return std::move(layers.back());
  Var<T> readout = std::move(layers.front());
  for (std::size_t l = 1; l < layers.size(); ++l) readout = tape.add(readout, layers[l]);
  return readout;
}

/// Forward pass without recording, for evaluation.
template <typename T>
DenseMatrix<T> infer(const ModelParams<T>& params, const CsrMatrix<T>& adjacency, Aggregation aggregation) {
  DenseMatrix<T> e = params.embeddings;
  DenseMatrix<T> readout;
  for (std::size_t l = 0; l < params.thetas.size(); ++l) {
    e = relu(mm(spmm(adjacency, e), params.thetas[l])).first;
    if (aggregation == Aggregation::last || l == 0) {
      readout = e;
    } else {
      readout += e;
    }
  }
  return readout;
}

template <typename T>
T score(std::span<const T> user_row, std::span<const T> item_row) {
  return dot<T>(user_row, item_row);
}

/// One BPR minibatch in the unified node index space.
struct BprBatch {
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> positives;
  std::vector<std::uint32_t> negatives;

  std::size_t size() const noexcept { return users.size(); }
};

template <typename T>
struct StepResult {
  double loss = 0.0;
  GradientSet<T> grads;
  ContextLedger ledger;
  std::size_t retained_bytes = 0;  // context bytes still held after backward
};

/// Records forward + loss for one batch on `tape`, returns the loss node.
template <typename T>
Var<T> record_batch(Tape<T>& tape, const ModelHandles& handles, std::shared_ptr<const CsrMatrix<T>> adjacency,
                    Aggregation aggregation, const BprBatch& batch, double lambda) {
  auto readout = forward_all(tape, handles, std::move(adjacency), aggregation);
  auto u = tape.gather(readout, batch.users);
  auto p = tape.gather(readout, batch.positives);
  auto q = tape.gather(readout, batch.negatives);
  return tape.bpr_loss(u, p, q, lambda);
}

/// Forward + backward for one batch through a fresh tape seeded with `tape_seed`.
template <typename T>
StepResult<T> compute_gradients(const ModelParams<T>& params, std::shared_ptr<const CsrMatrix<T>> adjacency,
                                const ModelConfig& cfg, const BprBatch& batch, double lambda,
                                std::uint64_t tape_seed) {
  Tape<T> tape(cfg.quant, tape_seed);
  const auto handles = register_model(tape, params);
  const auto loss = record_batch(tape, handles, std::move(adjacency), cfg.aggregation, batch, lambda);
  StepResult<T> r;
  r.loss = static_cast<double>(loss.value(0, 0));
  r.grads = tape.backward();
  r.ledger = tape.ledger();
  r.retained_bytes = tape.ledger().current;
  return r;
}

}  // namespace actkg
