#pragma once

// Reverse-mode autodiff tape whose nodes keep only compressed backward context.
//
// Forward values are returned to the caller in Var objects and are never retained by
// the tape. What the tape keeps per node:
//   spmm      shared reference to the adjacency (counted once per tape)
//   mm        quantized copy of the left input H (Theta is read from the registry)
//   relu      1-bit mask of (input > 0); the FP32 output when bits == 32
//   gather    the row indices (minibatch input, not counted as activation memory)
//   add       nothing
//   bpr_loss  quantized stacked [users; pos; neg] rows + per-triple sigmoid weights
// backward() dequantizes each context when its node is visited and frees it
// immediately afterwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "actkg/quant.hpp"
#include "actkg/tensor.hpp"

namespace actkg {

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind { leaf, spmm, mm, relu, gather, add, bpr_loss };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::spmm: return "spmm";
    case OpKind::mm: return "mm";
    case OpKind::relu: return "relu";
    case OpKind::gather: return "gather";
    case OpKind::add: return "add";
    case OpKind::bpr_loss: return "bpr_loss";
  }
  return "?";
}

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

/// A forward value together with the tape node that produced it.
template <typename T>
struct Var {
  NodeId node;
  DenseMatrix<T> value;
};

/// Byte accounting for stored backward context. The category totals describe
/// everything recorded on the tape; `current` drops back to zero as backward frees
/// contexts, `peak` keeps the high-water mark.
struct ContextLedger {
  std::size_t quantized_bytes = 0;  // sum of QuantizedTensor::stored_bytes
  std::size_t mask_bytes = 0;
  std::size_t adjacency_bytes = 0;
  std::size_t fp32_bytes = 0;  // the same contexts held as FP32 tensors
  std::size_t current = 0;
  std::size_t peak = 0;

  std::size_t total() const noexcept { return quantized_bytes + mask_bytes + adjacency_bytes; }

  void acquire(std::size_t n) noexcept {
    current += n;
    peak = std::max(peak, current);
  }
  void release(std::size_t n) noexcept { current -= n; }
};

/// Gradients for every registered parameter, indexed by ParamId.
template <typename T>
struct GradientSet {
  std::vector<DenseMatrix<T>> grads;

  const DenseMatrix<T>& operator[](ParamId p) const { return grads.at(p.index); }
  DenseMatrix<T>& operator[](ParamId p) { return grads.at(p.index); }
  std::size_t size() const noexcept { return grads.size(); }

  bool all_finite() const {
    return std::all_of(grads.begin(), grads.end(), [](const auto& g) { return g.all_finite(); });
  }
};

namespace detail {

template <typename T>
struct LossContext {
  QuantizedTensor<T> rows;     // [users; pos; neg], 3n x d
  QuantizedTensor<T> weights;  // sigmoid(-margin) per triple, n x 1, always pass-through
  double lambda = 0.0;
};

template <typename T>
using Context = std::variant<std::monostate, std::shared_ptr<const CsrMatrix<T>>, QuantizedTensor<T>, BitMask,
                             std::vector<std::uint32_t>, LossContext<T>>;

template <typename T>
struct Node {
  OpKind kind = OpKind::leaf;
  std::vector<std::size_t> inputs;
  std::size_t param = 0;  // leaf parameter, or Theta for mm
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t context_bytes = 0;  // released when the node is visited in backward
  Context<T> context;
};

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

template <typename T>
class Tape {
 public:
  Tape(QuantConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) { cfg_.validate(); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  const QuantConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Registers a parameter by reference; it must outlive the tape and stay unchanged
  /// until backward() returns.
  ParamId register_parameter(const DenseMatrix<T>& p) {
    params_.push_back(&p);
    return ParamId{params_.size() - 1};
  }

  const DenseMatrix<T>& parameter(ParamId p) const { return *params_.at(p.index); }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  Var<T> leaf(ParamId p) {
    const auto& value = parameter(p);
    auto& n = push(OpKind::leaf, {}, value.rows(), value.cols());
    n.param = p.index;
    return {NodeId{nodes_.size() - 1}, value};
  }

  /// H = A x. Context: the shared adjacency.
  Var<T> spmm(std::shared_ptr<const CsrMatrix<T>> a, const Var<T>& x) {
    if (!a) throw UsageError("spmm: null adjacency");
    auto out = actkg::spmm(*a, x.value);
    auto& n = push(OpKind::spmm, {x.node.index}, out.rows(), out.cols());
    track_adjacency(a.get(), +1);
    n.context = std::move(a);
    return {last_id(), std::move(out)};
  }

  /// J = H Theta. Forward uses the exact H; the context keeps Quant(H).
  Var<T> mm(const Var<T>& h, ParamId theta) {
    const auto& th = parameter(theta);
    auto out = actkg::mm(h.value, th);
    auto& n = push(OpKind::mm, {h.node.index}, out.rows(), out.cols());
    n.param = theta.index;
    auto q = quantize_tensor(h.value, cfg_, seed_, nodes_.size() - 1);
    ledger_.quantized_bytes += q.stored_bytes();
    ledger_.fp32_bytes += q.fp32_bytes();
    n.context_bytes = q.stored_bytes();
    ledger_.acquire(n.context_bytes);
    n.context = std::move(q);
    return {last_id(), std::move(out)};
  }

  /// Context: the 1-bit mask, or the FP32 output itself in pass-through mode so that
  /// b=32 reproduces a conventional uncompressed engine byte for byte.
  Var<T> relu(const Var<T>& x) {
    auto [out, mask] = actkg::relu(x.value);
    auto& n = push(OpKind::relu, {x.node.index}, out.rows(), out.cols());
    ledger_.fp32_bytes += mask.count() * 4;
    if (cfg_.passthrough()) {
      auto q = quantize_tensor(out, cfg_, seed_, nodes_.size() - 1);
      ledger_.quantized_bytes += q.stored_bytes();
      n.context_bytes = q.stored_bytes();
      n.context = std::move(q);
    } else {
      ledger_.mask_bytes += mask.stored_bytes();
      n.context_bytes = mask.stored_bytes();
      n.context = std::move(mask);
    }
    ledger_.acquire(n.context_bytes);
    return {last_id(), std::move(out)};
  }

  /// Selects rows of x. Backward scatter-adds, so repeated indices accumulate.
  Var<T> gather(const Var<T>& x, std::span<const std::uint32_t> indices) {
    DenseMatrix<T> out(indices.size(), x.value.cols());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] >= x.value.rows())
        throw DimensionError("gather: index " + std::to_string(indices[k]) + " out of range for " +
                             std::to_string(x.value.rows()) + " rows");
      std::copy_n(x.value.row(indices[k]).begin(), x.value.cols(), out.row(k).begin());
    }
    auto& n = push(OpKind::gather, {x.node.index}, out.rows(), out.cols());
    n.context = std::vector<std::uint32_t>(indices.begin(), indices.end());
    return {last_id(), std::move(out)};
  }

  Var<T> add(const Var<T>& a, const Var<T>& b) {
    auto out = a.value + b.value;
    push(OpKind::add, {a.node.index, b.node.index}, out.rows(), out.cols());
    return {last_id(), std::move(out)};
  }

  /// Mean BPR loss over the n triples plus lambda * (|u|^2 + |p|^2 + |q|^2) / n.
  Var<T> bpr_loss(const Var<T>& users, const Var<T>& pos, const Var<T>& neg, double lambda) {
    const auto& u = users.value;
    const auto& p = pos.value;
    const auto& q = neg.value;
    if (!u.same_shape(p) || !u.same_shape(q))
      throw DimensionError("bpr_loss: user/pos/neg shapes " + shape_str(u.rows(), u.cols()) + ", " +
                           shape_str(p.rows(), p.cols()) + ", " + shape_str(q.rows(), q.cols()) + " differ");
    if (u.rows() == 0) throw DimensionError("bpr_loss: empty batch");
    const std::size_t n = u.rows();
    const std::size_t d = u.cols();
    DenseMatrix<T> weights(n, 1);
    DenseMatrix<T> stacked(3 * n, d);
    double data_term = 0.0;
    double reg_term = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double margin = static_cast<double>(dot<T>(u.row(t), p.row(t))) -
                            static_cast<double>(dot<T>(u.row(t), q.row(t)));
      data_term += detail::softplus(-margin);
      weights(t, 0) = static_cast<T>(detail::sigmoid(-margin));
      reg_term += static_cast<double>(dot<T>(u.row(t), u.row(t))) + static_cast<double>(dot<T>(p.row(t), p.row(t))) +
                  static_cast<double>(dot<T>(q.row(t), q.row(t)));
      std::copy_n(u.row(t).begin(), d, stacked.row(t).begin());
      std::copy_n(p.row(t).begin(), d, stacked.row(n + t).begin());
      std::copy_n(q.row(t).begin(), d, stacked.row(2 * n + t).begin());
    }
    const double loss = (data_term + lambda * reg_term) / static_cast<double>(n);

    auto& node = push(OpKind::bpr_loss, {users.node.index, pos.node.index, neg.node.index}, 1, 1);
    detail::LossContext<T> ctx;
    ctx.rows = quantize_tensor(stacked, cfg_, seed_, nodes_.size() - 1);
    ctx.weights = quantize_tensor(weights, QuantConfig::exact(), seed_, nodes_.size() - 1);
    ctx.lambda = lambda;
    node.context_bytes = ctx.rows.stored_bytes() + ctx.weights.stored_bytes();
    ledger_.quantized_bytes += node.context_bytes;
    ledger_.fp32_bytes += ctx.rows.fp32_bytes() + ctx.weights.fp32_bytes();
    ledger_.acquire(node.context_bytes);
    node.context = std::move(ctx);
    return {last_id(), DenseMatrix<T>(1, 1, static_cast<T>(loss))};
  }

  /// Reverse sweep from the loss node. Each node's context is dequantized when the
  /// node is visited and released right after. The tape cannot be replayed.
  GradientSet<T> backward() {
    if (nodes_.empty() || nodes_.back().kind != OpKind::bpr_loss)
      throw UsageError("backward: the last recorded node must be a loss");
    if (consumed_) throw UsageError("backward: tape already consumed");
    consumed_ = true;

    GradientSet<T> out;
    out.grads.reserve(params_.size());
    for (const auto* p : params_) out.grads.emplace_back(p->rows(), p->cols());

    std::vector<std::optional<DenseMatrix<T>>> grads(nodes_.size());
    grads.back() = DenseMatrix<T>(1, 1, T{1});
    auto accumulate = [&grads](std::size_t target, DenseMatrix<T>&& g) {
      if (grads[target]) {
        *grads[target] += g;
      } else {
        grads[target] = std::move(g);
      }
    };

    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& node = nodes_[i];
      if (grads[i]) {
        DenseMatrix<T> g = std::move(*grads[i]);
        grads[i].reset();
        switch (node.kind) {
          case OpKind::leaf:
            out.grads[node.param] += g;
            break;
          case OpKind::spmm: {
            const auto& a = std::get<std::shared_ptr<const CsrMatrix<T>>>(node.context);
            accumulate(node.inputs[0], spmm_t(*a, g));
            break;
          }
          case OpKind::mm: {
            const auto h_hat = dequantize_tensor(std::get<QuantizedTensor<T>>(node.context));
            out.grads[node.param] += mm_tn(h_hat, g);
            accumulate(node.inputs[0], mm_nt(g, *params_[node.param]));
            break;
          }
          case OpKind::relu:
            if (const auto* mask = std::get_if<BitMask>(&node.context)) {
              accumulate(node.inputs[0], apply_mask(g, *mask));
            } else {
              accumulate(node.inputs[0], apply_mask(g, actkg::relu(dequantize_tensor(std::get<QuantizedTensor<T>>(node.context))).second));
            }
            break;
          case OpKind::gather: {
            const auto& idx = std::get<std::vector<std::uint32_t>>(node.context);
            const auto& src = nodes_[node.inputs[0]];
            DenseMatrix<T> scattered(src.rows, src.cols);
            for (std::size_t k = 0; k < idx.size(); ++k) {
              auto dst = scattered.row(idx[k]);
              const auto row = g.row(k);
              for (std::size_t j = 0; j < row.size(); ++j) dst[j] += row[j];
            }
            accumulate(node.inputs[0], std::move(scattered));
            break;
          }
          case OpKind::add:
            accumulate(node.inputs[0], DenseMatrix<T>(g));
            accumulate(node.inputs[1], std::move(g));
            break;
          case OpKind::bpr_loss:
            backward_bpr(node, g(0, 0), accumulate);
            break;
        }
      }
      release(node);
    }
    return out;
  }

  const ContextLedger& ledger() const noexcept { return ledger_; }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }

  std::size_t count(OpKind k) const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [k](const auto& n) { return n.kind == k; }));
  }

  /// Number of nodes currently holding a QuantizedTensor context.
  std::size_t quantized_context_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const auto& n) {
      return std::holds_alternative<QuantizedTensor<T>>(n.context) ||
             std::holds_alternative<detail::LossContext<T>>(n.context);
    }));
  }

  /// Shape the mm context dequantizes to; used by tests.
  std::pair<std::size_t, std::size_t> context_shape(NodeId id) const {
    const auto& n = nodes_.at(id.index);
    if (const auto* q = std::get_if<QuantizedTensor<T>>(&n.context)) return {q->rows(), q->cols()};
    throw UsageError("context_shape: node has no quantized context");
  }

 private:
  detail::Node<T>& push(OpKind kind, std::vector<std::size_t> inputs, std::size_t rows, std::size_t cols) {
    if (consumed_) throw UsageError("tape already consumed by backward()");
    detail::Node<T> n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.rows = rows;
    n.cols = cols;
    nodes_.push_back(std::move(n));
    return nodes_.back();
  }

  NodeId last_id() const noexcept { return NodeId{nodes_.size() - 1}; }

  void track_adjacency(const CsrMatrix<T>* a, int delta) {
    auto it = std::find_if(adjacency_uses_.begin(), adjacency_uses_.end(),
                           [a](const auto& e) { return e.first == a; });
    if (delta > 0) {
      if (it == adjacency_uses_.end()) {
        adjacency_uses_.emplace_back(a, 1);
        ledger_.adjacency_bytes += a->stored_bytes();
        ledger_.fp32_bytes += a->stored_bytes();
        ledger_.acquire(a->stored_bytes());
      } else {
        ++it->second;
      }
    } else if (it != adjacency_uses_.end() && --it->second == 0) {
      ledger_.release(a->stored_bytes());
      adjacency_uses_.erase(it);
    }
  }

  void release(detail::Node<T>& node) {
    if (auto* a = std::get_if<std::shared_ptr<const CsrMatrix<T>>>(&node.context)) track_adjacency(a->get(), -1);
    ledger_.release(node.context_bytes);
    node.context_bytes = 0;
    node.context = std::monostate{};
  }

  template <typename Accumulate>
  void backward_bpr(const detail::Node<T>& node, T upstream, Accumulate& accumulate) {
    const auto& ctx = std::get<detail::LossContext<T>>(node.context);
    const auto rows = dequantize_tensor(ctx.rows);
    const auto weights = dequantize_tensor(ctx.weights);
    const std::size_t n = weights.rows();
    const std::size_t d = rows.cols();
    const T inv_n = upstream / static_cast<T>(n);
    const T two_lambda = static_cast<T>(2.0 * ctx.lambda);
    DenseMatrix<T> gu(n, d), gp(n, d), gq(n, d);
    for (std::size_t t = 0; t < n; ++t) {
      const T w = weights(t, 0);
      const auto u = rows.row(t);
      const auto p = rows.row(n + t);
      const auto q = rows.row(2 * n + t);
      for (std::size_t j = 0; j < d; ++j) {
        gu(t, j) = (-w * (p[j] - q[j]) + two_lambda * u[j]) * inv_n;
        gp(t, j) = (-w * u[j] + two_lambda * p[j]) * inv_n;
        gq(t, j) = (w * u[j] + two_lambda * q[j]) * inv_n;
      }
    }
    accumulate(node.inputs[0], std::move(gu));
    accumulate(node.inputs[1], std::move(gp));
    accumulate(node.inputs[2], std::move(gq));
  }

  QuantConfig cfg_;
  std::uint64_t seed_;
  std::vector<const DenseMatrix<T>*> params_;
  std::vector<detail::Node<T>> nodes_;
  std::vector<std::pair<const CsrMatrix<T>*, std::size_t>> adjacency_uses_;
  ContextLedger ledger_;
  bool consumed_ = false;
};

}  // namespace actkg
