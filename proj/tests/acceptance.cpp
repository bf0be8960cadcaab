// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero if any fails.
// Usage: acceptance [criterion ...]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "actkg/quant_check.hpp"
#include "actkg/report.hpp"
#include "actkg/trainer.hpp"
#include "actkg/variance_probe.hpp"
#include "reference_engine.hpp"
#include "test_support.hpp"

using actkg::Aggregation;
using actkg::DenseMatrix;
using actkg::KgDataset;
using actkg::ModelConfig;
using actkg::QuantConfig;
using actkg::Rounding;
using actkg::TrainConfig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const KgDataset& default_dataset() {
  static const KgDataset ds = actkg::synth_generate(actkg::SynthSpec{}, actkg::SynthSpec{}.seed);
  return ds;
}

const ModelConfig desk_model(int bits, Rounding r = Rounding::stochastic) {
  return {3, 64, Aggregation::sum, {bits, r}};
}

TrainConfig desk_train(std::uint64_t seed) {
  TrainConfig t;
  t.batch = 256;
  t.epochs = 20;
  t.lr = 1e-3;
  t.lambda = 1e-5;
  t.seed = seed;
  return t;
}

constexpr std::array<std::uint64_t, 5> kSeeds{1, 2, 3, 4, 5};

// Desk runs shared by criteria 5, 6 and 8.
const actkg::TrainingRun<float>& desk_run(int bits, Rounding r, std::uint64_t seed) {
  static std::map<std::tuple<int, Rounding, std::uint64_t>, actkg::TrainingRun<float>> cache;
  const auto key = std::make_tuple(bits, r, seed);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, actkg::run_training<float>(default_dataset(), desk_model(bits, r), desk_train(seed))).first;
  return it->second;
}

// Criteria 1 and 2 share one sweep.
const actkg::QuantCheckReport& quant_sweep(double& seconds) {
  static double elapsed = 0.0;
  static const actkg::QuantCheckReport report = [] {
    const auto t0 = std::chrono::steady_clock::now();
    actkg::QuantCheckConfig cfg;  // 100 rows, d = 64, 1e5 draws, b in {1, 2, 4, 8}, seed 7
    auto r = actkg::verify_quantizer(cfg);
    elapsed = seconds_since(t0);
    return r;
  }();
  seconds = elapsed;
  return report;
}

Outcome criterion1() {
  double secs = 0.0;
  const auto& r = quant_sweep(secs);
  bool ok = secs < 30.0;
  std::string d;
  for (const auto& c : r.checks) {
    ok = ok && c.unbiased;
    d += "b=" + std::to_string(c.bits) + " max|bias|/band " + fmt("%.3f", c.max_bias_ratio) + " (" +
         std::to_string(c.bias_violations) + " over); ";
  }
  return {ok, d + "runtime " + fmt("%.1f", secs) + " s"};
}

Outcome criterion2() {
  double secs = 0.0;
  const auto& r = quant_sweep(secs);
  bool ok = true;
  std::string d;
  for (const auto& c : r.checks) {
    ok = ok && c.variance_ok && c.tight_ok;
    d += "b=" + std::to_string(c.bits) + " row var/bound " + fmt("%.3f", c.max_row_variance_ratio) +
         ", half-fraction " + fmt("%.4f", c.tight_min_ratio) + ".." + fmt("%.4f", c.tight_max_ratio) + "; ";
  }
  return {ok, d};
}

struct Moments {
  std::vector<double> sum, sum_sq;
  std::size_t n = 0;
  void push(const DenseMatrix<double>& g) {
    if (sum.empty()) {
      sum.assign(g.size(), 0.0);
      sum_sq.assign(g.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum[i] += g.values()[i];
      sum_sq[i] += g.values()[i] * g.values()[i];
    }
    ++n;
  }
  double mean(std::size_t i) const { return sum[i] / static_cast<double>(n); }
  double sd(std::size_t i) const {
    const double m = mean(i);
    return std::sqrt(std::max(0.0, (sum_sq[i] - static_cast<double>(n) * m * m) / static_cast<double>(n - 1)));
  }
};

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const double lambda = 1e-5, h = 1e-5;
  double worst_fd = 0.0;
  std::size_t mc_bad = 0, mc_total = 0;
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    auto prob = support::random_problem<double>(32, 8, layers, 16, 40 + layers);
    const ModelConfig exact{layers, 8, Aggregation::sum, QuantConfig::exact()};
    const auto grads = actkg::compute_gradients(prob.params, prob.adjacency, exact, prob.batch, lambda, 0).grads;

    std::vector<DenseMatrix<double>*> params{&prob.params.embeddings};
    for (auto& t : prob.params.thetas) params.push_back(&t);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto w = params[p]->values();
      const auto g = grads.grads[p].values();
      double gmax = 0.0;
      for (double v : g) gmax = std::max(gmax, std::abs(v));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + h;
        const double up = reference::loss(prob.params, prob.dense, Aggregation::sum, prob.batch, lambda);
        w[i] = keep - h;
        const double down = reference::loss(prob.params, prob.dense, Aggregation::sum, prob.batch, lambda);
        w[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(g[i]), std::abs(fd), 1e-3 * gmax});
        if (scale > 0.0) worst_fd = std::max(worst_fd, std::abs(fd - g[i]) / scale);
      }
    }

    const ModelConfig int2{layers, 8, Aggregation::sum, {2, Rounding::stochastic}};
    std::vector<Moments> m(params.size());
    for (std::uint64_t t = 0; t < 2000; ++t) {
      const auto g = actkg::compute_gradients(prob.params, prob.adjacency, int2, prob.batch, lambda, 5000 + t).grads;
      for (std::size_t p = 0; p < params.size(); ++p) m[p].push(g.grads[p]);
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto ex = grads.grads[p].values();
      for (std::size_t i = 0; i < ex.size(); ++i) {
        // Row metadata is float32; the relative slack covers one float ulp of shift.
        const double band = 4.0 * m[p].sd(i) / std::sqrt(2000.0) + 1e-6 * (1.0 + std::abs(ex[i]));
        if (std::abs(m[p].mean(i) - ex[i]) > band) ++mc_bad;
        ++mc_total;
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_fd <= 1e-4 && mc_bad == 0 && secs < 120.0;
  return {ok, "FD max rel err " + fmt("%.2e", worst_fd) + "; b=2 MC " + std::to_string(mc_bad) + "/" +
                  std::to_string(mc_total) + " outside 4 sigma; runtime " + fmt("%.1f", secs) + " s"};
}

// Context bytes of one training step computed from shapes alone.
std::size_t analytic_context_bytes(const KgDataset& ds, std::size_t layers, std::size_t d, std::size_t batch, int b,
                                   std::size_t adjacency_bytes) {
  const std::size_t n = ds.num_nodes();
  auto tensor = [b](std::size_t rows, std::size_t cols) {
    return b == 32 ? rows * cols * 4 : rows * ((cols * static_cast<std::size_t>(b) + 7) / 8 + 8);
  };
  const std::size_t relu = b == 32 ? n * d * 4 : (n * d + 7) / 8;
  return layers * (tensor(n, d) + relu) + tensor(3 * batch, d) + batch * 4 + adjacency_bytes;
}

Outcome criterion4() {
  bool formula_ok = true;
  actkg::Rng rng(4);
  for (std::size_t rows : {1u, 7u, 100u})
    for (std::size_t d : {1u, 3u, 8u, 13u, 64u})
      for (int b : {1, 2, 4, 8, 32}) {
        DenseMatrix<float> x(rows, d);
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const auto q = actkg::quantize_tensor(x, {b, Rounding::stochastic}, 1, 0);
        const std::size_t want = b == 32 ? 4 * rows * d : rows * ((d * static_cast<std::size_t>(b) + 7) / 8 + 8);
        formula_ok = formula_ok && q.stored_bytes() == want;
        if (b != 32) formula_ok = formula_ok && q.packed().size() + 8 * rows == want;
      }

  const auto& ds = default_dataset();
  const ModelConfig cfg = desk_model(32);
  TrainConfig tc;  // batch 1024
  tc.seed = 1;
  const std::array<int, 5> bits{32, 8, 4, 2, 1};
  const auto rows = actkg::bench_memory<float>(ds, cfg, tc, bits);
  const std::size_t batch = std::min(tc.batch, ds.train.size());
  const std::size_t adj = actkg::build_adjacency<float>(ds).stored_bytes();

  bool ledger_ok = true, monotone = true;
  std::string d = "ratios";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ledger_ok = ledger_ok && rows[i].memory.activation_bytes ==
                                 analytic_context_bytes(ds, cfg.layers, cfg.dim, batch, rows[i].bits, adj);
    if (i >= 2) monotone = monotone && rows[i].memory.activation_bytes < rows[i - 1].memory.activation_bytes;
    d += " b" + std::to_string(rows[i].bits) + "=" + fmt("%.2f", rows[i].memory.ratio);
  }
  const double r2 = rows[3].memory.ratio;
  const bool ok = formula_ok && ledger_ok && monotone && r2 >= 6.0 && r2 <= 11.0 && rows[0].memory.ratio == 1.0;
  return {ok, d + "; stored_bytes formula " + (formula_ok ? "exact" : "MISMATCH") + ", ledger vs shapes " +
                  (ledger_ok ? "exact" : "MISMATCH") + ", monotone " + (monotone ? "yes" : "no")};
}

Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  auto mean_recall = [](int bits) {
    double s = 0.0;
    for (const auto seed : kSeeds) s += desk_run(bits, Rounding::stochastic, seed).metrics.recall;
    return s / static_cast<double>(kSeeds.size());
  };
  const double fp32 = mean_recall(32), int8 = mean_recall(8), int2 = mean_recall(2);
  const double secs = seconds_since(t0);
  const bool ok = int8 >= 0.98 * fp32 && int2 >= 0.95 * fp32 && secs < 600.0;
  return {ok, "Recall@20 FP32 " + fmt("%.4f", fp32) + ", INT8 " + fmt("%.4f", int8) + " (" +
                  fmt("%.4f", int8 / fp32) + "x), INT2 " + fmt("%.4f", int2) + " (" + fmt("%.4f", int2 / fp32) +
                  "x); runtime " + fmt("%.0f", secs) + " s"};
}

Outcome criterion6() {
  std::size_t wins = 0;
  std::string d;
  for (const auto seed : kSeeds) {
    const double sr = desk_run(2, Rounding::stochastic, seed).final_loss();
    const double nr = desk_run(2, Rounding::nearest, seed).final_loss();
    if (sr <= nr) ++wins;
    d += "seed " + std::to_string(seed) + " SR " + fmt("%.4f", sr) + " NR " + fmt("%.4f", nr) + "; ";
  }
  return {wins >= 4, d + std::to_string(wins) + "/5 SR <= NR"};
}

Outcome criterion7() {
  const auto prob = support::random_problem<double>(32, 8, 3, 16, 77);
  auto build = [&prob](actkg::Tape<double>& tape) {
    const auto handles = actkg::register_model(tape, prob.params);
    actkg::record_batch(tape, handles, prob.adjacency, Aggregation::sum, prob.batch, 1e-5);
  };
  auto mean_extra = [&](const QuantConfig& q) {
    const auto r = actkg::gradient_variance_probe<double>(build, q, 1000, 9);
    double s = 0.0;
    for (const auto& p : r.params) s += p.extra_variance;
    return s / static_cast<double>(r.params.size());
  };
  const double v1 = mean_extra({1, Rounding::stochastic});
  const double v2 = mean_extra({2, Rounding::stochastic});
  const double v4 = mean_extra({4, Rounding::stochastic});
  const double v32 = mean_extra(QuantConfig::exact());
  const bool ok = v1 > v2 && v2 > v4 && v32 == 0.0;
  return {ok, "extra variance b1 " + fmt("%.3e", v1) + ", b2 " + fmt("%.3e", v2) + ", b4 " + fmt("%.3e", v4) +
                  ", b32 " + fmt("%.1e", v32)};
}

std::string train_report(const KgDataset& ds, const ModelConfig& cfg, const TrainConfig& tc, std::size_t& retained) {
  actkg::Trainer<float> trainer(ds, cfg, tc);
  const auto epochs = trainer.train();
  actkg::MetricsReport r;
  r.data = actkg::dataset_summary(ds);
  r.model = cfg;
  r.train = tc;
  r.test = trainer.evaluate();
  r.validation = trainer.evaluate(actkg::SplitKind::validation);
  r.memory = actkg::memory_report(epochs.front().ledger);
  for (const auto& e : epochs) {
    r.max_retained_bytes = std::max(r.max_retained_bytes, e.max_retained_bytes);
    r.loss_curve.push_back(e.mean_loss);
    r.epoch_seconds.push_back(e.seconds);
  }
  retained = std::max(retained, r.max_retained_bytes);
  return actkg::without_timing(actkg::to_json(r));
}

Outcome criterion8() {
  const auto& ds = default_dataset();
  std::size_t retained = 0;
  bool identical = true;
  for (int b : {32, 2}) {
    TrainConfig tc = desk_train(1);
    tc.epochs = 3;
    const auto cfg = desk_model(b);
    identical = identical && train_report(ds, cfg, tc, retained) == train_report(ds, cfg, tc, retained);
  }
  const std::array<int, 5> bits{32, 8, 4, 2, 1};
  const auto rows = actkg::bench_memory<float>(ds, desk_model(32), desk_train(1), bits);
  const auto table = actkg::memory_table_json(actkg::dataset_summary(ds), desk_model(32), desk_train(1), rows);
  const auto again = actkg::memory_table_json(actkg::dataset_summary(ds), desk_model(32), desk_train(1),
                                              actkg::bench_memory<float>(ds, desk_model(32), desk_train(1), bits));
  identical = identical && actkg::without_timing(table) == actkg::without_timing(again);
  for (const auto& r : rows) retained = std::max(retained, r.retained_bytes);
  for (const auto seed : kSeeds)
    for (int b : {32, 8, 2}) retained = std::max(retained, desk_run(b, Rounding::stochastic, seed).max_retained_bytes());
  return {identical && retained == 0, std::string("reports ") + (identical ? "byte-identical" : "DIFFER") +
                                          "; max retained context bytes after backward " + std::to_string(retained)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"quantizer unbiasedness", criterion1}, {"variance bound and tightness", criterion2},
      {"gradient correctness", criterion3},   {"memory accounting", criterion4},
      {"accuracy parity", criterion5},        {"stochastic vs nearest rounding", criterion6},
      {"variance scaling", criterion7},       {"determinism and lifecycle", criterion8}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
