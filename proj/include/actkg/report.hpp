#pragma once

// JSON documents written by the command-line tool. Wall-clock values live only under a
// top-level "timing" object so reports can be compared byte-for-byte without it.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "actkg/quant_check.hpp"
#include "actkg/trainer.hpp"

namespace actkg {

using Json = nlohmann::ordered_json;

inline Json to_json(const QuantConfig& q) { return {{"bits", q.bits}, {"rounding", to_string(q.rounding)}}; }

inline Json to_json(const ModelConfig& m) {
  return {{"layers", m.layers},
          {"dim", m.dim},
          {"aggregation", to_string(m.aggregation)},
          {"bits", m.quant.bits},
          {"rounding", to_string(m.quant.rounding)}};
}

inline Json to_json(const TrainConfig& t) {
  return {{"lr", t.lr}, {"batch", t.batch}, {"epochs", t.epochs}, {"seed", t.seed}, {"lambda", t.lambda}, {"k", t.k}};
}

inline Json to_json(const RankingMetrics& m, std::size_t k) {
  return {{"recall@" + std::to_string(k), m.recall}, {"ndcg@" + std::to_string(k), m.ndcg}, {"users", m.users}};
}

inline Json to_json(const MemoryReport& m) {
  return {{"activation_bytes", m.activation_bytes},
          {"fp32_bytes", m.fp32_bytes},
          {"compression_ratio", m.ratio},
          {"quantized_bytes", m.quantized_bytes},
          {"mask_bytes", m.mask_bytes},
          {"adjacency_bytes", m.adjacency_bytes}};
}

inline Json dataset_summary(const KgDataset& ds) {
  return {{"users", ds.num_users},
          {"items", ds.num_items},
          {"entities", ds.num_entities},
          {"relations", ds.relations.size()},
          {"train", ds.train.size()},
          {"validation", ds.validation.size()},
          {"test", ds.test.size()},
          {"triples", ds.triples.size()}};
}

struct MetricsReport {
  std::string command = "train";
  Json data;  // source description and dataset summary
  ModelConfig model;
  TrainConfig train;
  RankingMetrics test;
  RankingMetrics validation;
  MemoryReport memory;
  std::size_t max_retained_bytes = 0;
  std::vector<double> loss_curve;
  std::vector<double> epoch_seconds;
};

inline Json to_json(const MetricsReport& r) {
  Json epochs = Json::array();
  for (const double s : r.epoch_seconds) epochs.push_back(s);
  double median = 0.0;
  {
    std::vector<EpochStats> stats;
    for (std::size_t i = 0; i < r.epoch_seconds.size(); ++i) {
      EpochStats e;
      e.epoch = i + 1;
      e.seconds = r.epoch_seconds[i];
      stats.push_back(e);
    }
    median = median_epoch_seconds(stats);
  }
  Json memory = to_json(r.memory);
  memory["retained_bytes_after_backward"] = r.max_retained_bytes;
  return {{"command", r.command},
          {"config", {{"data", r.data}, {"model", to_json(r.model)}, {"train", to_json(r.train)}}},
          {"metrics", {{"test", to_json(r.test, r.train.k)}, {"validation", to_json(r.validation, r.train.k)}}},
          {"memory", memory},
          {"loss_curve", r.loss_curve},
          {"timing", {{"epoch_seconds", epochs}, {"median_epoch_seconds", median}}}};
}

inline Json to_json(const QuantCheckReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    Json j{{"bits", c.bits}, {"passed", c.passed()}};
    if (c.bits == 32) {
      j["exact_round_trip"] = c.exact;
    } else if (r.config.rounding == Rounding::nearest) {
      j["bins"] = c.bins;
      j["deterministic"] = c.deterministic;
      j["max_error_over_half_step"] = c.max_nearest_error_ratio;
    } else {
      j["bins"] = c.bins;
      j["unbiased"] = c.unbiased;
      j["max_bias_over_band"] = c.max_bias_ratio;
      j["bias_violations"] = c.bias_violations;
      j["variance_within_bound"] = c.variance_ok;
      j["max_element_variance_over_bound"] = c.max_element_variance_ratio;
      j["max_row_variance_over_bound"] = c.max_row_variance_ratio;
      j["tight"] = c.tight_ok;
      j["half_fraction_variance_over_bound"] = {{"min", c.tight_min_ratio}, {"max", c.tight_max_ratio}};
      j["half_fraction_row_variance_over_bound"] = c.tight_row_ratio;
    }
    checks.push_back(j);
  }
  return {{"command", "verify-quant"},
          {"config",
           {{"rounding", to_string(r.config.rounding)},
            {"rows", r.config.rows},
            {"dim", r.config.dim},
            {"trials", r.config.trials},
            {"seed", r.config.seed},
            {"sigmas", r.config.sigmas},
            {"variance_slack", r.config.variance_slack},
            {"tightness_tolerance", r.config.tightness_tolerance}}},
          {"passed", r.passed()},
          {"checks", checks}};
}

inline Json memory_table_json(const Json& data, const ModelConfig& model, const TrainConfig& train,
                              const std::vector<MemoryRow>& rows) {
  Json table = Json::array();
  Json timing = Json::array();
  for (const auto& r : rows) {
    Json j{{"bits", r.bits}};
    j.update(to_json(r.memory));
    j["retained_bytes_after_backward"] = r.retained_bytes;
    table.push_back(j);
    timing.push_back({{"bits", r.bits}, {"step_seconds", r.seconds}});
  }
  return {{"command", "bench-memory"},
          {"config", {{"data", data}, {"model", to_json(model)}, {"train", to_json(train)}}},
          {"table", table},
          {"timing", {{"steps", timing}}}};
}

inline Json rounding_json(const Json& data, const ModelConfig& model, const TrainConfig& train,
                          const std::vector<RoundingPair>& pairs) {
  Json runs = Json::array();
  std::size_t sr_wins = 0;
  for (const auto& p : pairs) {
    if (p.stochastic_loss <= p.nearest_loss) ++sr_wins;
    runs.push_back({{"seed", p.seed},
                    {"stochastic", {{"final_loss", p.stochastic_loss}, {"metrics", to_json(p.stochastic, train.k)},
                                    {"loss_curve", p.stochastic_curve}}},
                    {"nearest", {{"final_loss", p.nearest_loss}, {"metrics", to_json(p.nearest, train.k)},
                                 {"loss_curve", p.nearest_curve}}}});
  }
  return {{"command", "compare-rounding"},
          {"config", {{"data", data}, {"model", to_json(model)}, {"train", to_json(train)}}},
          {"runs", runs},
          {"stochastic_not_worse", sr_wins},
          {"pairs", pairs.size()}};
}

/// Serialized report with the timing subtree removed, for reproducibility checks.
inline std::string without_timing(Json j) {
  j.erase("timing");
  return j.dump(2);
}

}  // namespace actkg
