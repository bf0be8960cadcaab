// actkg: train, evaluate and verify KG recommenders with compressed backward context.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "actkg/checkpoint.hpp"
#include "actkg/data.hpp"
#include "actkg/quant_check.hpp"
#include "actkg/report.hpp"
#include "actkg/trainer.hpp"

namespace fs = std::filesystem;
using namespace actkg;

namespace {

struct DataOptions {
  std::string synthetic;               // "default" or a key=value spec file
  std::vector<std::string> synth_set;  // key=value overrides
  std::string data_dir;
  std::string interactions;
  std::string triples;
  std::size_t kcore = 0;
  std::uint64_t split_seed = 1;
};

struct Options {
  DataOptions data;
  ModelConfig model;
  TrainConfig train;
  std::string rounding = "stochastic";
  std::string aggregation = "sum";
  std::string out;
  std::string checkpoint;
  // verify-quant
  std::vector<int> bits_list;
  std::size_t trials = 100000;
  std::size_t rows = 100;
  std::uint64_t quant_seed = 7;
  // compare-rounding
  std::size_t seeds = 5;
};

fs::path out_dir() {
  const char* env = std::getenv("ACTKG_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path output_path(const std::string& given, const std::string& fallback) {
  if (!given.empty()) return given;
  return out_dir() / fallback;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

SynthSpec synth_spec(const DataOptions& d) {
  SynthSpec spec;
  if (d.synthetic != "default") {
    std::ifstream in(d.synthetic);
    if (!in) throw IoError("cannot open synthetic spec " + d.synthetic);
    spec.apply(in, d.synthetic);
  }
  for (const auto& kv : d.synth_set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--synth-set expects key=value, got '" + kv + "'");
    try {
      spec.set(kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value in --synth-set " + kv);
    }
  }
  spec.validate();
  return spec;
}

int source_count(const DataOptions& d) {
  return static_cast<int>(!d.synthetic.empty()) + static_cast<int>(!d.data_dir.empty()) +
         static_cast<int>(!d.interactions.empty());
}

void check_source(const DataOptions& d) {
  if (source_count(d) != 1)
    throw CLI::ValidationError("data", "give exactly one of --synthetic, --data-dir, --interactions");
  if (!d.interactions.empty() && d.triples.empty())
    throw CLI::ValidationError("data", "--interactions needs --triples");
  if (d.interactions.empty() && (!d.triples.empty() || d.kcore > 0))
    throw CLI::ValidationError("data", "--triples and --kcore only apply with --interactions");
  if (d.synthetic.empty() && !d.synth_set.empty())
    throw CLI::ValidationError("data", "--synth-set only applies with --synthetic");
}

std::pair<KgDataset, Json> load_data(const DataOptions& d) {
  check_source(d);
  Json desc;
  KgDataset ds;
  if (!d.synthetic.empty()) {
    const auto spec = synth_spec(d);
    ds = synth_generate(spec, spec.seed);
    desc = {{"source", "synthetic"},
            {"spec",
             {{"users", spec.users},
              {"items", spec.items},
              {"entities", spec.entities},
              {"relations", spec.relations},
              {"interactions_per_user", spec.interactions_per_user},
              {"groups", spec.groups},
              {"in_group", spec.in_group},
              {"attributes_per_item", spec.attributes_per_item},
              {"kg_in_group", spec.kg_in_group},
              {"popularity_skew", spec.popularity_skew},
              {"seed", spec.seed}}}};
  } else if (!d.data_dir.empty()) {
    ds = load_dataset(d.data_dir);
    desc = {{"source", "directory"}, {"path", d.data_dir}};
  } else {
    ds = load_raw_dataset(d.interactions, d.triples, d.kcore, d.split_seed);
    desc = {{"source", "tsv"},
            {"interactions", d.interactions},
            {"triples", d.triples},
            {"kcore", d.kcore},
            {"split_seed", d.split_seed}};
  }
  desc["summary"] = dataset_summary(ds);
  return {std::move(ds), std::move(desc)};
}

void finalize(Options& o) {
  o.model.quant.rounding = parse_rounding(o.rounding);
  o.model.aggregation = parse_aggregation(o.aggregation);
  o.model.validate();
  o.train.validate();
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--synthetic", d.synthetic, "Synthetic dataset: 'default' or a key=value spec file");
  cmd->add_option("--synth-set", d.synth_set, "Override one synthetic spec key (key=value)");
  cmd->add_option("--data-dir", d.data_dir, "Dataset directory written by gen-data");
  cmd->add_option("--interactions", d.interactions, "Interaction TSV (user<TAB>item)");
  cmd->add_option("--triples", d.triples, "KG triple TSV (head<TAB>relation<TAB>tail)");
  cmd->add_option("--kcore", d.kcore, "k-core filter for --interactions (0 disables)");
  cmd->add_option("--split-seed", d.split_seed, "Seed of the train/validation/test split for --interactions");
}

void add_model_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--bits", o.model.quant.bits, "Context bit width (1, 2, 4, 8, 32)")
      ->check(CLI::IsMember({1, 2, 4, 8, 32}));
  cmd->add_option("--rounding", o.rounding, "stochastic or nearest")
      ->check(CLI::IsMember({"stochastic", "nearest", "sr", "nr"}));
  cmd->add_option("--layers", o.model.layers, "Graph convolution layers")->check(CLI::PositiveNumber);
  cmd->add_option("--dim", o.model.dim, "Embedding width")->check(CLI::PositiveNumber);
  cmd->add_option("--aggregation", o.aggregation, "Readout: sum or last")->check(CLI::IsMember({"sum", "last"}));
}

void add_train_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--batch", o.train.batch, "Minibatch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.train.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", o.train.epochs, "Training epochs");
  cmd->add_option("--seed", o.train.seed, "Training seed");
  cmd->add_option("--lambda", o.train.lambda, "L2 weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--k", o.train.k, "Evaluation cutoff K")->check(CLI::PositiveNumber);
}

int run_train(Options& o) {
  finalize(o);
  auto [ds, desc] = load_data(o.data);
  Trainer<float> trainer(ds, o.model, o.train);
  MetricsReport report;
  report.data = desc;
  report.model = o.model;
  report.train = o.train;
  for (std::size_t e = 0; e < o.train.epochs; ++e) {
    const auto stats = trainer.train_epoch();
    if (e == 0) report.memory = memory_report(stats.ledger);
    report.max_retained_bytes = std::max(report.max_retained_bytes, stats.max_retained_bytes);
    report.loss_curve.push_back(stats.mean_loss);
    report.epoch_seconds.push_back(stats.seconds);
    std::fprintf(stderr, "epoch %zu loss %.6f (%.2fs)\n", stats.epoch, stats.mean_loss, stats.seconds);
  }
  report.test = trainer.evaluate(SplitKind::test);
  report.validation = trainer.evaluate(SplitKind::validation);
  const auto report_path = output_path(o.out, "train.json");
  const auto ckpt_path = output_path(o.checkpoint, "model.ckpt");
  write_text(report_path, to_json(report).dump(2));
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  save_checkpoint(ckpt_path, trainer.params());
  std::printf("recall@%zu %.4f ndcg@%zu %.4f ratio %.3f -> %s\n", o.train.k, report.test.recall, o.train.k,
              report.test.ndcg, report.memory.ratio, report_path.string().c_str());
  return report.max_retained_bytes == 0 ? 0 : 1;
}

int run_eval(Options& o) {
  finalize(o);
  if (o.checkpoint.empty()) throw CLI::ValidationError("--checkpoint", "eval needs --checkpoint");
  auto [ds, desc] = load_data(o.data);
  const auto params = load_checkpoint<float>(o.checkpoint);
  if (params.num_nodes() != ds.num_nodes())
    throw DimensionError("checkpoint has " + std::to_string(params.num_nodes()) + " nodes, dataset has " +
                         std::to_string(ds.num_nodes()));
  const auto adjacency = build_adjacency<float>(ds);
  const auto readout = infer(params, adjacency, o.model.aggregation);
  const auto test = evaluate(ds, readout, o.train.k, SplitKind::test);
  const auto validation = evaluate(ds, readout, o.train.k, SplitKind::validation);
  Json j{{"command", "eval"},
         {"config",
          {{"data", desc}, {"checkpoint", o.checkpoint}, {"aggregation", to_string(o.model.aggregation)}, {"k", o.train.k}}},
         {"metrics", {{"test", to_json(test, o.train.k)}, {"validation", to_json(validation, o.train.k)}}}};
  const auto path = output_path(o.out, "eval.json");
  write_text(path, j.dump(2));
  std::printf("recall@%zu %.4f ndcg@%zu %.4f -> %s\n", o.train.k, test.recall, o.train.k, test.ndcg,
              path.string().c_str());
  return 0;
}

int run_bench_memory(Options& o) {
  finalize(o);
  auto [ds, desc] = load_data(o.data);
  const std::vector<int> bits = o.bits_list.empty() ? std::vector<int>{32, 8, 4, 2, 1} : o.bits_list;
  const auto rows = bench_memory<float>(ds, o.model, o.train, bits);
  bool ok = true;
  std::printf("%4s %14s %14s %8s\n", "bits", "act_bytes", "fp32_bytes", "ratio");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::printf("%4d %14zu %14zu %8.3f\n", r.bits, r.memory.activation_bytes, r.memory.fp32_bytes, r.memory.ratio);
    if (r.retained_bytes != 0) ok = false;
    if (i > 0 && rows[i - 1].bits > r.bits && !(r.memory.activation_bytes < rows[i - 1].memory.activation_bytes))
      ok = false;
  }
  const auto path = output_path(o.out, "bench-memory.json");
  auto j = memory_table_json(desc, o.model, o.train, rows);
  j["passed"] = ok;
  write_text(path, j.dump(2));
  return ok ? 0 : 1;
}

int run_verify_quant(Options& o) {
  QuantCheckConfig cfg;
  if (!o.bits_list.empty()) cfg.bits = o.bits_list;
  cfg.rounding = parse_rounding(o.rounding);
  cfg.trials = o.trials;
  cfg.rows = o.rows;
  cfg.dim = o.model.dim;
  cfg.seed = o.quant_seed;
  const auto report = verify_quantizer(cfg);
  for (const auto& c : report.checks)
    std::printf("bits %2d %s\n", c.bits, c.passed() ? "pass" : "FAIL");
  const auto path = output_path(o.out, "verify-quant.json");
  write_text(path, to_json(report).dump(2));
  return report.passed() ? 0 : 1;
}

int run_compare_rounding(Options& o) {
  finalize(o);
  if (o.seeds < 1) throw CLI::ValidationError("--seeds", "need at least one seed");
  auto [ds, desc] = load_data(o.data);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.seeds; ++i) seeds.push_back(o.train.seed + i);
  const auto pairs = compare_rounding<float>(ds, o.model, o.train, seeds);
  for (const auto& p : pairs)
    std::printf("seed %llu stochastic %.6f nearest %.6f\n", static_cast<unsigned long long>(p.seed), p.stochastic_loss,
                p.nearest_loss);
  const auto path = output_path(o.out, "compare-rounding.json");
  write_text(path, rounding_json(desc, o.model, o.train, pairs).dump(2));
  return 0;
}

int run_gen_data(Options& o) {
  if (o.data.synthetic.empty()) o.data.synthetic = "default";
  if (source_count(o.data) != 1) throw CLI::ValidationError("gen-data", "gen-data only takes --synthetic");
  const auto spec = synth_spec(o.data);
  const auto ds = synth_generate(spec, spec.seed);
  const fs::path dir = o.out.empty() ? out_dir() / "synthetic" : fs::path(o.out);
  write_dataset(ds, dir);
  std::printf("%zu users, %zu items, %zu entities, %zu interactions, %zu triples -> %s\n", ds.num_users,
              ds.num_items, ds.num_entities, ds.num_interactions(), ds.triples.size(), dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and verify knowledge-graph recommenders with quantized backward context"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file with option defaults");

  Options o;
  auto* train = app.add_subcommand("train", "Train a model; write a metrics report and a checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* bench = app.add_subcommand("bench-memory", "One step per bit width; activation memory table");
  auto* verify = app.add_subcommand("verify-quant", "Monte-Carlo check of quantizer bias and variance");
  auto* compare = app.add_subcommand("compare-rounding", "Paired stochastic vs nearest rounding runs");
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset to a directory");

  for (auto* cmd : {train, eval, bench, compare}) {
    add_data_options(cmd, o.data);
    add_model_options(cmd, o);
    add_train_options(cmd, o);
    cmd->add_option("--out", o.out, "Report path (default $ACTKG_OUT_DIR/<command>.json)");
  }
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default $ACTKG_OUT_DIR/model.ckpt)");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->check(CLI::ExistingFile);
  bench->add_option("--bit-list", o.bits_list, "Bit widths to measure (default 32 8 4 2 1)")
      ->check(CLI::IsMember({1, 2, 4, 8, 32}));
  compare->add_option("--seeds", o.seeds, "Number of paired seeds, starting at --seed");

  verify->add_option("--bits", o.bits_list, "Bit widths (default 1 2 4 8)")->check(CLI::IsMember({1, 2, 4, 8, 32}));
  verify->add_option("--rounding", o.rounding, "stochastic or nearest")
      ->check(CLI::IsMember({"stochastic", "nearest", "sr", "nr"}));
  verify->add_option("--trials", o.trials, "Draws per row")->check(CLI::Range(std::size_t{2}, std::size_t{100000000}));
  verify->add_option("--rows", o.rows, "Random rows")->check(CLI::PositiveNumber);
  verify->add_option("--dim", o.model.dim, "Row width")->check(CLI::Range(3, 1 << 20));
  verify->add_option("--seed", o.quant_seed, "Seed (default 7)");
  verify->add_option("--out", o.out, "Report path (default $ACTKG_OUT_DIR/verify-quant.json)");

  gen->add_option("--synthetic", o.data.synthetic, "'default' or a key=value spec file");
  gen->add_option("--synth-set", o.data.synth_set, "Override one synthetic spec key (key=value)");
  gen->add_option("--out", o.out, "Output directory (default $ACTKG_OUT_DIR/synthetic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return run_train(o);
    if (*eval) return run_eval(o);
    if (*bench) return run_bench_memory(o);
    if (*verify) return run_verify_quant(o);
    if (*compare) return run_compare_rounding(o);
    if (*gen) return run_gen_data(o);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
