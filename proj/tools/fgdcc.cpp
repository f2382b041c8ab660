// fgdcc command-line driver.
//
//   fgdcc gen-data --config C --out P
//   fgdcc train --config C --out DIR [--resume CKPT]
//   fgdcc eval --ckpt F --data P [--topk 1,5]
//   fgdcc cluster-report DIR
//   fgdcc export-curves DIR
//
// Exit codes: 0 ok, 1 config error, 2 data/format error, 3 numerical abort.

#include <filesystem>
#include <fstream>
#include <optional>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "fgdcc/errors.hpp"
#include "fgdcc/experiment.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

std::string pct(double v) { return fmt::format("{:.4f}", v); }

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::vector<std::size_t>& topk) {
  const auto res = fgdcc::evaluate_checkpoint(ckpt, data, topk);
  std::cout << "k  top_k_accuracy\n";
  for (const auto& [k, acc] : res.topk) std::cout << fmt::format("{}  {}\n", k, pct(acc));
  std::cout << fmt::format("parent_loss {}  subclass_loss {}  ae_loss {}  mean_inertia {}\n",
                           pct(res.record.parent_loss), pct(res.record.subclass_loss), pct(res.record.ae_loss),
                           pct(res.record.mean_inertia));
  const fs::path out = ckpt.parent_path() / "eval_metrics.csv";
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + out.string());
  f << fgdcc::kMetricsHeader << "\n" << fgdcc::to_csv_row(res.record) << "\n";
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-wise deep clustering for fine-grained classification"};
  app.require_subcommand(1);

  fs::path config;
  fs::path out;
  fs::path resume;
  fs::path ckpt;
  fs::path data;
  fs::path run_dir;
  std::vector<std::size_t> topk = {1, 5};

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic feature file and its sub-label sidecar");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out, "Output feature file")->required();

  auto* train = app.add_subcommand("train", "Train into a run directory");
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a feature file");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data, "Feature file")->required();
  eval->add_option("--topk", topk, "Comma-separated k values")->delimiter(',');

  auto* report = app.add_subcommand("cluster-report", "Per-class modal k and empty-cluster summary");
  report->add_option("dir", run_dir, "Run directory")->required();

  auto* curves = app.add_subcommand("export-curves", "Write plot-ready curve CSVs");
  curves->add_option("dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) {
      fgdcc::generate_data_files(fgdcc::load_config(config), out);
      std::cout << "wrote " << out.string() << " and " << fgdcc::sublabel_path(out).string() << "\n";
    } else if (train->parsed()) {
      const auto cfg = fgdcc::load_config(config);
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const auto res = fgdcc::run_training(cfg, out, from, &std::cout);
      std::cout << fmt::format("test top1 {}  top5 {}\nfinal checkpoint {}\n", pct(res.test.top1),
                               pct(res.test.top5), res.final_checkpoint.string());
    } else if (eval->parsed()) {
      return cmd_eval(ckpt, data, topk);
    } else if (report->parsed()) {
      std::cout << fgdcc::format_cluster_report(fgdcc::cluster_report(run_dir));
    } else if (curves->parsed()) {
      for (const auto& p : fgdcc::export_curves(run_dir)) std::cout << "wrote " << p.string() << "\n";
    }
  } catch (const fgdcc::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const fgdcc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const fgdcc::LookupError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
