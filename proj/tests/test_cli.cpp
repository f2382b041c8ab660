#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "fgdcc/errors.hpp"
#include "fgdcc/experiment.hpp"
#include "support/temp_dir.hpp"

using namespace fgdcc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_json() {
  return json{
      {"seed", 5},
      {"data",
       {{"num_classes", 3},
        {"input_dim", 6},
        {"modes_per_class", {2, 3, 2}},
        {"samples_per_class", {40, 30, 12}},
        {"separation", 6.0},
        {"class_separation", 12.0}}},
      {"upsample", {{"min_count", 20}}},
      {"model", {{"encoder_hidden", {12}}, {"feature_dim", 8}, {"ae_hidden", {6}}, {"bottleneck_dim", 4}}},
      {"train", {{"epochs", 2}, {"batch_size", 16}, {"k_set", {2, 3}}, {"checkpoint_every", 1}}},
  };
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Runs the CLI binary; returns its exit status.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + FGDCC_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

class SeedEnv {
 public:
  explicit SeedEnv(const char* value) { ::setenv("FGDCC_SEED", value, 1); }
  ~SeedEnv() { ::unsetenv("FGDCC_SEED"); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config: defaults, round trip and seed propagation") {
    const ExperimentConfig c = parse_config(small_json());
    CHECK(c.seed == 5);
    CHECK(c.train.seed == 5);
    CHECK(c.synthetic.seed == 5);
    CHECK(c.upsample_options.seed == 5);
    CHECK(c.train.autoencoder.input_dim == 8);
    CHECK(c.train.k_set == std::vector<std::size_t>{2, 3});
    CHECK(c.split == std::array<double, 3>{0.8, 0.1, 0.1});
    CHECK(to_json(parse_config(to_json(c))) == to_json(c));
    const ExperimentConfig d = parse_config(json::object());
    CHECK(d.train.k_set == std::vector<std::size_t>{2, 3, 4, 5});
  }

  TEST_CASE("config: unknown keys and wrong types are rejected") {
    json j = small_json();
    j["train"]["epoch"] = 3;
    CHECK_THROWS_WITH_AS(parse_config(j), "config: unknown key train.epoch", ConfigError);
    j = small_json();
    j["extra"] = 1;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = small_json();
    j["train"]["epochs"] = "two";
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = small_json();
    j["train"]["epochs"] = -1;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = small_json();
    j["model"]["reconstruction"] = "l1";
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = small_json();
    j["train"]["k_set"] = {3, 2};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    j = small_json();
    j["train"]["epochs"] = 0;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
    CHECK_THROWS_AS(parse_config(json::array()), ConfigError);
  }

  TEST_CASE("config: FGDCC_SEED overrides the file seed") {
    test_support::TempDir dir;
    spit(dir / "c.json", small_json().dump());
    {
      SeedEnv env("77");
      const auto c = load_config(dir / "c.json");
      CHECK(c.seed == 77);
      CHECK(c.train.seed == 77);
      CHECK(c.synthetic.seed == 77);
    }
    CHECK(load_config(dir / "c.json").seed == 5);
    {
      SeedEnv env("12x");
      CHECK_THROWS_AS(load_config(dir / "c.json"), ConfigError);
    }
    spit(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  }

  TEST_CASE("gen-data writes identical files and a sub-label sidecar") {
    test_support::TempDir dir;
    const ExperimentConfig c = parse_config(small_json());
    generate_data_files(c, dir / "a.fgdc");
    generate_data_files(c, dir / "b.fgdc");
    CHECK(slurp(dir / "a.fgdc") == slurp(dir / "b.fgdc"));
    const Dataset loaded = load_feature_file(dir / "a.fgdc");
    const Dataset direct = load_experiment_data(c);
    CHECK(loaded.all_features() == direct.all_features());
    CHECK(loaded.all_labels() == direct.all_labels());
    const auto side = lines(sublabel_path(dir / "a.fgdc"));
    REQUIRE(side.size() == direct.size() + 1);
    CHECK(side[0] == "index,parent,sublabel");
    for (std::size_t i = 0; i < direct.size(); ++i) {
      CHECK(side[i + 1] ==
            std::to_string(i) + "," + std::to_string(direct[i].parent_label) + "," +
                std::to_string(*direct[i].planted_sublabel));
    }
  }

  TEST_CASE("two-epoch run writes the expected tables") {
    test_support::TempDir dir;
    const ExperimentConfig c = parse_config(small_json());
    const auto res = run_training(c, dir.path());
    for (const char* f : {"config.json", "metrics.csv", "cluster_stats.csv", "selection.csv", "diagnostics.csv",
                          "test.fgdc", "test_metrics.csv", "checkpoints/epoch_0001.ckpt", "checkpoints/epoch_0002.ckpt",
                          "checkpoints/final.ckpt"}) {
      INFO(f);
      CHECK(fs::exists(dir / f));
    }
    const auto m = lines(dir / "metrics.csv");
    REQUIRE(m.size() == 5);
    CHECK(m[0] == "epoch,split,parent_loss,top1,top5,subclass_loss,ae_loss,mean_inertia,empty_fixes,lr");
    const auto recs = read_metrics_csv(dir / "metrics.csv");
    CHECK(recs[0].split == "train");
    CHECK(recs[1].split == "val");
    CHECK(recs[2].epoch == 2);
    CHECK(lines(dir / "cluster_stats.csv")[0] == "epoch,class_id,k,inertia,empty_fixes,pop_0,pop_1,pop_2");
    CHECK(lines(dir / "cluster_stats.csv").size() == 1 + 2 * 3 * 2);
    CHECK(lines(dir / "selection.csv")[0] == "epoch,class,k,count");
    CHECK(lines(dir / "diagnostics.csv").size() == 3);
    CHECK(res.test.split == "test");
    CHECK(parse_config(json::parse(slurp(dir / "config.json"))).seed == 5);
  }

  TEST_CASE("resuming reproduces the uninterrupted tables") {
    test_support::TempDir dir;
    json j = small_json();
    j["train"]["epochs"] = 3;
    const ExperimentConfig c = parse_config(j);
    run_training(c, dir / "full");
    run_training(c, dir / "resumed", dir / "full" / "checkpoints" / "epoch_0001.ckpt");
    for (const char* f : {"metrics.csv", "cluster_stats.csv", "selection.csv", "diagnostics.csv", "test_metrics.csv"}) {
      INFO(f);
      CHECK(slurp(dir / "full" / f) == slurp(dir / "resumed" / f));
    }
    CHECK(slurp(dir / "full/checkpoints/final.ckpt") == slurp(dir / "resumed/checkpoints/final.ckpt"));

    json other = j;
    other["train"]["ae_lr"] = 0.002;
    CHECK_THROWS_AS(run_training(parse_config(other), dir / "x", dir / "full/checkpoints/epoch_0001.ckpt"),
                    ConfigError);
  }

  TEST_CASE("cluster-report aggregates hand-written tables") {
    test_support::TempDir dir;
    spit(dir / "cluster_stats.csv",
         "epoch,class_id,k,inertia,empty_fixes,pop_0,pop_1,pop_2\n"
         "1,0,2,1.5,1,3,4,\n1,0,3,1.0,0,2,2,3\n1,1,2,2.0,2,1,6,\n1,1,3,1.2,3,1,1,5\n"
         "2,0,2,1.4,0,3,4,\n2,0,3,0.9,1,2,2,3\n2,1,2,1.9,0,1,6,\n2,1,3,1.1,1,1,1,5\n"
         "1,2,2,0,0,0,0,\n1,2,3,0,0,0,0,0\n");
    spit(dir / "selection.csv", "epoch,class,k,count\n1,0,2,3\n1,0,3,1\n2,0,3,2\n1,1,3,2\n2,1,2,2\n");
    const auto r = cluster_report(dir.path());
    REQUIRE(r.classes.size() == 3);
    CHECK(r.classes[0].modal_k == 2);  // 3 vs 3: tie to the smaller k
    CHECK(r.classes[0].selections == 6);
    CHECK(r.classes[1].modal_k == 2);  // 2 vs 2
    CHECK_FALSE(r.classes[2].modal_k.has_value());
    REQUIRE(r.empty.size() == 2);
    // k=2: (1 + 2 + 0 + 0 + 0) / 2 epochs; k=3: (0 + 3 + 1 + 1 + 0) / 2
    CHECK(r.empty[0].k == 2);
    CHECK(r.empty[0].mean_empty_fixes_per_epoch == 1.5);
    CHECK(r.empty[1].mean_empty_fixes_per_epoch == 2.5);
    const std::string text = format_cluster_report(r);
    CHECK(text.find("no data") != std::string::npos);

    spit(dir / "selection.csv", "epoch,class,k,count\n1,0,3,4\n2,0,2,1\n");
    CHECK(cluster_report(dir.path()).classes[0].modal_k == 3);
    spit(dir / "cluster_stats.csv", "wrong header\n");
    CHECK_THROWS_AS(cluster_report(dir.path()), FormatError);
  }

  TEST_CASE("export-curves reshapes metrics into per-series rows") {
    test_support::TempDir dir;
    const ExperimentConfig c = parse_config(small_json());
    run_training(c, dir.path());
    const auto files = export_curves(dir.path());
    REQUIRE(files.size() == 4);
    const auto metrics = read_metrics_csv(dir / "metrics.csv");
    // species: 3 metrics × 2 splits × 2 epochs; the rest: 1 × 2 × 2
    const std::size_t expect[4] = {12, 4, 4, 4};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto l = lines(files[i]);
      CHECK(l[0] == "epoch,value,series");
      CHECK(l.size() == expect[i] + 1);
    }
    const auto sub = lines(dir / "curves_subclass_loss.csv");
    std::size_t matched = 0;
    for (std::size_t i = 1; i < sub.size(); ++i) {
      std::istringstream row(sub[i]);
      std::string epoch, value, series;
      std::getline(row, epoch, ',');
      std::getline(row, value, ',');
      std::getline(row, series, ',');
      for (const auto& m : metrics) {
        if (std::to_string(m.epoch) == epoch && "subclass_loss_" + m.split == series && std::stod(value) == m.subclass_loss) {
          ++matched;
        }
      }
    }
    CHECK(matched == 4);
  }

  TEST_CASE("evaluating a checkpoint matches the run's test metrics") {
    test_support::TempDir dir;
    const ExperimentConfig c = parse_config(small_json());
    const auto res = run_training(c, dir.path());
    const std::vector<std::size_t> ks = {1, 2, 3};
    const auto ev = evaluate_checkpoint(res.final_checkpoint, dir / "test.fgdc", ks);
    CHECK(ev.record == res.test);
    CHECK(ev.topk.at(1) == res.test.top1);
    CHECK(ev.topk.at(3) == 1.0);
    CHECK(ev.topk.at(2) >= ev.topk.at(1));
    CHECK_THROWS_AS(evaluate_checkpoint(res.final_checkpoint, dir / "test.fgdc", std::vector<std::size_t>{4}),
                    ConfigError);
  }

  TEST_CASE("binary: subcommands and exit codes") {
    test_support::TempDir dir;
    spit(dir / "c.json", small_json().dump());
    const fs::path log = dir / "log.txt";

    CHECK(cli("gen-data --config " + (dir / "c.json").string() + " --out " + (dir / "d.fgdc").string(), log) == 0);
    CHECK(fs::exists(dir / "d.fgdc.sublabels.csv"));

    CHECK(cli("train --config " + (dir / "c.json").string() + " --out " + (dir / "run").string(), log) == 0);
    CHECK(slurp(log).find("epoch 2/2") != std::string::npos);

    CHECK(cli("eval --ckpt " + (dir / "run/checkpoints/final.ckpt").string() + " --data " +
                  (dir / "run/test.fgdc").string() + " --topk 1,3",
              log) == 0);
    const auto eval_rows = lines(dir / "run/checkpoints/eval_metrics.csv");
    REQUIRE(eval_rows.size() == 2);
    CHECK(eval_rows[1] == lines(dir / "run/test_metrics.csv")[1]);

    CHECK(cli("cluster-report " + (dir / "run").string(), log) == 0);
    CHECK(slurp(log).find("modal_k") != std::string::npos);
    CHECK(cli("export-curves " + (dir / "run").string(), log) == 0);
    CHECK(fs::exists(dir / "run/curves_inertia.csv"));

    SUBCASE("config errors exit 1") {
      json bad = small_json();
      bad["train"]["bogus"] = true;
      spit(dir / "bad.json", bad.dump());
      CHECK(cli("train --config " + (dir / "bad.json").string() + " --out " + (dir / "r2").string(), log) == 1);
      CHECK(slurp(log).find("unknown key train.bogus") != std::string::npos);
      CHECK(cli("train --out " + (dir / "r2").string(), log) == 1);
      CHECK(cli("no-such-command", log) == 1);
      CHECK(cli("eval --ckpt " + (dir / "run/checkpoints/final.ckpt").string() + " --data " +
                    (dir / "run/test.fgdc").string() + " --topk 9",
                log) == 1);
    }
    SUBCASE("data and format errors exit 2") {
      spit(dir / "junk.fgdc", "not a feature file");
      CHECK(cli("eval --ckpt " + (dir / "run/checkpoints/final.ckpt").string() + " --data " +
                    (dir / "junk.fgdc").string(),
                log) == 2);
      CHECK(cli("cluster-report " + (dir / "nowhere").string(), log) == 2);
    }
    SUBCASE("numerical abort exits 3 and leaves a dump") {
      json hot = small_json();
      hot["train"]["start_lr"] = 1e300;
      hot["train"]["peak_lr"] = 1e300;
      hot["train"]["ae_lr"] = 1e300;
      spit(dir / "hot.json", hot.dump());
      CHECK(cli("train --config " + (dir / "hot.json").string() + " --out " + (dir / "hot").string(), log) == 3);
      CHECK(fs::exists(dir / "hot/nan_dump.txt"));
      CHECK(slurp(log).find("nan_dump.txt") != std::string::npos);
    }
  }
}
