#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "fgdcc/errors.hpp"
#include "fgdcc/trainer.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace fgdcc;

namespace {

TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.k_set = {2, 3};
  c.seed = seed;
  c.encoder.hidden = {12};
  c.encoder.output_dim = 8;
  c.autoencoder.input_dim = 8;
  c.autoencoder.hidden = {6};
  c.autoencoder.bottleneck_dim = 4;
  c.clustering.max_iters = 10;
  return c;
}

Dataset small_data(std::size_t classes = 3, std::size_t per_class = 20, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.input_dim = 6;
  s.modes_per_class.assign(classes, 2);
  s.samples_per_class.assign(classes, per_class);
  s.separation = 6.0;
  s.class_separation = 12.0;
  s.seed = seed;
  return generate_synthetic(s);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_params(const Trainer& a, const Trainer& b) {
  const auto pa = a.all_params();
  const auto pb = b.all_params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(pa[i]->value == pb[i]->value)) return false;
  }
  return true;
}

bool same_bank(const ClusterBank& a, const ClusterBank& b) {
  for (std::size_t c = 0; c < a.num_classes(); ++c) {
    for (std::size_t k : a.k_set()) {
      if (!(a.at(c, k).centroids == b.at(c, k).centroids)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("one class with one sample trains without error") {
    Dataset d(6, 1);
    d.add({{0.1, -0.2, 0.3, 0.0, 1.0, 2.0}, 0, std::nullopt});
    TrainConfig c = small_config();
    Trainer t(c, 6, 1);
    for (std::size_t e = 1; e <= 3; ++e) {
      const auto r = t.train_epoch(d, e);
      CHECK(std::isfinite(r.parent_loss));
      CHECK(r.top1 == 1.0);
      CHECK(std::isfinite(r.ae_loss));
    }
    CHECK(t.epochs_completed() == 3);
    CHECK(t.global_step() == 3);
  }

  TEST_CASE("epoch numbering and input guards") {
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    CHECK_THROWS_AS(t.train_epoch(d, 2), StateError);
    CHECK_THROWS_AS(t.train_epoch(Dataset(6, 3), 1), ConfigError);
    CHECK_THROWS_AS(t.train_epoch(small_data(4), 1), DimensionError);
    TrainConfig bad = small_config();
    bad.autoencoder.input_dim = 9;
    CHECK_THROWS_AS(Trainer(bad, 6, 3), ConfigError);
  }

  TEST_CASE("centroids stay frozen within an epoch and move at the refresh") {
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    t.bootstrap(d);
    const ClusterBank start = t.bank();
    std::size_t steps = 0;
    bool frozen = true;
    t.on_step = [&](const Trainer& tr, std::size_t) {
      ++steps;
      frozen = frozen && same_bank(tr.bank(), start);
    };
    t.train_epoch(d, 1);
    CHECK(steps == 4);  // ceil(60 / 16)
    CHECK(frozen);
    CHECK_FALSE(same_bank(t.bank(), start));
    CHECK(t.bank().history().size() == 3 * 2);
  }

  TEST_CASE("refresh period skips refreshes on off epochs") {
    const Dataset d = small_data();
    TrainConfig c = small_config();
    c.refresh_period = 2;
    Trainer t(c, 6, 3);
    t.bootstrap(d);
    const ClusterBank start = t.bank();
    t.train_epoch(d, 1);
    CHECK(same_bank(t.bank(), start));
    CHECK(t.bank().history().empty());
    t.train_epoch(d, 2);
    CHECK(t.bank().history().size() == 6);
  }

  TEST_CASE("same seed gives identical runs") {
    const Dataset d = small_data();
    Trainer a(small_config(), 6, 3);
    Trainer b(small_config(), 6, 3);
    for (std::size_t e = 1; e <= 2; ++e) CHECK(a.train_epoch(d, e) == b.train_epoch(d, e));
    CHECK(same_params(a, b));
    CHECK(same_bank(a.bank(), b.bank()));
    CHECK(a.selection_history() == b.selection_history());
    Trainer other(small_config(4), 6, 3);
    other.train_epoch(d, 1);
    CHECK_FALSE(same_params(a, other));
  }

  TEST_CASE("evaluate is side-effect free and uniform at initialisation") {
    const Dataset d = small_data(4, 25);
    Trainer t(small_config(), 6, 4);
    t.bootstrap(d);
    const auto before = t.evaluate(d, "val");
    CHECK(before == t.evaluate(d, "val"));
    CHECK(before.split == "val");
    // zero heads: every row predicts class 0
    CHECK(before.top1 == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(before.top5 == 1.0);  // top-min(5, C)
    CHECK(std::abs(before.parent_loss - std::log(4.0)) < 1e-12);
    CHECK(before.subclass_loss <= std::log(3.0) + 1e-12);
    CHECK(std::abs(before.subclass_loss - std::log(2.0)) < 1e-12);
    CHECK(before.mean_inertia > 0.0);
  }

  TEST_CASE("evaluate top-1 matches a manual count after training") {
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    for (std::size_t e = 1; e <= 3; ++e) t.train_epoch(d, e);
    const auto r = t.evaluate(d, "train_eval");
    const Matrix logits = t.head().predict_parent(t.encoder().encode(d.all_features()));
    const auto labels = d.all_labels();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits(i, c) > logits(i, best)) best = c;
      }
      hits += best == labels[i];
    }
    CHECK(r.top1 == static_cast<double>(hits) / static_cast<double>(d.size()));
    CHECK(r.parent_loss == doctest::Approx(oracle::cross_entropy(logits, labels)).epsilon(1e-10));
  }

  TEST_CASE("one step only touches the selected sub-classifier") {
    // Zero heads route every row to class 0 and the smallest k wins the tie.
    // They also pass no gradient back to the encoder on this first step.
    const Dataset d = small_data();
    TrainConfig c = small_config();
    c.batch_size = 60;
    Trainer t(c, 6, 3);
    t.bootstrap(d);
    std::vector<Matrix> before;
    for (const auto* p : std::as_const(t).all_params()) before.push_back(p->value);
    t.train_epoch(d, 1);
    const auto after = std::as_const(t).all_params();
    for (std::size_t i = 0; i < after.size(); ++i) {
      const std::string& name = after[i]->name;
      const bool changed = !(after[i]->value == before[i]);
      if (name.rfind("head.sub.", 0) == 0) {
        INFO(name);
        CHECK(changed == (name.rfind("head.sub.0.k2.", 0) == 0));
      } else if (name.rfind("head.parent", 0) == 0 || name.rfind("ae", 0) == 0) {
        INFO(name);
        CHECK(changed);
      }
    }
    CHECK(t.head().tally()[0] == std::vector<std::uint64_t>{1, 0});
  }

  TEST_CASE("centroid penalty reaches the backbone only when enabled") {
    const Dataset d = small_data();
    auto run = [&](double lambda, bool to_backbone) {
      TrainConfig c = small_config();
      c.autoencoder.lambda_penalty = lambda;
      c.penalty_to_backbone = to_backbone;
      Trainer t(c, 6, 3);
      t.train_epoch(d, 1);
      std::vector<Matrix> enc;
      for (const auto* p : std::as_const(t.encoder()).params()) enc.push_back(p->value);
      return enc;
    };
    CHECK(run(0.1, false) == run(5.0, false));
    CHECK_FALSE(run(0.1, true) == run(5.0, true));
  }

  TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    t.bootstrap(d);
    t.head().parent().weight.value(0, 0) = std::nan("");
    try {
      t.train_epoch(d, 1);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
      CHECK(e.dump().find("global_step=0") != std::string::npos);
      CHECK(e.dump().find("head_param_norm=nan") != std::string::npos);
    }
  }

  TEST_CASE("checkpoint save, load, save is byte-identical") {
    test_support::TempDir dir;
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    for (std::size_t e = 1; e <= 2; ++e) t.record_metrics(t.train_epoch(d, e));
    t.save_checkpoint(dir / "a.ckpt", "{\"x\":1}");
    CHECK(Trainer::read_checkpoint_metadata(dir / "a.ckpt") == "{\"x\":1}");
    Trainer u(small_config(), 6, 3);
    u.load_checkpoint(dir / "a.ckpt");
    u.save_checkpoint(dir / "b.ckpt", "{\"x\":1}");
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(u.epochs_completed() == 2);
    CHECK(u.metrics_history() == t.metrics_history());
    CHECK(u.head().tally() == t.head().tally());
  }

  TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    test_support::TempDir dir;
    const Dataset d = small_data();
    Trainer straight(small_config(), 6, 3);
    std::vector<MetricsRecord> ref;
    for (std::size_t e = 1; e <= 3; ++e) ref.push_back(straight.train_epoch(d, e));

    Trainer first(small_config(), 6, 3);
    first.train_epoch(d, 1);
    first.save_checkpoint(dir / "e1.ckpt");
    Trainer resumed(small_config(), 6, 3);
    resumed.load_checkpoint(dir / "e1.ckpt");
    CHECK(resumed.train_epoch(d, 2) == ref[1]);
    CHECK(resumed.train_epoch(d, 3) == ref[2]);
    CHECK(same_params(straight, resumed));
    CHECK(same_bank(straight.bank(), resumed.bank()));
    CHECK(straight.selection_history() == resumed.selection_history());
    CHECK(straight.diagnostics_history() == resumed.diagnostics_history());
  }

  TEST_CASE("checkpoint with the wrong shape names the component") {
    test_support::TempDir dir;
    Trainer t(small_config(), 6, 3);
    t.save_checkpoint(dir / "a.ckpt");
    TrainConfig wide = small_config();
    wide.encoder.hidden = {13};
    Trainer w(wide, 6, 3);
    const ClusterBank bank_before = w.bank();
    try {
      w.load_checkpoint(dir / "a.ckpt");
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("component") != std::string::npos);
      CHECK(std::string(e.what()).find("encoder") != std::string::npos);
    }
    CHECK(w.epochs_completed() == 0);
    TrainConfig more_k = small_config();
    more_k.k_set = {2, 3, 4};
    Trainer mk(more_k, 6, 3);
    CHECK_THROWS_AS(mk.load_checkpoint(dir / "a.ckpt"), DimensionError);
  }

  TEST_CASE("truncated, corrupted or foreign checkpoints are format errors") {
    test_support::TempDir dir;
    const Dataset d = small_data();
    Trainer t(small_config(), 6, 3);
    t.train_epoch(d, 1);
    t.save_checkpoint(dir / "a.ckpt");
    const std::string bytes = slurp(dir / "a.ckpt");
    Trainer u(small_config(), 6, 3);
    const std::vector<Matrix> fresh = [&] {
      std::vector<Matrix> v;
      for (const auto* p : std::as_const(u).all_params()) v.push_back(p->value);
      return v;
    }();

    for (std::size_t cut : {std::size_t{2}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1}) {
      spit(dir / "cut.ckpt", bytes.substr(0, cut));
      CHECK_THROWS_AS(u.load_checkpoint(dir / "cut.ckpt"), FormatError);
    }
    std::string version = bytes;
    version[4] = 2;
    spit(dir / "ver.ckpt", version);
    CHECK_THROWS_AS(u.load_checkpoint(dir / "ver.ckpt"), FormatError);
    std::string magic = bytes;
    magic[0] = 'X';
    spit(dir / "magic.ckpt", magic);
    CHECK_THROWS_AS(u.load_checkpoint(dir / "magic.ckpt"), FormatError);
    spit(dir / "long.ckpt", bytes + "!");
    CHECK_THROWS_AS(u.load_checkpoint(dir / "long.ckpt"), FormatError);
    CHECK_THROWS_AS(u.load_checkpoint(dir / "missing.ckpt"), FormatError);

    // failed loads leave the model untouched
    const auto now = std::as_const(u).all_params();
    for (std::size_t i = 0; i < now.size(); ++i) CHECK(now[i]->value == fresh[i]);
    CHECK(u.epochs_completed() == 0);
  }
}
