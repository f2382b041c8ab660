#include "fgdcc/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

#include "fgdcc/errors.hpp"

namespace fgdcc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

template <typename T>
bool matches(const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
  } else if constexpr (std::is_floating_point_v<T>) {
    return v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v.is_string();
  } else if constexpr (is_vector<T>::value) {
    if (!v.is_array()) return false;
    for (const auto& e : v) {
      if (!matches<typename T::value_type>(e)) return false;
    }
    return true;
  } else {
    static_assert(sizeof(T) == 0, "unsupported config type");
  }
}

// One JSON object; every key read is marked so leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config: {} must be an object", name_));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!matches<T>(*it)) throw ConfigError(fmt::format("config: {}.{} has the wrong type", name_, key));
    out = it->template get<T>();
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("config: unknown key {}.{}", name_, key));
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

ReconstructionLoss parse_reconstruction(const std::string& s) {
  if (s == "smooth_l1") return ReconstructionLoss::kSmoothL1;
  if (s == "l2") return ReconstructionLoss::kL2;
  throw ConfigError(fmt::format("config: model.reconstruction must be smooth_l1 or l2, got {}", s));
}

SelectionMode parse_selection(const std::string& s) {
  if (s == "per_class") return SelectionMode::kPerClass;
  if (s == "global") return SelectionMode::kGlobal;
  throw ConfigError(fmt::format("config: train.selection must be per_class or global, got {}", s));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& expected_header_prefix) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(expected_header_prefix, 0) != 0) {
    throw FormatError(fmt::format("{}: unexpected header", path.string()));
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv(line));
  }
  return rows;
}

template <typename T>
T parse_cell(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
      v = std::stod(s, &used);
    } else {
      v = static_cast<T>(std::stoull(s, &used));
    }
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}: bad numeric cell '{}'", path.string(), s));
  }
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);

  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    std::optional<std::string> path;
    s.get_optional("path", path);
    if (path) c.data_path = *path;
    s.get("num_classes", c.synthetic.num_classes);
    s.get("input_dim", c.synthetic.input_dim);
    s.get("modes_per_class", c.synthetic.modes_per_class);
    s.get("samples_per_class", c.synthetic.samples_per_class);
    s.get("separation", c.synthetic.separation);
    s.get("within_sigma", c.synthetic.within_sigma);
    s.get("class_separation", c.synthetic.class_separation);
    s.finish();
  }
  if (const json* d = root.child("split")) {
    Section s(*d, "split");
    s.get("train", c.split[0]);
    s.get("val", c.split[1]);
    s.get("test", c.split[2]);
    s.finish();
  }
  if (const json* d = root.child("upsample")) {
    Section s(*d, "upsample");
    s.get("enabled", c.upsample);
    s.get("min_count", c.upsample_options.min_count);
    s.get_optional("only_below", c.upsample_options.only_below);
    s.get("jitter_sigma", c.upsample_options.jitter_sigma);
    s.finish();
  }
  if (const json* d = root.child("model")) {
    Section s(*d, "model");
    auto& enc = c.train.encoder;
    auto& ae = c.train.autoencoder;
    s.get("encoder_hidden", enc.hidden);
    s.get("feature_dim", enc.output_dim);
    ae.input_dim = enc.output_dim;
    s.get("ae_hidden", ae.hidden);
    s.get("bottleneck_dim", ae.bottleneck_dim);
    s.get("noise_sigma", ae.noise_sigma);
    s.get("lambda", ae.lambda_penalty);
    std::string recon = "smooth_l1";
    s.get("reconstruction", recon);
    ae.reconstruction = parse_reconstruction(recon);
    s.get("smooth_l1_beta", ae.smooth_l1_beta);
    s.finish();
  }
  if (const json* d = root.child("train")) {
    Section s(*d, "train");
    auto& t = c.train;
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("start_lr", t.start_lr);
    s.get("peak_lr", t.peak_lr);
    s.get("final_lr", t.final_lr);
    s.get("warmup_fraction", t.warmup_fraction);
    s.get("ae_lr", t.ae_lr);
    s.get("backbone_weight_decay", t.backbone_weight_decay);
    s.get("ae_weight_decay", t.ae_weight_decay);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("eps", t.eps);
    s.get("clip_norm", t.clip_norm);
    s.get("k_set", t.k_set);
    s.get("refresh_period", t.refresh_period);
    std::string selection = "per_class";
    s.get("selection", selection);
    t.selection = parse_selection(selection);
    s.get("penalty_to_backbone", t.penalty_to_backbone);
    s.get("kmeans_max_iters", t.clustering.max_iters);
    s.get("kmeans_tol", t.clustering.tol);
    s.get("empty_epsilon", t.clustering.empty_epsilon);
    s.get("checkpoint_every", c.checkpoint_every);
    s.finish();
  }
  root.finish();

  c.synthetic.seed = c.seed;
  c.upsample_options.seed = c.seed;
  c.train.seed = c.seed;
  c.train.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& s = c.synthetic;
  const auto& t = c.train;
  const auto& ae = t.autoencoder;
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"path", c.data_path ? json(c.data_path->string()) : json(nullptr)},
               {"num_classes", s.num_classes},
               {"input_dim", s.input_dim},
               {"modes_per_class", s.modes_per_class},
               {"samples_per_class", s.samples_per_class},
               {"separation", s.separation},
               {"within_sigma", s.within_sigma},
               {"class_separation", s.class_separation}};
  j["split"] = {{"train", c.split[0]}, {"val", c.split[1]}, {"test", c.split[2]}};
  j["upsample"] = {{"enabled", c.upsample},
                   {"min_count", c.upsample_options.min_count},
                   {"only_below", c.upsample_options.only_below ? json(*c.upsample_options.only_below) : json(nullptr)},
                   {"jitter_sigma", c.upsample_options.jitter_sigma}};
  j["model"] = {{"encoder_hidden", t.encoder.hidden},
                {"feature_dim", t.encoder.output_dim},
                {"ae_hidden", ae.hidden},
                {"bottleneck_dim", ae.bottleneck_dim},
                {"noise_sigma", ae.noise_sigma},
                {"lambda", ae.lambda_penalty},
                {"reconstruction", ae.reconstruction == ReconstructionLoss::kL2 ? "l2" : "smooth_l1"},
                {"smooth_l1_beta", ae.smooth_l1_beta}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"start_lr", t.start_lr},
                {"peak_lr", t.peak_lr},
                {"final_lr", t.final_lr},
                {"warmup_fraction", t.warmup_fraction},
                {"ae_lr", t.ae_lr},
                {"backbone_weight_decay", t.backbone_weight_decay},
                {"ae_weight_decay", t.ae_weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"clip_norm", t.clip_norm},
                {"k_set", t.k_set},
                {"refresh_period", t.refresh_period},
                {"selection", t.selection == SelectionMode::kGlobal ? "global" : "per_class"},
                {"penalty_to_backbone", t.penalty_to_backbone},
                {"kmeans_max_iters", t.clustering.max_iters},
                {"kmeans_tol", t.clustering.tol},
                {"empty_epsilon", t.clustering.empty_epsilon},
                {"checkpoint_every", c.checkpoint_every}};
  return j;
}

void apply_seed_override(ExperimentConfig& c) {
  const char* env = std::getenv("FGDCC_SEED");
  if (env == nullptr || *env == '\0') return;
  const std::string s(env);
  if (s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(fmt::format("FGDCC_SEED must be a non-negative integer, got '{}'", s));
  }
  try {
    c.seed = std::stoull(s);
  } catch (const std::out_of_range&) {
    throw ConfigError(fmt::format("FGDCC_SEED out of range: {}", s));
  }
  c.synthetic.seed = c.seed;
  c.upsample_options.seed = c.seed;
  c.train.seed = c.seed;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  ExperimentConfig c = parse_config(j);
  apply_seed_override(c);
  return c;
}

Dataset load_experiment_data(const ExperimentConfig& c) {
  if (c.data_path) return load_feature_file(*c.data_path);
  SyntheticSpec s = c.synthetic;
  s.seed = c.seed;
  return generate_synthetic(s);
}

fs::path sublabel_path(const fs::path& feature_file) {
  fs::path p = feature_file;
  p += ".sublabels.csv";
  return p;
}

void generate_data_files(const ExperimentConfig& c, const fs::path& out) {
  if (c.data_path) throw ConfigError("gen-data: config names a data.path; synthetic fields are required instead");
  const Dataset data = load_experiment_data(c);
  save_feature_file(data, out);
  std::string text = "index,parent,sublabel\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    text += fmt::format("{},{},{}\n", i, data[i].parent_label, data[i].planted_sublabel.value_or(0));
  }
  write_text(sublabel_path(out), text);
}

namespace {

std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::string text = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) text += to_csv_row(r) + "\n";
  return text;
}

std::string cluster_stats_csv(const ClusterBank& bank) {
  const std::size_t kmax = bank.k_set().back();
  std::string text = "epoch,class_id,k,inertia,empty_fixes";
  for (std::size_t j = 0; j < kmax; ++j) text += fmt::format(",pop_{}", j);
  text += "\n";
  for (const auto& r : bank.history()) {
    text += fmt::format("{},{},{},{},{}", r.epoch, r.class_id, r.k, r.inertia, r.empty_fixes);
    for (std::size_t j = 0; j < kmax; ++j) {
      text += j < r.population.size() ? fmt::format(",{}", r.population[j]) : std::string(",");
    }
    text += "\n";
  }
  return text;
}

void write_run_tables(const Trainer& t, const fs::path& dir) {
  write_text(dir / "metrics.csv", metrics_csv(t.metrics_history()));
  write_text(dir / "cluster_stats.csv", cluster_stats_csv(t.bank()));
  std::string sel = "epoch,class,k,count\n";
  for (const auto& s : t.selection_history()) sel += fmt::format("{},{},{},{}\n", s.epoch, s.class_id, s.k, s.count);
  write_text(dir / "selection.csv", sel);
  std::string diag = "epoch,routing_mismatch_rate,backbone_clip_scale\n";
  for (const auto& d : t.diagnostics_history()) {
    diag += fmt::format("{},{},{}\n", d.epoch, d.routing_mismatch_rate, d.backbone_clip_scale);
  }
  write_text(dir / "diagnostics.csv", diag);
}

}  // namespace

RunResult run_training(const ExperimentConfig& c, const fs::path& out_dir, const std::optional<fs::path>& resume,
                       std::ostream* log) {
  const fs::path ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  const std::string config_text = to_json(c).dump(2) + "\n";
  write_text(out_dir / "config.json", config_text);

  const Dataset data = load_experiment_data(c);
  const SplitData parts = split(data, c.split, c.seed);
  Dataset train = parts.train;
  if (c.upsample) {
    UpsampleOptions opts = c.upsample_options;
    opts.seed = c.seed;
    train = upsample_min_count(parts.train, opts);
  }
  save_feature_file(parts.test, out_dir / "test.fgdc");

  TrainConfig tc = c.train;
  tc.seed = c.seed;
  Trainer trainer(tc, data.input_dim(), data.num_classes());
  const std::string metadata = to_json(c).dump();
  if (resume) {
    if (Trainer::read_checkpoint_metadata(*resume) != metadata) {
      throw ConfigError(fmt::format("resume: {} was written with a different config", resume->string()));
    }
    trainer.load_checkpoint(*resume);
  }

  for (std::size_t epoch = trainer.epochs_completed() + 1; epoch <= tc.epochs; ++epoch) {
    MetricsRecord r;
    try {
      r = trainer.train_epoch(train, epoch);
    } catch (const NumericalError& e) {
      const fs::path dump = out_dir / "nan_dump.txt";
      write_text(dump, e.dump());
      throw NumericalError(fmt::format("{}; state dump written to {}", e.what(), dump.string()), e.dump());
    }
    trainer.record_metrics(r);
    const MetricsRecord v = trainer.evaluate(parts.val, "val");
    trainer.record_metrics(v);
    write_run_tables(trainer, out_dir);
    if (c.checkpoint_every != 0 && epoch % c.checkpoint_every == 0) {
      trainer.save_checkpoint(ckpt_dir / fmt::format("epoch_{:04}.ckpt", epoch), metadata);
    }
    if (log != nullptr) {
      *log << fmt::format(
          "epoch {}/{}  loss {:.4f}  top1 {:.4f}  sub {:.4f}  ae {:.4f}  inertia {:.4f}  | val top1 {:.4f}  lr {:.3g}\n",
          epoch, tc.epochs, r.parent_loss, r.top1, r.subclass_loss, r.ae_loss, r.mean_inertia, v.top1, r.lr);
    }
  }
  write_run_tables(trainer, out_dir);

  RunResult result;
  result.final_checkpoint = ckpt_dir / "final.ckpt";
  trainer.save_checkpoint(result.final_checkpoint, metadata);
  result.test = trainer.evaluate(parts.test, "test");
  write_text(out_dir / "test_metrics.csv", metrics_csv({result.test}));
  return result;
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_path,
                               const std::vector<std::size_t>& topk) {
  const std::string metadata = Trainer::read_checkpoint_metadata(checkpoint);
  ExperimentConfig c;
  try {
    c = parse_config(json::parse(metadata));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: unreadable config metadata: {}", checkpoint.string(), e.what()));
  }
  const Dataset data = load_feature_file(data_path);
  Trainer trainer(c.train, data.input_dim(), data.num_classes());
  trainer.load_checkpoint(checkpoint);

  EvalResult out;
  out.record = trainer.evaluate(data, "test");
  if (!topk.empty() && !data.empty()) {
    const Matrix logits = trainer.head().predict_parent(trainer.encoder().encode(data.all_features()));
    out.topk = topk_accuracy(logits, data.all_labels(), topk);
  }
  return out;
}

std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
  std::vector<MetricsRecord> out;
  for (const auto& cells : read_csv(path, kMetricsHeader)) {
    if (cells.size() != 10) throw FormatError(fmt::format("{}: expected 10 columns", path.string()));
    MetricsRecord r;
    r.epoch = parse_cell<std::size_t>(cells[0], path);
    r.split = cells[1];
    r.parent_loss = parse_cell<double>(cells[2], path);
    r.top1 = parse_cell<double>(cells[3], path);
    r.top5 = parse_cell<double>(cells[4], path);
    r.subclass_loss = parse_cell<double>(cells[5], path);
    r.ae_loss = parse_cell<double>(cells[6], path);
    r.mean_inertia = parse_cell<double>(cells[7], path);
    r.empty_fixes = parse_cell<std::size_t>(cells[8], path);
    r.lr = parse_cell<double>(cells[9], path);
    out.push_back(std::move(r));
  }
  return out;
}

ClusterReport cluster_report(const fs::path& run_dir) {
  const fs::path stats = run_dir / "cluster_stats.csv";
  std::vector<RefreshRow> rows;
  std::set<std::size_t> class_ids;
  for (const auto& cells : read_csv(stats, "epoch,class_id,k,inertia,empty_fixes")) {
    if (cells.size() < 5) throw FormatError(fmt::format("{}: short row", stats.string()));
    RefreshRow r;
    r.epoch = parse_cell<std::size_t>(cells[0], stats);
    r.class_id = parse_cell<std::size_t>(cells[1], stats);
    r.k = parse_cell<std::size_t>(cells[2], stats);
    r.inertia = parse_cell<double>(cells[3], stats);
    r.empty_fixes = parse_cell<std::size_t>(cells[4], stats);
    class_ids.insert(r.class_id);
    rows.push_back(std::move(r));
  }

  // class -> k -> summed selection count
  std::map<std::size_t, std::map<std::size_t, std::uint64_t>> counts;
  const fs::path sel = run_dir / "selection.csv";
  if (fs::exists(sel)) {
    for (const auto& cells : read_csv(sel, "epoch,class,k,count")) {
      if (cells.size() != 4) throw FormatError(fmt::format("{}: expected 4 columns", sel.string()));
      const auto cls = parse_cell<std::size_t>(cells[1], sel);
      counts[cls][parse_cell<std::size_t>(cells[2], sel)] += parse_cell<std::uint64_t>(cells[3], sel);
      class_ids.insert(cls);
    }
  }

  ClusterReport report;
  for (std::size_t cls : class_ids) {
    ClassChoice choice;
    choice.class_id = cls;
    for (const auto& [k, n] : counts[cls]) {
      choice.selections += n;
      if (n > 0 && (!choice.modal_k || n > counts[cls][*choice.modal_k])) choice.modal_k = k;
    }
    report.classes.push_back(choice);
  }
  report.empty = average_empty_per_k(rows);
  return report;
}

std::string format_cluster_report(const ClusterReport& r) {
  std::string out = "class  modal_k  selections\n";
  for (const auto& c : r.classes) {
    out += fmt::format("{:>5}  {:>7}  {:>10}\n", c.class_id, c.modal_k ? fmt::to_string(*c.modal_k) : "no data",
                       c.selections);
  }
  out += "\nk  mean_empty_fixes_per_epoch\n";
  for (const auto& e : r.empty) out += fmt::format("{}  {}\n", e.k, e.mean_empty_fixes_per_epoch);
  return out;
}

std::vector<fs::path> export_curves(const fs::path& run_dir) {
  const auto metrics = read_metrics_csv(run_dir / "metrics.csv");
  struct Curve {
    const char* file;
    std::vector<std::pair<const char*, double MetricsRecord::*>> columns;
  };
  const std::vector<Curve> curves = {
      {"curves_species.csv",
       {{"parent_loss", &MetricsRecord::parent_loss}, {"top1", &MetricsRecord::top1}, {"top5", &MetricsRecord::top5}}},
      {"curves_subclass_loss.csv", {{"subclass_loss", &MetricsRecord::subclass_loss}}},
      {"curves_ae_loss.csv", {{"ae_loss", &MetricsRecord::ae_loss}}},
      {"curves_inertia.csv", {{"mean_inertia", &MetricsRecord::mean_inertia}}},
  };
  std::vector<std::string> splits;
  for (const auto& m : metrics) {
    if (std::find(splits.begin(), splits.end(), m.split) == splits.end()) splits.push_back(m.split);
  }

  std::vector<fs::path> written;
  for (const auto& curve : curves) {
    std::string text = "epoch,value,series\n";
    for (const auto& [name, member] : curve.columns) {
      for (const auto& split_name : splits) {
        for (const auto& m : metrics) {
          if (m.split == split_name) text += fmt::format("{},{},{}_{}\n", m.epoch, m.*member, name, split_name);
        }
      }
    }
    written.push_back(run_dir / curve.file);
    write_text(written.back(), text);
  }
  return written;
}

}  // namespace fgdcc
