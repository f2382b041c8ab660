#include "fgdcc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <utility>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "fgdcc/errors.hpp"
#include "fgdcc/random.hpp"

namespace fgdcc {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(start_lr > 0.0 && peak_lr > 0.0 && final_lr > 0.0 && ae_lr > 0.0)) {
    throw ConfigError("train: learning rates must be positive");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("train: warmup_fraction must be in [0,1)");
  if (backbone_weight_decay < 0.0 || ae_weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
  if (refresh_period == 0) throw ConfigError("train: refresh_period must be >= 1");
  if (k_set.empty()) throw ConfigError("train: k_set must not be empty");
  for (std::size_t i = 0; i < k_set.size(); ++i) {
    if (k_set[i] < 1 || (i > 0 && k_set[i] <= k_set[i - 1])) {
      throw ConfigError("train: k_set must be strictly increasing values >= 1");
    }
  }
  if (encoder.output_dim != autoencoder.input_dim) {
    throw ConfigError(fmt::format("train: encoder output_dim {} != autoencoder input_dim {}", encoder.output_dim,
                                  autoencoder.input_dim));
  }
}

std::string to_csv_row(const MetricsRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{}", r.epoch, r.split, r.parent_loss, r.top1, r.top5,
                     r.subclass_loss, r.ae_loss, r.mean_inertia, r.empty_fixes, r.lr);
}

namespace {

EncoderConfig encoder_config(const TrainConfig& c, std::size_t input_dim) {
  EncoderConfig e = c.encoder;
  e.input_dim = input_dim;
  e.seed = mix_seed({c.seed, stream::kInit, 1});
  return e;
}

AutoencoderConfig ae_config(const TrainConfig& c) {
  AutoencoderConfig a = c.autoencoder;
  a.seed = mix_seed({c.seed, stream::kInit, 2});
  return a;
}

AdamWHyper hyper(const TrainConfig& c, double wd) { return {c.beta1, c.beta2, c.eps, wd}; }

double value_std(const Matrix& m) {
  if (m.size() < 2) return 0.0;
  const auto d = m.data();
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double sq = 0.0;
  for (double v : d) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(d.size()));
}

std::vector<std::size_t> metric_topk(std::size_t num_classes) { return {1, std::min<std::size_t>(5, num_classes)}; }

double param_norm(const std::vector<const ParamTensor*>& ps) {
  double sq = 0.0;
  for (const auto* p : ps) {
    for (double v : p->value.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::size_t input_dim, std::size_t num_classes)
    : config_(std::move(config)),
      input_dim_(input_dim),
      num_classes_(num_classes),
      encoder_(encoder_config(config_, input_dim)),
      autoencoder_(ae_config(config_)),
      head_(config_.encoder.output_dim, num_classes, config_.k_set),
      bank_(num_classes, config_.k_set, config_.autoencoder.bottleneck_dim, mix_seed({config_.seed, stream::kKMeans})),
      backbone_opt_(hyper(config_, config_.backbone_weight_decay)),
      ae_opt_(hyper(config_, config_.ae_weight_decay)) {
  config_.validate();
  if (num_classes == 0) throw ConfigError("train: dataset declares zero classes");
}

std::vector<ParamTensor*> Trainer::all_params() {
  auto out = encoder_.params();
  for (auto* p : autoencoder_.params()) out.push_back(p);
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> Trainer::all_params() const {
  auto out = encoder_.params();
  for (const auto* p : autoencoder_.params()) out.push_back(p);
  for (const auto* p : head_.params()) out.push_back(p);
  return out;
}

std::uint64_t Trainer::total_steps(std::size_t train_size) const {
  const std::size_t per_epoch = (train_size + config_.batch_size - 1) / config_.batch_size;
  return static_cast<std::uint64_t>(per_epoch) * config_.epochs;
}

void Trainer::bootstrap(const Dataset& train) {
  if (train.input_dim() != input_dim_) {
    throw DimensionError(fmt::format("bootstrap: data has {} dims, model expects {}", train.input_dim(), input_dim_));
  }
  const Matrix bottlenecks = autoencoder_.encode_bottleneck(encoder_.encode(train.all_features()));
  std::vector<std::vector<std::size_t>> rows(num_classes_);
  for (std::size_t i = 0; i < train.size(); ++i) rows[train[i].parent_label].push_back(i);
  std::vector<Matrix> per_class;
  per_class.reserve(num_classes_);
  for (const auto& r : rows) {
    Matrix m(r.size(), bottlenecks.cols());
    for (std::size_t i = 0; i < r.size(); ++i) std::copy_n(bottlenecks.row(r[i]).begin(), m.cols(), m.row(i).begin());
    per_class.push_back(std::move(m));
  }
  bank_.initialize(per_class, config_.clustering);
  bootstrapped_ = true;
}

SubclassTargets Trainer::cluster_targets(const Matrix& bottlenecks, std::span<const std::size_t> labels,
                                         double* inertia_sum) const {
  const auto& ks = config_.k_set;
  SubclassTargets t{labels.size(), ks.size(), std::vector<std::size_t>(labels.size() * ks.size())};
  Matrix one(1, bottlenecks.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::copy_n(bottlenecks.row(i).begin(), one.cols(), one.row(0).begin());
    for (std::size_t kj = 0; kj < ks.size(); ++kj) {
      const auto a = bank_.assign(labels[i], ks[kj], one);
      t.z[i * ks.size() + kj] = a.indices[0];
      if (inertia_sum != nullptr) *inertia_sum += a.inertia;
    }
  }
  return t;
}

std::size_t Trainer::penalty_k_index(std::size_t class_id) const {
  const std::size_t k = head_.modal_k(class_id);
  return k == 0 ? 0 : bank_.k_index(k);
}

Matrix Trainer::penalty_centroids(std::span<const std::size_t> labels, const SubclassTargets& targets) const {
  Matrix c(labels.size(), bank_.dim());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t kj = penalty_k_index(labels[i]);
    const auto& m = bank_.at(labels[i], config_.k_set[kj]);
    std::copy_n(m.centroids.row(targets.at(i, kj)).begin(), c.cols(), c.row(i).begin());
  }
  return c;
}

MetricsRecord Trainer::train_epoch(const Dataset& train, std::size_t epoch) {
  if (epoch != epochs_done_ + 1) {
    throw StateError(fmt::format("train_epoch: expected epoch {}, got {}", epochs_done_ + 1, epoch));
  }
  if (train.input_dim() != input_dim_ || train.num_classes() != num_classes_) {
    throw DimensionError(fmt::format("train_epoch: data is {}-dim/{} classes, model is {}-dim/{} classes",
                                     train.input_dim(), train.num_classes(), input_dim_, num_classes_));
  }
  if (train.empty()) throw ConfigError("train_epoch: empty training set");
  if (!bootstrapped_) bootstrap(train);

  const auto& ks = config_.k_set;
  const std::uint64_t total = total_steps(train.size());
  const auto warmup = static_cast<std::uint64_t>(std::llround(config_.warmup_fraction * static_cast<double>(total)));
  const auto topk = metric_topk(num_classes_);
  const auto tally_before = head_.tally();
  const auto batches = make_batches(train.size(), config_.batch_size, true, config_.seed, epoch);

  double parent_sum = 0.0;
  double sub_sum = 0.0;
  double ae_sum = 0.0;
  double top1_hits = 0.0;
  double top5_hits = 0.0;
  double mismatches = 0.0;
  double clip_scale_sum = 0.0;
  const double n_total = static_cast<double>(train.size());

  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& idx = batches[b];
    const auto labels = train.labels(idx);
    const auto n = static_cast<double>(idx.size());

    Tape tape;
    const Var f = encoder_.encode(tape, tape.constant(train.features(idx)));
    const Matrix features = tape.value(f);
    const Matrix bottlenecks = autoencoder_.encode_bottleneck(features);
    const SubclassTargets targets = cluster_targets(bottlenecks, labels, nullptr);

    // Hierarchical loss: parent CE + routed, best-k sub-class CE.
    const Var logits = head_.predict_parent(tape, f);
    const auto predicted = argmax_rows(tape.value(logits));
    const RoutedLosses routed = route_subclassifiers(tape, head_, f, predicted, targets);
    const KSelection selection = select_best_k(routed, config_.selection);
    record_selection(head_, routed, selection);
    const Var sub = selected_subclass_loss(tape, routed, selection);
    HierStepResult step = hierarchical_loss(tape, logits, labels, sub);

    // Denoising autoencoder with the centroid penalty.
    const double noise = config_.autoencoder.noise_sigma * value_std(features);
    const Matrix noisy = corrupt(features, noise, config_.seed, epoch, b);
    Var corrupted;
    if (config_.penalty_to_backbone) {
      Matrix delta = noisy;
      for (std::size_t i = 0; i < delta.size(); ++i) delta.data()[i] -= features.data()[i];
      corrupted = tape.add(f, tape.constant(std::move(delta)));
    } else {
      corrupted = tape.constant(noisy);
    }
    const Matrix centroids = penalty_centroids(labels, targets);
    const AeLossTerms ae = autoencoder_.loss(tape, tape.constant(features), corrupted, centroids,
                                             config_.autoencoder.lambda_penalty);
    const double ae_value = tape.scalar(ae.total);

    if (!std::isfinite(step.total_loss) || !std::isfinite(ae_value)) {
      const std::string dump = fmt::format(
          "epoch={}\nbatch={}\nglobal_step={}\nparent_loss={}\nsubclass_loss={}\nae_loss={}\nlr={}\n"
          "encoder_param_norm={}\nae_param_norm={}\nhead_param_norm={}\n",
          epoch, b, global_step_, step.parent_loss, step.selected_subclass_loss, ae_value, last_lr_,
          param_norm(std::as_const(encoder_).params()), param_norm(std::as_const(autoencoder_).params()),
          param_norm(std::as_const(head_).params()));
      throw NumericalError(fmt::format("non-finite loss at epoch {} batch {}", epoch, b), dump);
    }

    for (auto* p : all_params()) p->zero_grad();
    if (config_.penalty_to_backbone) {
      tape.backward(tape.add(step.total, ae.total));
    } else {
      tape.backward(step.total);
      tape.backward(ae.total);
    }

    std::vector<ParamTensor*> backbone = encoder_.params();
    backbone.push_back(&head_.parent().weight);
    backbone.push_back(&head_.parent().bias);
    for (std::size_t g = 0; g < routed.classes.size(); ++g) {
      Linear& sel = head_.sub(routed.classes[g], selection.k_index[g]);
      backbone.push_back(&sel.weight);
      backbone.push_back(&sel.bias);
    }
    const std::vector<ParamTensor*> ae_params = autoencoder_.params();
    clip_scale_sum += clip_grad_norm(backbone, config_.clip_norm);
    clip_grad_norm(ae_params, config_.clip_norm);

    last_lr_ = cosine_lr(global_step_, total, warmup, config_.start_lr, config_.peak_lr, config_.final_lr);
    backbone_opt_.step(backbone, last_lr_);
    ae_opt_.step(ae_params, config_.ae_lr);
    ++global_step_;

    for (std::size_t i = 0; i < idx.size(); ++i) bank_.cache(labels[i], bottlenecks.row(i));

    const auto acc = topk_accuracy(tape.value(logits), labels, topk);
    parent_sum += n * step.parent_loss;
    sub_sum += n * step.selected_subclass_loss;
    ae_sum += n * ae_value;
    top1_hits += n * acc.at(topk[0]);
    top5_hits += n * acc.at(topk[1]);
    for (std::size_t i = 0; i < idx.size(); ++i) mismatches += predicted[i] != labels[i] ? 1.0 : 0.0;

    if (on_step) on_step(*this, b);
  }

  // Centroid objective on this epoch's cached bottlenecks, after the refresh when one is due.
  std::size_t empty_fixes = 0;
  double inertia_sum = 0.0;
  std::size_t cached = 0;
  if (epoch % config_.refresh_period == 0) {
    for (std::size_t c = 0; c < num_classes_; ++c) cached += bank_.cached_count(c);
    for (const auto& row : bank_.epoch_refresh(config_.clustering, epoch)) {
      inertia_sum += row.inertia;
      empty_fixes += row.empty_fixes;
    }
  } else {
    for (std::size_t c = 0; c < num_classes_; ++c) {
      const Matrix pts = bank_.cached_points(c);
      cached += pts.rows();
      for (std::size_t k : ks) inertia_sum += bank_.assign(c, k, pts).inertia;
    }
    bank_.clear_cache();
  }

  for (std::size_t c = 0; c < num_classes_; ++c) {
    for (std::size_t kj = 0; kj < ks.size(); ++kj) {
      const std::uint64_t delta = head_.tally()[c][kj] - tally_before[c][kj];
      if (delta > 0) selection_.push_back({epoch, c, ks[kj], delta});
    }
  }
  diagnostics_.push_back({epoch, mismatches / n_total, clip_scale_sum / static_cast<double>(batches.size())});

  MetricsRecord r;
  r.epoch = epoch;
  r.split = "train";
  r.parent_loss = parent_sum / n_total;
  r.top1 = top1_hits / n_total;
  r.top5 = top5_hits / n_total;
  r.subclass_loss = sub_sum / n_total;
  r.ae_loss = ae_sum / n_total;
  r.mean_inertia = cached == 0 ? 0.0 : inertia_sum / static_cast<double>(cached * ks.size());
  r.empty_fixes = empty_fixes;
  r.lr = last_lr_;
  epochs_done_ = epoch;
  return r;
}

MetricsRecord Trainer::evaluate(const Dataset& data, const std::string& split) const {
  if (data.input_dim() != input_dim_ || data.num_classes() != num_classes_) {
    throw DimensionError(fmt::format("evaluate: data is {}-dim/{} classes, model is {}-dim/{} classes",
                                     data.input_dim(), data.num_classes(), input_dim_, num_classes_));
  }
  MetricsRecord r;
  r.epoch = epochs_done_;
  r.split = split;
  r.lr = last_lr_;
  if (data.empty()) return r;

  const auto labels = data.all_labels();
  const Matrix features = encoder_.encode(data.all_features());
  const Matrix bottlenecks = autoencoder_.encode_bottleneck(features);
  double inertia_sum = 0.0;
  const SubclassTargets targets = cluster_targets(bottlenecks, labels, &inertia_sum);

  Tape tape;
  const Var f = tape.constant(features);
  const Var logits = head_.parent().apply(tape, f);
  const auto predicted = argmax_rows(tape.value(logits));
  r.parent_loss = tape.scalar(tape.softmax_cross_entropy(logits, labels));
  const auto topk = metric_topk(num_classes_);
  const auto acc = topk_accuracy(tape.value(logits), labels, topk);
  r.top1 = acc.at(topk[0]);
  r.top5 = acc.at(topk[1]);

  // Diagnostic sub-class loss: each routed class uses its most-selected k so far.
  const RoutedLosses routed = route_subclassifiers(tape, head_, f, predicted, targets);
  const auto n = static_cast<double>(labels.size());
  for (std::size_t g = 0; g < routed.classes.size(); ++g) {
    const std::size_t kj = penalty_k_index(routed.classes[g]);
    r.subclass_loss += routed.group_value[g][kj] * static_cast<double>(routed.rows[g].size()) / n;
  }

  r.ae_loss = autoencoder_.loss_value(features, features, penalty_centroids(labels, targets),
                                      config_.autoencoder.lambda_penalty);
  r.mean_inertia = inertia_sum / (n * static_cast<double>(config_.k_set.size()));
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'F', 'G', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_adam(detail::BinaryWriter& w, const AdamW& opt) {
  w.put<std::uint64_t>(opt.states().size());
  for (const auto& [name, s] : opt.states()) {
    w.put_string(name);
    w.put<std::uint64_t>(s.step);
    w.put_matrix(s.m);
    w.put_matrix(s.v);
  }
}

void get_adam(detail::BinaryReader& r, AdamW& opt, const std::vector<ParamTensor*>& params, const char* which) {
  opt.states().clear();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    AdamState s;
    s.step = r.get<std::uint64_t>();
    s.m = r.get_matrix();
    s.v = r.get_matrix();
    const auto it = std::find_if(params.begin(), params.end(), [&](const ParamTensor* p) { return p->name == name; });
    if (it == params.end()) {
      throw DimensionError(fmt::format("checkpoint: {} optimizer state for unknown component {}", which, name));
    }
    if (!s.m.same_shape((*it)->value) || !s.v.same_shape((*it)->value)) {
      throw DimensionError(fmt::format("checkpoint: {} optimizer state for component {} has shape {}, expected {}",
                                       which, name, s.m.shape_str(), (*it)->value.shape_str()));
    }
    opt.states()[name] = std::move(s);
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path, const std::string& metadata) const {
  detail::BinaryWriter w;
  w.raw(kCkptMagic, 4);
  w.put<std::uint32_t>(kCkptVersion);
  w.put_string(metadata);
  w.put<std::uint64_t>(input_dim_);
  w.put<std::uint64_t>(num_classes_);
  w.put<std::uint64_t>(config_.k_set.size());
  for (std::size_t k : config_.k_set) w.put<std::uint64_t>(k);
  w.put<std::uint64_t>(config_.seed);
  w.put<std::uint8_t>(bootstrapped_ ? 1 : 0);
  w.put<std::uint64_t>(epochs_done_);
  w.put<std::uint64_t>(global_step_);
  w.put(last_lr_);

  const auto params = all_params();
  w.put<std::uint64_t>(params.size());
  for (const auto* p : params) {
    w.put_string(p->name);
    w.put_matrix(p->value);
  }
  put_adam(w, backbone_opt_);
  put_adam(w, ae_opt_);

  for (std::size_t c = 0; c < num_classes_; ++c) {
    for (std::size_t k : config_.k_set) {
      const auto& m = bank_.at(c, k);
      w.put_matrix(m.centroids);
      w.put(m.last_inertia);
      w.put<std::uint64_t>(m.empty_fix_count);
      w.put<std::uint8_t>(m.initialized ? 1 : 0);
      w.put<std::uint64_t>(m.last_counts.size());
      for (std::size_t v : m.last_counts) w.put<std::uint64_t>(v);
    }
  }
  w.put<std::uint64_t>(bank_.history().size());
  for (const auto& row : bank_.history()) {
    w.put<std::uint64_t>(row.epoch);
    w.put<std::uint64_t>(row.class_id);
    w.put<std::uint64_t>(row.k);
    w.put(row.inertia);
    w.put<std::uint64_t>(row.empty_fixes);
    w.put<std::uint64_t>(row.points);
    w.put<std::uint8_t>(row.skipped ? 1 : 0);
    w.put<std::uint64_t>(row.population.size());
    for (std::size_t v : row.population) w.put<std::uint64_t>(v);
  }
  for (const auto& per_class : head_.tally()) {
    for (std::uint64_t v : per_class) w.put<std::uint64_t>(v);
  }

  w.put<std::uint64_t>(metrics_.size());
  for (const auto& m : metrics_) {
    w.put<std::uint64_t>(m.epoch);
    w.put_string(m.split);
    for (double v : {m.parent_loss, m.top1, m.top5, m.subclass_loss, m.ae_loss, m.mean_inertia}) w.put(v);
    w.put<std::uint64_t>(m.empty_fixes);
    w.put(m.lr);
  }
  w.put<std::uint64_t>(selection_.size());
  for (const auto& s : selection_) {
    w.put<std::uint64_t>(s.epoch);
    w.put<std::uint64_t>(s.class_id);
    w.put<std::uint64_t>(s.k);
    w.put<std::uint64_t>(s.count);
  }
  w.put<std::uint64_t>(diagnostics_.size());
  for (const auto& d : diagnostics_) {
    w.put<std::uint64_t>(d.epoch);
    w.put(d.routing_mismatch_rate);
    w.put(d.backbone_clip_scale);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void read_preamble(detail::BinaryReader& r) {
  r.expect_raw(kCkptMagic, 4, "checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCkptVersion) {
    throw FormatError(fmt::format("checkpoint version {} unsupported (expected {})", version, kCkptVersion));
  }
}

}  // namespace

std::string Trainer::read_checkpoint_metadata(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  detail::BinaryReader r(buf, path.string());
  read_preamble(r);
  return r.get_string();
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  detail::BinaryReader r(buf, path.string());
  read_preamble(r);
  r.get_string();

  Trainer next = *this;
  const auto input_dim = r.get<std::uint64_t>();
  const auto num_classes = r.get<std::uint64_t>();
  if (input_dim != input_dim_) {
    throw DimensionError(fmt::format("checkpoint component encoder input: {} dims, expected {}", input_dim, input_dim_));
  }
  if (num_classes != num_classes_) {
    throw DimensionError(
        fmt::format("checkpoint component head.parent: {} classes, expected {}", num_classes, num_classes_));
  }
  const auto k_count = r.get<std::uint64_t>();
  std::vector<std::size_t> ks;
  for (std::uint64_t i = 0; i < k_count; ++i) ks.push_back(r.get<std::uint64_t>());
  if (ks != config_.k_set) throw DimensionError("checkpoint component k_set: does not match the configured k_set");
  next.config_.seed = r.get<std::uint64_t>();
  next.bootstrapped_ = r.get<std::uint8_t>() != 0;
  next.epochs_done_ = r.get<std::uint64_t>();
  next.global_step_ = r.get<std::uint64_t>();
  next.last_lr_ = r.get<double>();

  auto params = next.all_params();
  const auto param_count = r.get<std::uint64_t>();
  if (param_count != params.size()) {
    throw DimensionError(fmt::format("checkpoint: {} parameter tensors, model has {}", param_count, params.size()));
  }
  for (auto* p : params) {
    const std::string name = r.get_string();
    Matrix value = r.get_matrix();
    if (name != p->name) throw DimensionError(fmt::format("checkpoint component {}: expected {}", name, p->name));
    if (!value.same_shape(p->value)) {
      throw DimensionError(fmt::format("checkpoint component {}: shape {}, expected {}", name, value.shape_str(),
                                       p->value.shape_str()));
    }
    p->value = std::move(value);
    p->zero_grad();
  }
  get_adam(r, next.backbone_opt_, params, "backbone");
  get_adam(r, next.ae_opt_, params, "autoencoder");

  for (std::size_t c = 0; c < num_classes_; ++c) {
    for (std::size_t k : config_.k_set) {
      auto& m = next.bank_.at(c, k);
      Matrix centroids = r.get_matrix();
      if (!centroids.same_shape(m.centroids)) {
        throw DimensionError(fmt::format("checkpoint component centroids[class {}, k {}]: shape {}, expected {}", c, k,
                                         centroids.shape_str(), m.centroids.shape_str()));
      }
      m.centroids = std::move(centroids);
      m.last_inertia = r.get<double>();
      m.empty_fix_count = r.get<std::uint64_t>();
      m.initialized = r.get<std::uint8_t>() != 0;
      m.last_counts.resize(r.get<std::uint64_t>());
      for (auto& v : m.last_counts) v = r.get<std::uint64_t>();
    }
  }
  next.bank_.clear_cache();
  next.bank_.history().clear();
  const auto rows = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < rows; ++i) {
    RefreshRow row;
    row.epoch = r.get<std::uint64_t>();
    row.class_id = r.get<std::uint64_t>();
    row.k = r.get<std::uint64_t>();
    row.inertia = r.get<double>();
    row.empty_fixes = r.get<std::uint64_t>();
    row.points = r.get<std::uint64_t>();
    row.skipped = r.get<std::uint8_t>() != 0;
    row.population.resize(r.get<std::uint64_t>());
    for (auto& v : row.population) v = r.get<std::uint64_t>();
    next.bank_.history().push_back(std::move(row));
  }
  for (auto& per_class : next.head_.tally()) {
    for (auto& v : per_class) v = r.get<std::uint64_t>();
  }

  next.metrics_.clear();
  const auto metric_rows = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < metric_rows; ++i) {
    MetricsRecord m;
    m.epoch = r.get<std::uint64_t>();
    m.split = r.get_string();
    for (double* v : {&m.parent_loss, &m.top1, &m.top5, &m.subclass_loss, &m.ae_loss, &m.mean_inertia}) {
      *v = r.get<double>();
    }
    m.empty_fixes = r.get<std::uint64_t>();
    m.lr = r.get<double>();
    next.metrics_.push_back(std::move(m));
  }
  next.selection_.clear();
  const auto sel_rows = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < sel_rows; ++i) {
    SelectionRow s;
    s.epoch = r.get<std::uint64_t>();
    s.class_id = r.get<std::uint64_t>();
    s.k = r.get<std::uint64_t>();
    s.count = r.get<std::uint64_t>();
    next.selection_.push_back(s);
  }
  next.diagnostics_.clear();
  const auto diag_rows = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < diag_rows; ++i) {
    DiagnosticsRow d;
    d.epoch = r.get<std::uint64_t>();
    d.routing_mismatch_rate = r.get<double>();
    d.backbone_clip_scale = r.get<double>();
    next.diagnostics_.push_back(d);
  }
  if (r.remaining() != 0) {
    throw FormatError(fmt::format("{}: {} trailing bytes at offset {}", path.string(), r.remaining(), r.offset()));
  }
  *this = std::move(next);
}

}  // namespace fgdcc
