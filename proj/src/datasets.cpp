#include "fgdcc/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <cstring>

#include <fmt/format.h>

#include "fgdcc/errors.hpp"
#include "fgdcc/random.hpp"

namespace fgdcc {

Dataset::Dataset(std::size_t input_dim, std::size_t num_classes)
    : input_dim_(input_dim), num_classes_(num_classes) {}

void Dataset::add(LabeledSample s) {
  if (s.features.size() != input_dim_) {
    throw DimensionError(fmt::format("Dataset::add: sample has {} features, dataset expects {}", s.features.size(),
                                     input_dim_));
  }
  if (s.parent_label >= num_classes_) {
    throw IndexError(fmt::format("Dataset::add: label {} >= {} classes", s.parent_label, num_classes_));
  }
  if (!all_finite(s.features)) throw ConfigError("Dataset::add: non-finite feature");
  samples_.push_back(std::move(s));
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes_, 0);
  for (const auto& s : samples_) ++counts[s.parent_label];
  return counts;
}

Matrix Dataset::features(std::span<const std::size_t> indices) const {
  Matrix m(indices.size(), input_dim_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& f = samples_.at(indices[i]).features;
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

Matrix Dataset::all_features() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return features(idx);
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples_.at(i).parent_label);
  return out;
}

std::vector<std::size_t> Dataset::all_labels() const {
  std::vector<std::size_t> out;
  out.reserve(size());
  for (const auto& s : samples_) out.push_back(s.parent_label);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(input_dim_, num_classes_);
  out.planted_modes = planted_modes;
  out.samples_.reserve(indices.size());
  for (std::size_t i : indices) out.samples_.push_back(samples_.at(i));
  return out;
}

bool operator==(const LabeledSample& a, const LabeledSample& b) {
  return a.parent_label == b.parent_label && a.planted_sublabel == b.planted_sublabel && a.features == b.features;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.input_dim_ == b.input_dim_ && a.num_classes_ == b.num_classes_ && a.samples_ == b.samples_;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

std::vector<std::size_t> broadcast(const std::vector<std::size_t>& v, std::size_t n, const char* what) {
  if (v.size() == 1) return std::vector<std::size_t>(n, v.front());
  if (v.size() != n) {
    throw ConfigError(fmt::format("synthetic spec: {} has {} entries for {} classes", what, v.size(), n));
  }
  return v;
}

std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * b[j];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

// count points with pairwise distance `distance`, centered on the origin.
std::vector<std::vector<double>> simplex_points(std::size_t count, std::size_t dim, double distance,
                                                std::mt19937_64& rng) {
  std::vector<std::vector<double>> pts;
  if (count <= dim) {
    pts = random_orthonormal(count, dim, rng);
    for (auto& p : pts) {
      for (double& x : p) x *= distance / std::sqrt(2.0);
    }
  } else {
    std::normal_distribution<double> normal(0.0, distance / std::sqrt(2.0 * static_cast<double>(dim)));
    pts.assign(count, std::vector<double>(dim));
    for (auto& p : pts) {
      for (double& x : p) x = normal(rng);
    }
  }
  std::vector<double> mean(dim, 0.0);
  for (const auto& p : pts) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j] / static_cast<double>(count);
  }
  for (auto& p : pts) {
    for (std::size_t j = 0; j < dim; ++j) p[j] -= mean[j];
  }
  return pts;
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.input_dim < 2) throw ConfigError("synthetic spec: input_dim must be >= 2");
  if (spec.num_classes == 0) throw ConfigError("synthetic spec: num_classes must be >= 1");
  if (spec.separation < 0.0 || spec.within_sigma <= 0.0 || spec.class_separation < 0.0) {
    throw ConfigError("synthetic spec: separations must be >= 0 and within_sigma > 0");
  }
  const auto modes = broadcast(spec.modes_per_class.empty() ? std::vector<std::size_t>{1} : spec.modes_per_class,
                               spec.num_classes, "modes_per_class");
  const auto counts = broadcast(spec.samples_per_class, spec.num_classes, "samples_per_class");
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    if (counts[c] == 0) throw ConfigError(fmt::format("synthetic spec: class {} has zero samples", c));
    if (modes[c] < 1 || modes[c] > 5) {
      throw ConfigError(fmt::format("synthetic spec: class {} planted mode count {} outside [1,5]", c, modes[c]));
    }
  }

  const std::size_t dim = spec.input_dim;
  const double sigma = spec.within_sigma;
  auto center_rng = make_rng({spec.seed, stream::kSynthetic, 0});
  const auto centers = simplex_points(spec.num_classes, dim, spec.class_separation * sigma, center_rng);

  Dataset data(dim, spec.num_classes);
  data.planted_modes = modes;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto rng = make_rng({spec.seed, stream::kSynthetic, 1, c});
    const auto offsets = simplex_points(modes[c], dim, spec.separation * sigma, rng);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      const std::size_t mode = i % modes[c];
      LabeledSample s;
      s.features.resize(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        s.features[j] = round_f32(centers[c][j] + offsets[mode][j] + sigma * normal(rng));
      }
      s.parent_label = c;
      s.planted_sublabel = mode;
      data.add(std::move(s));
    }
  }
  return data;
}

Dataset upsample_min_count(const Dataset& data, const UpsampleOptions& opts) {
  if (opts.min_count < 1) throw ConfigError("upsample: min_count must be >= 1");
  const std::size_t threshold = opts.only_below.value_or(opts.min_count);
  const auto counts = data.class_counts();
  std::vector<std::vector<std::size_t>> members(data.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) members[data[i].parent_label].push_back(i);

  Dataset out = data.subset([&] {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    if (counts[c] == 0) throw ConfigError(fmt::format("upsample: class {} has no samples", c));
    if (counts[c] >= threshold || counts[c] >= opts.min_count) continue;
    auto rng = make_rng({opts.seed, stream::kUpsample, c});
    for (std::size_t extra = 0; counts[c] + extra < opts.min_count; ++extra) {
      const LabeledSample& src = data[members[c][extra % members[c].size()]];
      LabeledSample s = src;
      for (double& v : s.features) v = round_f32(v + opts.jitter_sigma * normal(rng));
      out.add(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature file I/O

namespace {

constexpr char kMagic[4] = {'F', 'G', 'D', 'C'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 + 4;

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& buf, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(buf[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void save_feature_file(const Dataset& data, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(kHeaderBytes + data.size() * (4 + 4 * data.input_dim()));
  buf.append(kMagic, 4);
  put_le<std::uint32_t>(buf, kFeatureFileVersion);
  put_le<std::uint64_t>(buf, data.size());
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(data.input_dim()));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(data.num_classes()));
  for (const auto& s : data.samples()) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(s.parent_label));
    for (double v : s.features) {
      const auto f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_le<std::uint32_t>(buf, bits);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) {
    throw FormatError(fmt::format("{}: truncated header at offset {} ({} bytes)", path.string(), buf.size(),
                                  buf.size()));
  }
  if (buf.compare(0, 4, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic at offset 0");
  const auto version = get_le<std::uint32_t>(buf, 4);
  if (version != kFeatureFileVersion) {
    throw FormatError(fmt::format("{}: unsupported version {} at offset 4", path.string(), version));
  }
  const auto n = get_le<std::uint64_t>(buf, 8);
  const auto dim = get_le<std::uint32_t>(buf, 16);
  const auto num_classes = get_le<std::uint32_t>(buf, 20);
  const std::size_t record = 4 + 4 * static_cast<std::size_t>(dim);
  const std::size_t available = (buf.size() - kHeaderBytes) / record;
  if (n > available) {
    throw FormatError(fmt::format("{}: truncated payload, record {} at offset {} incomplete", path.string(),
                                  available, kHeaderBytes + available * record));
  }
  if (buf.size() != kHeaderBytes + n * record) {
    throw FormatError(fmt::format("{}: {} trailing bytes at offset {}", path.string(),
                                  buf.size() - (kHeaderBytes + n * record), kHeaderBytes + n * record));
  }

  Dataset data(dim, num_classes);
  std::size_t offset = kHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i) {
    LabeledSample s;
    s.parent_label = get_le<std::uint32_t>(buf, offset);
    if (s.parent_label >= num_classes) {
      throw FormatError(fmt::format("{}: label {} >= declared {} classes at offset {}", path.string(),
                                    s.parent_label, num_classes, offset));
    }
    offset += 4;
    s.features.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j, offset += 4) {
      const auto bits = get_le<std::uint32_t>(buf, offset);
      float f = 0.0F;
      std::memcpy(&f, &bits, sizeof f);
      if (!std::isfinite(f)) throw FormatError(fmt::format("{}: non-finite feature at offset {}", path.string(), offset));
      s.features[j] = f;
    }
    data.add(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Split and batching

SplitIndices split_indices(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split: fractions must be non-negative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split: fractions sum to {}, expected 1", fractions[0] + fractions[1] + fractions[2]));
  }
  std::vector<std::vector<std::size_t>> members(data.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) members[data[i].parent_label].push_back(i);

  SplitIndices out;
  std::vector<std::size_t> too_small;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    if (m.empty()) continue;
    auto rng = make_rng({seed, stream::kSplit, c});
    std::shuffle(m.begin(), m.end(), rng);
    const auto n = static_cast<double>(m.size());
    auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
    auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * n));
    if (n_val + n_test >= m.size()) {
      too_small.push_back(c);
      continue;
    }
    const std::size_t n_train = m.size() - n_val - n_test;
    out.train.insert(out.train.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), m.begin() + static_cast<std::ptrdiff_t>(n_train),
                   m.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), m.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), m.end());
  }
  if (!too_small.empty()) {
    throw ConfigError(fmt::format("split: classes too small to stratify with a non-empty train part: {}",
                                  fmt::join(too_small, ",")));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

SplitData split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  const auto idx = split_indices(data, fractions, seed);
  return {data.subset(idx.train), data.subset(idx.val), data.subset(idx.test)};
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    auto rng = make_rng({seed, stream::kShuffle, epoch});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace fgdcc
