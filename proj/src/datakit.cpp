#include "datakit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace fkb::datakit {

void Dataset::validate() const {
  if (num_classes < 1) throw Error(ErrorKind::Format, "dataset has no classes");
  if (features.rows != labels.size()) throw Error(ErrorKind::Format, "feature/label count mismatch");
  if (labels.size() < static_cast<std::size_t>(num_classes)) {
    throw Error(ErrorKind::Format, "dataset has fewer samples than classes");
  }
  std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorKind::Format, "record " + std::to_string(i) + " has label " + std::to_string(y) +
                                         " outside [0, " + std::to_string(num_classes) + ")");
    }
    seen[static_cast<std::size_t>(y)] = 1;
  }
  for (int c = 0; c < num_classes; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) {
      throw Error(ErrorKind::Format, "class " + std::to_string(c) + " has no samples");
    }
  }
}

Dataset synthetic_blobs(int num_classes, int dim, int per_class, double spread, Rng& rng) {
  if (num_classes < 2 || dim < 2 || per_class < 1 || !(spread >= 0.0) || !std::isfinite(spread)) {
    throw Error(ErrorKind::Generation, "synthetic_blobs: need C >= 2, d >= 2, per_class >= 1, spread >= 0");
  }
  const std::size_t d = static_cast<std::size_t>(dim);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::vector<double>> means;
  constexpr int kMaxRejections = 10000;
  for (int c = 0; c < num_classes; ++c) {
    int tries = 0;
    for (;;) {
      if (++tries > kMaxRejections) {
        throw Error(ErrorKind::Generation, "synthetic_blobs: could not place class means " +
                                               std::to_string(2 * spread) + " apart");
      }
      std::vector<double> m(d);
      for (double& v : m) v = unit(rng);
      const bool far = std::all_of(means.begin(), means.end(), [&](const std::vector<double>& o) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += (m[k] - o[k]) * (m[k] - o[k]);
        return std::sqrt(s) >= 2.0 * spread;
      });
      if (far) {
        means.push_back(std::move(m));
        break;
      }
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.name = "blobs";
  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class);
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++r) {
      auto row = ds.features.row(r);
      for (std::size_t k = 0; k < d; ++k) row[k] = means[c][k] + spread * noise(rng);
      ds.labels[r] = c;
    }
  }
  return ds;
}

namespace {

constexpr char kMagic[4] = {'F', 'K', 'B', '1'};
constexpr std::size_t kHeaderBytes = 16;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

Dataset parse_dataset(std::span<const std::uint8_t> bytes, std::string name) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(0, "bad magic, expected 'FKB1'");
  }
  if (bytes.size() < kHeaderBytes) throw FormatError(bytes.size(), "truncated header");
  const std::uint32_t n = read_u32(bytes, 4);
  const std::uint32_t d = read_u32(bytes, 8);
  const std::uint32_t c = read_u32(bytes, 12);
  if (n == 0 || d == 0 || c == 0) throw FormatError(4, "header fields n, d, C must be positive");
  if (c > 65536) throw FormatError(12, "class count exceeds uint16 label range");

  const std::uint64_t feature_bytes = std::uint64_t{n} * d * 4;
  const std::uint64_t expected = kHeaderBytes + feature_bytes + std::uint64_t{n} * 2;
  if (bytes.size() < expected) {
    throw FormatError(bytes.size(), "truncated file: expected " + std::to_string(expected) + " bytes, have " +
                                        std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw FormatError(expected, "trailing bytes after label block");

  Dataset ds;
  ds.name = std::move(name);
  ds.num_classes = static_cast<int>(c);
  ds.features = Matrix(n, d);
  std::size_t off = kHeaderBytes;
  for (double& v : ds.features.data) {
    const float f = std::bit_cast<float>(read_u32(bytes, off));
    if (!std::isfinite(f)) throw FormatError(off, "non-finite feature value");
    v = static_cast<double>(f);
    off += 4;
  }
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i, off += 2) {
    const int y = static_cast<int>(bytes[off]) | static_cast<int>(bytes[off + 1]) << 8;
    if (y >= static_cast<int>(c)) {
      throw FormatError(off, "record " + std::to_string(i) + " has label " + std::to_string(y) +
                                 " >= C=" + std::to_string(c));
    }
    ds.labels[i] = y;
  }
  try {
    ds.validate();
  } catch (const Error& e) {
    throw FormatError(kHeaderBytes + feature_bytes, e.what());
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open dataset '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_dataset(bytes, path.stem().string());
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ds.validate();
  if (ds.num_classes > 65536) throw Error(ErrorKind::Format, "too many classes for uint16 labels");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeaderBytes + ds.features.data.size() * 4 + ds.labels.size() * 2);
  write_u32(out, static_cast<std::uint32_t>(ds.size()));
  write_u32(out, static_cast<std::uint32_t>(ds.dim()));
  write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  for (double v : ds.features.data) write_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  for (int y : ds.labels) {
    out.push_back(static_cast<std::uint8_t>(y & 0xff));
    out.push_back(static_cast<std::uint8_t>((y >> 8) & 0xff));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write dataset '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  out.features = Matrix(rows.size(), ds.dim());
  out.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = ds.features.row(rows[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels[r] = ds.labels[rows[r]];
  }
  return out;
}

}  // namespace

Split stratified_split(const Dataset& ds, double test_fraction, Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::Config, "test_fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::vector<std::size_t> train_rows, test_rows;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  Split split{take_rows(ds, train_rows), take_rows(ds, test_rows)};
  split.train.validate();
  return split;
}

void standardize(Dataset& train, Dataset& test) {
  const std::size_t d = train.dim();
  if (test.dim() != d) throw Error(ErrorKind::Shape, "standardize: train/test width mismatch");
  const double n = static_cast<double>(train.size());
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (std::size_t r = 0; r < train.size(); ++r) mean += train.features(r, k);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < train.size(); ++r) {
      const double t = train.features(r, k) - mean;
      var += t * t;
    }
    var /= n;
    const double inv_sd = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < train.size(); ++r) train.features(r, k) = (train.features(r, k) - mean) * inv_sd;
    for (std::size_t r = 0; r < test.size(); ++r) test.features(r, k) = (test.features(r, k) - mean) * inv_sd;
  }
}

void PartitionPlan::validate(std::size_t n, int min_samples) const {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (std::size_t c = 0; c < assignments.size(); ++c) {
    if (assignments[c].size() < static_cast<std::size_t>(min_samples)) {
      throw Error(ErrorKind::Partition, "client " + std::to_string(c) + " has fewer than " +
                                            std::to_string(min_samples) + " samples");
    }
    for (std::size_t i : assignments[c]) {
      if (i >= n) throw Error(ErrorKind::Partition, "index out of range in partition");
      if (seen[i]) throw Error(ErrorKind::Partition, "index " + std::to_string(i) + " assigned twice");
      seen[i] = 1;
      ++total;
    }
  }
  if (total != n) throw Error(ErrorKind::Partition, "partition does not cover every index");
}

std::vector<double> sample_dirichlet(double alpha, std::size_t k, Rng& rng) {
  if (!(alpha > 0.0) || k == 0) throw Error(ErrorKind::Partition, "dirichlet: alpha must be positive");
  std::vector<double> logs(k);
  if (alpha >= 1.0) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (double& l : logs) l = std::log(gamma(rng));
  } else {
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& l : logs) {
      const double u = 1.0 - unit(rng);  // (0, 1]
      l = std::log(gamma(rng)) + std::log(u) / alpha;
    }
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double& l : logs) {
    l = std::exp(l - top);
    sum += l;
  }
  for (double& l : logs) l /= sum;
  return logs;
}

namespace {

std::vector<std::vector<std::size_t>> draw_allocation(const std::vector<std::vector<std::size_t>>& by_class,
                                                      std::size_t clients, double alpha, Rng& rng) {
  std::vector<std::vector<std::size_t>> out(clients);
  for (const auto& members : by_class) {
    std::vector<std::size_t> idx = members;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto p = sample_dirichlet(alpha, clients, rng);
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      cum += p[k];
      std::size_t end = k + 1 == clients
                            ? idx.size()
                            : std::min(idx.size(), static_cast<std::size_t>(cum * static_cast<double>(idx.size())));
      end = std::max(end, start);
      out[k].insert(out[k].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                    idx.begin() + static_cast<std::ptrdiff_t>(end));
      start = end;
    }
  }
  return out;
}

bool meets_minimum(const std::vector<std::vector<std::size_t>>& a, std::size_t min_samples) {
  return std::all_of(a.begin(), a.end(), [&](const auto& v) { return v.size() >= min_samples; });
}

// Moves samples to clients below the minimum. Each deficient client takes its
// whole shortfall from the back of one donor, the largest client that can
// spare it, so small-alpha clients stay close to single-class.
void rebalance(std::vector<std::vector<std::size_t>>& a, std::size_t min_samples) {
  for (std::size_t c = 0; c < a.size(); ++c) {
    while (a[c].size() < min_samples) {
      const std::size_t deficit = min_samples - a[c].size();
      std::size_t donor = c == 0 ? 1 : 0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (k != c && a[k].size() > a[donor].size()) donor = k;
      }
      const std::size_t spare = a[donor].size() > min_samples ? a[donor].size() - min_samples : 1;
      const std::size_t take = std::min(deficit, spare);
      for (std::size_t t = 0; t < take; ++t) {
        a[c].push_back(a[donor].back());
        a[donor].pop_back();
      }
    }
  }
}

}  // namespace

PartitionPlan dirichlet_partition(std::span<const int> labels, int num_classes, int clients, double alpha,
                                  int min_samples, std::uint64_t seed) {
  if (clients < 1) throw Error(ErrorKind::Config, "partition: need at least one client");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorKind::Config, "partition: alpha must be positive");
  if (min_samples < 0) throw Error(ErrorKind::Config, "partition: min_samples must be >= 0");
  const std::size_t n = labels.size();
  const auto n_clients = static_cast<std::size_t>(clients);
  const auto need = static_cast<std::size_t>(min_samples);
  if (n < n_clients * need) {
    throw Error(ErrorKind::Partition, "partition: " + std::to_string(n) + " samples cannot give " +
                                          std::to_string(clients) + " clients " + std::to_string(min_samples) +
                                          " samples each");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw Error(ErrorKind::Partition, "label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }

  PartitionPlan plan;
  plan.alpha = alpha;
  plan.seed = seed;
  std::vector<std::vector<std::size_t>> alloc;
  for (int attempt = 0; attempt < kMaxPartitionRetries; ++attempt) {
    Rng rng = make_stream(seed, StreamTag::Partition, {static_cast<std::uint64_t>(attempt)});
    alloc = draw_allocation(by_class, n_clients, alpha, rng);
    plan.attempts = attempt + 1;
    if (meets_minimum(alloc, need)) break;
  }
  if (!meets_minimum(alloc, need)) {
    // Small alpha with many clients almost never satisfies the minimum by
    // redrawing alone.
    rebalance(alloc, need);
    plan.rebalanced = true;
  }
  for (auto& a : alloc) std::sort(a.begin(), a.end());
  plan.assignments = std::move(alloc);
  plan.validate(n, min_samples);
  return plan;
}

PartitionStats partition_stats(const PartitionPlan& plan, std::span<const int> labels, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  PartitionStats stats;
  stats.counts.assign(plan.clients(), std::vector<std::size_t>(c, 0));
  std::vector<double> global(c, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < plan.clients(); ++k) {
    for (std::size_t i : plan.assignments[k]) {
      const auto y = static_cast<std::size_t>(labels[i]);
      ++stats.counts[k][y];
      global[y] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) return stats;
  for (double& g : global) g /= total;
  double score = 0.0;
  std::size_t nonempty = 0;
  for (const auto& row : stats.counts) {
    const double size = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
    if (size == 0.0) continue;
    double tv = 0.0;
    for (std::size_t y = 0; y < c; ++y) tv += std::abs(static_cast<double>(row[y]) / size - global[y]);
    score += 0.5 * tv;
    ++nonempty;
  }
  stats.heterogeneity = nonempty ? score / static_cast<double>(nonempty) : 0.0;
  return stats;
}

}  // namespace fkb::datakit
