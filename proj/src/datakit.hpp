#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "numkit.hpp"
#include "rng.hpp"

namespace fkb::datakit {

using numkit::Matrix;

struct Dataset {
  Matrix features;  // n x d
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  // Every class present, n >= C, labels in range.
  void validate() const;
};

// Gaussian clusters around means drawn in [-1, 1]^dim with pairwise
// distance >= 2 * spread. Samples are grouped by class.
Dataset synthetic_blobs(int num_classes, int dim, int per_class, double spread, Rng& rng);

// FKB1 little-endian container.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::span<const std::uint8_t> bytes, std::string name = "fkb");
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);

struct Split {
  Dataset train;
  Dataset test;
};

// Per-class shuffle; the first round(test_fraction * n_c) samples of each
// class go to the test split.
Split stratified_split(const Dataset& ds, double test_fraction, Rng& rng);

// Standardizes every column with the training split's mean and standard
// deviation; the same transform is applied to `test`.
void standardize(Dataset& train, Dataset& test);

inline constexpr int kDefaultMinSamples = 2;
inline constexpr int kMaxPartitionRetries = 100;

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // per client, sorted
  double alpha = 1.0;
  std::uint64_t seed = 0;
  int attempts = 0;       // Dirichlet draws made
  bool rebalanced = false;  // true if min_samples needed sample moves

  std::size_t clients() const { return assignments.size(); }
  // Disjoint, covering [0, n), every client >= min_samples.
  void validate(std::size_t n, int min_samples) const;
};

// Samples Dirichlet(alpha * 1_k) in log space so tiny alphas do not
// underflow to an all-zero draw.
std::vector<double> sample_dirichlet(double alpha, std::size_t k, Rng& rng);

PartitionPlan dirichlet_partition(std::span<const int> labels, int num_classes, int clients, double alpha,
                                  int min_samples, std::uint64_t seed);

struct PartitionStats {
  std::vector<std::vector<std::size_t>> counts;  // clients x classes
  double heterogeneity = 0.0;  // mean total-variation distance to the global label mix
};

PartitionStats partition_stats(const PartitionPlan& plan, std::span<const int> labels, int num_classes);

}  // namespace fkb::datakit
