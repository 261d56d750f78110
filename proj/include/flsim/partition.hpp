#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "flsim/nn.hpp"

namespace flsim::partition {

struct Dataset {
  Eigen::MatrixXd features;
  Eigen::VectorXi labels;
  int num_classes = 0;

  long size() const { return features.rows(); }
};

enum class PartitionKind { Iid, Dir, Prob, Qty, Noise, Qs };

/// One of the six client distribution schemes with its degree parameter:
/// Dirichlet concentration (dir, qs), primary-group probability (prob),
/// classes per client (qty, integral), or noise level (noise).
struct PartitionSpec {
  PartitionKind kind = PartitionKind::Iid;
  double degree = 0.0;

  void validate(int num_classes, int n_clients) const;
};

/// Assignment of global sample indices to clients. For the noise scheme
/// the per-client Gaussian stds are recorded and applied lazily when a
/// client's batch is materialized; the pool itself is never modified.
struct Partition {
  std::vector<std::vector<long>> assignments;
  std::vector<double> noise_std;  // empty unless noise scheme
  std::uint64_t noise_seed = 0;
};

/// Gaussian class blobs with mutually separated means; labels 0..C-1,
/// per_class samples each, unit isotropic variance.
Dataset generate_synthetic(int num_classes, int dims, int per_class,
                           double separation, std::uint64_t seed);

Partition partition_iid(const Dataset& data, int n_clients, std::uint64_t seed);
Partition partition_dir(const Dataset& data, int n_clients, double beta, std::uint64_t seed);
Partition partition_prob(const Dataset& data, int n_clients, double q, std::uint64_t seed);
Partition partition_qty(const Dataset& data, int n_clients, int classes_per_client,
                        std::uint64_t seed);
Partition partition_noise(const Dataset& data, int n_clients, double sigma,
                          std::uint64_t seed);
Partition partition_qs(const Dataset& data, int n_clients, double beta, std::uint64_t seed);

Partition make_partition(const Dataset& data, const PartitionSpec& spec, int n_clients,
                         std::uint64_t seed);

/// Materialize one client's local batch, applying the lazy noise transform
/// when present. Noise for a given (seed, client, pool index) is identical
/// across calls.
nn::Batch client_batch(const Dataset& data, const Partition& part, int client);

/// Whole dataset as a batch (for evaluation sets).
nn::Batch as_batch(const Dataset& data);

/// Audit format: one client per line (client id then sample indices),
/// '#'-prefixed header lines. Documented in docs/formats.md.
std::string partition_to_text(const Partition& part);
Partition partition_from_text(const std::string& text);

}  // namespace flsim::partition
