#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "flsim/attacks.hpp"
#include "flsim/geminiguard.hpp"
#include "flsim/nn.hpp"
#include "flsim/partition.hpp"

namespace flsim::engine {

/// The client population for one experiment: who holds which slice of the
/// pool, who is malicious, and the seed base all per-client randomness is
/// derived from. Fewer than half the clients may be malicious.
struct Roster {
  int n_total = 0;
  std::set<int> malicious;
  const partition::Dataset* train = nullptr;
  const partition::Partition* part = nullptr;
  std::uint64_t seed_base = 0;

  void validate() const;
  bool is_malicious(int id) const { return malicious.count(id) > 0; }
};

struct Hyper {
  int local_epochs = 2;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  int attacker_sim_clients = 5;  // benign updates the attacker simulates locally
};

enum class DefenseKind { FedAvg, Krum, TrimmedMean, Median, GeminiGuard };

struct Defense {
  DefenseKind kind = DefenseKind::GeminiGuard;
  gg::Params gg;
  int krum_f = -1;  // -1: use the true malicious count in the selection
  int trim_k = -1;  // -1: same rule, capped to keep the mean defined
};

struct RoundReport {
  int round = 0;
  std::vector<int> selected;
  std::vector<int> malicious_selected;
  std::vector<int> survivors;        // client ids
  std::vector<double> scores;        // aligned with survivors (empty for baselines)
  std::vector<double> avg_dist;      // aligned with survivors
  int k_star = 0;
  double acc = 0.0;
  double asr = 0.0;
  double update_norm = 0.0;          // norm of the applied global change
  std::uint64_t round_seed = 0;
  double elapsed_ms = 0.0;           // wall clock; excluded from the archive stream
};

/// Uniform selection of k distinct clients, deterministic per (seed, round).
std::vector<int> select_clients(int n_total, int k, int round, std::uint64_t seed);

nn::ParamVector aggregate_fedavg(const nn::ParamVector& global,
                                 const std::vector<nn::ParamVector>& updates);

/// Pick the update with the smallest sum of squared distances to its
/// n - f - 2 nearest neighbours and apply it alone. Ties break toward the
/// lowest index.
nn::ParamVector aggregate_krum(const nn::ParamVector& global,
                               const std::vector<nn::ParamVector>& updates, int f,
                               int* chosen = nullptr);

/// Coordinate-wise mean of the values left after dropping the trim_k
/// largest and smallest per coordinate. trim_k = 0 is exactly fedavg.
nn::ParamVector aggregate_trimmed_mean(const nn::ParamVector& global,
                                       const std::vector<nn::ParamVector>& updates,
                                       int trim_k);

/// Coordinate-wise median (mean of the middle two for even counts).
nn::ParamVector aggregate_median(const nn::ParamVector& global,
                                 const std::vector<nn::ParamVector>& updates);

/// Fraction of argmax-correct predictions; argmax ties go to the lowest
/// class index.
double eval_acc(const nn::ParamVector& params, const nn::Batch& test);

/// Fraction of triggered rows predicted as the target label the set carries.
double eval_asr(const nn::ParamVector& params, const nn::Batch& triggered_test);

/// One federated round: local training or attacks for the selected clients,
/// defense aggregation, evaluation. Deterministic given the full seed tuple.
std::pair<nn::ParamVector, RoundReport> run_round(
    const nn::ParamVector& global, const Roster& roster, const std::vector<int>& selection,
    const attacks::AttackConfig& attack, const Defense& defense, const Hyper& hyper,
    const nn::Batch& aux, const nn::Batch& test,
    const std::optional<nn::Batch>& trigger_test, int round);

}  // namespace flsim::engine
