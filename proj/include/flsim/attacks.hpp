#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flsim/geminiguard.hpp"
#include "flsim/nn.hpp"

namespace flsim::attacks {

/// A fixed input stamp: values written at chosen feature coordinates, with
/// the label forced to the attacker's target class.
struct TriggerSpec {
  std::vector<int> feature_indices;
  std::vector<double> trigger_values;
  int target_label = 0;

  void validate(int input_width, int num_classes) const;
};

enum class AttackKind {
  None,
  Backdoor,
  BackdoorDistributed,
  ScalingBackdoor,
  SignFlip,
  MinMax,
  MinSum,
  Adaptive,
};

enum class Perturbation { InverseUnit, InverseStd, Sign };

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  double poison_rate = 0.5;
  std::optional<TriggerSpec> trigger;
  double scale_gamma = 10.0;
  Perturbation perturbation = Perturbation::InverseUnit;
  double adaptive_lambda = 1.0;
  double adaptive_rho = 0.5;
  double adaptive_eta = 0.5;

  bool is_backdoor() const {
    return kind == AttackKind::Backdoor || kind == AttackKind::BackdoorDistributed ||
           kind == AttackKind::ScalingBackdoor || kind == AttackKind::Adaptive;
  }
  void validate(int input_width, int num_classes) const;
};

/// Stamp the trigger on floor(poison_rate * n) randomly chosen rows and
/// overwrite their labels; every other row is untouched.
nn::Batch poison_backdoor(const nn::Batch& data, const TriggerSpec& trigger,
                          double poison_rate, std::uint64_t seed);

/// Distributed variant: this attacker stamps only its contiguous shard of
/// the trigger coordinates (shards of ceil(T / num_attackers), last shard
/// short). Test-time evaluation always uses the full trigger.
nn::Batch poison_backdoor_distributed(const nn::Batch& data, const TriggerSpec& trigger,
                                      double poison_rate, int attacker_index,
                                      int num_attackers, std::uint64_t seed);

/// The attacker's shard of the trigger coordinates.
TriggerSpec trigger_shard(const TriggerSpec& trigger, int attacker_index, int num_attackers);

/// Evaluation set for attack success: rows already of the target class are
/// dropped, the full trigger is stamped, labels carry the target class.
nn::Batch make_trigger_testset(const nn::Batch& clean_test, const TriggerSpec& trigger);

/// -gamma * honest update.
nn::ParamVector attack_signflip(const nn::ParamVector& honest_update, double gamma);

/// Malicious update mu + gamma * p with the largest gamma (bisection) such
/// that the update's max distance to any benign update stays within the max
/// pairwise benign distance.
nn::ParamVector attack_minmax(const std::vector<nn::ParamVector>& benign_updates,
                              Perturbation perturbation);

/// Same search with the sum-of-squared-distances constraint.
nn::ParamVector attack_minsum(const std::vector<nn::ParamVector>& benign_updates,
                              Perturbation perturbation);

/// gamma * update.
nn::ParamVector attack_scale(const nn::ParamVector& update, double gamma);

struct AdaptiveOpts {
  double lambda = 1.0;  // weight of the clean-data loss
  double rho = 0.5;     // weight of the update-distance term
  double eta = 0.5;     // weight of the activation-distance term
  int steps = 2;        // epochs over the poisoned data
  double lr = 0.05;
  int batch_size = 32;
  double momentum = 0.9;
};

/// Backdoor training that simultaneously mimics benign statistics: minimizes
/// poisoned-data loss plus lambda * clean loss plus rho * normalized update
/// distance plus eta * normalized activation distance. Both distance terms
/// are normalized by their value before the first step (floor 1e-12). The
/// update-distance term is applied as a proximal shrinkage toward the benign
/// mean after each step; the other terms contribute gradients. With all
/// coefficients zero this is exactly train_local on the poisoned data.
nn::ParamVector attack_adaptive(const nn::ParamVector& global, const nn::Batch& poisoned,
                                const nn::Batch& clean,
                                const nn::ParamVector& benign_mean_update,
                                const gg::ActivationSequence& benign_mean_lseq,
                                const nn::Batch& aux, const AdaptiveOpts& opts,
                                std::uint64_t seed);

}  // namespace flsim::attacks
