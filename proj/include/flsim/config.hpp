#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/attacks.hpp"
#include "flsim/fl_engine.hpp"
#include "flsim/nn.hpp"
#include "flsim/partition.hpp"

namespace flsim::config {

/// Raised for malformed documents or invalid values; carries the offending
/// key so the CLI can emit a one-line machine-parsable error.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& reason)
      : std::runtime_error(key + ": " + reason), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Everything one experiment needs. Every field has a default; the document
/// may set any subset. Unknown keys are an error.
struct ExperimentConfig {
  // dataset
  int num_classes = 10;
  int input_dims = 20;
  int train_per_class = 500;
  int test_per_class = 100;
  int aux_per_class = 5;
  double class_separation = 6.0;

  // partition
  partition::PartitionSpec pspec{partition::PartitionKind::Iid, 0.0};

  // model
  std::vector<int> hidden_widths{32, 16};
  nn::Activation hidden_activation = nn::Activation::Relu;

  // federated training
  int n_clients = 100;
  int clients_per_round = 10;
  int rounds = 50;
  engine::Hyper hyper;

  // attack
  attacks::AttackConfig attack;
  int n_malicious = 20;
  std::vector<int> trigger_indices{0, 1, 2};
  std::vector<double> trigger_values{6.0, 6.0, 6.0};
  int target_label = 0;

  // defense
  engine::Defense defense;

  // run
  std::uint64_t seed = 1;
  std::string out_dir = "runs/exp";

  nn::ModelSpec model_spec() const;
  attacks::AttackConfig attack_config() const;  // with the trigger filled in
  void validate() const;
};

/// Parse the line-oriented key=value document ('#' comments). Missing keys
/// take defaults; unknown keys and out-of-range values raise ConfigError
/// naming the key.
ExperimentConfig parse_config(const std::string& text);

/// Canonical full listing of every key; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// FNV-1a digest of the canonical serialization, as fixed-width hex.
std::string config_digest(const ExperimentConfig& cfg);

}  // namespace flsim::config
