#include "flsim/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "flsim/rng.hpp"

namespace flsim::config {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key, "expected a number, got '" + value + "'");
  }
}

long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key, "expected an integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(key, "expected an unsigned integer, got '" + value + "'");
  }
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          const Parse& parse_one) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(parse_one(key, tok));
  }
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

const std::map<std::string, partition::PartitionKind> kPartitionNames = {
    {"iid", partition::PartitionKind::Iid},   {"dir", partition::PartitionKind::Dir},
    {"prob", partition::PartitionKind::Prob}, {"qty", partition::PartitionKind::Qty},
    {"noise", partition::PartitionKind::Noise}, {"qs", partition::PartitionKind::Qs}};

const std::map<std::string, attacks::AttackKind> kAttackNames = {
    {"none", attacks::AttackKind::None},
    {"backdoor", attacks::AttackKind::Backdoor},
    {"backdoor_distributed", attacks::AttackKind::BackdoorDistributed},
    {"scaling_backdoor", attacks::AttackKind::ScalingBackdoor},
    {"signflip", attacks::AttackKind::SignFlip},
    {"minmax", attacks::AttackKind::MinMax},
    {"minsum", attacks::AttackKind::MinSum},
    {"adaptive", attacks::AttackKind::Adaptive}};

const std::map<std::string, engine::DefenseKind> kDefenseNames = {
    {"fedavg", engine::DefenseKind::FedAvg},
    {"krum", engine::DefenseKind::Krum},
    {"trimmed_mean", engine::DefenseKind::TrimmedMean},
    {"median", engine::DefenseKind::Median},
    {"geminiguard", engine::DefenseKind::GeminiGuard}};

const std::map<std::string, attacks::Perturbation> kPerturbationNames = {
    {"inverse_unit", attacks::Perturbation::InverseUnit},
    {"inverse_std", attacks::Perturbation::InverseStd},
    {"sign", attacks::Perturbation::Sign}};

template <typename T>
T parse_enum(const std::string& key, const std::string& value,
             const std::map<std::string, T>& names) {
  auto it = names.find(value);
  if (it == names.end()) throw ConfigError(key, "unknown value '" + value + "'");
  return it->second;
}

template <typename T>
std::string enum_name(T value, const std::map<std::string, T>& names) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

}  // namespace

nn::ModelSpec ExperimentConfig::model_spec() const {
  nn::ModelSpec spec;
  spec.layer_widths.push_back(input_dims);
  for (int w : hidden_widths) spec.layer_widths.push_back(w);
  spec.layer_widths.push_back(num_classes);
  spec.hidden_activation = hidden_activation;
  return spec;
}

attacks::AttackConfig ExperimentConfig::attack_config() const {
  attacks::AttackConfig cfg = attack;
  if (cfg.is_backdoor()) {
    attacks::TriggerSpec trigger;
    trigger.feature_indices = trigger_indices;
    trigger.trigger_values = trigger_values;
    trigger.target_label = target_label;
    cfg.trigger = trigger;
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (input_dims < 1) throw ConfigError("input_dims", "must be >= 1");
  if (train_per_class < 1) throw ConfigError("train_per_class", "must be >= 1");
  if (test_per_class < 1) throw ConfigError("test_per_class", "must be >= 1");
  if (aux_per_class < 1) throw ConfigError("aux_per_class", "must be >= 1");
  if (class_separation <= 0.0) throw ConfigError("class_separation", "must be > 0");
  if (hidden_widths.empty()) throw ConfigError("hidden_widths", "need at least one hidden layer");
  for (int w : hidden_widths)
    if (w < 1) throw ConfigError("hidden_widths", "widths must be >= 1");
  if (n_clients < 1) throw ConfigError("n_clients", "must be >= 1");
  if (clients_per_round < 1 || clients_per_round > n_clients)
    throw ConfigError("clients_per_round", "must be in [1, n_clients]");
  if (rounds < 1) throw ConfigError("rounds", "must be >= 1");
  if (hyper.local_epochs < 1) throw ConfigError("local_epochs", "must be >= 1");
  if (hyper.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (hyper.lr < 0.0) throw ConfigError("learning_rate", "must be >= 0");
  if (hyper.momentum < 0.0 || hyper.momentum >= 1.0)
    throw ConfigError("momentum", "must be in [0, 1)");
  if (hyper.attacker_sim_clients < 2)
    throw ConfigError("attacker_sim_clients", "must be >= 2");
  if (n_malicious < 0 || 2 * n_malicious >= n_clients)
    throw ConfigError("n_malicious", "must be fewer than half of n_clients");
  if (attack.poison_rate < 0.0 || attack.poison_rate > 1.0)
    throw ConfigError("poison_rate", "must be in [0, 1]");
  if (attack.scale_gamma <= 0.0) throw ConfigError("scale_gamma", "must be > 0");
  if (attack.adaptive_lambda < 0.0) throw ConfigError("adaptive_lambda", "must be >= 0");
  if (attack.adaptive_rho < 0.0) throw ConfigError("adaptive_rho", "must be >= 0");
  if (attack.adaptive_eta < 0.0) throw ConfigError("adaptive_eta", "must be >= 0");
  if (defense.gg.tau_temp <= 0.0) throw ConfigError("tau_temp", "must be > 0");
  if (defense.gg.lseq_layers < 0) throw ConfigError("lseq_layers", "must be >= 0");
  if (defense.gg.k_max < 2) throw ConfigError("k_max", "must be >= 2");
  if (!defense.gg.bandwidth.median_heuristic && defense.gg.bandwidth.fixed <= 0.0)
    throw ConfigError("bandwidth", "fixed bandwidth must be > 0");
  if (!defense.gg.tau_inlier.data_driven && defense.gg.tau_inlier.fixed < 0.0)
    throw ConfigError("tau_inlier", "fixed threshold must be >= 0");

  try {
    pspec.validate(num_classes, n_clients);
  } catch (const std::exception& e) {
    throw ConfigError("partition_degree", e.what());
  }
  try {
    attack_config().validate(input_dims, num_classes);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("attack", e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "missing key");

    if (key == "num_classes") cfg.num_classes = static_cast<int>(parse_int(key, value));
    else if (key == "input_dims") cfg.input_dims = static_cast<int>(parse_int(key, value));
    else if (key == "train_per_class") cfg.train_per_class = static_cast<int>(parse_int(key, value));
    else if (key == "test_per_class") cfg.test_per_class = static_cast<int>(parse_int(key, value));
    else if (key == "aux_per_class") cfg.aux_per_class = static_cast<int>(parse_int(key, value));
    else if (key == "class_separation") cfg.class_separation = parse_double(key, value);
    else if (key == "partition") cfg.pspec.kind = parse_enum(key, value, kPartitionNames);
    else if (key == "partition_degree") cfg.pspec.degree = parse_double(key, value);
    else if (key == "hidden_widths")
      cfg.hidden_widths = parse_list<int>(key, value, [](const std::string& k, const std::string& v) {
        return static_cast<int>(parse_int(k, v));
      });
    else if (key == "hidden_activation") {
      if (value == "relu") cfg.hidden_activation = nn::Activation::Relu;
      else if (value == "tanh") cfg.hidden_activation = nn::Activation::Tanh;
      else throw ConfigError(key, "unknown value '" + value + "'");
    }
    else if (key == "n_clients") cfg.n_clients = static_cast<int>(parse_int(key, value));
    else if (key == "clients_per_round") cfg.clients_per_round = static_cast<int>(parse_int(key, value));
    else if (key == "rounds") cfg.rounds = static_cast<int>(parse_int(key, value));
    else if (key == "local_epochs") cfg.hyper.local_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.hyper.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "learning_rate") cfg.hyper.lr = parse_double(key, value);
    else if (key == "momentum") cfg.hyper.momentum = parse_double(key, value);
    else if (key == "attacker_sim_clients") cfg.hyper.attacker_sim_clients = static_cast<int>(parse_int(key, value));
    else if (key == "attack") cfg.attack.kind = parse_enum(key, value, kAttackNames);
    else if (key == "n_malicious") cfg.n_malicious = static_cast<int>(parse_int(key, value));
    else if (key == "poison_rate") cfg.attack.poison_rate = parse_double(key, value);
    else if (key == "trigger_indices")
      cfg.trigger_indices = parse_list<int>(key, value, [](const std::string& k, const std::string& v) {
        return static_cast<int>(parse_int(k, v));
      });
    else if (key == "trigger_values")
      cfg.trigger_values = parse_list<double>(key, value, [](const std::string& k, const std::string& v) {
        return parse_double(k, v);
      });
    else if (key == "target_label") cfg.target_label = static_cast<int>(parse_int(key, value));
    else if (key == "scale_gamma") cfg.attack.scale_gamma = parse_double(key, value);
    else if (key == "minmax_perturbation") cfg.attack.perturbation = parse_enum(key, value, kPerturbationNames);
    else if (key == "adaptive_lambda") cfg.attack.adaptive_lambda = parse_double(key, value);
    else if (key == "adaptive_rho") cfg.attack.adaptive_rho = parse_double(key, value);
    else if (key == "adaptive_eta") cfg.attack.adaptive_eta = parse_double(key, value);
    else if (key == "defense") cfg.defense.kind = parse_enum(key, value, kDefenseNames);
    else if (key == "tau_temp") cfg.defense.gg.tau_temp = parse_double(key, value);
    else if (key == "lseq_layers") cfg.defense.gg.lseq_layers = static_cast<int>(parse_int(key, value));
    else if (key == "k_max") cfg.defense.gg.k_max = static_cast<int>(parse_int(key, value));
    else if (key == "bandwidth") {
      if (value == "median") cfg.defense.gg.bandwidth = {true, 1.0};
      else cfg.defense.gg.bandwidth = {false, parse_double(key, value)};
    }
    else if (key == "tau_inlier") {
      if (value == "mad") cfg.defense.gg.tau_inlier = {true, 0.0};
      else cfg.defense.gg.tau_inlier = {false, parse_double(key, value)};
    }
    else if (key == "krum_f") cfg.defense.krum_f = static_cast<int>(parse_int(key, value));
    else if (key == "trim_k") cfg.defense.trim_k = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "out") cfg.out_dir = value;
    else throw ConfigError(key, "unknown key");
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  auto list_int = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  auto list_double = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
    return s;
  };

  out << "num_classes = " << cfg.num_classes << "\n";
  out << "input_dims = " << cfg.input_dims << "\n";
  out << "train_per_class = " << cfg.train_per_class << "\n";
  out << "test_per_class = " << cfg.test_per_class << "\n";
  out << "aux_per_class = " << cfg.aux_per_class << "\n";
  out << "class_separation = " << fmt_double(cfg.class_separation) << "\n";
  out << "partition = " << enum_name(cfg.pspec.kind, kPartitionNames) << "\n";
  out << "partition_degree = " << fmt_double(cfg.pspec.degree) << "\n";
  out << "hidden_widths = " << list_int(cfg.hidden_widths) << "\n";
  out << "hidden_activation = "
      << (cfg.hidden_activation == nn::Activation::Relu ? "relu" : "tanh") << "\n";
  out << "n_clients = " << cfg.n_clients << "\n";
  out << "clients_per_round = " << cfg.clients_per_round << "\n";
  out << "rounds = " << cfg.rounds << "\n";
  out << "local_epochs = " << cfg.hyper.local_epochs << "\n";
  out << "batch_size = " << cfg.hyper.batch_size << "\n";
  out << "learning_rate = " << fmt_double(cfg.hyper.lr) << "\n";
  out << "momentum = " << fmt_double(cfg.hyper.momentum) << "\n";
  out << "attacker_sim_clients = " << cfg.hyper.attacker_sim_clients << "\n";
  out << "attack = " << enum_name(cfg.attack.kind, kAttackNames) << "\n";
  out << "n_malicious = " << cfg.n_malicious << "\n";
  out << "poison_rate = " << fmt_double(cfg.attack.poison_rate) << "\n";
  out << "trigger_indices = " << list_int(cfg.trigger_indices) << "\n";
  out << "trigger_values = " << list_double(cfg.trigger_values) << "\n";
  out << "target_label = " << cfg.target_label << "\n";
  out << "scale_gamma = " << fmt_double(cfg.attack.scale_gamma) << "\n";
  out << "minmax_perturbation = " << enum_name(cfg.attack.perturbation, kPerturbationNames)
      << "\n";
  out << "adaptive_lambda = " << fmt_double(cfg.attack.adaptive_lambda) << "\n";
  out << "adaptive_rho = " << fmt_double(cfg.attack.adaptive_rho) << "\n";
  out << "adaptive_eta = " << fmt_double(cfg.attack.adaptive_eta) << "\n";
  out << "defense = " << enum_name(cfg.defense.kind, kDefenseNames) << "\n";
  out << "tau_temp = " << fmt_double(cfg.defense.gg.tau_temp) << "\n";
  out << "lseq_layers = " << cfg.defense.gg.lseq_layers << "\n";
  out << "k_max = " << cfg.defense.gg.k_max << "\n";
  out << "bandwidth = "
      << (cfg.defense.gg.bandwidth.median_heuristic
              ? std::string("median")
              : fmt_double(cfg.defense.gg.bandwidth.fixed))
      << "\n";
  out << "tau_inlier = "
      << (cfg.defense.gg.tau_inlier.data_driven
              ? std::string("mad")
              : fmt_double(cfg.defense.gg.tau_inlier.fixed))
      << "\n";
  out << "krum_f = " << cfg.defense.krum_f << "\n";
  out << "trim_k = " << cfg.defense.trim_k << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "out = " << cfg.out_dir << "\n";
  return out.str();
}

std::string config_digest(const ExperimentConfig& cfg) {
  const std::uint64_t h = fnv1a64(serialize_config(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flsim::config
