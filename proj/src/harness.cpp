#include "flsim/harness.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "flsim/rng.hpp"

namespace flsim::harness {

namespace {

using json = nlohmann::ordered_json;

json round_to_json(const engine::RoundReport& r) {
  json j;
  j["round"] = r.round;
  j["seed"] = r.round_seed;
  j["selected"] = r.selected;
  j["malicious_selected"] = r.malicious_selected;
  j["survivors"] = r.survivors;
  j["scores"] = r.scores;
  j["avg_dist"] = r.avg_dist;
  j["k_star"] = r.k_star;
  j["acc"] = r.acc;
  j["asr"] = r.asr;
  j["update_norm"] = r.update_norm;
  return j;
}

engine::RoundReport round_from_json(const json& j) {
  engine::RoundReport r;
  r.round = j.at("round").get<int>();
  r.round_seed = j.at("seed").get<std::uint64_t>();
  r.selected = j.at("selected").get<std::vector<int>>();
  r.malicious_selected = j.at("malicious_selected").get<std::vector<int>>();
  r.survivors = j.at("survivors").get<std::vector<int>>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.avg_dist = j.at("avg_dist").get<std::vector<double>>();
  r.k_star = j.at("k_star").get<int>();
  r.acc = j.at("acc").get<double>();
  r.asr = j.at("asr").get<double>();
  r.update_norm = j.at("update_norm").get<double>();
  return r;
}

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

struct ExclusionStats {
  long excluded_malicious = 0;
  long excluded_total = 0;
  long malicious_seen = 0;

  bool precision_defined() const { return excluded_total > 0; }
  bool recall_defined() const { return malicious_seen > 0; }
  double precision() const {
    return static_cast<double>(excluded_malicious) / static_cast<double>(excluded_total);
  }
  double recall() const {
    return static_cast<double>(excluded_malicious) / static_cast<double>(malicious_seen);
  }
};

ExclusionStats exclusion_stats(const RunArchive& archive) {
  ExclusionStats stats;
  for (const auto& r : archive.rounds) {
    std::set<int> survivors(r.survivors.begin(), r.survivors.end());
    std::set<int> malicious(r.malicious_selected.begin(), r.malicious_selected.end());
    for (int id : r.selected) {
      const bool excluded = survivors.count(id) == 0;
      const bool bad = malicious.count(id) > 0;
      if (excluded) {
        stats.excluded_total += 1;
        if (bad) stats.excluded_malicious += 1;
      }
      if (bad) stats.malicious_seen += 1;
    }
  }
  return stats;
}

}  // namespace

RunSummary summarize(const std::vector<engine::RoundReport>& rounds) {
  RunSummary s;
  s.rounds = static_cast<int>(rounds.size());
  const int window = std::min<int>(5, s.rounds);
  if (window == 0) return s;
  for (int i = s.rounds - window; i < s.rounds; ++i) {
    s.final_acc += rounds[i].acc;
    s.final_asr += rounds[i].asr;
  }
  s.final_acc /= window;
  s.final_asr /= window;
  return s;
}

RunArchive run_experiment(const config::ExperimentConfig& cfg) {
  cfg.validate();
  RunArchive archive;
  archive.cfg = cfg;
  archive.digest = config_digest(cfg);

  try {
    const nn::ModelSpec spec = cfg.model_spec();
    const attacks::AttackConfig attack = cfg.attack_config();

    // One pool so train, test, and auxiliary data share the class means;
    // rows are grouped by class, so the split slices each class block.
    const int per_class = cfg.train_per_class + cfg.test_per_class + cfg.aux_per_class;
    partition::Dataset pool = partition::generate_synthetic(
        cfg.num_classes, cfg.input_dims, per_class, cfg.class_separation,
        derive_seed(cfg.seed, 0, 0, "data"));
    auto slice = [&](int offset, int count) {
      partition::Dataset out;
      out.num_classes = cfg.num_classes;
      out.features.resize(static_cast<long>(count) * cfg.num_classes, cfg.input_dims);
      out.labels.resize(static_cast<long>(count) * cfg.num_classes);
      long row = 0;
      for (int c = 0; c < cfg.num_classes; ++c)
        for (int s = 0; s < count; ++s, ++row) {
          const long src = static_cast<long>(c) * per_class + offset + s;
          out.features.row(row) = pool.features.row(src);
          out.labels[row] = pool.labels[src];
        }
      return out;
    };
    partition::Dataset train = slice(0, cfg.train_per_class);
    partition::Dataset test_set = slice(cfg.train_per_class, cfg.test_per_class);
    partition::Dataset aux_set =
        slice(cfg.train_per_class + cfg.test_per_class, cfg.aux_per_class);
    const nn::Batch test = partition::as_batch(test_set);
    const nn::Batch aux = partition::as_batch(aux_set);

    partition::Partition part = partition::make_partition(
        train, cfg.pspec, cfg.n_clients, derive_seed(cfg.seed, 0, 0, "partition"));

    engine::Roster roster;
    roster.n_total = cfg.n_clients;
    roster.train = &train;
    roster.part = &part;
    roster.seed_base = cfg.seed;
    {
      Rng rng(derive_seed(cfg.seed, 0, 0, "malicious"));
      auto picks = rng.sample_without_replacement(
          static_cast<std::size_t>(cfg.n_clients), static_cast<std::size_t>(cfg.n_malicious));
      roster.malicious.insert(picks.begin(), picks.end());
    }

    std::optional<nn::Batch> trigger_test;
    if (attack.is_backdoor())
      trigger_test = attacks::make_trigger_testset(test, *attack.trigger);

    nn::ParamVector global = nn::init_params(spec, derive_seed(cfg.seed, 0, 0, "init"));
    for (int round = 0; round < cfg.rounds; ++round) {
      auto selection =
          engine::select_clients(cfg.n_clients, cfg.clients_per_round, round, cfg.seed);
      auto [next, report] = engine::run_round(global, roster, selection, attack,
                                              cfg.defense, cfg.hyper, aux, test,
                                              trigger_test, round);
      global = std::move(next);
      archive.rounds.push_back(std::move(report));
    }
    archive.summary = summarize(archive.rounds);
  } catch (const std::exception& e) {
    archive.failed = true;
    archive.error = e.what();
  }
  return archive;
}

void write_archive(const RunArchive& archive, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::ofstream cfg_out(dir / "config.cfg", std::ios::binary);
  cfg_out << config::serialize_config(archive.cfg);

  std::ofstream rounds_out(dir / "rounds.jsonl", std::ios::binary);
  json header;
  header["format"] = "flsim-rounds";
  header["version"] = 1;
  header["config_digest"] = archive.digest;
  rounds_out << header.dump() << "\n";
  for (const auto& r : archive.rounds) rounds_out << round_to_json(r).dump() << "\n";

  json summary;
  summary["failed"] = archive.failed;
  if (archive.failed) summary["error"] = archive.error;
  summary["rounds"] = archive.summary.rounds;
  summary["final_acc"] = archive.summary.final_acc;
  summary["final_asr"] = archive.summary.final_asr;
  std::ofstream summary_out(dir / "summary.json", std::ios::binary);
  summary_out << summary.dump(2) << "\n";
}

RunArchive read_archive(const std::filesystem::path& dir) {
  RunArchive archive;

  std::ifstream cfg_in(dir / "config.cfg", std::ios::binary);
  if (!cfg_in) throw std::runtime_error("read_archive: missing config.cfg in " + dir.string());
  std::stringstream cfg_text;
  cfg_text << cfg_in.rdbuf();
  archive.cfg = config::parse_config(cfg_text.str());
  archive.digest = config::config_digest(archive.cfg);

  std::ifstream rounds_in(dir / "rounds.jsonl", std::ios::binary);
  if (!rounds_in)
    throw std::runtime_error("read_archive: missing rounds.jsonl in " + dir.string());
  std::string line;
  bool first = true;
  while (std::getline(rounds_in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (first) {
      first = false;
      if (j.value("format", "") != "flsim-rounds")
        throw std::runtime_error("read_archive: unrecognized stream header");
      continue;
    }
    archive.rounds.push_back(round_from_json(j));
  }
  archive.summary = summarize(archive.rounds);

  std::ifstream summary_in(dir / "summary.json", std::ios::binary);
  if (summary_in) {
    json s = json::parse(summary_in);
    archive.failed = s.value("failed", false);
    archive.error = s.value("error", "");
  }
  return archive;
}

std::optional<SweepAxis> sweep_axis_from_name(const std::string& name) {
  if (name == "noniid_degree") return SweepAxis::NoniidDegree;
  if (name == "n_malicious") return SweepAxis::NMalicious;
  if (name == "poison_rate") return SweepAxis::PoisonRate;
  if (name == "temperature") return SweepAxis::Temperature;
  if (name == "layers") return SweepAxis::Layers;
  return std::nullopt;
}

config::ExperimentConfig apply_axis(const config::ExperimentConfig& base, SweepAxis axis,
                                    double value) {
  config::ExperimentConfig cfg = base;
  switch (axis) {
    case SweepAxis::NoniidDegree: {
      if (value < 0.1 || value > 0.9)
        throw config::ConfigError("noniid_degree", "degree must be in [0.1, 0.9]");
      switch (cfg.pspec.kind) {
        case partition::PartitionKind::Dir:
        case partition::PartitionKind::Qs:
          cfg.pspec.degree = 1.0 / value - 1.0;
          break;
        case partition::PartitionKind::Prob:
          cfg.pspec.degree = value;
          break;
        case partition::PartitionKind::Qty:
          cfg.pspec.degree = std::max(
              1.0, std::round(static_cast<double>(cfg.num_classes) * (1.0 - value)));
          break;
        case partition::PartitionKind::Noise:
          cfg.pspec.degree = value;
          break;
        case partition::PartitionKind::Iid:
          throw config::ConfigError("noniid_degree", "base partition is iid");
      }
      break;
    }
    case SweepAxis::NMalicious:
      cfg.n_malicious = static_cast<int>(std::lround(value));
      break;
    case SweepAxis::PoisonRate:
      cfg.attack.poison_rate = value;
      break;
    case SweepAxis::Temperature:
      cfg.defense.gg.tau_temp = value;
      break;
    case SweepAxis::Layers:
      cfg.defense.gg.lseq_layers = static_cast<int>(std::lround(value));
      break;
  }
  cfg.validate();
  return cfg;
}

namespace {

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::NoniidDegree: return "noniid_degree";
    case SweepAxis::NMalicious: return "n_malicious";
    case SweepAxis::PoisonRate: return "poison_rate";
    case SweepAxis::Temperature: return "temperature";
    case SweepAxis::Layers: return "layers";
  }
  return "axis";
}

std::string value_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

std::vector<RunArchive> sweep(const config::ExperimentConfig& base, SweepAxis axis,
                              const std::vector<double>& values,
                              const std::filesystem::path& out_base) {
  std::vector<RunArchive> archives;
  archives.reserve(values.size());
  for (double v : values) {
    RunArchive archive;
    try {
      archive = run_experiment(apply_axis(base, axis, v));
    } catch (const std::exception& e) {
      archive.cfg = base;
      archive.digest = config::config_digest(base);
      archive.failed = true;
      archive.error = e.what();
    }
    if (!out_base.empty())
      write_archive(archive, out_base / (axis_name(axis) + "=" + value_label(v)));
    archives.push_back(std::move(archive));
  }
  return archives;
}

std::string report_table(const std::vector<RunArchive>& archives) {
  std::ostringstream out;
  out << "digest            final_acc  final_asr  excl_precision  excl_recall  status\n";
  for (const auto& a : archives) {
    const ExclusionStats stats = exclusion_stats(a);
    out << a.digest << "  " << fmt_metric(a.summary.final_acc) << "     "
        << fmt_metric(a.summary.final_asr) << "     "
        << (stats.precision_defined() ? fmt_metric(stats.precision()) : "n/a") << "          "
        << (stats.recall_defined() ? fmt_metric(stats.recall()) : "n/a") << "        "
        << (a.failed ? "failed" : "ok") << "\n";
  }
  return out.str();
}

void write_report(const std::vector<RunArchive>& archives,
                  const std::filesystem::path& out_dir) {
  if (archives.empty()) throw std::invalid_argument("write_report: no archives");
  std::filesystem::create_directories(out_dir);

  std::ofstream table(out_dir / "report.txt", std::ios::binary);
  table << report_table(archives);

  // One row per archive; per-round curves go to a second file keyed by
  // digest so plots can be drawn without re-reading archives.
  std::ofstream csv(out_dir / "report_data.csv", std::ios::binary);
  csv << "digest,partition,partition_degree,attack,defense,n_malicious,poison_rate,"
         "tau_temp,lseq_layers,final_acc,final_asr,excl_precision,excl_recall,failed\n";
  for (const auto& a : archives) {
    const ExclusionStats stats = exclusion_stats(a);
    const std::string cfg_text = config::serialize_config(a.cfg);
    auto field = [&](const std::string& key) {
      const auto pos = cfg_text.find(key + " = ");
      const auto end = cfg_text.find('\n', pos);
      return cfg_text.substr(pos + key.size() + 3, end - pos - key.size() - 3);
    };
    csv << a.digest << ',' << field("partition") << ',' << field("partition_degree") << ','
        << field("attack") << ',' << field("defense") << ',' << field("n_malicious") << ','
        << field("poison_rate") << ',' << field("tau_temp") << ',' << field("lseq_layers")
        << ',' << fmt_metric(a.summary.final_acc) << ',' << fmt_metric(a.summary.final_asr)
        << ',' << (stats.precision_defined() ? fmt_metric(stats.precision()) : "n/a") << ','
        << (stats.recall_defined() ? fmt_metric(stats.recall()) : "n/a") << ','
        << (a.failed ? "1" : "0") << "\n";
  }

  std::ofstream curves(out_dir / "round_curves.csv", std::ios::binary);
  curves << "digest,round,acc,asr,survivor_count\n";
  for (const auto& a : archives)
    for (const auto& r : a.rounds)
      curves << a.digest << ',' << r.round << ',' << fmt_metric(r.acc) << ','
             << fmt_metric(r.asr) << ',' << r.survivors.size() << "\n";
}

}  // namespace flsim::harness
