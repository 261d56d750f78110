#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "flsim/harness.hpp"
#include "flsim/rng.hpp"

namespace fs = std::filesystem;

namespace {

int log_level() {
  const char* env = std::getenv("FLSIM_LOG");
  return env ? std::atoi(env) : 1;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_run(const std::string& config_path, std::uint64_t* seed_override,
            std::string* out_override) {
  auto cfg = flsim::config::parse_config(read_file(config_path));
  if (seed_override) cfg.seed = *seed_override;
  if (out_override) cfg.out_dir = *out_override;

  auto archive = flsim::harness::run_experiment(cfg);
  flsim::harness::write_archive(archive, cfg.out_dir);
  if (archive.failed) {
    std::cerr << "error: run failed: " << archive.error << "\n";
    return 1;
  }
  if (log_level() > 0) {
    std::cout << "run " << archive.digest << ": rounds=" << archive.summary.rounds
              << " final_acc=" << archive.summary.final_acc
              << " final_asr=" << archive.summary.final_asr << " -> " << cfg.out_dir
              << "\n";
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis_name,
              const std::string& values_csv, std::string* out_override) {
  auto cfg = flsim::config::parse_config(read_file(config_path));
  auto axis = flsim::harness::sweep_axis_from_name(axis_name);
  if (!axis) throw std::runtime_error("unknown sweep axis '" + axis_name + "'");

  std::vector<double> values;
  std::stringstream ss(values_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) values.push_back(std::stod(tok));
  }
  if (values.empty()) throw std::runtime_error("no sweep values given");

  const fs::path out_base = out_override ? *out_override : cfg.out_dir;
  auto archives = flsim::harness::sweep(cfg, *axis, values, out_base);
  int failures = 0;
  for (std::size_t i = 0; i < archives.size(); ++i) {
    if (archives[i].failed) {
      ++failures;
      std::cerr << "error: sweep cell " << axis_name << "=" << values[i]
                << " failed: " << archives[i].error << "\n";
    }
  }
  if (log_level() > 0)
    std::cout << "sweep " << axis_name << ": " << archives.size() - failures << "/"
              << archives.size() << " cells ok -> " << out_base.string() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_report(const std::string& in_dir, const std::string& out_dir) {
  std::vector<flsim::harness::RunArchive> archives;
  const fs::path root(in_dir);
  if (fs::exists(root / "rounds.jsonl")) {
    archives.push_back(flsim::harness::read_archive(root));
  } else {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory() && fs::exists(entry.path() / "rounds.jsonl"))
        dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) archives.push_back(flsim::harness::read_archive(d));
  }
  if (archives.empty()) throw std::runtime_error("no archives under " + in_dir);

  flsim::harness::write_report(archives, out_dir);
  if (log_level() > 0)
    std::cout << flsim::harness::report_table(archives);
  return 0;
}

// Fast invariant checks, usable in deployment without the test tree.
int cmd_selftest() {
  using namespace flsim;
  int failures = 0;
  auto check = [&](bool ok, const char* name) {
    std::cout << (ok ? "ok   " : "FAIL ") << name << "\n";
    if (!ok) ++failures;
  };

  {
    Rng rng(7);
    gg::ActivationSequence x;
    x.per_sample.resize(5, 4);
    for (long i = 0; i < 5; ++i)
      for (long j = 0; j < 4; ++j) x.per_sample(i, j) = rng.normal();
    const double self = gg::mmd_gaussian(x, x, 1.0);
    check(std::abs(self - (-2.0 / 4.0)) < 1e-9, "mmd self-identity");
  }
  {
    auto ts = gg::trust_scores({1.0, 2.0, 0.5, 0.7}, 0.5);
    double sum = 0.0;
    for (double s : ts.score) sum += s;
    check(std::abs(sum - 1.0) < 1e-12, "trust scores sum to one");
  }
  {
    auto data = partition::generate_synthetic(4, 6, 25, 5.0, 11);
    auto part = partition::partition_dir(data, 5, 0.5, 13);
    std::vector<long> seen;
    for (const auto& a : part.assignments) seen.insert(seen.end(), a.begin(), a.end());
    std::sort(seen.begin(), seen.end());
    bool ok = static_cast<long>(seen.size()) == data.size();
    for (long i = 0; ok && i < data.size(); ++i) ok = seen[i] == i;
    check(ok, "partition conservation");
  }
  {
    const std::uint64_t a = derive_seed(1, 2, 3, "x");
    check(a == derive_seed(1, 2, 3, "x") && a != derive_seed(1, 2, 3, "y"),
          "seed derivation");
  }
  {
    nn::ModelSpec spec{{3, 5, 4}, nn::Activation::Tanh};
    auto p = nn::init_params(spec, 3);
    nn::Batch b;
    b.features = Eigen::MatrixXd::Random(6, 3);
    b.labels.resize(6);
    for (int i = 0; i < 6; ++i) b.labels[i] = i % 4;
    auto lg = nn::grad_cross_entropy(p, b);
    const double h = 1e-5;
    bool ok = true;
    for (long c = 0; c < p.size() && ok; c += 7) {
      nn::ParamVector lo = p, hi = p;
      lo.values[c] -= h;
      hi.values[c] += h;
      const double fd = (nn::grad_cross_entropy(hi, b).loss -
                         nn::grad_cross_entropy(lo, b).loss) /
                        (2 * h);
      const double g = lg.gradient.values[c];
      ok = std::abs(fd - g) <= 1e-8 + 1e-5 * std::max(std::abs(fd), std::abs(g));
    }
    check(ok, "gradient vs finite differences");
  }

  std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic federated-learning simulator with model-poisoning defenses"};
  app.require_subcommand(1);

  std::string config_path, axis, values, in_dir, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, out_set = false;

  auto* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "config file path")->required();
  run->add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--out", out_dir, "override the output directory")
      ->each([&](const std::string&) { out_set = true; });

  auto* sw = app.add_subcommand("sweep", "run one experiment per axis value");
  sw->add_option("--config", config_path, "config file path")->required();
  sw->add_option("--axis", axis,
                 "one of: noniid_degree, n_malicious, poison_rate, temperature, layers")
      ->required();
  sw->add_option("--values", values, "comma-separated axis values")->required();
  sw->add_option("--out", out_dir, "output directory base")
      ->each([&](const std::string&) { out_set = true; });

  auto* rep = app.add_subcommand("report", "summarize archives into a table and plot data");
  rep->add_option("--in", in_dir, "archive directory (one run or a sweep base)")->required();
  rep->add_option("--out", out_dir, "report output directory")->required();

  app.add_subcommand("selftest", "run fast invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("run"))
      return cmd_run(config_path, seed_set ? &seed : nullptr, out_set ? &out_dir : nullptr);
    if (app.got_subcommand("sweep"))
      return cmd_sweep(config_path, axis, values, out_set ? &out_dir : nullptr);
    if (app.got_subcommand("report")) return cmd_report(in_dir, out_dir);
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const flsim::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
