#include "flsim/fl_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "flsim/canonical.hpp"
#include "flsim/rng.hpp"

namespace flsim::engine {

namespace {

int argmax_lowest(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (int c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

// Split the attacker's local data into disjoint folds and train one benign
// update per fold; this is the attacker's stand-in for other clients'
// behaviour, which it cannot observe.
std::vector<nn::ParamVector> simulate_benign_updates(const nn::ParamVector& global,
                                                     const nn::Batch& data, int folds,
                                                     const Hyper& hyper,
                                                     std::uint64_t seed) {
  folds = std::max(2, std::min<int>(folds, static_cast<int>(data.size())));
  Rng rng(mix_seed(seed, fnv1a64("sim-folds")));
  std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(data.size()));

  std::vector<nn::ParamVector> sims;
  sims.reserve(folds);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> rows;
    for (std::size_t r = f; r < perm.size(); r += folds) rows.push_back(perm[r]);
    if (rows.empty()) continue;
    nn::Batch fold;
    fold.features.resize(static_cast<long>(rows.size()), data.features.cols());
    fold.labels.resize(static_cast<long>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      fold.features.row(static_cast<long>(r)) = data.features.row(static_cast<long>(rows[r]));
      fold.labels[static_cast<long>(r)] = data.labels[static_cast<long>(rows[r])];
    }
    nn::ParamVector theta = nn::train_local(global, fold, hyper.local_epochs,
                                            hyper.batch_size, hyper.lr, hyper.momentum,
                                            mix_seed(seed, static_cast<std::uint64_t>(f)));
    sims.push_back({global.spec, theta.values - global.values});
  }
  if (sims.size() < 2) throw std::runtime_error("attacker simulation: too little local data");
  return sims;
}

nn::ParamVector local_update(const nn::ParamVector& global, const nn::Batch& data,
                             const Hyper& hyper, std::uint64_t seed) {
  nn::ParamVector theta = nn::train_local(global, data, hyper.local_epochs,
                                          hyper.batch_size, hyper.lr, hyper.momentum, seed);
  return {global.spec, theta.values - global.values};
}

}  // namespace

void Roster::validate() const {
  if (n_total < 1) throw std::invalid_argument("roster: empty population");
  if (2 * static_cast<int>(malicious.size()) >= n_total)
    throw std::invalid_argument("roster: malicious clients must be fewer than half");
  for (int id : malicious)
    if (id < 0 || id >= n_total) throw std::invalid_argument("roster: malicious id out of range");
  if (!train || !part) throw std::invalid_argument("roster: missing data or partition");
  if (static_cast<int>(part->assignments.size()) != n_total)
    throw std::invalid_argument("roster: partition does not match population");
}

std::vector<int> select_clients(int n_total, int k, int round, std::uint64_t seed) {
  if (k > n_total) throw std::invalid_argument("select_clients: k exceeds population");
  if (k < 1) throw std::invalid_argument("select_clients: k must be >= 1");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round), 0, "select"));
  auto picks = rng.sample_without_replacement(static_cast<std::size_t>(n_total),
                                              static_cast<std::size_t>(k));
  return {picks.begin(), picks.end()};
}

nn::ParamVector aggregate_fedavg(const nn::ParamVector& global,
                                 const std::vector<nn::ParamVector>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate_fedavg: no updates");
  return gg::aggregate_weighted(global, updates,
                                std::vector<double>(updates.size(), 1.0));
}

nn::ParamVector aggregate_krum(const nn::ParamVector& global,
                               const std::vector<nn::ParamVector>& updates, int f,
                               int* chosen) {
  const int n = static_cast<int>(updates.size());
  if (f < 0) throw std::invalid_argument("aggregate_krum: f must be >= 0");
  if (n < f + 3) throw std::invalid_argument("aggregate_krum: need n >= f + 3");

  const int neighbours = n - f - 2;
  std::vector<double> score(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> d2;
    d2.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      d2.push_back((updates[i].values - updates[j].values).squaredNorm());
    }
    std::sort(d2.begin(), d2.end());
    double s = 0.0;
    for (int r = 0; r < neighbours; ++r) s += d2[r];
    score[i] = s;
  }
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (score[i] < score[best]) best = i;
  if (chosen) *chosen = best;

  nn::ParamVector out = global;
  out.values += updates[best].values;
  return out;
}

nn::ParamVector aggregate_trimmed_mean(const nn::ParamVector& global,
                                       const std::vector<nn::ParamVector>& updates,
                                       int trim_k) {
  const int n = static_cast<int>(updates.size());
  if (trim_k < 0) throw std::invalid_argument("aggregate_trimmed_mean: trim_k must be >= 0");
  if (n <= 2 * trim_k)
    throw std::invalid_argument("aggregate_trimmed_mean: need n > 2 * trim_k");
  if (trim_k == 0) return aggregate_fedavg(global, updates);

  nn::ParamVector out = global;
  std::vector<double> column(n);
  for (long c = 0; c < global.values.size(); ++c) {
    for (int i = 0; i < n; ++i) column[i] = updates[i].values[c];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (int i = trim_k; i < n - trim_k; ++i) sum += column[i];
    out.values[c] += sum / static_cast<double>(n - 2 * trim_k);
  }
  return out;
}

nn::ParamVector aggregate_median(const nn::ParamVector& global,
                                 const std::vector<nn::ParamVector>& updates) {
  const int n = static_cast<int>(updates.size());
  if (n < 1) throw std::invalid_argument("aggregate_median: no updates");

  nn::ParamVector out = global;
  std::vector<double> column(n);
  for (long c = 0; c < global.values.size(); ++c) {
    for (int i = 0; i < n; ++i) column[i] = updates[i].values[c];
    std::sort(column.begin(), column.end());
    const double med = (n % 2 == 1) ? column[n / 2]
                                    : 0.5 * (column[n / 2 - 1] + column[n / 2]);
    out.values[c] += med;
  }
  return out;
}

double eval_acc(const nn::ParamVector& params, const nn::Batch& test) {
  if (test.size() == 0) throw std::invalid_argument("eval_acc: empty test set");
  Eigen::MatrixXd logits = nn::forward(params, test.features);
  long correct = 0;
  for (long i = 0; i < test.size(); ++i)
    if (argmax_lowest(logits.row(i)) == test.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double eval_asr(const nn::ParamVector& params, const nn::Batch& triggered_test) {
  if (triggered_test.size() == 0) throw std::invalid_argument("eval_asr: empty trigger set");
  Eigen::MatrixXd logits = nn::forward(params, triggered_test.features);
  long hits = 0;
  for (long i = 0; i < triggered_test.size(); ++i)
    if (argmax_lowest(logits.row(i)) == triggered_test.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(triggered_test.size());
}

std::pair<nn::ParamVector, RoundReport> run_round(
    const nn::ParamVector& global, const Roster& roster, const std::vector<int>& selection,
    const attacks::AttackConfig& attack, const Defense& defense, const Hyper& hyper,
    const nn::Batch& aux, const nn::Batch& test,
    const std::optional<nn::Batch>& trigger_test, int round) {
  roster.validate();
  if (selection.empty()) throw std::invalid_argument("run_round: empty selection");
  const auto t0 = std::chrono::steady_clock::now();

  RoundReport report;
  report.round = round;
  report.selected = selection;
  report.round_seed = derive_seed(roster.seed_base, round, 0, "round");

  std::vector<int> malicious_ids(roster.malicious.begin(), roster.malicious.end());
  std::sort(malicious_ids.begin(), malicious_ids.end());

  std::vector<nn::ParamVector> updates;
  updates.reserve(selection.size());
  for (int id : selection) {
    const nn::Batch data = partition::client_batch(*roster.train, *roster.part, id);
    const std::uint64_t train_seed = derive_seed(roster.seed_base, round, id, "train");
    const bool hostile = roster.is_malicious(id) && attack.kind != attacks::AttackKind::None;
    if (hostile) report.malicious_selected.push_back(id);

    if (!hostile) {
      updates.push_back(local_update(global, data, hyper, train_seed));
      continue;
    }

    switch (attack.kind) {
      case attacks::AttackKind::Backdoor:
      case attacks::AttackKind::ScalingBackdoor: {
        nn::Batch poisoned = attacks::poison_backdoor(
            data, *attack.trigger, attack.poison_rate,
            derive_seed(roster.seed_base, round, id, "poison"));
        nn::ParamVector delta = local_update(global, poisoned, hyper, train_seed);
        if (attack.kind == attacks::AttackKind::ScalingBackdoor)
          delta = attacks::attack_scale(delta, attack.scale_gamma);
        updates.push_back(std::move(delta));
        break;
      }
      case attacks::AttackKind::BackdoorDistributed: {
        const int rank = static_cast<int>(
            std::lower_bound(malicious_ids.begin(), malicious_ids.end(), id) -
            malicious_ids.begin());
        nn::Batch poisoned = attacks::poison_backdoor_distributed(
            data, *attack.trigger, attack.poison_rate, rank,
            static_cast<int>(malicious_ids.size()),
            derive_seed(roster.seed_base, round, id, "poison"));
        updates.push_back(local_update(global, poisoned, hyper, train_seed));
        break;
      }
      case attacks::AttackKind::SignFlip: {
        nn::ParamVector honest = local_update(global, data, hyper, train_seed);
        updates.push_back(attacks::attack_signflip(honest, attack.scale_gamma));
        break;
      }
      case attacks::AttackKind::MinMax:
      case attacks::AttackKind::MinSum: {
        auto sims = simulate_benign_updates(
            global, data, hyper.attacker_sim_clients, hyper,
            derive_seed(roster.seed_base, round, id, "sim"));
        updates.push_back(attack.kind == attacks::AttackKind::MinMax
                              ? attacks::attack_minmax(sims, attack.perturbation)
                              : attacks::attack_minsum(sims, attack.perturbation));
        break;
      }
      case attacks::AttackKind::Adaptive: {
        auto sims = simulate_benign_updates(
            global, data, hyper.attacker_sim_clients, hyper,
            derive_seed(roster.seed_base, round, id, "sim"));
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(global.values.size());
        for (const auto& s : sims) mean += s.values;
        mean /= static_cast<double>(sims.size());
        nn::ParamVector benign_mean{global.spec, mean};

        // The attacker probes activations with its own clean data; it has
        // no access to the server's auxiliary set.
        Rng probe_rng(derive_seed(roster.seed_base, round, id, "probe"));
        const long probe_n = std::min<long>(50, data.size());
        auto rows = probe_rng.sample_without_replacement(
            static_cast<std::size_t>(data.size()), static_cast<std::size_t>(probe_n));
        nn::Batch probe;
        probe.features.resize(probe_n, data.features.cols());
        probe.labels.resize(probe_n);
        for (long r = 0; r < probe_n; ++r) {
          probe.features.row(r) = data.features.row(static_cast<long>(rows[r]));
          probe.labels[r] = data.labels[static_cast<long>(rows[r])];
        }

        const auto selector =
            gg::default_layer_selector(global.spec, defense.gg.lseq_layers);
        Eigen::MatrixXd mean_lseq;
        for (std::size_t s = 0; s < sims.size(); ++s) {
          auto seq = gg::extract_lseq(global, sims[s], probe, selector);
          if (s == 0)
            mean_lseq = seq.per_sample;
          else
            mean_lseq += seq.per_sample;
        }
        mean_lseq /= static_cast<double>(sims.size());

        nn::Batch poisoned = attacks::poison_backdoor(
            data, *attack.trigger, attack.poison_rate,
            derive_seed(roster.seed_base, round, id, "poison"));
        attacks::AdaptiveOpts opts;
        opts.lambda = attack.adaptive_lambda;
        opts.rho = attack.adaptive_rho;
        opts.eta = attack.adaptive_eta;
        opts.steps = hyper.local_epochs;
        opts.lr = hyper.lr;
        opts.batch_size = hyper.batch_size;
        opts.momentum = hyper.momentum;
        updates.push_back(attacks::attack_adaptive(global, poisoned, data, benign_mean,
                                                   {mean_lseq, selector}, probe, opts,
                                                   train_seed));
        break;
      }
      case attacks::AttackKind::None:
        break;  // unreachable
    }
  }

  const int true_malicious = static_cast<int>(report.malicious_selected.size());
  const int n = static_cast<int>(updates.size());
  nn::ParamVector new_global = global;

  switch (defense.kind) {
    case DefenseKind::FedAvg:
      new_global = aggregate_fedavg(global, updates);
      report.survivors = selection;
      break;
    case DefenseKind::Krum: {
      const int f = defense.krum_f >= 0 ? defense.krum_f
                                        : std::max(0, std::min(true_malicious, n - 3));
      int chosen = 0;
      new_global = aggregate_krum(global, updates, f, &chosen);
      report.survivors = {selection[chosen]};
      break;
    }
    case DefenseKind::TrimmedMean: {
      const int k = defense.trim_k >= 0
                        ? defense.trim_k
                        : std::max(0, std::min(true_malicious, (n - 1) / 2));
      new_global = aggregate_trimmed_mean(global, updates, k);
      report.survivors = selection;
      break;
    }
    case DefenseKind::Median:
      new_global = aggregate_median(global, updates);
      report.survivors = selection;
      break;
    case DefenseKind::GeminiGuard: {
      auto [agg, diag] = gg::geminiguard_round(
          global, updates, aux, defense.gg,
          derive_seed(roster.seed_base, round, 0, "defense"));
      new_global = std::move(agg);
      report.k_star = diag.k_star;
      report.scores = diag.scores;
      report.avg_dist = diag.avg_dist;
      for (int idx : diag.survivors) report.survivors.push_back(selection[idx]);
      break;
    }
  }

  report.acc = eval_acc(new_global, test);
  report.asr = trigger_test ? eval_asr(new_global, *trigger_test) : 0.0;
  report.update_norm = (new_global.values - global.values).norm();
  report.elapsed_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  return {std::move(new_global), std::move(report)};
}

}  // namespace flsim::engine
