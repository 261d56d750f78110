#include "flsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "flsim/rng.hpp"

namespace flsim::attacks {

namespace {

constexpr double kNormalizerFloor = 1e-12;
constexpr int kBisectionIterations = 30;

void stamp(nn::Batch& batch, long row, const TriggerSpec& trigger, bool set_label) {
  for (std::size_t t = 0; t < trigger.feature_indices.size(); ++t)
    batch.features(row, trigger.feature_indices[t]) = trigger.trigger_values[t];
  if (set_label) batch.labels[row] = trigger.target_label;
}

Eigen::VectorXd perturbation_direction(const std::vector<nn::ParamVector>& benign,
                                       const Eigen::VectorXd& mean, Perturbation kind) {
  switch (kind) {
    case Perturbation::InverseUnit: {
      const double norm = mean.norm();
      return norm > 0.0 ? Eigen::VectorXd(-mean / norm)
                        : Eigen::VectorXd(Eigen::VectorXd::Zero(mean.size()));
    }
    case Perturbation::InverseStd: {
      Eigen::VectorXd var = Eigen::VectorXd::Zero(mean.size());
      for (const auto& u : benign) var += (u.values - mean).cwiseAbs2();
      var /= static_cast<double>(benign.size());
      return -var.cwiseSqrt();
    }
    case Perturbation::Sign: {
      Eigen::VectorXd s(mean.size());
      for (long i = 0; i < mean.size(); ++i)
        s[i] = mean[i] > 0.0 ? -1.0 : (mean[i] < 0.0 ? 1.0 : 0.0);
      return s;
    }
  }
  throw std::logic_error("unknown perturbation");
}

// Shared gamma search for the distance-constrained attacks: doubling until
// infeasible, then bisection, returning mu + gamma * p for the largest
// feasible gamma found.
template <typename Feasible>
nn::ParamVector optimize_gamma(const std::vector<nn::ParamVector>& benign,
                               Perturbation perturbation, const Feasible& feasible) {
  if (benign.size() < 2)
    throw std::invalid_argument("distance-constrained attack: need at least 2 benign updates");
  for (std::size_t i = 1; i < benign.size(); ++i) nn::check_same_spec(benign[0], benign[i]);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(benign[0].values.size());
  for (const auto& u : benign) mean += u.values;
  mean /= static_cast<double>(benign.size());

  const Eigen::VectorXd dir = perturbation_direction(benign, mean, perturbation);
  if (dir.norm() == 0.0) return {benign[0].spec, mean};

  double lo = 0.0;
  double hi = 1.0;
  int doubling = 0;
  while (feasible(mean + hi * dir) && doubling < 60) {
    lo = hi;
    hi *= 2.0;
    ++doubling;
  }
  for (int it = 0; it < kBisectionIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mean + mid * dir))
      lo = mid;
    else
      hi = mid;
  }
  return {benign[0].spec, mean + lo * dir};
}

}  // namespace

void TriggerSpec::validate(int input_width, int num_classes) const {
  if (feature_indices.size() != trigger_values.size())
    throw std::invalid_argument("trigger: index/value length mismatch");
  if (feature_indices.empty()) throw std::invalid_argument("trigger: empty");
  std::set<int> seen;
  for (int idx : feature_indices) {
    if (idx < 0 || idx >= input_width)
      throw std::invalid_argument("trigger: feature index out of range");
    if (!seen.insert(idx).second)
      throw std::invalid_argument("trigger: duplicate feature index");
  }
  if (target_label < 0 || target_label >= num_classes)
    throw std::invalid_argument("trigger: target label out of range");
}

void AttackConfig::validate(int input_width, int num_classes) const {
  if (poison_rate < 0.0 || poison_rate > 1.0)
    throw std::invalid_argument("attack: poison_rate must be in [0,1]");
  if (is_backdoor()) {
    if (!trigger) throw std::invalid_argument("attack: backdoor kinds require a trigger");
    trigger->validate(input_width, num_classes);
  }
  if (kind == AttackKind::ScalingBackdoor || kind == AttackKind::SignFlip) {
    if (scale_gamma <= 0.0) throw std::invalid_argument("attack: gamma must be > 0");
  }
  if (adaptive_lambda < 0.0 || adaptive_rho < 0.0 || adaptive_eta < 0.0)
    throw std::invalid_argument("attack: adaptive coefficients must be >= 0");
}

nn::Batch poison_backdoor(const nn::Batch& data, const TriggerSpec& trigger,
                          double poison_rate, std::uint64_t seed) {
  if (poison_rate < 0.0 || poison_rate > 1.0)
    throw std::invalid_argument("poison_backdoor: rate must be in [0,1]");
  for (int idx : trigger.feature_indices)
    if (idx < 0 || idx >= data.features.cols())
      throw std::invalid_argument("poison_backdoor: trigger index out of range");

  nn::Batch out = data;
  const long n = data.size();
  const long count = static_cast<long>(std::floor(poison_rate * static_cast<double>(n)));
  Rng rng(seed);
  auto rows = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                             static_cast<std::size_t>(count));
  for (std::size_t r : rows) stamp(out, static_cast<long>(r), trigger, true);
  return out;
}

TriggerSpec trigger_shard(const TriggerSpec& trigger, int attacker_index, int num_attackers) {
  if (num_attackers < 1 || attacker_index < 0 || attacker_index >= num_attackers)
    throw std::invalid_argument("trigger_shard: attacker index out of range");
  const long total = static_cast<long>(trigger.feature_indices.size());
  const long shard = (total + num_attackers - 1) / num_attackers;
  const long begin = std::min<long>(attacker_index * shard, total);
  const long end = std::min<long>(begin + shard, total);
  TriggerSpec out;
  out.target_label = trigger.target_label;
  out.feature_indices.assign(trigger.feature_indices.begin() + begin,
                             trigger.feature_indices.begin() + end);
  out.trigger_values.assign(trigger.trigger_values.begin() + begin,
                            trigger.trigger_values.begin() + end);
  return out;
}

nn::Batch poison_backdoor_distributed(const nn::Batch& data, const TriggerSpec& trigger,
                                      double poison_rate, int attacker_index,
                                      int num_attackers, std::uint64_t seed) {
  TriggerSpec shard = trigger_shard(trigger, attacker_index, num_attackers);
  if (shard.feature_indices.empty()) {
    // More attackers than coordinates: this attacker only flips labels.
    shard.feature_indices = {trigger.feature_indices.front()};
    shard.trigger_values = {trigger.trigger_values.front()};
  }
  return poison_backdoor(data, shard, poison_rate, seed);
}

nn::Batch make_trigger_testset(const nn::Batch& clean_test, const TriggerSpec& trigger) {
  std::vector<long> keep;
  for (long i = 0; i < clean_test.size(); ++i)
    if (clean_test.labels[i] != trigger.target_label) keep.push_back(i);
  if (keep.empty())
    throw std::invalid_argument("make_trigger_testset: no rows outside the target class");

  nn::Batch out;
  out.features.resize(static_cast<long>(keep.size()), clean_test.features.cols());
  out.labels.resize(static_cast<long>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.features.row(static_cast<long>(r)) = clean_test.features.row(keep[r]);
    stamp(out, static_cast<long>(r), trigger, false);
    out.labels[static_cast<long>(r)] = trigger.target_label;
  }
  return out;
}

nn::ParamVector attack_signflip(const nn::ParamVector& honest_update, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("attack_signflip: gamma must be > 0");
  return {honest_update.spec, -gamma * honest_update.values};
}

nn::ParamVector attack_minmax(const std::vector<nn::ParamVector>& benign_updates,
                              Perturbation perturbation) {
  double bound = 0.0;
  for (std::size_t i = 0; i < benign_updates.size(); ++i)
    for (std::size_t j = i + 1; j < benign_updates.size(); ++j)
      bound = std::max(bound,
                       (benign_updates[i].values - benign_updates[j].values).norm());
  return optimize_gamma(benign_updates, perturbation, [&](const Eigen::VectorXd& candidate) {
    double worst = 0.0;
    for (const auto& u : benign_updates)
      worst = std::max(worst, (candidate - u.values).norm());
    return worst <= bound;
  });
}

nn::ParamVector attack_minsum(const std::vector<nn::ParamVector>& benign_updates,
                              Perturbation perturbation) {
  double bound = 0.0;
  for (std::size_t i = 0; i < benign_updates.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < benign_updates.size(); ++j)
      sum += (benign_updates[i].values - benign_updates[j].values).squaredNorm();
    bound = std::max(bound, sum);
  }
  return optimize_gamma(benign_updates, perturbation, [&](const Eigen::VectorXd& candidate) {
    double sum = 0.0;
    for (const auto& u : benign_updates) sum += (candidate - u.values).squaredNorm();
    return sum <= bound;
  });
}

nn::ParamVector attack_scale(const nn::ParamVector& update, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("attack_scale: gamma must be > 0");
  return {update.spec, gamma * update.values};
}

nn::ParamVector attack_adaptive(const nn::ParamVector& global, const nn::Batch& poisoned,
                                const nn::Batch& clean,
                                const nn::ParamVector& benign_mean_update,
                                const gg::ActivationSequence& benign_mean_lseq,
                                const nn::Batch& aux, const AdaptiveOpts& opts,
                                std::uint64_t seed) {
  if (opts.lambda < 0.0 || opts.rho < 0.0 || opts.eta < 0.0)
    throw std::invalid_argument("attack_adaptive: coefficients must be >= 0");
  if (opts.steps < 1) throw std::invalid_argument("attack_adaptive: steps must be >= 1");
  nn::check_same_spec(global, benign_mean_update);

  // Normalizers are the magnitudes of the two distance terms before any
  // update is taken; the local model starts at the global model.
  double update_norm0 = 0.0;
  double lseq_norm0 = 0.0;
  const std::vector<int>& selector = benign_mean_lseq.layer_selector;
  // delta starts at zero, so the step-0 distance is just |benign mean|.
  if (opts.rho > 0.0)
    update_norm0 = std::max(benign_mean_update.values.norm(), kNormalizerFloor);
  if (opts.eta > 0.0) {
    auto capture = nn::forward_with_activations(global, aux.features, selector);
    lseq_norm0 = std::max(
        (capture.activations - benign_mean_lseq.per_sample).squaredNorm() /
            static_cast<double>(aux.size()),
        kNormalizerFloor);
  }

  // Clean mini-batches come from an independent stream so the main SGD
  // stream matches train_local exactly when the extra terms are off.
  Rng clean_rng(mix_seed(seed, fnv1a64("adaptive-clean")));

  nn::StepGradFn grad_fn = [&](const nn::ParamVector& p, const nn::Batch& mb) {
    nn::ParamVector g = nn::grad_cross_entropy(p, mb).gradient;
    if (opts.lambda > 0.0 && clean.size() > 0) {
      const long take = std::min<long>(opts.batch_size, clean.size());
      nn::Batch cb;
      cb.features.resize(take, clean.features.cols());
      cb.labels.resize(take);
      auto rows = clean_rng.sample_without_replacement(
          static_cast<std::size_t>(clean.size()), static_cast<std::size_t>(take));
      for (long r = 0; r < take; ++r) {
        cb.features.row(r) = clean.features.row(static_cast<long>(rows[r]));
        cb.labels[r] = clean.labels[static_cast<long>(rows[r])];
      }
      g.values += opts.lambda * nn::grad_cross_entropy(p, cb).gradient.values;
    }
    if (opts.eta > 0.0) {
      nn::ForwardTrace trace = nn::forward_trace(p, aux.features);
      long col = 0;
      std::vector<std::pair<int, Eigen::MatrixXd>> grad_hidden;
      for (int layer : selector) {
        const Eigen::MatrixXd& act = trace.activations[layer + 1];
        const Eigen::MatrixXd target = benign_mean_lseq.per_sample.middleCols(col, act.cols());
        grad_hidden.emplace_back(
            layer, Eigen::MatrixXd((opts.eta / lseq_norm0) * (2.0 / aux.size()) *
                                   (act - target)));
        col += act.cols();
      }
      Eigen::MatrixXd zero_logits = Eigen::MatrixXd::Zero(aux.size(), p.spec.output_width());
      g.values += nn::backward_from(p, trace, zero_logits, grad_hidden).values;
    }
    return g;
  };

  // The update-distance penalty rho * |delta - mean| / norm0 is nonsmooth at
  // its minimum; its exact proximal map is a shrinkage of delta toward the
  // benign mean by lr * rho / norm0 per step.
  nn::PostStepFn post_step = nullptr;
  if (opts.rho > 0.0) {
    const double shrink = opts.lr * opts.rho / update_norm0;
    post_step = [&, shrink](nn::ParamVector& p) {
      Eigen::VectorXd gap = p.values - global.values - benign_mean_update.values;
      const double dist = gap.norm();
      if (dist <= shrink) {
        p.values = global.values + benign_mean_update.values;
      } else {
        p.values -= (shrink / dist) * gap;
      }
    };
  }

  nn::ParamVector theta =
      nn::sgd_train(global, poisoned, opts.steps, opts.batch_size, opts.lr, opts.momentum,
                    seed, grad_fn, post_step);
  return {global.spec, theta.values - global.values};
}

}  // namespace flsim::attacks
