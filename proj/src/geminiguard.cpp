#include "flsim/geminiguard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "flsim/canonical.hpp"
#include "flsim/rng.hpp"

namespace flsim::gg {

namespace {

constexpr double kDistClamp = 1e-6;
constexpr double kBandwidthFloor = 1e-6;
constexpr int kLloydIterations = 100;
constexpr double kLloydTolerance = 1e-8;

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct KmeansRun {
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;
  double mean_silhouette = 0.0;
};

// K-means++ seeding followed by Lloyd iterations over rows of `pts`.
// Rows must already be in canonical order; all reductions run in row order.
KmeansRun run_kmeans(const Eigen::MatrixXd& pts, int k, Rng& rng) {
  const long n = pts.rows();
  KmeansRun run;
  run.centroids.resize(k, pts.cols());

  // Seeding: first centroid uniform, the rest weighted by squared distance
  // to the nearest chosen centroid.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  long first = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  run.centroids.row(0) = pts.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
      const double dd = (pts.row(i) - run.centroids.row(c - 1)).squaredNorm();
      d2[i] = std::min(d2[i], dd);
      total += d2[i];
    }
    long chosen = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      chosen = n - 1;
      for (long i = 0; i < n; ++i) {
        cum += d2[i];
        if (r < cum) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    }
    run.centroids.row(c) = pts.row(chosen);
  }

  run.assignments.assign(n, 0);
  for (int iter = 0; iter < kLloydIterations; ++iter) {
    for (long i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (pts.row(i) - run.centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dd = (pts.row(i) - run.centroids.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      run.assignments[i] = best;
    }

    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, pts.cols());
    std::vector<long> counts(k, 0);
    for (long i = 0; i < n; ++i) {
      next.row(run.assignments[i]) += pts.row(i);
      counts[run.assignments[i]] += 1;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= static_cast<double>(counts[c]);
      } else {
        // Re-seed an empty cluster to the farthest point, unless everything
        // is coincident, in which case the cluster stays where it was.
        long far_i = 0;
        double far_d = -1.0;
        for (long i = 0; i < n; ++i) {
          const double dd =
              (pts.row(i) - run.centroids.row(run.assignments[i])).squaredNorm();
          if (dd > far_d) {
            far_d = dd;
            far_i = i;
          }
        }
        if (far_d > 0.0)
          next.row(c) = pts.row(far_i);
        else
          next.row(c) = run.centroids.row(c);
      }
    }

    const double moved = (next - run.centroids).rowwise().norm().maxCoeff();
    run.centroids = next;
    if (moved <= kLloydTolerance) break;
  }

  // Final assignment against the settled centroids.
  for (long i = 0; i < n; ++i) {
    int best = 0;
    double best_d = (pts.row(i) - run.centroids.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double dd = (pts.row(i) - run.centroids.row(c)).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    run.assignments[i] = best;
  }
  return run;
}

double mean_silhouette(const Eigen::MatrixXd& pts, const std::vector<int>& assignments,
                       int k) {
  const long n = pts.rows();
  std::vector<long> counts(k, 0);
  for (int a : assignments) counts[a] += 1;

  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    const int own = assignments[i];
    if (counts[own] <= 1) continue;  // singleton: silhouette defined as 0

    std::vector<double> sums(k, 0.0);
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[assignments[j]] += (pts.row(i) - pts.row(j)).norm();
    }
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    if (!std::isfinite(b)) continue;  // no other nonempty cluster
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double gaussian_kernel(const Eigen::MatrixXd& rows_a, long x, const Eigen::MatrixXd& rows_b,
                       long y, double inv_two_bw2) {
  return std::exp(-(rows_a.row(x) - rows_b.row(y)).squaredNorm() * inv_two_bw2);
}

}  // namespace

std::vector<nn::ParamVector> build_weight_vectors(const nn::ParamVector& global,
                                                  const std::vector<nn::ParamVector>& updates) {
  std::vector<nn::ParamVector> weights;
  weights.reserve(updates.size());
  for (const auto& u : updates) {
    nn::check_same_spec(global, u);
    weights.push_back({global.spec, global.values + u.values});
  }
  return weights;
}

std::vector<FeatureVector> build_feature_vectors(const std::vector<nn::ParamVector>& weights) {
  const std::size_t n = weights.size();
  if (n < 2) throw std::invalid_argument("build_feature_vectors: need at least 2 clients");
  for (std::size_t i = 1; i < n; ++i) nn::check_same_spec(weights[0], weights[i]);
  const long d = weights[0].values.size();

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = weights[i].values.norm();

  std::vector<FeatureVector> features(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> cosims, dists;
    cosims.reserve(n - 1);
    dists.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double cs = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0)
        cs = weights[i].values.dot(weights[j].values) / (norms[i] * norms[j]);
      cosims.push_back(cs);
      dists.push_back((weights[i].values - weights[j].values).norm());
    }
    features[i].raw.resize(d + 2);
    features[i].raw.head(d) = weights[i].values;
    features[i].raw[d] = sorted_sum(cosims);
    features[i].raw[d + 1] = sorted_sum(dists);
  }

  // Coordinate-wise z-score across the round; constant coordinates go to 0.
  for (std::size_t i = 0; i < n; ++i) features[i].standardized.resize(d + 2);
  std::vector<double> column(n);
  for (long c = 0; c < d + 2; ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = features[i].raw[c];
    const double mean = sorted_sum(column) / static_cast<double>(n);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (column[i] - mean) * (column[i] - mean);
    const double var = sorted_sum(sq) / static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i)
      features[i].standardized[c] = sd > 0.0 ? (column[i] - mean) / sd : 0.0;
  }
  return features;
}

ClusterResult kmeans_silhouette(const Eigen::MatrixXd& points, int k_max, std::uint64_t seed) {
  const long n = points.rows();
  if (n < 2) throw std::invalid_argument("kmeans_silhouette: need at least 2 points");
  if (k_max < 2 || k_max > n)
    throw std::invalid_argument("kmeans_silhouette: need 2 <= k_max <= point count");

  // Work in canonical (lexicographic) row order so that permuting the input
  // permutes the result exactly.
  std::vector<std::size_t> order =
      canonical_order(static_cast<std::size_t>(n),
                      [&](std::size_t i) { return Eigen::VectorXd(points.row(i)); });
  Eigen::MatrixXd pts(n, points.cols());
  for (long i = 0; i < n; ++i) pts.row(i) = points.row(order[i]);

  ClusterResult result;
  std::vector<KmeansRun> runs;
  runs.reserve(k_max - 1);
  for (int k = 2; k <= k_max; ++k) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    KmeansRun run = run_kmeans(pts, k, rng);
    run.mean_silhouette = mean_silhouette(pts, run.assignments, k);
    result.silhouette_by_k[k] = run.mean_silhouette;
    runs.push_back(std::move(run));
  }

  int best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].mean_silhouette > runs[best].mean_silhouette) best = static_cast<int>(r);

  result.k_star = best + 2;
  result.centroids = runs[best].centroids;
  result.assignments.assign(n, 0);
  for (long i = 0; i < n; ++i) result.assignments[order[i]] = runs[best].assignments[i];
  return result;
}

std::vector<int> filter_inliers(const ClusterResult& result, const Eigen::MatrixXd& points,
                                const InlierThreshold& mode, double* tau_out) {
  const long n = points.rows();
  if (static_cast<long>(result.assignments.size()) != n)
    throw std::invalid_argument("filter_inliers: result does not match points");

  std::vector<long> counts(result.centroids.rows(), 0);
  for (int a : result.assignments) counts[a] += 1;

  // A cluster holding only the point itself says nothing about fit, so such
  // points are measured against the nearest other centroid.
  std::vector<double> dist(n);
  for (long i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (long c = 0; c < result.centroids.rows(); ++c) {
      const bool own_singleton = (result.assignments[i] == c && counts[c] == 1);
      if (own_singleton) continue;
      best = std::min(best, (points.row(i) - result.centroids.row(c)).norm());
    }
    dist[i] = std::isfinite(best) ? best : 0.0;
  }

  double tau;
  if (mode.data_driven) {
    const double med = median_of(dist);
    std::vector<double> dev(n);
    for (long i = 0; i < n; ++i) dev[i] = std::abs(dist[i] - med);
    tau = med + 3.0 * median_of(dev);
  } else {
    tau = mode.fixed;
  }
  if (tau_out) *tau_out = tau;

  std::vector<int> survivors;
  for (long i = 0; i < n; ++i)
    if (dist[i] <= tau) survivors.push_back(static_cast<int>(i));
  if (survivors.empty()) {
    long best = static_cast<long>(std::min_element(dist.begin(), dist.end()) - dist.begin());
    survivors.push_back(static_cast<int>(best));
  }
  return survivors;
}

std::vector<int> default_layer_selector(const nn::ModelSpec& spec, int last_k) {
  const int hidden = spec.hidden_layer_count();
  std::vector<int> selector;
  const int start = (last_k <= 0 || last_k >= hidden) ? 0 : hidden - last_k;
  for (int i = start; i < hidden; ++i) selector.push_back(i);
  return selector;
}

ActivationSequence extract_lseq(const nn::ParamVector& global, const nn::ParamVector& update,
                                const nn::Batch& aux, const std::vector<int>& layer_selector) {
  if (aux.size() < 2)
    throw std::invalid_argument("extract_lseq: need at least 2 auxiliary samples");
  nn::check_same_spec(global, update);
  nn::ParamVector candidate{global.spec, global.values + update.values};
  auto capture = nn::forward_with_activations(candidate, aux.features, layer_selector);
  return {std::move(capture.activations), layer_selector};
}

double mmd_gaussian(const ActivationSequence& a, const ActivationSequence& b,
                    double bandwidth) {
  const long m = a.samples();
  if (m != b.samples()) throw std::invalid_argument("mmd_gaussian: sequence lengths differ");
  if (m < 2) throw std::invalid_argument("mmd_gaussian: need at least 2 samples");
  if (bandwidth <= 0.0) throw std::invalid_argument("mmd_gaussian: bandwidth must be > 0");

  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  double within_a = 0.0, within_b = 0.0, cross = 0.0;
  for (long x = 0; x < m; ++x)
    for (long y = x + 1; y < m; ++y) {
      within_a += 2.0 * gaussian_kernel(a.per_sample, x, a.per_sample, y, inv);
      within_b += 2.0 * gaussian_kernel(b.per_sample, x, b.per_sample, y, inv);
    }
  for (long x = 0; x < m; ++x)
    for (long y = 0; y < m; ++y)
      cross += gaussian_kernel(a.per_sample, x, b.per_sample, y, inv);

  return (within_a + within_b - 2.0 * cross) /
         (static_cast<double>(m) * static_cast<double>(m - 1));
}

std::vector<double> avg_distances(const std::vector<ActivationSequence>& sequences,
                                  double bandwidth) {
  const std::size_t n = sequences.size();
  if (n < 2) throw std::invalid_argument("avg_distances: need at least 2 clients");

  // Each unordered pair is evaluated once and mirrored, and per-client sums
  // run in value order, so the result is exactly permutation-equivariant.
  Eigen::MatrixXd mmd = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = mmd_gaussian(sequences[i], sequences[j], bandwidth);
      mmd(i, j) = v;
      mmd(j, i) = v;
    }

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> terms;
    terms.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) terms.push_back(mmd(i, j));
    out[i] = sorted_sum(terms) / static_cast<double>(n - 1);
  }
  return out;
}

TrustScores trust_scores(const std::vector<double>& avg_dist, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("trust_scores: temperature must be > 0");
  if (avg_dist.empty()) throw std::invalid_argument("trust_scores: empty input");

  TrustScores ts;
  ts.avg_dist.reserve(avg_dist.size());
  std::vector<double> logits;
  logits.reserve(avg_dist.size());
  for (double d : avg_dist) {
    const double clamped = std::max(d, kDistClamp);
    ts.avg_dist.push_back(clamped);
    logits.push_back(1.0 / clamped / temperature);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> exps(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) exps[i] = std::exp(logits[i] - top);
  const double denom = sorted_sum(exps);
  ts.score.resize(exps.size());
  for (std::size_t i = 0; i < exps.size(); ++i) ts.score[i] = exps[i] / denom;
  return ts;
}

nn::ParamVector aggregate_weighted(const nn::ParamVector& global,
                                   const std::vector<nn::ParamVector>& updates,
                                   const std::vector<double>& scores) {
  if (updates.empty()) throw std::invalid_argument("aggregate_weighted: empty survivor set");
  if (updates.size() != scores.size())
    throw std::invalid_argument("aggregate_weighted: scores do not cover the survivors");
  for (double s : scores)
    if (!(s >= 0.0)) throw std::invalid_argument("aggregate_weighted: negative score");
  const double total = sorted_sum(scores);
  if (total <= 0.0) throw std::invalid_argument("aggregate_weighted: zero score mass");

  std::vector<std::size_t> order = canonical_order(
      updates.size(), [&](std::size_t i) -> const Eigen::VectorXd& { return updates[i].values; });

  nn::ParamVector out = global;
  for (std::size_t i : order) {
    nn::check_same_spec(global, updates[i]);
    out.values += (scores[i] / total) * updates[i].values;
  }
  return out;
}

double median_bandwidth(const std::vector<ActivationSequence>& sequences) {
  long rows = 0;
  for (const auto& s : sequences) rows += s.samples();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(rows) * (rows - 1) / 2);
  for (std::size_t si = 0; si < sequences.size(); ++si)
    for (long x = 0; x < sequences[si].samples(); ++x)
      for (std::size_t sj = si; sj < sequences.size(); ++sj)
        for (long y = (sj == si ? x + 1 : 0); y < sequences[sj].samples(); ++y)
          dists.push_back(
              (sequences[si].per_sample.row(x) - sequences[sj].per_sample.row(y)).norm());
  if (dists.empty()) return kBandwidthFloor;
  return std::max(median_of(dists), kBandwidthFloor);
}

std::pair<nn::ParamVector, RoundDiagnostics> geminiguard_round(
    const nn::ParamVector& global, const std::vector<nn::ParamVector>& updates,
    const nn::Batch& aux, const Params& params, std::uint64_t seed) {
  const std::size_t n = updates.size();
  if (n < 2) throw std::invalid_argument("geminiguard_round: need at least 2 updates");

  auto weights = build_weight_vectors(global, updates);
  auto features = build_feature_vectors(weights);
  Eigen::MatrixXd points(n, features[0].standardized.size());
  for (std::size_t i = 0; i < n; ++i) points.row(i) = features[i].standardized;

  const int k_max = std::max(2, std::min<int>(params.k_max, static_cast<int>(n) - 1));
  ClusterResult cluster = kmeans_silhouette(points, k_max, mix_seed(seed, fnv1a64("kmeans")));

  RoundDiagnostics diag;
  diag.k_star = cluster.k_star;
  diag.silhouette_by_k = cluster.silhouette_by_k;
  diag.survivors = filter_inliers(cluster, points, params.tau_inlier, &diag.tau_inlier);

  std::vector<nn::ParamVector> surviving_updates;
  surviving_updates.reserve(diag.survivors.size());
  for (int idx : diag.survivors) surviving_updates.push_back(updates[idx]);

  if (diag.survivors.size() == 1) {
    diag.scores = {1.0};
    diag.avg_dist = {0.0};
    diag.bandwidth = 0.0;
    nn::ParamVector out = global;
    out.values += surviving_updates[0].values;
    return {std::move(out), std::move(diag)};
  }

  const auto selector = default_layer_selector(global.spec, params.lseq_layers);
  std::vector<ActivationSequence> sequences;
  sequences.reserve(diag.survivors.size());
  for (const auto& u : surviving_updates)
    sequences.push_back(extract_lseq(global, u, aux, selector));

  diag.bandwidth = params.bandwidth.median_heuristic
                       ? median_bandwidth(sequences)
                       : std::max(params.bandwidth.fixed, kBandwidthFloor);

  std::vector<double> dists = avg_distances(sequences, diag.bandwidth);
  TrustScores ts = trust_scores(dists, params.tau_temp);
  diag.avg_dist = ts.avg_dist;
  diag.scores = ts.score;

  nn::ParamVector out = aggregate_weighted(global, surviving_updates, ts.score);
  return {std::move(out), std::move(diag)};
}

}  // namespace flsim::gg
