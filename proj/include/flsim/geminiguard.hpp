#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "flsim/nn.hpp"

namespace flsim::gg {

/// Per-client clustering feature: the weight vector extended with the sums
/// of pairwise cosine similarities and Euclidean distances to every other
/// client's weights, plus a per-coordinate z-scored copy used for
/// clustering (constant coordinates are left at zero).
struct FeatureVector {
  Eigen::VectorXd raw;           // length d + 2
  Eigen::VectorXd standardized;  // same length
};

struct ClusterResult {
  int k_star = 0;
  std::vector<int> assignments;         // point -> cluster, -1 never occurs
  Eigen::MatrixXd centroids;            // k_star rows
  std::map<int, double> silhouette_by_k;
};

/// Hidden-layer activation rows of one candidate model over the auxiliary
/// samples, in fixed auxiliary order.
struct ActivationSequence {
  Eigen::MatrixXd per_sample;  // m rows
  std::vector<int> layer_selector;

  long samples() const { return per_sample.rows(); }
};

/// Softmax-normalized aggregation weights and the (clamped) average
/// discrepancies they were computed from. Scores sum to one.
struct TrustScores {
  std::vector<double> avg_dist;
  std::vector<double> score;
};

/// How the inlier distance threshold is chosen.
struct InlierThreshold {
  bool data_driven = true;  // median + 3*MAD of the min-centroid distances
  double fixed = 0.0;       // used when data_driven is false
};

/// How the Gaussian kernel bandwidth is chosen.
struct BandwidthMode {
  bool median_heuristic = true;  // median pairwise distance over pooled rows
  double fixed = 1.0;            // used when median_heuristic is false
};

struct Params {
  double tau_temp = 0.5;
  int lseq_layers = 3;  // last-k hidden layers; 0 selects all hidden layers
  int k_max = 5;        // clustering tries k in [2, min(k_max, n-1)]
  BandwidthMode bandwidth;
  InlierThreshold tau_inlier;
};

struct RoundDiagnostics {
  std::vector<int> survivors;            // indices into the round's update list
  int k_star = 0;
  std::map<int, double> silhouette_by_k;
  std::vector<double> avg_dist;          // aligned with survivors
  std::vector<double> scores;            // aligned with survivors
  double bandwidth = 0.0;
  double tau_inlier = 0.0;
};

/// w_i = global + update_i, elementwise.
std::vector<nn::ParamVector> build_weight_vectors(const nn::ParamVector& global,
                                                  const std::vector<nn::ParamVector>& updates);

/// Features for clustering. Cosine similarity of a zero vector with anything
/// is zero; the pairwise sums exclude the self pair.
std::vector<FeatureVector> build_feature_vectors(const std::vector<nn::ParamVector>& weights);

/// K-means (k-means++ seeding, Lloyd iterations) per candidate k, keeping
/// the k with the highest mean silhouette; ties go to the smaller k.
/// Permuting the input rows permutes assignments bit-exactly.
ClusterResult kmeans_silhouette(const Eigen::MatrixXd& points, int k_max, std::uint64_t seed);

/// Inliers: points within tau of a representative centroid. A centroid whose
/// cluster is exactly the point itself is not evidence of fit, so singleton
/// points are measured against the nearest other centroid. Never empty.
std::vector<int> filter_inliers(const ClusterResult& result, const Eigen::MatrixXd& points,
                                const InlierThreshold& mode, double* tau_out = nullptr);

/// Compose the candidate model from the update and run the auxiliary batch
/// through it, capturing the selected hidden layers per sample.
ActivationSequence extract_lseq(const nn::ParamVector& global, const nn::ParamVector& update,
                                const nn::Batch& aux, const std::vector<int>& layer_selector);

/// Gaussian-kernel discrepancy between two activation sequences of equal
/// length m: both within-sequence sums exclude the diagonal, the cross term
/// does not, and everything is divided by m(m-1). Identical sequences give
/// exactly -2/(m-1).
double mmd_gaussian(const ActivationSequence& a, const ActivationSequence& b, double bandwidth);

/// Mean pairwise discrepancy of each sequence against all others (self
/// excluded). Raw values; may be negative.
std::vector<double> avg_distances(const std::vector<ActivationSequence>& sequences,
                                  double bandwidth);

/// Distances are clamped below at 1e-6, then softmax over 1/dist/temperature
/// (max-subtracted). Smaller distance means strictly larger score.
TrustScores trust_scores(const std::vector<double>& avg_dist, double temperature);

/// new_global = global + sum_i score_i * update_i with scores renormalized
/// over the given set.
nn::ParamVector aggregate_weighted(const nn::ParamVector& global,
                                   const std::vector<nn::ParamVector>& updates,
                                   const std::vector<double>& scores);

/// Last-k (or all) hidden layer indices for the given model.
std::vector<int> default_layer_selector(const nn::ModelSpec& spec, int last_k);

/// Median pairwise distance over pooled activation rows, floored at 1e-6.
double median_bandwidth(const std::vector<ActivationSequence>& sequences);

/// The full defense round: weight features, cluster and filter, activation
/// sequences for survivors, discrepancy scoring, trust-weighted aggregation.
std::pair<nn::ParamVector, RoundDiagnostics> geminiguard_round(
    const nn::ParamVector& global, const std::vector<nn::ParamVector>& updates,
    const nn::Batch& aux, const Params& params, std::uint64_t seed);

}  // namespace flsim::gg
