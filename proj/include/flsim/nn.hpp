#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace flsim::nn {

enum class Activation { Relu, Tanh };

/// Dense MLP architecture: input width, one or more hidden widths, output
/// width. The output layer emits raw logits; softmax lives in the loss.
struct ModelSpec {
  std::vector<int> layer_widths;
  Activation hidden_activation = Activation::Relu;

  /// Number of affine layers.
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  /// Number of hidden (non-output) layers.
  int hidden_layer_count() const { return num_layers() - 1; }
  int input_width() const { return layer_widths.front(); }
  int output_width() const { return layer_widths.back(); }

  /// Flat parameter count: per layer, a weight matrix plus a bias vector.
  long param_count() const;
  void validate() const;

  bool operator==(const ModelSpec& other) const {
    return layer_widths == other.layer_widths &&
           hidden_activation == other.hidden_activation;
  }
};

/// Flattened model parameters. Houses the global model, local models, and
/// their differences (updates) interchangeably; shape is carried alongside.
struct ParamVector {
  ModelSpec spec;
  Eigen::VectorXd values;

  long size() const { return values.size(); }
};

struct Batch {
  Eigen::MatrixXd features;  // rows are samples
  Eigen::VectorXi labels;

  long size() const { return features.rows(); }
};

/// Glorot-uniform weights, zero biases. Deterministic per (spec, seed).
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Batched forward pass; returns logits (rows x output width).
Eigen::MatrixXd forward(const ParamVector& params, const Eigen::MatrixXd& features);

/// Forward pass that also captures post-activation values of the selected
/// hidden layers (0-based hidden indices; the output layer is not
/// selectable). Per sample, the selected layers are concatenated in layer
/// order. Logits are bit-identical to forward().
struct ActivationCapture {
  Eigen::MatrixXd logits;
  Eigen::MatrixXd activations;  // rows x (sum of selected widths)
};
ActivationCapture forward_with_activations(const ParamVector& params,
                                           const Eigen::MatrixXd& features,
                                           const std::vector<int>& layer_selector);

/// All intermediate post-activation values of one forward pass.
/// activations[0] is the input; activations[l] for l >= 1 is hidden layer
/// l-1; logits are kept separately.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;
  Eigen::MatrixXd logits;
};
ForwardTrace forward_trace(const ParamVector& params, const Eigen::MatrixXd& features);

/// Reverse pass from an arbitrary logits gradient, with optional extra
/// gradients injected at hidden layers (pairs of hidden index and a
/// rows x width matrix w.r.t. that layer's post-activation values).
ParamVector backward_from(const ParamVector& params, const ForwardTrace& trace,
                          const Eigen::MatrixXd& grad_logits,
                          const std::vector<std::pair<int, Eigen::MatrixXd>>& grad_hidden = {});

/// Mean cross-entropy over the batch and its analytic gradient.
struct LossGrad {
  double loss;
  ParamVector gradient;
};
LossGrad grad_cross_entropy(const ParamVector& params, const Batch& batch);

/// One optimizer step's gradient source: called per mini-batch.
using StepGradFn = std::function<ParamVector(const ParamVector&, const Batch&)>;
/// Optional hook applied to the parameters after each SGD step.
using PostStepFn = std::function<void(ParamVector&)>;

/// Mini-batch SGD with momentum. Shuffles per epoch from the given seed;
/// the trailing partial batch is kept. Deterministic in all arguments.
ParamVector sgd_train(const ParamVector& start, const Batch& data, int epochs,
                      int batch_size, double lr, double momentum, std::uint64_t seed,
                      const StepGradFn& grad_fn, const PostStepFn& post_step = nullptr);

/// Local training as a client performs it: cross-entropy SGD from the
/// distributed global model. Returns the locally trained parameters.
ParamVector train_local(const ParamVector& global, const Batch& data, int epochs,
                        int batch_size, double lr, double momentum, std::uint64_t seed);

/// Throws if the two parameter vectors do not share a spec.
void check_same_spec(const ParamVector& a, const ParamVector& b);

}  // namespace flsim::nn
