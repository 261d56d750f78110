#include "flsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "flsim/rng.hpp"

namespace flsim::nn {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* where) {
  if (!v.allFinite()) throw std::runtime_error(std::string(where) + ": non-finite values");
}

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::Relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

// Derivative of the activation expressed through its post-activation value.
Eigen::ArrayXXd activation_deriv(const Eigen::MatrixXd& post, Activation act) {
  if (act == Activation::Relu) return (post.array() > 0.0).cast<double>();
  return 1.0 - post.array().square();
}

// Offset of layer l's weight block in the flat vector; biases follow it.
long layer_offset(const ModelSpec& spec, int layer) {
  long off = 0;
  for (int l = 0; l < layer; ++l) {
    const long in = spec.layer_widths[l];
    const long out = spec.layer_widths[l + 1];
    off += in * out + out;
  }
  return off;
}

Eigen::Map<const Eigen::MatrixXd> weight_of(const ParamVector& p, int layer) {
  const long in = p.spec.layer_widths[layer];
  const long out = p.spec.layer_widths[layer + 1];
  return {p.values.data() + layer_offset(p.spec, layer), out, in};
}

Eigen::Map<const Eigen::VectorXd> bias_of(const ParamVector& p, int layer) {
  const long in = p.spec.layer_widths[layer];
  const long out = p.spec.layer_widths[layer + 1];
  return {p.values.data() + layer_offset(p.spec, layer) + in * out, out};
}

void check_params(const ParamVector& p) {
  p.spec.validate();
  if (p.values.size() != p.spec.param_count())
    throw std::invalid_argument("ParamVector: length does not match spec");
}

void check_input(const ParamVector& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.spec.input_width())
    throw std::invalid_argument("forward: feature width does not match model input width");
}

}  // namespace

long ModelSpec::param_count() const {
  long d = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
    d += static_cast<long>(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
  return d;
}

void ModelSpec::validate() const {
  if (layer_widths.size() < 3)
    throw std::invalid_argument("ModelSpec: need at least one hidden layer");
  for (int w : layer_widths)
    if (w < 1) throw std::invalid_argument("ModelSpec: all widths must be >= 1");
}

void check_same_spec(const ParamVector& a, const ParamVector& b) {
  if (!(a.spec == b.spec) || a.values.size() != b.values.size())
    throw std::invalid_argument("parameter vectors have mismatched shapes");
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p{spec, Eigen::VectorXd::Zero(spec.param_count())};
  Rng rng(seed);
  long off = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const long in = spec.layer_widths[l];
    const long out = spec.layer_widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (long i = 0; i < in * out; ++i)
      p.values[off + i] = (2.0 * rng.uniform() - 1.0) * bound;
    // biases stay zero
    off += in * out + out;
  }
  return p;
}

ForwardTrace forward_trace(const ParamVector& params, const Eigen::MatrixXd& features) {
  check_params(params);
  check_input(params, features);
  const int layers = params.spec.num_layers();
  ForwardTrace trace;
  trace.activations.reserve(layers);
  trace.activations.push_back(features);
  Eigen::MatrixXd h = features;
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = (h * weight_of(params, l).transpose()).rowwise() +
                        bias_of(params, l).transpose();
    if (l == layers - 1) {
      trace.logits = std::move(z);
    } else {
      h = apply_activation(z, params.spec.hidden_activation);
      trace.activations.push_back(h);
    }
  }
  return trace;
}

Eigen::MatrixXd forward(const ParamVector& params, const Eigen::MatrixXd& features) {
  return forward_trace(params, features).logits;
}

ActivationCapture forward_with_activations(const ParamVector& params,
                                           const Eigen::MatrixXd& features,
                                           const std::vector<int>& layer_selector) {
  check_params(params);
  const int hidden = params.spec.hidden_layer_count();
  if (layer_selector.empty())
    throw std::invalid_argument("forward_with_activations: empty layer selector");
  std::vector<int> selector = layer_selector;
  std::sort(selector.begin(), selector.end());
  selector.erase(std::unique(selector.begin(), selector.end()), selector.end());
  for (int idx : selector)
    if (idx < 0 || idx >= hidden)
      throw std::invalid_argument(
          "forward_with_activations: selector must index hidden layers only");

  ForwardTrace trace = forward_trace(params, features);
  long width = 0;
  for (int idx : selector) width += params.spec.layer_widths[idx + 1];

  ActivationCapture out;
  out.logits = std::move(trace.logits);
  out.activations.resize(features.rows(), width);
  long col = 0;
  for (int idx : selector) {
    const Eigen::MatrixXd& act = trace.activations[idx + 1];
    out.activations.middleCols(col, act.cols()) = act;
    col += act.cols();
  }
  return out;
}

ParamVector backward_from(const ParamVector& params, const ForwardTrace& trace,
                          const Eigen::MatrixXd& grad_logits,
                          const std::vector<std::pair<int, Eigen::MatrixXd>>& grad_hidden) {
  check_params(params);
  const int layers = params.spec.num_layers();
  ParamVector grad{params.spec, Eigen::VectorXd::Zero(params.values.size())};

  Eigen::MatrixXd delta = grad_logits;  // d loss / d pre-activation of layer l
  for (int l = layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& input = trace.activations[l];
    const long in = params.spec.layer_widths[l];
    const long out = params.spec.layer_widths[l + 1];
    const long off = layer_offset(params.spec, l);
    Eigen::Map<Eigen::MatrixXd>(grad.values.data() + off, out, in) =
        delta.transpose() * input;
    Eigen::Map<Eigen::VectorXd>(grad.values.data() + off + in * out, out) =
        delta.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd up = delta * weight_of(params, l);  // w.r.t. post-activation of l-1
    for (const auto& [hidden_idx, g] : grad_hidden) {
      if (hidden_idx == l - 1) up += g;
    }
    delta = (up.array() * activation_deriv(trace.activations[l],
                                           params.spec.hidden_activation))
                .matrix();
  }
  return grad;
}

LossGrad grad_cross_entropy(const ParamVector& params, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("grad_cross_entropy: empty batch");
  if (batch.labels.size() != batch.features.rows())
    throw std::invalid_argument("grad_cross_entropy: feature/label row mismatch");
  const int classes = params.spec.output_width();
  for (long i = 0; i < batch.labels.size(); ++i)
    if (batch.labels[i] < 0 || batch.labels[i] >= classes)
      throw std::invalid_argument("grad_cross_entropy: label out of range");

  ForwardTrace trace = forward_trace(params, batch.features);
  const long n = batch.size();

  // Stable softmax: subtract the row max before exponentiating.
  Eigen::VectorXd row_max = trace.logits.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = trace.logits.colwise() - row_max;
  Eigen::MatrixXd expz = shifted.array().exp().matrix();
  Eigen::VectorXd sums = expz.rowwise().sum();

  double loss = 0.0;
  for (long i = 0; i < n; ++i)
    loss += std::log(sums[i]) - shifted(i, batch.labels[i]);
  loss /= static_cast<double>(n);

  Eigen::MatrixXd grad_logits = expz.array().colwise() / sums.array();
  for (long i = 0; i < n; ++i) grad_logits(i, batch.labels[i]) -= 1.0;
  grad_logits /= static_cast<double>(n);

  ParamVector grad = backward_from(params, trace, grad_logits);
  check_finite(grad.values, "grad_cross_entropy");
  if (!std::isfinite(loss)) throw std::runtime_error("grad_cross_entropy: non-finite loss");
  return {loss, std::move(grad)};
}

ParamVector sgd_train(const ParamVector& start, const Batch& data, int epochs,
                      int batch_size, double lr, double momentum, std::uint64_t seed,
                      const StepGradFn& grad_fn, const PostStepFn& post_step) {
  check_params(start);
  if (epochs < 1) throw std::invalid_argument("sgd_train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("sgd_train: batch_size must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("sgd_train: negative learning rate");
  if (data.size() == 0) throw std::invalid_argument("sgd_train: empty data");

  const long n = data.size();
  ParamVector p = start;
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(p.values.size());
  Rng rng(seed);

  for (int e = 0; e < epochs; ++e) {
    std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
    for (long begin = 0; begin < n; begin += batch_size) {
      const long count = std::min<long>(batch_size, n - begin);
      Batch mb;
      mb.features.resize(count, data.features.cols());
      mb.labels.resize(count);
      for (long r = 0; r < count; ++r) {
        mb.features.row(r) = data.features.row(static_cast<long>(perm[begin + r]));
        mb.labels[r] = data.labels[static_cast<long>(perm[begin + r])];
      }
      ParamVector g = grad_fn(p, mb);
      velocity = momentum * velocity + g.values;
      p.values -= lr * velocity;
      if (post_step) post_step(p);
    }
  }
  check_finite(p.values, "sgd_train");
  return p;
}

ParamVector train_local(const ParamVector& global, const Batch& data, int epochs,
                        int batch_size, double lr, double momentum, std::uint64_t seed) {
  return sgd_train(global, data, epochs, batch_size, lr, momentum, seed,
                   [](const ParamVector& p, const Batch& mb) {
                     return grad_cross_entropy(p, mb).gradient;
                   });
}

}  // namespace flsim::nn
