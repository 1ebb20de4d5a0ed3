#pragma once

// Dense feedforward networks: forward pass, reverse-mode gradients and
// sound global Lipschitz upper bounds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mixcert/error.hpp"
#include "mixcert/linalg.hpp"
#include "mixcert/random.hpp"

namespace mixcert {

enum class Activation { identity, relu, tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InputError("unknown activation '" + std::string(s) + "'");
}

/// Which output a gradient or Lipschitz bound refers to.
enum class OutputDomain { logit, probability };

inline std::string to_string(OutputDomain d) {
  return d == OutputDomain::logit ? "logit" : "probability";
}

inline OutputDomain parse_domain(std::string_view s) {
  if (s == "logit" || s == "logits") return OutputDomain::logit;
  if (s == "probability" || s == "probabilities" || s == "prob") return OutputDomain::probability;
  throw InputError("unknown output domain '" + std::string(s) + "'");
}

struct Layer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
};

namespace detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::identity: break;
  }
  return z;
}

inline double activation_slope(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::identity: break;
  }
  return 1.0;
}

}  // namespace detail

class FeedForwardModel {
 public:
  FeedForwardModel() = default;

  explicit FeedForwardModel(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  /// Xavier-uniform weights, zero biases; hidden layers use `hidden`, the
  /// output layer is affine. dims = {d, h_1, ..., c}.
  static FeedForwardModel random(const std::vector<std::size_t>& dims, Activation hidden,
                                 std::uint64_t seed) {
    if (dims.size() < 2) throw InputError("a model needs at least input and output dims");
    CounterRng rng(seed);
    std::vector<Layer> layers;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      const std::size_t in = dims[k];
      const std::size_t out = dims[k + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      Layer layer{Matrix(out, in), Vector(out, 0.0),
                  k + 2 == dims.size() ? Activation::identity : hidden};
      for (double& w : layer.weights.data()) w = rng.uniform(-limit, limit);
      layers.push_back(std::move(layer));
    }
    return FeedForwardModel(std::move(layers));
  }

  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t class_count() const { return layers_.back().out_dim(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  void validate() const {
    if (layers_.empty()) throw InputError("model has no layers");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Layer& l = layers_[k];
      if (l.in_dim() == 0 || l.out_dim() == 0) throw InputError("layer with zero dimension");
      if (l.bias.size() != l.out_dim()) {
        throw InputError("layer " + std::to_string(k) + " bias length mismatch");
      }
      if (k > 0 && layers_[k - 1].out_dim() != l.in_dim()) {
        throw InputError("layer " + std::to_string(k) + " input dim " +
                         std::to_string(l.in_dim()) + " does not chain with previous output " +
                         std::to_string(layers_[k - 1].out_dim()));
      }
      if (!l.weights.all_finite() || !all_finite(l.bias)) {
        throw InputError("layer " + std::to_string(k) + " has non-finite parameters");
      }
    }
    if (class_count() < 2) throw InputError("class count must be at least 2");
  }

 private:
  std::vector<Layer> layers_;
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
  std::vector<Vector> inputs;  // input to layer k
  std::vector<Vector> pre;     // pre-activation of layer k
  Vector logits;
};

inline void check_input(const FeedForwardModel& model, VectorView x) {
  if (x.size() != model.input_dim()) {
    throw InputError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.input_dim()));
  }
}

inline ForwardTrace trace_forward(const FeedForwardModel& model, VectorView x) {
  check_input(model, x);
  ForwardTrace trace;
  Vector a(x.begin(), x.end());
  for (const Layer& layer : model.layers()) {
    Vector z = layer.weights.apply(a);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
    Vector next(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) next[i] = detail::activate(layer.activation, z[i]);
    trace.inputs.push_back(std::move(a));
    trace.pre.push_back(std::move(z));
    a = std::move(next);
  }
  trace.logits = std::move(a);
  return trace;
}

inline Vector forward_logits(const FeedForwardModel& model, VectorView x) {
  check_input(model, x);
  Vector a(x.begin(), x.end());
  for (const Layer& layer : model.layers()) {
    Vector z = layer.weights.apply(a);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = detail::activate(layer.activation, z[i] + layer.bias[i]);
    }
    a = std::move(z);
  }
  return a;
}

/// Max-subtracted softmax.
inline Vector softmax(VectorView z) {
  const double top = *std::max_element(z.begin(), z.end());
  Vector p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline double log_sum_exp(VectorView z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - top);
  return top + std::log(total);
}

inline Vector forward_probs(const FeedForwardModel& model, VectorView x) {
  return softmax(forward_logits(model, x));
}

/// Cotangent on the logits given a cotangent on softmax(logits).
inline Vector softmax_vjp(VectorView probs, VectorView cot) {
  const double pc = dot(probs, cot);
  Vector out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (cot[i] - pc);
  return out;
}

/// Gradient w.r.t. the network input of sum_i cot_i * logits_i.
inline Vector backprop_input(const FeedForwardModel& model, const ForwardTrace& trace,
                             VectorView cot_logits) {
  Vector delta(cot_logits.begin(), cot_logits.end());
  for (std::size_t k = model.layers().size(); k-- > 0;) {
    const Layer& layer = model.layers()[k];
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] *= detail::activation_slope(layer.activation, trace.pre[k][i]);
    }
    delta = layer.weights.apply_transpose(delta);
  }
  return delta;
}

inline Vector logits_vjp(const FeedForwardModel& model, VectorView x, VectorView cot) {
  if (cot.size() != model.class_count()) throw InputError("cotangent length mismatch");
  const ForwardTrace trace = trace_forward(model, x);
  return backprop_input(model, trace, cot);
}

inline Vector probs_vjp(const FeedForwardModel& model, VectorView x, VectorView cot) {
  if (cot.size() != model.class_count()) throw InputError("cotangent length mismatch");
  const ForwardTrace trace = trace_forward(model, x);
  const Vector p = softmax(trace.logits);
  return backprop_input(model, trace, softmax_vjp(p, cot));
}

/// Exact reverse-mode gradient of output `class_index` (logit or probability) w.r.t. x.
inline Vector input_gradient(const FeedForwardModel& model, VectorView x, std::size_t class_index,
                             OutputDomain domain) {
  if (class_index >= model.class_count()) {
    throw InputError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(model.class_count()) + " classes");
  }
  Vector onehot(model.class_count(), 0.0);
  onehot[class_index] = 1.0;
  return domain == OutputDomain::logit ? logits_vjp(model, x, onehot)
                                       : probs_vjp(model, x, onehot);
}

/// Parameter gradients, shaped like the model.
struct ParameterGradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  explicit ParameterGradient(const FeedForwardModel& model) {
    for (const Layer& l : model.layers()) {
      weights.emplace_back(l.out_dim(), l.in_dim());
      biases.emplace_back(l.out_dim(), 0.0);
    }
  }
};

/// Accumulates scale * d(sum_i cot_i logits_i)/d(params) into `grad`.
inline void backprop_parameters(const FeedForwardModel& model, const ForwardTrace& trace,
                                VectorView cot_logits, double scale, ParameterGradient& grad) {
  Vector delta(cot_logits.begin(), cot_logits.end());
  for (std::size_t k = model.layers().size(); k-- > 0;) {
    const Layer& layer = model.layers()[k];
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] *= detail::activation_slope(layer.activation, trace.pre[k][i]);
    }
    const Vector& input = trace.inputs[k];
    Matrix& gw = grad.weights[k];
    for (std::size_t r = 0; r < layer.out_dim(); ++r) {
      const double d = scale * delta[r];
      grad.biases[k][r] += d;
      if (d == 0.0) continue;
      auto row = gw.row(r);
      for (std::size_t c = 0; c < layer.in_dim(); ++c) row[c] += d * input[c];
    }
    if (k > 0) delta = layer.weights.apply_transpose(delta);
  }
}

// ---------------------------------------------------------------------------
// Lipschitz bounds

/// Largest singular value by power iteration on W^T W (200 iterations or
/// relative change below 1e-10), inflated by 1.001.
inline double spectral_norm_upper(const Matrix& w) {
  if (w.rows() == 0 || w.cols() == 0) return 0.0;
  CounterRng rng(0x5eed);
  Vector v(w.cols());
  for (double& x : v) x = rng.uniform(0.5, 1.5);
  double n = norm_l2(v);
  for (double& x : v) x /= n;
  double estimate = 0.0;
  for (int it = 0; it < 200; ++it) {
    Vector next = w.apply_transpose(w.apply(v));
    const double lambda = norm_l2(next);
    if (lambda == 0.0) {
      estimate = 0.0;
      break;
    }
    for (double& x : next) x /= lambda;
    v = std::move(next);
    const bool converged = estimate > 0.0 && std::abs(lambda - estimate) < 1e-10 * lambda;
    estimate = lambda;
    if (converged) break;
  }
  return std::sqrt(estimate) * 1.001;
}

/// Induced linf -> linf operator norm: maximum absolute row sum (exact).
inline double induced_linf_norm(const Matrix& w) {
  double best = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) best = std::max(best, norm_l1(w.row(r)));
  return best;
}

/// Upper bound on sup_z ||grad_z softmax_i(z)||_q for q in {1, 2}: 2 p_i (1 - p_i) <= 1/2.
inline constexpr double kSoftmaxComponentFactor = 0.5;

/// How an linf bound was obtained.
enum class LipschitzRoute { l2_operator_product, linf_operator_product, sqrt_d_times_l2 };

inline std::string to_string(LipschitzRoute r) {
  switch (r) {
    case LipschitzRoute::l2_operator_product: return "l2_operator_product";
    case LipschitzRoute::linf_operator_product: return "linf_operator_product";
    case LipschitzRoute::sqrt_d_times_l2: return "sqrt_d_times_l2";
  }
  return "";
}

/// Route selection for linf bounds.
enum class LinfRoutePolicy { direct, via_l2, tightest };

struct LipschitzBound {
  Vector per_class;
  Norm norm = Norm::l2;
  OutputDomain domain = OutputDomain::probability;
  LipschitzRoute route = LipschitzRoute::l2_operator_product;
};

/// Per-class upper bound on lip_p of each output. Activations are 1-Lipschitz,
/// so the product of induced operator norms bounds every logit; softmax
/// contributes the factor 1/2 per probability component.
inline LipschitzBound global_lipschitz_upper(const FeedForwardModel& model, Norm p,
                                             OutputDomain domain,
                                             LinfRoutePolicy policy = LinfRoutePolicy::tightest) {
  double l2_product = 1.0;
  double linf_product = 1.0;
  for (const Layer& layer : model.layers()) {
    l2_product *= spectral_norm_upper(layer.weights);
    linf_product *= induced_linf_norm(layer.weights);
  }
  LipschitzBound bound;
  bound.norm = p;
  bound.domain = domain;
  double value = l2_product;
  if (p == Norm::linf) {
    const double converted = std::sqrt(static_cast<double>(model.input_dim())) * l2_product;
    const bool use_direct = policy == LinfRoutePolicy::direct ||
                            (policy == LinfRoutePolicy::tightest && linf_product <= converted);
    value = use_direct ? linf_product : converted;
    bound.route = use_direct ? LipschitzRoute::linf_operator_product
                             : LipschitzRoute::sqrt_d_times_l2;
  }
  if (domain == OutputDomain::probability) value *= kSoftmaxComponentFactor;
  bound.per_class.assign(model.class_count(), value);
  return bound;
}

}  // namespace mixcert
