#pragma once

// Differentiable classifier interface shared by base models, smoothed
// models and mixtures. Attacks, certification and the oracle only see this.

#include <cmath>
#include <functional>
#include <memory>
#include <utility>

#include "mixcert/model.hpp"

namespace mixcert {

/// Floor applied before taking logs of probabilities.
inline constexpr double kProbabilityFloor = 1e-300;

inline double safe_log(double p) { return std::log(p > kProbabilityFloor ? p : kProbabilityFloor); }

class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::size_t class_count() const = 0;

  virtual Vector logits(VectorView x) const = 0;
  virtual Vector probs(VectorView x) const = 0;

  /// Gradient w.r.t. x of sum_i cot_i * logits_i(x).
  virtual Vector logits_vjp(VectorView x, VectorView cot) const = 0;
  /// Gradient w.r.t. x of sum_i cot_i * probs_i(x).
  virtual Vector probs_vjp(VectorView x, VectorView cot) const = 0;

  Vector outputs(VectorView x, OutputDomain domain) const {
    return domain == OutputDomain::logit ? logits(x) : probs(x);
  }

  Vector outputs_vjp(VectorView x, VectorView cot, OutputDomain domain) const {
    return domain == OutputDomain::logit ? logits_vjp(x, cot) : probs_vjp(x, cot);
  }

  Vector gradient(VectorView x, std::size_t class_index, OutputDomain domain) const {
    if (class_index >= class_count()) throw InputError("class index out of range");
    Vector onehot(class_count(), 0.0);
    onehot[class_index] = 1.0;
    return outputs_vjp(x, onehot, domain);
  }

 protected:
  void check_dim(VectorView x) const {
    if (x.size() != input_dim()) {
      throw InputError("input has dimension " + std::to_string(x.size()) + ", classifier expects " +
                       std::to_string(input_dim()));
    }
  }
};

using ClassifierPtr = std::shared_ptr<const Classifier>;

/// Classifier backed by a FeedForwardModel.
class ModelClassifier final : public Classifier {
 public:
  explicit ModelClassifier(FeedForwardModel model)
      : model_(std::make_shared<const FeedForwardModel>(std::move(model))) {}
  explicit ModelClassifier(std::shared_ptr<const FeedForwardModel> model) : model_(std::move(model)) {}

  const FeedForwardModel& model() const { return *model_; }

  std::size_t input_dim() const override { return model_->input_dim(); }
  std::size_t class_count() const override { return model_->class_count(); }
  Vector logits(VectorView x) const override { return forward_logits(*model_, x); }
  Vector probs(VectorView x) const override { return forward_probs(*model_, x); }
  Vector logits_vjp(VectorView x, VectorView cot) const override {
    return mixcert::logits_vjp(*model_, x, cot);
  }
  Vector probs_vjp(VectorView x, VectorView cot) const override {
    return mixcert::probs_vjp(*model_, x, cot);
  }

 private:
  std::shared_ptr<const FeedForwardModel> model_;
};

/// Arbitrary probability-valued function. Gradients by central differences
/// (step 1e-6), so it suits closed-form test classifiers, not training.
class FunctionClassifier final : public Classifier {
 public:
  using ProbabilityFn = std::function<Vector(VectorView)>;

  FunctionClassifier(std::size_t input_dim, std::size_t class_count, ProbabilityFn fn)
      : input_dim_(input_dim), class_count_(class_count), fn_(std::move(fn)) {}

  std::size_t input_dim() const override { return input_dim_; }
  std::size_t class_count() const override { return class_count_; }

  Vector probs(VectorView x) const override {
    check_dim(x);
    Vector p = fn_(x);
    if (p.size() != class_count_) throw InputError("probability function returned wrong length");
    return p;
  }

  Vector logits(VectorView x) const override {
    Vector p = probs(x);
    for (double& v : p) v = safe_log(v);
    return p;
  }

  Vector probs_vjp(VectorView x, VectorView cot) const override {
    return difference_gradient(x, [&](VectorView z) { return dot(cot, probs(z)); });
  }

  Vector logits_vjp(VectorView x, VectorView cot) const override {
    return difference_gradient(x, [&](VectorView z) { return dot(cot, logits(z)); });
  }

 private:
  template <typename F>
  Vector difference_gradient(VectorView x, F&& f) const {
    constexpr double step = 1e-6;
    Vector z(x.begin(), x.end());
    Vector g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      z[j] = x[j] + step;
      const double up = f(z);
      z[j] = x[j] - step;
      const double down = f(z);
      z[j] = x[j];
      g[j] = (up - down) / (2.0 * step);
    }
    return g;
  }

  std::size_t input_dim_;
  std::size_t class_count_;
  ProbabilityFn fn_;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(VectorView v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Largest entry other than `y`; ties go to the lowest index.
inline std::size_t runner_up(VectorView v, std::size_t y) {
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != y && v[i] > v[best]) best = i;
  }
  return best;
}

/// v_y - max_{i != y} v_i
inline double margin_of(VectorView v, std::size_t y) { return v[y] - v[runner_up(v, y)]; }

/// Gap between the top entry and the runner-up.
inline double top_two_gap(VectorView v) { return margin_of(v, argmax(v)); }

}  // namespace mixcert
