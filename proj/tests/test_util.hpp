#pragma once

#include <algorithm>
#include <cmath>
#include <memory>

#include "mixcert/mixcert.hpp"

namespace mixcert::testing {

inline FeedForwardModel single_layer(Matrix w, Vector b, Activation act = Activation::identity) {
  return FeedForwardModel({Layer{std::move(w), std::move(b), act}});
}

inline Vector random_vector(CounterRng& rng, std::size_t d, double scale = 1.0) {
  Vector v(d);
  for (double& e : v) e = rng.uniform(-scale, scale);
  return v;
}

inline double max_relative_error(const Vector& a, const Vector& b) {
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    worst = std::max(worst, std::abs(a[j] - b[j]) / std::max(scale, 1e-8));
  }
  return worst;
}

inline ClassifierPtr constant_classifier(std::size_t d, Vector p) {
  return std::make_shared<FunctionClassifier>(d, p.size(), [p](VectorView) { return p; });
}

inline ClassifierPtr model_classifier(FeedForwardModel m) {
  return std::make_shared<ModelClassifier>(std::move(m));
}

/// Two-class 1-D model whose class-0 probability is 0.5 + slope * x, clipped to [0, 1].
inline ClassifierPtr linear_probability_1d(double slope, double offset = 0.5) {
  return std::make_shared<FunctionClassifier>(1, 2, [slope, offset](VectorView x) {
    const double p = std::clamp(offset + slope * x[0], 0.0, 1.0);
    return Vector{p, 1.0 - p};
  });
}

}  // namespace mixcert::testing
