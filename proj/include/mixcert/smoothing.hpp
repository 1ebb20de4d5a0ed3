#pragma once

// Gaussian randomized smoothing of a base classifier's probabilities:
// h(x) = E_{xi ~ N(0, sigma^2 I)} [ hbar(x + xi) ].
//
// Two estimators: seeded Monte Carlo (the plug-in used for certificates at
// scale) and tensorized Gauss-Hermite quadrature for d <= 2 (oracle grade).
// The Monte Carlo noise draws are fixed at construction, so a smoothed
// classifier is a deterministic, differentiable function of x.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mixcert/classifier.hpp"
#include "mixcert/parallel.hpp"
#include "mixcert/random.hpp"

namespace mixcert {

enum class SmoothingEstimator { monte_carlo, quadrature };

inline std::string to_string(SmoothingEstimator e) {
  return e == SmoothingEstimator::monte_carlo ? "mc" : "quadrature";
}

inline SmoothingEstimator parse_estimator(std::string_view s) {
  if (s == "mc" || s == "monte_carlo") return SmoothingEstimator::monte_carlo;
  if (s == "quadrature") return SmoothingEstimator::quadrature;
  throw InputError("unknown smoothing estimator '" + std::string(s) + "'");
}

struct SmoothingConfig {
  double sigma = 0.25;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  SmoothingEstimator estimator = SmoothingEstimator::monte_carlo;
  std::size_t workers = 1;
};

/// Physicists' Gauss-Hermite rule: sum_k w_k f(t_k) ~ int f(t) exp(-t^2) dt.
struct GaussHermiteRule {
  Vector nodes;
  Vector weights;
};

inline GaussHermiteRule gauss_hermite(std::size_t n) {
  // Newton iteration on orthonormal Hermite polynomials with the usual
  // asymptotic starting guesses for the largest roots.
  constexpr double kPiToMinusQuarter = 0.7511255444649425;
  GaussHermiteRule rule{Vector(n), Vector(n)};
  const std::size_t half = (n + 1) / 2;
  const double nd = static_cast<double>(n);
  double z = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(nd, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[i - 2];
    }
    double derivative = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = kPiToMinusQuarter;
      double p2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
      }
      derivative = std::sqrt(2.0 * nd) * p2;
      const double previous = z;
      z = previous - p1 / derivative;
      if (std::abs(z - previous) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    rule.nodes[i] = z;
    rule.nodes[n - 1 - i] = -z;
    rule.weights[i] = 2.0 / (derivative * derivative);
    rule.weights[n - 1 - i] = rule.weights[i];
  }
  return rule;
}

inline constexpr std::size_t kQuadratureNodes = 64;
inline constexpr std::size_t kMonteCarloBlock = 512;

class SmoothedClassifier final : public Classifier {
 public:
  SmoothedClassifier(ClassifierPtr base, SmoothingConfig config)
      : base_(std::move(base)), config_(config) {
    if (!base_) throw InputError("smoothed classifier needs a base classifier");
    if (!(config_.sigma > 0.0) || !std::isfinite(config_.sigma)) {
      throw InputError("smoothing sigma must be positive");
    }
    if (config_.samples < 1) throw InputError("smoothing sample budget must be at least 1");
    const std::size_t d = base_->input_dim();
    noise_ = Matrix(config_.samples, d);
    for (std::size_t k = 0; k < config_.samples; ++k) {
      CounterRng rng(derive_seed(config_.seed, k));
      rng.fill_normal(noise_.row(k), config_.sigma);
    }
    if (d <= 2) rule_ = gauss_hermite(kQuadratureNodes);
  }

  const Classifier& base() const { return *base_; }
  const ClassifierPtr& base_ptr() const { return base_; }
  const SmoothingConfig& config() const { return config_; }
  double sigma() const { return config_.sigma; }

  std::size_t input_dim() const override { return base_->input_dim(); }
  std::size_t class_count() const override { return base_->class_count(); }

  Vector probs(VectorView x) const override {
    return config_.estimator == SmoothingEstimator::monte_carlo ? probs_mc(x) : probs_quadrature(x);
  }

  Vector logits(VectorView x) const override {
    Vector p = probs(x);
    for (double& v : p) v = safe_log(v);
    return p;
  }

  Vector probs_vjp(VectorView x, VectorView cot) const override {
    check_dim(x);
    auto f = [&](VectorView point) { return base_->probs_vjp(point, cot); };
    return config_.estimator == SmoothingEstimator::monte_carlo ? average_mc(x, input_dim(), f)
                                                                : average_quadrature(x, input_dim(), f);
  }

  Vector logits_vjp(VectorView x, VectorView cot) const override {
    const Vector p = probs(x);
    Vector scaled_cot(cot.size(), 0.0);
    for (std::size_t i = 0; i < cot.size(); ++i) {
      if (p[i] > kProbabilityFloor) scaled_cot[i] = cot[i] / p[i];
    }
    return probs_vjp(x, scaled_cot);
  }

  /// Mean of base probabilities over the fixed noise draws.
  Vector probs_mc(VectorView x) const {
    check_dim(x);
    return average_mc(x, class_count(), [&](VectorView point) { return base_->probs(point); });
  }

  /// Tensorized 64-node Gauss-Hermite expectation; d <= 2 only.
  Vector probs_quadrature(VectorView x) const {
    check_dim(x);
    return average_quadrature(x, class_count(),
                              [&](VectorView point) { return base_->probs(point); });
  }

 private:
  template <typename F>
  Vector average_mc(VectorView x, std::size_t out_len, F&& f) const {
    const std::size_t n = config_.samples;
    const std::size_t d = input_dim();
    const std::size_t blocks = (n + kMonteCarloBlock - 1) / kMonteCarloBlock;
    std::vector<CompensatedVectorSum> partial(blocks, CompensatedVectorSum(out_len));
    parallel_for(blocks, config_.workers, [&](std::size_t b) {
      Vector point(d);
      const std::size_t end = std::min(n, (b + 1) * kMonteCarloBlock);
      for (std::size_t k = b * kMonteCarloBlock; k < end; ++k) {
        const auto xi = noise_.row(k);
        for (std::size_t j = 0; j < d; ++j) point[j] = x[j] + xi[j];
        partial[b].add(f(point));
      }
    });
    CompensatedVectorSum total(out_len);
    for (const auto& part : partial) total.add(part);
    return total.value(1.0 / static_cast<double>(n));
  }

  template <typename F>
  Vector average_quadrature(VectorView x, std::size_t out_len, F&& f) const {
    const std::size_t d = input_dim();
    if (d > 2) {
      throw UnsupportedError("quadrature smoothing supports d <= 2, got d = " + std::to_string(d));
    }
    const std::size_t m = rule_.nodes.size();
    const double scale = config_.sigma * std::numbers::sqrt2;
    std::vector<CompensatedVectorSum> partial(m, CompensatedVectorSum(out_len));
    parallel_for(m, config_.workers, [&](std::size_t a) {
      Vector point(d);
      point[0] = x[0] + scale * rule_.nodes[a];
      if (d == 1) {
        partial[a].add_scaled(f(point), rule_.weights[a]);
        return;
      }
      for (std::size_t b = 0; b < m; ++b) {
        point[1] = x[1] + scale * rule_.nodes[b];
        partial[a].add_scaled(f(point), rule_.weights[a] * rule_.weights[b]);
      }
    });
    CompensatedVectorSum total(out_len);
    for (const auto& part : partial) total.add(part);
    const double norm = d == 1 ? 1.0 / std::sqrt(std::numbers::pi) : 1.0 / std::numbers::pi;
    return total.value(norm);
  }

  ClassifierPtr base_;
  SmoothingConfig config_;
  Matrix noise_;
  GaussHermiteRule rule_;
};

inline Vector smoothed_probs_mc(const SmoothedClassifier& sc, VectorView x) { return sc.probs_mc(x); }

inline Vector smoothed_probs_quadrature(const SmoothedClassifier& sc, VectorView x) {
  return sc.probs_quadrature(x);
}

/// Hoeffding deviation sqrt(ln(2/beta) / (2N)) for a mean of N [0,1] samples.
inline double hoeffding_deviation(std::size_t samples, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw InputError("confidence level beta must lie in (0,1)");
  return std::sqrt(std::log(2.0 / beta) / (2.0 * static_cast<double>(samples)));
}

/// Classes whose smoothed probability is exactly 0 or exactly 1 at some probe,
/// which cannot happen when the base is non-degenerate.
inline std::vector<std::size_t> degenerate_classes(const Classifier& smoothed,
                                                   const std::vector<Vector>& probes) {
  std::vector<bool> flagged(smoothed.class_count(), false);
  for (const Vector& x : probes) {
    const Vector p = smoothed.probs(x);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0 || p[i] >= 1.0) flagged[i] = true;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    if (flagged[i]) out.push_back(i);
  }
  return out;
}

}  // namespace mixcert
