#pragma once

// Mixing an accurate classifier g with a robust classifier h.
//
//   smo1:  g_i + gamma h_i ||grad g_i||_{p*}
//   smo2:  (g_i + gamma h_i ||grad g_i||_{p*}) / (1 + gamma ||grad g_i||_{p*})
//   smo3:  (g_i + gamma R_i h_i) / (1 + gamma R_i)
//   alpha: log((1 - alpha) g_i + alpha h_i),  alpha = gamma / (1 + gamma)
//
// smo* are evaluated with g and h in the same output domain (logits or
// probabilities); alpha always mixes probabilities.

#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include "mixcert/classifier.hpp"

namespace mixcert {

enum class Formulation { smo1, smo2, smo3, alpha };

inline std::string to_string(Formulation f) {
  switch (f) {
    case Formulation::smo1: return "smo1";
    case Formulation::smo2: return "smo2";
    case Formulation::smo3: return "smo3";
    case Formulation::alpha: return "alpha";
  }
  return "";
}

inline Formulation parse_formulation(std::string_view s) {
  if (s == "smo1") return Formulation::smo1;
  if (s == "smo2") return Formulation::smo2;
  if (s == "smo3") return Formulation::smo3;
  if (s == "alpha") return Formulation::alpha;
  throw InputError("unknown formulation '" + std::string(s) + "'");
}

/// Choice of R_i(x) in smo3.
enum class RMode { one, grad_gi, grad_max_gj, grad_ratio };

inline std::string to_string(RMode r) {
  switch (r) {
    case RMode::one: return "one";
    case RMode::grad_gi: return "grad_gi";
    case RMode::grad_max_gj: return "grad_max_gj";
    case RMode::grad_ratio: return "grad_ratio";
  }
  return "";
}

inline RMode parse_r_mode(std::string_view s) {
  if (s == "one") return RMode::one;
  if (s == "grad_gi") return RMode::grad_gi;
  if (s == "grad_max_gj") return RMode::grad_max_gj;
  if (s == "grad_ratio") return RMode::grad_ratio;
  throw InputError("unknown r-mode '" + std::string(s) + "'");
}

inline constexpr double kRatioFloor = 1e-12;
inline constexpr double kRatioCap = 1e12;

inline double alpha_from_gamma(double gamma) {
  if (std::isinf(gamma)) return 1.0;
  return gamma / (1.0 + gamma);
}

inline double gamma_from_alpha(double alpha) {
  return alpha >= 1.0 ? std::numeric_limits<double>::infinity() : alpha / (1.0 - alpha);
}

struct MixDiagnostics {
  /// grad_ratio evaluations where ||grad h_i|| < 1e-12 and R_i was capped at 1e12.
  std::size_t ratio_fallbacks = 0;
};

namespace detail {

inline void check_gamma(double gamma) {
  if (!(gamma >= 0.0)) throw InputError("gamma must be non-negative");
}

inline void check_pair(const Classifier& g, const Classifier& h) {
  if (g.input_dim() != h.input_dim() || g.class_count() != h.class_count()) {
    throw InputError("base classifiers disagree on input dim or class count");
  }
}

inline Vector class_gradient_norms(const Classifier& f, VectorView x, Norm p, OutputDomain domain) {
  Vector out(f.class_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dual_norm(f.gradient(x, i, domain), p);
  return out;
}

/// Per-class trust weights R_i(x).
inline Vector r_weights(const Classifier& g, const Classifier& h, RMode mode, Norm p,
                        OutputDomain domain, VectorView x, MixDiagnostics* diag) {
  const std::size_t c = g.class_count();
  switch (mode) {
    case RMode::one: return Vector(c, 1.0);
    case RMode::grad_gi: return class_gradient_norms(g, x, p, domain);
    case RMode::grad_max_gj: {
      const std::size_t top = argmax(g.outputs(x, domain));
      return Vector(c, dual_norm(g.gradient(x, top, domain), p));
    }
    case RMode::grad_ratio: {
      Vector num = class_gradient_norms(g, x, p, domain);
      const Vector den = class_gradient_norms(h, x, p, domain);
      for (std::size_t i = 0; i < c; ++i) {
        if (den[i] < kRatioFloor) {
          num[i] = kRatioCap;
          if (diag) ++diag->ratio_fallbacks;
        } else {
          num[i] /= den[i];
        }
      }
      return num;
    }
  }
  return Vector(c, 1.0);
}

}  // namespace detail

/// smo1 on explicit per-class values.
inline double smo1_value(double g_i, double h_i, double gamma, double grad_norm) {
  return g_i + gamma * h_i * grad_norm;
}

inline double smo3_value(double g_i, double h_i, double gamma, double r_i) {
  return (g_i + gamma * r_i * h_i) / (1.0 + gamma * r_i);
}

inline Vector mix_smo1(const Classifier& g, const Classifier& h, double gamma, Norm p, VectorView x,
                       OutputDomain domain = OutputDomain::probability) {
  detail::check_gamma(gamma);
  detail::check_pair(g, h);
  Vector gv = g.outputs(x, domain);
  if (gamma == 0.0) return gv;
  const Vector hv = h.outputs(x, domain);
  const Vector norms = detail::class_gradient_norms(g, x, p, domain);
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = smo1_value(gv[i], hv[i], gamma, norms[i]);
  return gv;
}

inline Vector mix_smo3(const Classifier& g, const Classifier& h, double gamma, RMode mode, Norm p,
                       VectorView x, OutputDomain domain = OutputDomain::probability,
                       MixDiagnostics* diag = nullptr) {
  detail::check_gamma(gamma);
  detail::check_pair(g, h);
  Vector gv = g.outputs(x, domain);
  if (gamma == 0.0) return gv;
  const Vector hv = h.outputs(x, domain);
  const Vector r = detail::r_weights(g, h, mode, p, domain, x, diag);
  for (std::size_t i = 0; i < gv.size(); ++i) {
    gv[i] = std::isinf(gamma) ? hv[i] : smo3_value(gv[i], hv[i], gamma, r[i]);
  }
  return gv;
}

inline Vector mix_smo2(const Classifier& g, const Classifier& h, double gamma, Norm p, VectorView x,
                       OutputDomain domain = OutputDomain::probability) {
  return mix_smo3(g, h, gamma, RMode::grad_gi, p, x, domain);
}

/// Output of the alpha mixture: logits = log of the convex combination.
struct MixOutput {
  Vector logits;
  Vector probabilities;
  std::size_t predicted = 0;
};

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
}

inline MixOutput mix_alpha_values(VectorView g_probs, VectorView h_probs, double alpha) {
  check_alpha(alpha);
  if (g_probs.size() != h_probs.size()) throw InputError("probability vectors differ in length");
  MixOutput out;
  out.probabilities.resize(g_probs.size());
  out.logits.resize(g_probs.size());
  for (std::size_t i = 0; i < g_probs.size(); ++i) {
    out.probabilities[i] = (1.0 - alpha) * g_probs[i] + alpha * h_probs[i];
    out.logits[i] = safe_log(out.probabilities[i]);
  }
  out.predicted = argmax(out.probabilities);
  return out;
}

inline MixOutput mix_alpha(const Classifier& g, const Classifier& h, double alpha, VectorView x) {
  detail::check_pair(g, h);
  return mix_alpha_values(g.probs(x), h.probs(x), alpha);
}

/// A mixture exposed as an ordinary differentiable classifier, so attacks
/// can target it end to end. For smo*, R_i(x) and the gradient norms are
/// treated as locally constant when differentiating.
class MixedClassifier final : public Classifier {
 public:
  struct Config {
    Formulation formulation = Formulation::alpha;
    double alpha = 0.5;  // used by Formulation::alpha
    double gamma = 0.0;  // used by smo1/smo2/smo3
    RMode r_mode = RMode::one;
    OutputDomain domain = OutputDomain::probability;
    Norm norm = Norm::linf;
  };

  MixedClassifier(ClassifierPtr g, ClassifierPtr h, Config config)
      : g_(std::move(g)), h_(std::move(h)), config_(config) {
    if (!g_ || !h_) throw InputError("mixed classifier needs both base classifiers");
    detail::check_pair(*g_, *h_);
    if (config_.formulation == Formulation::alpha) {
      check_alpha(config_.alpha);
    } else {
      detail::check_gamma(config_.gamma);
    }
  }

  static MixedClassifier alpha_mix(ClassifierPtr g, ClassifierPtr h, double alpha) {
    Config c;
    c.alpha = alpha;
    return MixedClassifier(std::move(g), std::move(h), c);
  }

  const Classifier& g() const { return *g_; }
  const Classifier& h() const { return *h_; }
  const ClassifierPtr& g_ptr() const { return g_; }
  const ClassifierPtr& h_ptr() const { return h_; }
  const Config& config() const { return config_; }
  double alpha() const {
    return config_.formulation == Formulation::alpha ? config_.alpha : alpha_from_gamma(config_.gamma);
  }
  std::size_t ratio_fallbacks() const { return ratio_fallbacks_.load(); }

  std::size_t input_dim() const override { return g_->input_dim(); }
  std::size_t class_count() const override { return g_->class_count(); }

  MixOutput evaluate(VectorView x) const {
    if (config_.formulation == Formulation::alpha) return mix_alpha(*g_, *h_, config_.alpha, x);
    MixOutput out;
    out.logits = logits(x);
    out.probabilities = softmax(out.logits);
    out.predicted = argmax(out.logits);
    return out;
  }

  /// The base model the mixture collapses to (alpha 0 or 1, gamma 0, or
  /// gamma = inf for smo2/smo3), else nullptr. Degenerate mixtures expose
  /// that model's own logits, which differ from the log-mixture only by a
  /// per-input constant, so attacks on them coincide with direct attacks.
  const Classifier* degenerate_base() const {
    if (config_.formulation == Formulation::alpha) {
      if (config_.alpha == 0.0) return g_.get();
      if (config_.alpha == 1.0) return h_.get();
      return nullptr;
    }
    if (config_.gamma == 0.0) return g_.get();
    if (std::isinf(config_.gamma) && config_.formulation != Formulation::smo1) return h_.get();
    return nullptr;
  }

  Vector logits(VectorView x) const override {
    check_dim(x);
    if (const Classifier* base = degenerate_base()) return base->logits(x);
    if (config_.formulation == Formulation::alpha) return mix_alpha(*g_, *h_, config_.alpha, x).logits;
    Vector v = smo_values(x);
    if (config_.domain == OutputDomain::probability) {
      for (double& e : v) e = safe_log(e);
    }
    return v;
  }

  Vector probs(VectorView x) const override {
    check_dim(x);
    if (const Classifier* base = degenerate_base()) return base->probs(x);
    if (config_.formulation == Formulation::alpha) {
      return mix_alpha(*g_, *h_, config_.alpha, x).probabilities;
    }
    return softmax(logits(x));
  }

  Vector logits_vjp(VectorView x, VectorView cot) const override {
    check_dim(x);
    if (const Classifier* base = degenerate_base()) return base->logits_vjp(x, cot);
    if (config_.formulation == Formulation::alpha) {
      const Vector m = mix_alpha(*g_, *h_, config_.alpha, x).probabilities;
      Vector cot_m(cot.size(), 0.0);
      for (std::size_t i = 0; i < cot.size(); ++i) {
        if (m[i] > kProbabilityFloor) cot_m[i] = cot[i] / m[i];
      }
      return mix_probability_vjp(x, cot_m);
    }
    return smo_vjp(x, cot);
  }

  Vector probs_vjp(VectorView x, VectorView cot) const override {
    if (const Classifier* base = degenerate_base()) return base->probs_vjp(x, cot);
    if (config_.formulation == Formulation::alpha) return mix_probability_vjp(x, cot);
    const Vector p = probs(x);
    return logits_vjp(x, softmax_vjp(p, cot));
  }

 private:
  Vector mix_probability_vjp(VectorView x, VectorView cot) const {
    const double a = config_.alpha;
    Vector grad(input_dim(), 0.0);
    if (a < 1.0) axpy(1.0 - a, g_->probs_vjp(x, cot), grad);
    if (a > 0.0) axpy(a, h_->probs_vjp(x, cot), grad);
    return grad;
  }

  /// Per-class mixing weights (w_g, w_h) so that out_i = w_g g_i + w_h h_i.
  void smo_weights(VectorView x, Vector& wg, Vector& wh) const {
    const std::size_t c = class_count();
    wg.assign(c, 1.0);
    wh.assign(c, 0.0);
    const double gamma = config_.gamma;
    if (gamma == 0.0) return;
    MixDiagnostics diag;
    Vector r;
    if (config_.formulation == Formulation::smo1 || config_.formulation == Formulation::smo2) {
      r = detail::class_gradient_norms(*g_, x, config_.norm, config_.domain);
    } else {
      r = detail::r_weights(*g_, *h_, config_.r_mode, config_.norm, config_.domain, x, &diag);
      if (diag.ratio_fallbacks) ratio_fallbacks_ += diag.ratio_fallbacks;
    }
    for (std::size_t i = 0; i < c; ++i) {
      if (config_.formulation == Formulation::smo1) {
        wh[i] = gamma * r[i];
      } else if (std::isinf(gamma)) {
        wg[i] = 0.0;
        wh[i] = 1.0;
      } else {
        const double denom = 1.0 + gamma * r[i];
        wg[i] = 1.0 / denom;
        wh[i] = gamma * r[i] / denom;
      }
    }
  }

  Vector smo_values(VectorView x) const {
    switch (config_.formulation) {
      case Formulation::smo1: return mix_smo1(*g_, *h_, config_.gamma, config_.norm, x, config_.domain);
      case Formulation::smo2: return mix_smo2(*g_, *h_, config_.gamma, config_.norm, x, config_.domain);
      default: {
        MixDiagnostics diag;
        Vector v = mix_smo3(*g_, *h_, config_.gamma, config_.r_mode, config_.norm, x,
                            config_.domain, &diag);
        if (diag.ratio_fallbacks) ratio_fallbacks_ += diag.ratio_fallbacks;
        return v;
      }
    }
  }

  Vector smo_vjp(VectorView x, VectorView cot) const {
    Vector wg;
    Vector wh;
    smo_weights(x, wg, wh);
    Vector cot_out(cot.begin(), cot.end());
    if (config_.domain == OutputDomain::probability) {
      const Vector v = smo_values(x);
      for (std::size_t i = 0; i < v.size(); ++i) {
        cot_out[i] = v[i] > kProbabilityFloor ? cot[i] / v[i] : 0.0;
      }
    }
    Vector cg(cot_out.size());
    Vector ch(cot_out.size());
    bool any_h = false;
    for (std::size_t i = 0; i < cot_out.size(); ++i) {
      cg[i] = wg[i] * cot_out[i];
      ch[i] = wh[i] * cot_out[i];
      any_h = any_h || ch[i] != 0.0;
    }
    Vector grad = g_->outputs_vjp(x, cg, config_.domain);
    if (any_h) axpy(1.0, h_->outputs_vjp(x, ch, config_.domain), grad);
    return grad;
  }

  ClassifierPtr g_;
  ClassifierPtr h_;
  Config config_;
  mutable std::atomic<std::size_t> ratio_fallbacks_{0};
};

}  // namespace mixcert
