#pragma once

// Certified radii for the alpha-mixture.
//
// If h keeps a probability margin of (1 - alpha)/alpha over a ball, no g can
// flip the mixture's prediction inside it. Lipschitz constants of h and the
// Gaussian-smoothing structure of h each turn the clean margin at x into such
// a ball.

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mixcert/attacks.hpp"
#include "mixcert/classifier.hpp"
#include "mixcert/data.hpp"
#include "mixcert/mixing.hpp"
#include "mixcert/parallel.hpp"
#include "mixcert/smoothing.hpp"

namespace mixcert {

// ---------------------------------------------------------------------------
// Standard normal

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

/// Lower-half quantile, q in (0, 0.5]: Acklam's rational approximation
/// followed by one Halley step.
inline double lower_normal_quantile(double q) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double kLowBreak = 0.02425;
  double x = 0.0;
  if (q < kLowBreak) {
    const double t = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5]) /
        ((((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0);
  } else {
    const double r = q - 0.5;
    const double s = r * r;
    x = (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r /
        (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0);
  }
  const double e = normal_cdf(x) - q;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

/// Phi^{-1}(q) for q in (0, 1). Computed on the lower half and reflected,
/// so Phi^{-1}(q) = -Phi^{-1}(1 - q) whenever 1 - (1 - q) == q.
inline double inverse_normal_cdf(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw InputError("inverse normal CDF needs q in (0,1), got " + std::to_string(q));
  }
  if (q == 0.5) return 0.0;
  return q < 0.5 ? detail::lower_normal_quantile(q) : -detail::lower_normal_quantile(1.0 - q);
}

// ---------------------------------------------------------------------------
// Types

enum class CertMethod { lipschitz_global, lipschitz_local, rs };

inline std::string to_string(CertMethod m) {
  switch (m) {
    case CertMethod::lipschitz_global: return "lipschitz_global";
    case CertMethod::lipschitz_local: return "lipschitz_local";
    case CertMethod::rs: return "rs";
  }
  return "";
}

inline CertMethod parse_cert_method(std::string_view s) {
  if (s == "lipschitz_global" || s == "lipschitz") return CertMethod::lipschitz_global;
  if (s == "lipschitz_local" || s == "local") return CertMethod::lipschitz_local;
  if (s == "rs") return CertMethod::rs;
  throw InputError("unknown certification method '" + std::string(s) + "'");
}

enum class LipschitzScope { global_bound, local_estimate };

struct LipschitzProfile {
  Vector constants;  // per class, >= 0
  LipschitzScope scope = LipschitzScope::global_bound;
  Norm norm = Norm::l2;
  Vector center;             // local_estimate only
  double ball_radius = 0.0;  // local_estimate only

  void validate() const {
    for (double v : constants) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("Lipschitz constants must be finite and >= 0");
    }
  }
};

struct Certificate {
  std::size_t index = 0;
  std::optional<std::size_t> label;
  std::size_t predicted = 0;
  std::size_t runner_up = 0;
  /// Margin mu that h keeps over the ball: (1 - alpha) / alpha.
  double margin = 0.0;
  double radius = 0.0;
  CertMethod method = CertMethod::lipschitz_global;
  Norm norm = Norm::l2;
  double alpha = 1.0;
  bool certifiable = false;
  bool mispredicted = false;
  bool heuristic = false;
  bool assumption_violation = false;
  /// Where h(x) came from: exact, mc or quadrature.
  std::string estimator = "exact";
  /// Local certificates only hold inside this ball.
  std::optional<double> valid_within;

  std::string flags() const {
    std::string out = "p=" + to_string(norm) + ";est=" + estimator;
    if (!certifiable) out += ";not_certifiable";
    if (mispredicted) out += ";mispredicted";
    if (heuristic) out += ";heuristic";
    if (assumption_violation) out += ";assumption_violation";
    if (valid_within) out += ";within=" + format_double(*valid_within);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Closed forms

inline void check_certifiable_alpha(double alpha) {
  if (std::isnan(alpha) || alpha > 1.0) throw InputError("alpha must lie in [1/2, 1]");
  if (alpha < 0.5) {
    throw NotCertifiableError("alpha = " + format_double(alpha) +
                              " < 1/2 puts most weight on the accurate model; no non-trivial "
                              "radius can be certified");
  }
}

/// (1 - alpha) / alpha: the margin h must keep for the mixture's prediction to hold.
inline double required_margin(double alpha) {
  check_certifiable_alpha(alpha);
  return (1.0 - alpha) / alpha;
}

/// min over i != y of (alpha (h_y - h_i) + alpha - 1) / (alpha (L_y + L_i)), clamped at 0.
/// A zero denominator gives +inf when its numerator is positive and 0 otherwise.
inline Certificate lipschitz_radius(VectorView h_probs, const LipschitzProfile& profile, double alpha) {
  check_certifiable_alpha(alpha);
  profile.validate();
  if (profile.constants.size() != h_probs.size()) {
    throw InputError("Lipschitz profile and probability vector differ in class count");
  }
  Certificate cert;
  cert.alpha = alpha;
  cert.norm = profile.norm;
  cert.margin = required_margin(alpha);
  cert.predicted = argmax(h_probs);
  cert.runner_up = runner_up(h_probs, cert.predicted);
  const std::size_t y = cert.predicted;
  double r = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < h_probs.size(); ++i) {
    if (i == y) continue;
    const double num = alpha * (h_probs[y] - h_probs[i]) + alpha - 1.0;
    const double den = alpha * (profile.constants[y] + profile.constants[i]);
    const double ratio = den > 0.0 ? num / den : (num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    r = std::min(r, ratio);
  }
  cert.radius = std::max(0.0, r);
  if (profile.scope == LipschitzScope::local_estimate) {
    cert.method = CertMethod::lipschitz_local;
    cert.heuristic = true;
    cert.valid_within = profile.ball_radius;
    cert.radius = std::min(cert.radius, profile.ball_radius);
  } else {
    cert.method = CertMethod::lipschitz_global;
  }
  cert.certifiable = cert.radius > 0.0;
  return cert;
}

/// (sigma / 2) (Phi^{-1}(alpha h_y) - Phi^{-1}(alpha h_y' + 1 - alpha)), clamped at 0.
/// Both quantile arguments must lie strictly inside (0, 1).
inline Certificate rs_radius(VectorView h_probs, double sigma, double alpha) {
  check_certifiable_alpha(alpha);
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  Certificate cert;
  cert.method = CertMethod::rs;
  cert.norm = Norm::l2;
  cert.alpha = alpha;
  cert.margin = required_margin(alpha);
  cert.predicted = argmax(h_probs);
  cert.runner_up = runner_up(h_probs, cert.predicted);
  const double top = alpha * h_probs[cert.predicted];
  const double second = alpha * h_probs[cert.runner_up] + 1.0 - alpha;
  if (!(top > 0.0 && top < 1.0 && second > 0.0 && second < 1.0)) {
    throw AssumptionViolation("smoothed probabilities are degenerate after alpha scaling (" +
                              format_double(top) + ", " + format_double(second) +
                              "); the base classifier must not be 0 or 1 almost everywhere");
  }
  const double r = 0.5 * sigma * (inverse_normal_cdf(top) - inverse_normal_cdf(second));
  cert.radius = std::max(0.0, r);
  cert.certifiable = cert.radius > 0.0;
  return cert;
}

/// l2 Lipschitz constant sqrt(2 / (pi sigma^2)) of every Gaussian-smoothed
/// [0,1]-valued output; linf bounds multiply by sqrt(d).
inline LipschitzProfile smoothed_lipschitz_profile(double sigma, std::size_t input_dim,
                                                   std::size_t class_count, Norm p) {
  double value = std::sqrt(2.0 / std::numbers::pi) / sigma;
  if (p == Norm::linf) value *= std::sqrt(static_cast<double>(input_dim));
  LipschitzProfile profile;
  profile.constants.assign(class_count, value);
  profile.norm = p;
  return profile;
}

inline LipschitzProfile model_lipschitz_profile(const FeedForwardModel& model, Norm p) {
  const LipschitzBound bound = global_lipschitz_upper(model, p, OutputDomain::probability);
  LipschitzProfile profile;
  profile.constants = bound.per_class;
  profile.norm = p;
  return profile;
}

// ---------------------------------------------------------------------------
// Empirical estimates

struct RobustMarginEstimate {
  std::size_t predicted = 0;
  double margin = 0.0;
};

/// Smallest top-two probability gap of h seen along a PGD run against its own
/// prediction, floored at 0. An empirical witness, not a certificate.
inline RobustMarginEstimate estimate_robust_margin(const Classifier& h, VectorView x,
                                                   const AttackSpec& spec) {
  RobustMarginEstimate out;
  const Vector clean = h.probs(x);
  out.predicted = argmax(clean);
  double worst = margin_of(clean, out.predicted);
  pgd_attack(h, x, out.predicted, spec, [&](VectorView z) {
    worst = std::min(worst, margin_of(h.probs(z), out.predicted));
  });
  out.margin = std::max(0.0, worst);
  return out;
}

/// Per class, PGD-style maximization of |h_i(x + delta) - h_i(x)| / eps over
/// ||delta||_p <= eps, both directions. Steps and step size come from `spec`
/// (20 steps when it has none).
inline LipschitzProfile local_lipschitz_estimate(const Classifier& h, VectorView x, double eps, Norm p,
                                                 const AttackSpec& spec) {
  if (!(eps > 0.0)) throw InputError("local Lipschitz ball radius must be positive");
  AttackSpec ball = spec;
  ball.norm = p;
  ball.epsilon = eps;
  if (ball.steps == 0) ball.steps = 20;
  const double eta = ball.effective_step_size();
  const std::size_t c = h.class_count();
  const std::size_t d = x.size();
  const Vector base = h.probs(x);

  LipschitzProfile profile;
  profile.scope = LipschitzScope::local_estimate;
  profile.norm = p;
  profile.center.assign(x.begin(), x.end());
  profile.ball_radius = eps;
  profile.constants.assign(c, 0.0);

  for (std::size_t i = 0; i < c; ++i) {
    Vector onehot(c, 0.0);
    onehot[i] = 1.0;
    double best = 0.0;
    for (double sign : {1.0, -1.0}) {
      Vector z(x.begin(), x.end());
      if (ball.random_start) {
        CounterRng rng(derive_seed(ball.seed, i * 2 + (sign > 0 ? 0 : 1)));
        for (std::size_t j = 0; j < d; ++j) z[j] += rng.uniform(-eps, eps);
        detail::project(z, x, ball);
      }
      for (std::size_t step = 0; step < ball.steps; ++step) {
        const Vector grad = h.probs_vjp(z, onehot);
        const double gnorm = p == Norm::linf ? norm_linf(grad) : norm_l2(grad);
        if (!(gnorm > 0.0)) break;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = sign * grad[j];
          z[j] += p == Norm::linf ? eta * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0)) : eta * g / gnorm;
        }
        detail::project(z, x, ball);
        best = std::max(best, std::abs(h.probs(z)[i] - base[i]));
      }
    }
    profile.constants[i] = best / eps;
  }
  return profile;
}

// ---------------------------------------------------------------------------
// Dataset certification

struct CertifyParams {
  CertMethod method = CertMethod::lipschitz_global;
  Norm norm = Norm::l2;
  /// lipschitz_local: ball radius and PGD settings for the estimate.
  double local_epsilon = 0.1;
  AttackSpec local_attack;
  /// rs: subtract / add a Hoeffding deviation at this confidence level.
  std::optional<double> hoeffding_beta;
};

/// Certificates for the alpha-mixture `mixed` over `data`. Inputs where h
/// mispredicts get radius 0 and the mispredicted flag.
inline std::vector<Certificate> certify_dataset(const MixedClassifier& mixed, const Dataset& data,
                                                const CertifyParams& params, std::size_t workers = 1) {
  if (mixed.config().formulation != Formulation::alpha) {
    throw InputError("certification applies to the alpha mixture");
  }
  const double alpha = mixed.config().alpha;
  const Classifier& h = mixed.h();
  const auto* smoothed = dynamic_cast<const SmoothedClassifier*>(&h);
  const auto* plain = dynamic_cast<const ModelClassifier*>(&h);
  std::string estimator = "exact";
  if (smoothed) estimator = to_string(smoothed->config().estimator);

  LipschitzProfile global;
  if (params.method == CertMethod::lipschitz_global) {
    if (smoothed) {
      global = smoothed_lipschitz_profile(smoothed->sigma(), h.input_dim(), h.class_count(), params.norm);
    } else if (plain) {
      global = model_lipschitz_profile(plain->model(), params.norm);
    } else {
      throw InputError("lipschitz_global needs h to be a network or a smoothed classifier");
    }
  } else if (params.method == CertMethod::rs && !smoothed) {
    throw InputError("rs certification needs h to be a smoothed classifier");
  }
  if (!data.empty() && data.dim() != h.input_dim()) throw InputError("dataset dimension mismatch");

  const bool alpha_ok = alpha >= 0.5 && alpha <= 1.0;
  std::vector<Certificate> certs(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    const VectorView x = data.input(i);
    Vector p = h.probs(x);
    Certificate cert;
    const Norm norm = params.method == CertMethod::rs ? Norm::l2 : params.norm;
    if (!alpha_ok) {
      cert.predicted = argmax(p);
      cert.runner_up = runner_up(p, cert.predicted);
      cert.margin = 1.0;
    } else if (params.method == CertMethod::rs) {
      if (params.hoeffding_beta) {
        const double dev = hoeffding_deviation(smoothed->config().samples, *params.hoeffding_beta);
        const std::size_t y = argmax(p);
        const std::size_t y2 = runner_up(p, y);
        p[y] -= dev;
        p[y2] += dev;
      }
      try {
        cert = rs_radius(p, smoothed->sigma(), alpha);
      } catch (const AssumptionViolation&) {
        cert.predicted = argmax(p);
        cert.runner_up = runner_up(p, cert.predicted);
        cert.margin = required_margin(alpha);
        cert.assumption_violation = true;
      }
    } else if (params.method == CertMethod::lipschitz_global) {
      cert = lipschitz_radius(p, global, alpha);
    } else {
      const LipschitzProfile local =
          local_lipschitz_estimate(h, x, params.local_epsilon, params.norm, params.local_attack);
      cert = lipschitz_radius(p, local, alpha);
    }
    cert.index = i;
    cert.method = params.method;
    cert.norm = norm;
    cert.alpha = alpha;
    cert.estimator = estimator;
    cert.label = data.labels[i];
    cert.heuristic = params.method == CertMethod::lipschitz_local;
    if (cert.predicted != data.labels[i]) {
      cert.mispredicted = true;
      cert.radius = 0.0;
    }
    cert.certifiable = cert.radius > 0.0;
    certs[i] = cert;
  });
  return certs;
}

// ---------------------------------------------------------------------------
// CSV: index,label,y,y_prime,margin,radius,method,alpha,flags

inline void write_certificates_csv(std::ostream& out, const std::vector<Certificate>& certs) {
  out << "index,label,y,y_prime,margin,radius,method,alpha,flags\n";
  for (const Certificate& c : certs) {
    out << c.index << ',';
    if (c.label) out << *c.label;
    out << ',' << c.predicted << ',' << c.runner_up << ',' << format_double(c.margin) << ','
        << format_double(c.radius) << ',' << to_string(c.method) << ',' << format_double(c.alpha)
        << ',' << c.flags() << '\n';
  }
}

inline std::vector<Certificate> read_certificates_csv(std::istream& in, const std::string& name = "<stream>") {
  std::vector<Certificate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line.rfind("index,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) {
      throw FormatError(name + ":" + std::to_string(line_no) + ": expected 9 certificate columns");
    }
    try {
      Certificate c;
      c.index = std::stoul(f[0]);
      if (!f[1].empty()) c.label = std::stoul(f[1]);
      c.predicted = std::stoul(f[2]);
      c.runner_up = std::stoul(f[3]);
      c.margin = std::stod(f[4]);
      c.radius = std::stod(f[5]);
      c.method = parse_cert_method(f[6]);
      c.alpha = std::stod(f[7]);
      std::stringstream fs(f[8]);
      std::string flag;
      while (std::getline(fs, flag, ';')) {
        if (flag.rfind("p=", 0) == 0) c.norm = parse_norm(flag.substr(2));
        else if (flag.rfind("est=", 0) == 0) c.estimator = flag.substr(4);
        else if (flag == "mispredicted") c.mispredicted = true;
        else if (flag == "heuristic") c.heuristic = true;
        else if (flag == "assumption_violation") c.assumption_violation = true;
        else if (flag.rfind("within=", 0) == 0) c.valid_within = std::stod(flag.substr(7));
      }
      c.certifiable = c.radius > 0.0;
      out.push_back(std::move(c));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mixcert
