#pragma once

// FGSM / PGD under l2 and linf budgets against any differentiable Classifier.

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mixcert/classifier.hpp"
#include "mixcert/data.hpp"
#include "mixcert/parallel.hpp"
#include "mixcert/random.hpp"

namespace mixcert {

/// Whose gradient crafts the perturbation: g (STD), h (ROB) or the mixture (MIX).
enum class AttackTarget { std_model, rob_model, mix };

inline std::string to_string(AttackTarget t) {
  switch (t) {
    case AttackTarget::std_model: return "STD";
    case AttackTarget::rob_model: return "ROB";
    case AttackTarget::mix: return "MIX";
  }
  return "";
}

inline AttackTarget parse_target(std::string_view s) {
  if (s == "STD" || s == "std") return AttackTarget::std_model;
  if (s == "ROB" || s == "rob") return AttackTarget::rob_model;
  if (s == "MIX" || s == "mix") return AttackTarget::mix;
  throw InputError("unknown attack target '" + std::string(s) + "' (expected STD, ROB or MIX)");
}

struct AttackSpec {
  Norm norm = Norm::linf;
  double epsilon = 0.0;
  std::size_t steps = 0;
  /// Defaults to 2.5 eps / k for l2 and eps / 4 for linf.
  std::optional<double> step_size;
  AttackTarget target = AttackTarget::mix;
  bool random_start = false;
  std::uint64_t seed = 0;
  std::optional<InputBox> clip;

  double effective_step_size() const {
    if (step_size) return *step_size;
    if (norm == Norm::l2) return steps == 0 ? 0.0 : 2.5 * epsilon / static_cast<double>(steps);
    return epsilon / 4.0;
  }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InputError("attack budget must be >= 0");
    if (step_size && !(*step_size > 0.0)) throw InputError("attack step size must be positive");
  }

  static AttackSpec fgsm(double epsilon) {
    AttackSpec s;
    s.norm = Norm::linf;
    s.epsilon = epsilon;
    s.steps = 1;
    s.step_size = epsilon > 0.0 ? std::optional<double>(epsilon) : std::nullopt;
    return s;
  }
};

/// Softmax cross-entropy of logits against `label`.
inline double cross_entropy(VectorView logits, std::size_t label) {
  return log_sum_exp(logits) - logits[label];
}

struct AttackResult {
  Vector x_adv;
  double loss = 0.0;        // loss at x_adv (best iterate)
  double clean_loss = 0.0;  // loss at the starting input x
  std::size_t zero_gradient_steps = 0;
};

namespace detail {

inline void project(std::span<double> z, VectorView x, const AttackSpec& spec) {
  const std::size_t d = z.size();
  if (spec.norm == Norm::linf) {
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = std::clamp(z[j], x[j] - spec.epsilon, x[j] + spec.epsilon);
    }
  } else {
    double n2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) n2 += (z[j] - x[j]) * (z[j] - x[j]);
    const double n = std::sqrt(n2);
    if (n > spec.epsilon) {
      const double s = spec.epsilon / n;
      for (std::size_t j = 0; j < d; ++j) z[j] = x[j] + (z[j] - x[j]) * s;
    }
  }
  if (spec.clip) {
    for (double& v : z) v = std::clamp(v, spec.clip->lo, spec.clip->hi);
  }
}

}  // namespace detail

using IterateObserver = std::function<void(VectorView)>;

/// PGD on the cross-entropy of `model`'s logits. linf takes sign steps, l2
/// takes unit-normalized gradient steps; each iterate is projected back onto
/// the eps-ball (and the clip box, when set). Returns the highest-loss
/// iterate seen, including the start. `observer` sees every evaluated point.
inline AttackResult pgd_attack(const Classifier& model, VectorView x, std::size_t label,
                               const AttackSpec& spec, const IterateObserver& observer = {}) {
  spec.validate();
  if (x.size() != model.input_dim()) throw InputError("attack input dimension mismatch");
  if (label >= model.class_count()) throw InputError("attack label out of range");
  const std::size_t d = x.size();

  AttackResult result;
  Vector z(x.begin(), x.end());
  result.clean_loss = cross_entropy(model.logits(x), label);

  if (spec.random_start && spec.epsilon > 0.0) {
    CounterRng rng(spec.seed);
    if (spec.norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) z[j] += rng.uniform(-spec.epsilon, spec.epsilon);
    } else {
      Vector dir(d);
      rng.fill_normal(dir);
      const double n = norm_l2(dir);
      const double r = spec.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
      for (std::size_t j = 0; j < d; ++j) z[j] += n > 0.0 ? dir[j] / n * r : 0.0;
    }
    detail::project(z, x, spec);
  }

  Vector logits = model.logits(z);
  double loss = cross_entropy(logits, label);
  if (observer) observer(z);
  result.x_adv = z;
  result.loss = loss;
  if (spec.epsilon == 0.0) {
    result.x_adv.assign(x.begin(), x.end());
    result.loss = result.clean_loss;
    return result;
  }

  const double eta = spec.effective_step_size();
  for (std::size_t step = 0; step < spec.steps; ++step) {
    Vector cot = softmax(logits);
    cot[label] -= 1.0;
    const Vector grad = model.logits_vjp(z, cot);
    const double gnorm = spec.norm == Norm::linf ? norm_linf(grad) : norm_l2(grad);
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) {
      ++result.zero_gradient_steps;
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (spec.norm == Norm::linf) {
        z[j] += eta * (grad[j] > 0.0 ? 1.0 : (grad[j] < 0.0 ? -1.0 : 0.0));
      } else {
        z[j] += eta * grad[j] / gnorm;
      }
    }
    detail::project(z, x, spec);
    logits = model.logits(z);
    loss = cross_entropy(logits, label);
    if (observer) observer(z);
    if (loss > result.loss) {
      result.loss = loss;
      result.x_adv = z;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation of g, h and a mixture under attack

struct AttackRecord {
  std::size_t index = 0;
  AttackTarget target = AttackTarget::mix;
  double epsilon = 0.0;
  std::size_t clean_pred = 0;  // mixed classifier at x
  std::size_t adv_pred = 0;    // mixed classifier at x_adv
  std::size_t label = 0;
  /// Mixed probability of the label minus the best other class at x_adv.
  double margin_at_adv = 0.0;
};

struct TargetAccuracy {
  AttackTarget target = AttackTarget::mix;
  std::size_t g_correct = 0;
  std::size_t h_correct = 0;
  std::size_t mix_correct = 0;
};

struct AttackReport {
  std::size_t total = 0;
  std::size_t g_clean_correct = 0;
  std::size_t h_clean_correct = 0;
  std::size_t mix_clean_correct = 0;
  std::vector<TargetAccuracy> attacked;
  std::vector<AttackRecord> records;

  static double ratio(std::size_t k, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
  }
  double clean_accuracy_g() const { return ratio(g_clean_correct, total); }
  double clean_accuracy_h() const { return ratio(h_clean_correct, total); }
  double clean_accuracy_mix() const { return ratio(mix_clean_correct, total); }

  const TargetAccuracy& for_target(AttackTarget t) const {
    for (const auto& a : attacked) {
      if (a.target == t) return a;
    }
    throw InputError("report has no entry for target " + to_string(t));
  }
  double attacked_accuracy_mix(AttackTarget t) const { return ratio(for_target(t).mix_correct, total); }
  double attacked_accuracy_g(AttackTarget t) const { return ratio(for_target(t).g_correct, total); }
  double attacked_accuracy_h(AttackTarget t) const { return ratio(for_target(t).h_correct, total); }
};

/// Crafts perturbations against g, h or the mixture (per target) and scores
/// every perturbed input with all three models. With no targets given,
/// spec.target is used.
inline AttackReport evaluate_under_attack(const Classifier& g, const Classifier& h,
                                          const Classifier& mixed, const Dataset& data,
                                          const AttackSpec& spec,
                                          std::vector<AttackTarget> targets = {},
                                          std::size_t workers = 1) {
  if (targets.empty()) targets.push_back(spec.target);
  const std::size_t n = data.size();
  AttackReport report;
  report.total = n;

  struct PerInput {
    bool g_clean = false, h_clean = false, mix_clean = false;
    std::size_t mix_clean_pred = 0;
    std::vector<char> g_adv, h_adv, mix_adv;
    std::vector<AttackRecord> records;
  };
  std::vector<PerInput> slots(n);
  parallel_for(n, workers, [&](std::size_t i) {
    PerInput& s = slots[i];
    const VectorView x = data.input(i);
    const std::size_t y = data.labels[i];
    s.g_clean = argmax(g.probs(x)) == y;
    s.h_clean = argmax(h.probs(x)) == y;
    s.mix_clean_pred = argmax(mixed.probs(x));
    s.mix_clean = s.mix_clean_pred == y;
    for (AttackTarget t : targets) {
      AttackSpec local = spec;
      local.target = t;
      if (!local.clip && data.box) local.clip = data.box;
      local.seed = derive_seed(spec.seed, i);
      const Classifier& attacked = t == AttackTarget::std_model   ? g
                                   : t == AttackTarget::rob_model ? h
                                                                  : mixed;
      const Vector x_adv = pgd_attack(attacked, x, y, local).x_adv;
      const Vector mix_p = mixed.probs(x_adv);
      const std::size_t adv_pred = argmax(mix_p);
      s.g_adv.push_back(argmax(g.probs(x_adv)) == y);
      s.h_adv.push_back(argmax(h.probs(x_adv)) == y);
      s.mix_adv.push_back(adv_pred == y);
      s.records.push_back(
          AttackRecord{i, t, spec.epsilon, s.mix_clean_pred, adv_pred, y, margin_of(mix_p, y)});
    }
  });

  for (AttackTarget t : targets) report.attacked.push_back(TargetAccuracy{t});
  for (const PerInput& s : slots) {
    report.g_clean_correct += s.g_clean;
    report.h_clean_correct += s.h_clean;
    report.mix_clean_correct += s.mix_clean;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      report.attacked[k].g_correct += s.g_adv[k];
      report.attacked[k].h_correct += s.h_adv[k];
      report.attacked[k].mix_correct += s.mix_adv[k];
    }
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    for (const PerInput& s : slots) report.records.push_back(s.records[k]);
  }
  return report;
}

/// CSV: index,target,eps,clean_pred,adv_pred,label,margin_at_adv
inline void write_attack_csv(std::ostream& out, const AttackReport& report) {
  out << "index,target,eps,clean_pred,adv_pred,label,margin_at_adv\n";
  for (const AttackRecord& r : report.records) {
    out << r.index << ',' << to_string(r.target) << ',' << format_double(r.epsilon) << ','
        << r.clean_pred << ',' << r.adv_pred << ',' << r.label << ','
        << format_double(r.margin_at_adv) << '\n';
  }
}

}  // namespace mixcert
