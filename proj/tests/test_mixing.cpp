#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace mixcert;
using namespace mixcert::testing;
using Catch::Approx;

namespace {

struct Pair {
  ClassifierPtr g;
  ClassifierPtr h;
};

Pair random_pair(std::uint64_t seed, std::size_t d = 3, std::size_t c = 3) {
  return {model_classifier(FeedForwardModel::random({d, 6, c}, Activation::tanh, seed)),
          model_classifier(FeedForwardModel::random({d, 5, c}, Activation::tanh, seed + 1000))};
}

}  // namespace

TEST_CASE("per-class smo formulas on hand values") {
  CHECK(smo1_value(0.6, 0.2, 1.0, 2.0) == Approx(1.0).margin(1e-15));
  // smo2 is smo3 with R_i = ||grad g_i||.
  CHECK(smo3_value(0.6, 0.2, 1.0, 2.0) == Approx(1.0 / 3.0).margin(1e-15));
  CHECK(smo3_value(0.7, 0.3, 1.0, 1.0) == Approx(0.5).margin(1e-15));
}

TEST_CASE("gamma = 0 returns g for every formulation and r-mode") {
  const Pair p = random_pair(5);
  CounterRng rng(1);
  for (int t = 0; t < 10; ++t) {
    const Vector x = random_vector(rng, 3, 2.0);
    for (OutputDomain dom : {OutputDomain::logit, OutputDomain::probability}) {
      const Vector g = p.g->outputs(x, dom);
      CHECK(mix_smo1(*p.g, *p.h, 0.0, Norm::linf, x, dom) == g);
      CHECK(mix_smo2(*p.g, *p.h, 0.0, Norm::l2, x, dom) == g);
      for (RMode r : {RMode::one, RMode::grad_gi, RMode::grad_max_gj, RMode::grad_ratio}) {
        CHECK(mix_smo3(*p.g, *p.h, 0.0, r, Norm::linf, x, dom) == g);
      }
    }
  }
}

TEST_CASE("smo1 with a zero-gradient g returns g") {
  const ClassifierPtr g = constant_classifier(2, {0.35, 0.65});
  const Pair p = random_pair(8, 2, 2);
  const Vector x{0.3, -0.4};
  const Vector out = mix_smo1(*g, *p.h, 7.5, Norm::l2, x);
  CHECK(out[0] == Approx(0.35).margin(1e-12));
  CHECK(out[1] == Approx(0.65).margin(1e-12));
}

TEST_CASE("smo2 at gamma = 1e6 with unit gradient norms is within 1e-5 of h") {
  // Logit rows (1, 0) and (0, -1): each has unit l1 norm, the dual of l-inf.
  const ClassifierPtr g = model_classifier(single_layer(Matrix(2, 2, Vector{1, 0, 0, -1}), {0, 0}));
  const Pair p = random_pair(11, 2, 2);
  CounterRng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vector(rng, 2, 1.0);
    const Vector mixed = mix_smo2(*g, *p.h, 1e6, Norm::linf, x, OutputDomain::logit);
    const Vector h = p.h->logits(x);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(mixed[i] - h[i]) <= 1e-5);
  }
}

TEST_CASE("r_mode grad_gi coincides with smo2") {
  const Pair p = random_pair(21);
  CounterRng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Vector x = random_vector(rng, 3, 1.5);
    for (double gamma : {0.1, 1.0, 30.0}) {
      CHECK(mix_smo3(*p.g, *p.h, gamma, RMode::grad_gi, Norm::l2, x) == mix_smo2(*p.g, *p.h, gamma, Norm::l2, x));
    }
  }
}

TEST_CASE("gamma = inf collapses smo2 and smo3 to h") {
  const Pair p = random_pair(31);
  const Vector x{0.1, 0.2, -0.3};
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(mix_smo3(*p.g, *p.h, inf, RMode::one, Norm::linf, x) == p.h->probs(x));
  MixedClassifier::Config cfg;
  cfg.formulation = Formulation::smo3;
  cfg.gamma = inf;
  const MixedClassifier mixed(p.g, p.h, cfg);
  CHECK(mixed.degenerate_base() == p.h.get());
  CHECK(mixed.logits(x) == p.h->logits(x));
}

TEST_CASE("mix_alpha worked example") {
  const MixOutput out = mix_alpha_values(Vector{0.7, 0.3}, Vector{0.2, 0.8}, 0.5);
  CHECK(out.probabilities[0] == Approx(0.45).margin(1e-15));
  CHECK(out.probabilities[1] == Approx(0.55).margin(1e-15));
  CHECK(out.logits[0] == Approx(-0.7985).margin(1e-4));
  CHECK(out.logits[1] == Approx(-0.5978).margin(1e-4));
  CHECK(out.predicted == 1);
}

TEST_CASE("mix_alpha floors zero entries instead of producing -inf") {
  const MixOutput out = mix_alpha_values(Vector{1.0, 0.0}, Vector{1.0, 0.0}, 0.3);
  CHECK(std::isfinite(out.logits[1]));
  CHECK(out.logits[1] == Approx(std::log(1e-300)));
}

TEST_CASE("mix_alpha endpoints follow the base argmax") {
  const Pair p = random_pair(41, 2, 4);
  CounterRng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Vector x = random_vector(rng, 2, 3.0);
    CHECK(mix_alpha(*p.g, *p.h, 0.0, x).predicted == argmax(p.g->probs(x)));
    CHECK(mix_alpha(*p.g, *p.h, 1.0, x).predicted == argmax(p.h->probs(x)));
  }
}

TEST_CASE("mix_alpha is a probability vector between g and h") {
  const Pair p = random_pair(51);
  CounterRng rng(5);
  for (int t = 0; t < 100; ++t) {
    const Vector x = random_vector(rng, 3, 2.0);
    const double a = rng.uniform();
    const Vector g = p.g->probs(x);
    const Vector h = p.h->probs(x);
    const MixOutput out = mix_alpha(*p.g, *p.h, a, x);
    double sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(out.probabilities[i] >= std::min(g[i], h[i]) - 1e-15);
      CHECK(out.probabilities[i] <= std::max(g[i], h[i]) + 1e-15);
      sum += out.probabilities[i];
    }
    CHECK(sum == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("mix_alpha is continuous in alpha") {
  const Pair p = random_pair(61);
  const Vector x{0.4, -1.0, 0.7};
  const Vector a = mix_alpha(*p.g, *p.h, 0.3, x).probabilities;
  const Vector b = mix_alpha(*p.g, *p.h, 0.3 + 1e-9, x).probabilities;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("smo3 with R = 1 on probabilities reproduces mix_alpha") {
  const Pair p = random_pair(71);
  CounterRng rng(6);
  for (double gamma : {0.01, 0.5, 1.0, 3.0, 100.0}) {
    for (int t = 0; t < 40; ++t) {
      const Vector x = random_vector(rng, 3, 2.5);
      const Vector smo = mix_smo3(*p.g, *p.h, gamma, RMode::one, Norm::linf, x);
      const MixOutput ref = mix_alpha(*p.g, *p.h, alpha_from_gamma(gamma), x);
      CHECK(argmax(smo) == ref.predicted);
      for (std::size_t i = 0; i < smo.size(); ++i) CHECK(smo[i] == Approx(ref.probabilities[i]).margin(1e-14));
    }
  }
}

TEST_CASE("alpha and gamma reparameterization round-trips") {
  for (double a : {0.0, 0.1, 0.5, 0.75, 0.99}) CHECK(alpha_from_gamma(gamma_from_alpha(a)) == Approx(a).margin(1e-14));
  CHECK(std::isinf(gamma_from_alpha(1.0)));
  CHECK(alpha_from_gamma(std::numeric_limits<double>::infinity()) == 1.0);
}

TEST_CASE("MixedClassifier gradients match finite differences") {
  CounterRng rng(7);
  for (int t = 0; t < 30; ++t) {
    const Pair p = random_pair(100 + t);
    const Vector x = random_vector(rng, 3, 1.5);
    const Vector cot = random_vector(rng, 3, 1.0);
    MixedClassifier::Config cfg;
    if (t % 3 == 0) {
      cfg.alpha = rng.uniform(0.05, 0.95);
    } else {
      cfg.formulation = Formulation::smo3;
      cfg.r_mode = RMode::one;
      cfg.gamma = rng.uniform(0.1, 5.0);
      cfg.domain = t % 3 == 1 ? OutputDomain::logit : OutputDomain::probability;
    }
    const MixedClassifier mixed(p.g, p.h, cfg);
    const Vector analytic = mixed.logits_vjp(x, cot);
    const Vector numeric = finite_diff_gradient([&](VectorView z) { return dot(cot, mixed.logits(z)); }, x, 1e-5);
    CHECK(max_relative_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("grad_ratio records fallbacks when h is flat") {
  const Pair p = random_pair(81, 2, 2);
  const ClassifierPtr flat = constant_classifier(2, {0.5, 0.5});
  MixedClassifier::Config cfg;
  cfg.formulation = Formulation::smo3;
  cfg.r_mode = RMode::grad_ratio;
  cfg.gamma = 1.0;
  const MixedClassifier mixed(p.g, flat, cfg);
  const Vector out = mixed.probs(Vector{0.2, 0.1});
  CHECK(mixed.ratio_fallbacks() == 2);
  // With R capped at 1e12 the mixture sits on h.
  CHECK(out[0] == Approx(0.5).margin(1e-6));

  MixDiagnostics diag;
  mix_smo3(*p.g, *flat, 1.0, RMode::grad_ratio, Norm::l2, Vector{0.2, 0.1}, OutputDomain::probability, &diag);
  CHECK(diag.ratio_fallbacks == 2);
}

TEST_CASE("mixing rejects invalid parameters") {
  const Pair p = random_pair(91);
  const Pair other = random_pair(92, 2, 3);
  CHECK_THROWS_AS(MixedClassifier::alpha_mix(p.g, p.h, 1.5), InputError);
  CHECK_THROWS_AS(MixedClassifier::alpha_mix(p.g, other.h, 0.5), InputError);
  CHECK_THROWS_AS(mix_smo1(*p.g, *p.h, -1.0, Norm::l2, Vector{0, 0, 0}), InputError);
  CHECK_THROWS_AS(mix_alpha_values(Vector{1, 0}, Vector{1, 0, 0}, 0.5), InputError);
  CHECK_THROWS_AS(parse_r_mode("two"), InputError);
}
