#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <sstream>

#include "test_util.hpp"

using namespace mixcert;
using namespace mixcert::testing;
using Catch::Approx;

namespace {

LipschitzProfile unit_profile(std::size_t c) {
  LipschitzProfile p;
  p.constants.assign(c, 1.0);
  return p;
}

Dataset grid_dataset(const ClassifierPtr& labeler, std::size_t per_axis, double half_width) {
  Dataset data;
  data.class_count = labeler->class_count();
  Vector flat;
  for (std::size_t a = 0; a < per_axis; ++a) {
    for (std::size_t b = 0; b < per_axis; ++b) {
      const double x0 = -half_width + 2.0 * half_width * a / (per_axis - 1);
      const double x1 = -half_width + 2.0 * half_width * b / (per_axis - 1);
      flat.push_back(x0);
      flat.push_back(x1);
      data.labels.push_back(argmax(labeler->probs(Vector{x0, x1})));
    }
  }
  data.inputs = Matrix(data.labels.size(), 2, flat);
  return data;
}

}  // namespace

TEST_CASE("required margin") {
  CHECK(required_margin(1.0) == 0.0);
  CHECK(required_margin(0.5) == 1.0);
  CHECK(required_margin(0.6) == Approx(0.6667).margin(1e-4));
  CHECK_THROWS_AS(required_margin(0.4), NotCertifiableError);
  CHECK_THROWS_AS(required_margin(1.2), InputError);
}

TEST_CASE("Lipschitz radius worked examples") {
  CHECK(std::abs(lipschitz_radius(Vector{0.9, 0.1}, unit_profile(2), 1.0).radius - 0.4) <= 1e-9);
  CHECK(lipschitz_radius(Vector{1.0, 0.0}, unit_profile(2), 0.5).radius == 0.0);
  CHECK(std::abs(lipschitz_radius(Vector{0.9, 0.1}, unit_profile(2), 0.75).radius - 0.35 / 1.5) <= 1e-9);
  const Certificate c = lipschitz_radius(Vector{0.1, 0.7, 0.2}, unit_profile(3), 1.0);
  CHECK(c.predicted == 1);
  CHECK(c.runner_up == 2);
  CHECK(c.radius == Approx(0.25));
}

TEST_CASE("Lipschitz radius with zero constants") {
  LipschitzProfile zero;
  zero.constants = {0.0, 0.0};
  CHECK(std::isinf(lipschitz_radius(Vector{0.9, 0.1}, zero, 0.75).radius));
  CHECK(lipschitz_radius(Vector{0.6, 0.4}, zero, 0.5).radius == 0.0);
}

TEST_CASE("Lipschitz radius grows with alpha") {
  CounterRng rng(1);
  for (int t = 0; t < 200; ++t) {
    const double top = rng.uniform(0.5, 1.0);
    const Vector h{top, 1.0 - top};
    LipschitzProfile prof;
    prof.constants = {rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
    double prev = 0.0;
    for (double a = 0.5; a <= 1.0 + 1e-12; a += 0.05) {
      const double r = lipschitz_radius(h, prof, std::min(a, 1.0)).radius;
      CHECK(r >= prev - 1e-15);
      prev = r;
    }
  }
}

TEST_CASE("inverse normal CDF") {
  CHECK(inverse_normal_cdf(0.5) == Approx(0.0).margin(1e-15));
  CHECK(inverse_normal_cdf(0.8) == Approx(0.841621).margin(1e-5));
  CHECK(inverse_normal_cdf(0.975) == Approx(1.959964).margin(1e-6));
  for (double q = 1e-12; q < 1.0; q = q < 0.01 ? q * 10.0 : q + 0.01) {
    CHECK(inverse_normal_cdf(q) == Approx(-inverse_normal_cdf(1.0 - q)).margin(1e-9));
    CHECK(std::abs(normal_cdf(inverse_normal_cdf(q)) - q) <= 1e-9);
  }
  CHECK_THROWS_AS(inverse_normal_cdf(0.0), InputError);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), InputError);
}

TEST_CASE("RS radius worked examples") {
  CHECK(rs_radius(Vector{0.8, 0.2}, 1.0, 1.0).radius == Approx(0.8416).margin(1e-4));
  CHECK(rs_radius(Vector{0.8, 0.2}, 1.0, 0.625).radius == Approx(0.0).margin(1e-12));
  CHECK(rs_radius(Vector{0.9, 0.05, 0.05}, 0.5, 0.9).radius == Approx(0.4840).margin(1e-4));
  CHECK_THROWS_AS(rs_radius(Vector{1.0, 0.0}, 1.0, 1.0), AssumptionViolation);
  CHECK_THROWS_AS(rs_radius(Vector{0.6, 0.4}, 0.0, 1.0), InputError);
}

TEST_CASE("RS radius dominates the smoothed Lipschitz radius") {
  CounterRng rng(2);
  const double sigma = 0.4;
  const LipschitzProfile prof = smoothed_lipschitz_profile(sigma, 2, 2, Norm::l2);
  for (int t = 0; t < 500; ++t) {
    const double top = rng.uniform(0.5, 0.999);
    const Vector h{top, 1.0 - top};
    const double a = rng.uniform(0.5, 1.0);
    CHECK(rs_radius(h, sigma, a).radius >= lipschitz_radius(h, prof, a).radius - 1e-12);
  }
}

TEST_CASE("robust margin estimates") {
  const ClassifierPtr c = constant_classifier(2, {0.9, 0.1});
  AttackSpec spec;
  spec.epsilon = 0.5;
  spec.steps = 10;
  const RobustMarginEstimate e = estimate_robust_margin(*c, Vector{0.1, 0.2}, spec);
  CHECK(e.predicted == 0);
  CHECK(e.margin == Approx(0.8).margin(1e-12));

  const ClassifierPtr m = model_classifier(FeedForwardModel::random({2, 4, 3}, Activation::tanh, 4));
  AttackSpec zero;
  zero.steps = 5;
  const Vector x{0.3, -0.2};
  CHECK(estimate_robust_margin(*m, x, zero).margin == Approx(top_two_gap(m->probs(x))).margin(1e-15));

  spec.norm = Norm::l2;
  CHECK(estimate_robust_margin(*m, x, spec).margin <= top_two_gap(m->probs(x)));
}

TEST_CASE("local Lipschitz estimates") {
  const ClassifierPtr lin = linear_probability_1d(0.3);
  AttackSpec spec;
  spec.steps = 10;
  const LipschitzProfile prof = local_lipschitz_estimate(*lin, Vector{0.0}, 0.1, Norm::l2, spec);
  CHECK(prof.scope == LipschitzScope::local_estimate);
  CHECK(prof.constants[0] == Approx(0.3).margin(1e-6));
  CHECK(prof.constants[1] == Approx(0.3).margin(1e-6));

  const ClassifierPtr flat = constant_classifier(1, {0.4, 0.6});
  for (double v : local_lipschitz_estimate(*flat, Vector{0.0}, 0.1, Norm::linf, spec).constants) CHECK(v == 0.0);

  const Certificate local = lipschitz_radius(Vector{0.9, 0.1}, prof, 1.0);
  CHECK(local.heuristic);
  CHECK(local.radius <= 0.1);
  CHECK(local.flags().find("within=0.1") != std::string::npos);

  CHECK_THROWS_AS(local_lipschitz_estimate(*lin, Vector{0.0}, 0.0, Norm::l2, spec), InputError);
}

TEST_CASE("local estimate stays below the global bound") {
  CounterRng rng(3);
  for (int t = 0; t < 10; ++t) {
    const FeedForwardModel model = FeedForwardModel::random({2, 6, 3}, Activation::tanh, 50 + t);
    const ModelClassifier h(model);
    AttackSpec spec;
    spec.steps = 15;
    for (Norm p : {Norm::l2, Norm::linf}) {
      const Vector global = global_lipschitz_upper(model, p, OutputDomain::probability).per_class;
      const Vector local = local_lipschitz_estimate(h, random_vector(rng, 2), 0.2, p, spec).constants;
      for (std::size_t i = 0; i < 3; ++i) CHECK(local[i] <= global[i] + 1e-12);
    }
  }
}

TEST_CASE("certify_dataset at alpha = 1 gives standard Lipschitz radii") {
  const FeedForwardModel hm = FeedForwardModel::random({2, 5, 2}, Activation::tanh, 9);
  const ClassifierPtr h = model_classifier(hm);
  const ClassifierPtr g = model_classifier(FeedForwardModel::random({2, 5, 2}, Activation::tanh, 10));
  const Dataset data = grid_dataset(h, 5, 1.0);
  const MixedClassifier mixed = MixedClassifier::alpha_mix(g, h, 1.0);
  CertifyParams params;
  const auto certs = certify_dataset(mixed, data, params, 2);
  REQUIRE(certs.size() == data.size());
  const LipschitzProfile prof = model_lipschitz_profile(hm, Norm::l2);
  for (std::size_t i = 0; i < certs.size(); ++i) {
    CHECK(certs[i].index == i);
    CHECK(certs[i].radius == lipschitz_radius(h->probs(data.input(i)), prof, 1.0).radius);
    CHECK_FALSE(certs[i].mispredicted);
  }
}

TEST_CASE("certify_dataset edge cases") {
  const ClassifierPtr h = model_classifier(FeedForwardModel::random({2, 4, 2}, Activation::tanh, 12));
  const ClassifierPtr g = model_classifier(FeedForwardModel::random({2, 4, 2}, Activation::tanh, 13));
  const MixedClassifier mixed = MixedClassifier::alpha_mix(g, h, 0.75);
  Dataset empty;
  empty.inputs = Matrix(0, 2);
  CHECK(certify_dataset(mixed, empty, CertifyParams{}).empty());

  Dataset wrong;
  wrong.inputs = Matrix(1, 3, Vector{0, 0, 0});
  wrong.labels = {0};
  CHECK_THROWS_AS(certify_dataset(mixed, wrong, CertifyParams{}), InputError);

  CertifyParams rs;
  rs.method = CertMethod::rs;
  Dataset one = grid_dataset(h, 2, 0.5);
  CHECK_THROWS_AS(certify_dataset(mixed, one, rs), InputError);

  // Wrong labels are certified at radius 0 and flagged.
  for (auto& y : one.labels) y = 1 - y;
  for (const Certificate& c : certify_dataset(mixed, one, CertifyParams{})) {
    CHECK(c.mispredicted);
    CHECK(c.radius == 0.0);
  }

  // alpha below 1/2 yields radius-0 certificates rather than an error.
  const MixedClassifier low = MixedClassifier::alpha_mix(g, h, 0.3);
  for (const Certificate& c : certify_dataset(low, grid_dataset(h, 2, 0.5), CertifyParams{})) {
    CHECK(c.radius == 0.0);
    CHECK_FALSE(c.certifiable);
  }
}

TEST_CASE("RS certificates dominate Lipschitz ones on the same smoothed h") {
  const ClassifierPtr base = model_classifier(FeedForwardModel::random({2, 6, 2}, Activation::tanh, 14));
  SmoothingConfig sc;
  sc.sigma = 0.5;
  sc.estimator = SmoothingEstimator::quadrature;
  const ClassifierPtr h = std::make_shared<SmoothedClassifier>(base, sc);
  const ClassifierPtr g = model_classifier(FeedForwardModel::random({2, 6, 2}, Activation::tanh, 15));
  const Dataset data = grid_dataset(h, 4, 1.5);
  for (double a : {0.5, 0.6, 0.75, 0.9, 1.0}) {
    const MixedClassifier mixed = MixedClassifier::alpha_mix(g, h, a);
    CertifyParams lip;
    CertifyParams rs;
    rs.method = CertMethod::rs;
    const auto cl = certify_dataset(mixed, data, lip);
    const auto cr = certify_dataset(mixed, data, rs);
    for (std::size_t i = 0; i < data.size(); ++i) {
      CHECK(cr[i].estimator == "quadrature");
      CHECK(cr[i].radius >= cl[i].radius - 1e-12);
    }
  }
}

TEST_CASE("Hoeffding correction shrinks RS radii") {
  const ClassifierPtr base = model_classifier(FeedForwardModel::random({2, 6, 2}, Activation::tanh, 16));
  SmoothingConfig sc;
  sc.sigma = 0.5;
  sc.samples = 4000;
  const ClassifierPtr h = std::make_shared<SmoothedClassifier>(base, sc);
  const MixedClassifier mixed = MixedClassifier::alpha_mix(h, h, 1.0);
  const Dataset data = grid_dataset(h, 3, 1.0);
  CertifyParams plain;
  plain.method = CertMethod::rs;
  CertifyParams corrected = plain;
  corrected.hoeffding_beta = 0.001;
  const auto a = certify_dataset(mixed, data, plain);
  const auto b = certify_dataset(mixed, data, corrected);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(b[i].radius <= a[i].radius);
  CHECK(hoeffding_deviation(4000, 0.001) == Approx(std::sqrt(std::log(2000.0) / 8000.0)));
}

TEST_CASE("certificate CSV round trip") {
  std::vector<Certificate> certs(2);
  certs[0].index = 0;
  certs[0].label = 1;
  certs[0].predicted = 1;
  certs[0].radius = 0.123456789;
  certs[0].margin = 1.0 / 3.0;
  certs[0].alpha = 0.75;
  certs[0].certifiable = true;
  certs[1].index = 7;
  certs[1].method = CertMethod::rs;
  certs[1].estimator = "mc";
  certs[1].assumption_violation = true;
  std::stringstream ss;
  write_certificates_csv(ss, certs);
  const auto back = read_certificates_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].radius == certs[0].radius);
  CHECK(back[0].margin == certs[0].margin);
  CHECK(back[0].label == std::optional<std::size_t>(1));
  CHECK(back[0].certifiable);
  CHECK_FALSE(back[1].label.has_value());
  CHECK(back[1].method == CertMethod::rs);
  CHECK(back[1].estimator == "mc");
  CHECK(back[1].assumption_violation);

  std::stringstream bad("index,label,y,y_prime,margin,radius,method,alpha,flags\n0,1,1,0,x,0.1,rs,1,p=2\n");
  CHECK_THROWS_AS(read_certificates_csv(bad), FormatError);
}
