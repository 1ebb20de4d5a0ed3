#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.hpp"

using namespace mixcert;
using namespace mixcert::testing;
using Catch::Approx;

namespace {

Dataset far_blobs(std::size_t n, std::uint64_t seed) {
  return make_gaussian_blobs(2, n, Matrix(2, 2, Vector{-3, -3, 3, 3}), 0.5, seed);
}

}  // namespace

TEST_CASE("noise-free two moons lie on the arcs") {
  const Dataset ds = make_two_moons(4, 0.0, 7);
  REQUIRE(ds.size() == 4);
  CHECK(ds.label_counts() == std::vector<std::size_t>{2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = ds.inputs(i, 0);
    const double y = ds.inputs(i, 1);
    if (ds.labels[i] == 0) {
      CHECK(x * x + y * y == Approx(1.0).margin(1e-12));
      CHECK(y >= -1e-12);
    } else {
      CHECK((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5) == Approx(1.0).margin(1e-12));
      CHECK(y <= 0.5 + 1e-12);
    }
  }
}

TEST_CASE("dataset generation is deterministic and balanced") {
  const Dataset a = make_two_moons(1000, 0.1, 3);
  const Dataset b = make_two_moons(1000, 0.1, 3);
  CHECK(a.inputs.data() == b.inputs.data());
  CHECK(a.labels == b.labels);
  CHECK(a.label_counts() == std::vector<std::size_t>{500, 500});
  CHECK(make_two_moons(1000, 0.1, 4).inputs.data() != a.inputs.data());
  CHECK_THROWS_AS(make_two_moons(3, 0.1, 1), InputError);
}

TEST_CASE("gaussian blobs") {
  const Matrix means(3, 2, Vector{0, 0, 5, 1, -2, 4});
  const Dataset exact = make_gaussian_blobs(3, 30, means, 0.0, 1);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK(exact.inputs(i, 0) == means(exact.labels[i], 0));
    CHECK(exact.inputs(i, 1) == means(exact.labels[i], 1));
  }
  CHECK(make_gaussian_blobs(3, 300, means, 1.0, 2).label_counts() == std::vector<std::size_t>{100, 100, 100});
  CHECK_THROWS_AS(make_gaussian_blobs(2, 10, means, 1.0, 2), InputError);
}

TEST_CASE("shortcut coordinate encodes the label") {
  const Dataset base = make_two_moons(20, 0.1, 5);
  const Dataset s = append_shortcut_feature(base, 0.1, 0.0, 5);
  REQUIRE(s.dim() == 3);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s.inputs(i, 0) == base.inputs(i, 0));
    CHECK(s.inputs(i, 2) == (s.labels[i] == 0 ? -0.1 : 0.1));
  }
}

TEST_CASE("CSV datasets parse, round-trip and report bad lines") {
  std::istringstream good("label,x_1,x_2\n0,1.5,2\n1,-1,0.25\n0,0,0\n");
  const Dataset ds = load_csv_dataset(good);
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.inputs(1, 1) == 0.25);
  CHECK(ds.class_count == 2);

  std::istringstream bad("label,x_1\n0,1.0\n1,abc\n");
  try {
    load_csv_dataset(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("<stream>:3:") != std::string::npos);
  }

  const Dataset moons = make_two_moons(50, 0.3, 9);
  std::stringstream ss;
  save_csv_dataset(ss, moons);
  CsvSchema schema;
  schema.split = Split::train;
  const Dataset back = load_csv_dataset(ss, schema);
  CHECK(back.inputs.data() == moons.inputs.data());
  CHECK(back.labels == moons.labels);
}

TEST_CASE("a linear model separates far-apart blobs") {
  const Dataset data = far_blobs(200, 1);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.1;
  const FeedForwardModel m = train(ArchitectureSpec{{}, Activation::identity, 2}, data, cfg);
  CHECK(m.layers().size() == 1);
  CHECK(accuracy(ModelClassifier(m), data) == 1.0);
}

TEST_CASE("training is bit-reproducible and lowers the loss") {
  const Dataset data = make_two_moons(200, 0.15, 2);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 0.2;
  cfg.seed = 5;
  const ArchitectureSpec arch{{8}, Activation::tanh, 3};
  TrainingLog log;
  const FeedForwardModel a = train(arch, data, cfg, &log);
  const FeedForwardModel b = train(arch, data, cfg);
  for (std::size_t k = 0; k < a.layers().size(); ++k) {
    CHECK(a.layers()[k].weights.data() == b.layers()[k].weights.data());
    CHECK(a.layers()[k].bias == b.layers()[k].bias);
  }
  REQUIRE(log.epoch_losses.size() == 40);
  CHECK(log.epoch_losses.back() < log.initial_loss);
  CHECK(log.epoch_losses.back() < log.epoch_losses.front());
}

TEST_CASE("adversarial training with zero attack steps equals standard training") {
  const Dataset data = make_two_moons(100, 0.2, 3);
  TrainConfig plain;
  plain.epochs = 10;
  plain.seed = 1;
  TrainConfig adv = plain;
  AttackSpec spec;
  spec.epsilon = 0.2;
  spec.steps = 0;
  adv.adversarial = spec;
  const ArchitectureSpec arch{{6}, Activation::tanh, 4};
  const FeedForwardModel a = train(arch, data, plain);
  const FeedForwardModel b = train(arch, data, adv);
  for (std::size_t k = 0; k < a.layers().size(); ++k) {
    CHECK(a.layers()[k].weights.data() == b.layers()[k].weights.data());
  }
}

TEST_CASE("adversarial training is more robust than standard training") {
  const Dataset train_set = append_shortcut_feature(make_two_moons(300, 0.2, 4), 0.1, 0.0, 4);
  Dataset test_set = append_shortcut_feature(make_two_moons(200, 0.2, 5, Split::test), 0.1, 0.0, 5);
  AttackSpec attack;
  attack.epsilon = 0.15;
  attack.steps = 10;
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 0.2;
  const ArchitectureSpec arch{{16}, Activation::tanh, 6};
  const ClassifierPtr g = model_classifier(train(arch, train_set, cfg));
  cfg.adversarial = attack;
  const ClassifierPtr h = model_classifier(train(arch, train_set, cfg));
  const MixedClassifier mixed = MixedClassifier::alpha_mix(g, h, 1.0);
  const AttackReport r = evaluate_under_attack(*g, *h, mixed, test_set, attack,
                                               {AttackTarget::std_model, AttackTarget::rob_model});
  CAPTURE(r.attacked_accuracy_g(AttackTarget::std_model), r.attacked_accuracy_h(AttackTarget::rob_model));
  CHECK(r.attacked_accuracy_h(AttackTarget::rob_model) > r.attacked_accuracy_g(AttackTarget::std_model) + 0.2);
}

TEST_CASE("training rejects bad input and reports divergence") {
  const Dataset data = far_blobs(20, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train(ArchitectureSpec{}, data, cfg), InputError);
  Dataset test_split = data;
  test_split.split = Split::test;
  CHECK_THROWS_AS(train(ArchitectureSpec{}, test_split, TrainConfig{}), InputError);

  Dataset huge = data;
  for (double& v : huge.inputs.data()) v *= 1e150;
  TrainConfig wild;
  wild.epochs = 5;
  wild.learning_rate = 1e150;
  try {
    train(ArchitectureSpec{{4}, Activation::relu, 1}, huge, wild);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}
