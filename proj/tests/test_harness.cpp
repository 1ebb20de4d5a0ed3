#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <regex>
#include <sstream>

#include "test_util.hpp"

using namespace mixcert;
using namespace mixcert::testing;
using Catch::Approx;

namespace {

KeyValueConfig parse(const std::string& text) {
  std::istringstream in(text);
  return KeyValueConfig::parse(in);
}

const char* kBase =
    "seed = 3\n"
    "g_model = g.model\n"
    "h_model = h.model\n"
    "dataset.kind = two_moons\n"
    "dataset.n_train = 200\n"
    "dataset.n_test = 60\n"
    "dataset.noise = 0.2\n"
    "attack.norm = inf\n"
    "attack.eps = 0.2\n"
    "attack.steps = 5\n";

ExperimentConfig experiment(const std::string& extra) { return ExperimentConfig::from(parse(kBase + extra)); }

/// Quickly trained g (standard) and h (adversarial) on the base dataset.
const ModelPair& trained_models() {
  static const ModelPair pair = [] {
    const ExperimentConfig cfg = experiment("kind = alpha_sweep\n");
    const Dataset train_set = cfg.dataset.build(Split::train);
    TrainConfig tc;
    tc.epochs = 30;
    tc.learning_rate = 0.2;
    const ArchitectureSpec arch{{8}, Activation::tanh, 1};
    ModelPair p;
    p.g = model_classifier(train(arch, train_set, tc));
    tc.adversarial = cfg.attack;
    auto h = std::make_shared<const FeedForwardModel>(train(arch, train_set, tc));
    p.h = std::make_shared<ModelClassifier>(h);
    p.h_network = h;
    return p;
  }();
  return pair;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mixcert_test_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("experiment configs validate their grids") {
  CHECK_NOTHROW(experiment("kind = alpha_sweep\n"));
  CHECK_THROWS_AS(experiment("kind = alpha_sweep\nalpha_grid = 0.5, 0.2\n"), InputError);
  CHECK_THROWS_AS(experiment("kind = alpha_sweep\nalpha_grid = 0, 1.5\n"), InputError);
  CHECK_THROWS_AS(experiment("kind = certified_curve\nradius_grid = 0.1, 0.2\n"), InputError);
  CHECK_THROWS_AS(experiment("kind = certified_curve\ncert.methods = lipschitz_local\n"), InputError);
  CHECK_THROWS_AS(experiment("kind = design_study\ngamma_grid = \n"), InputError);
  CHECK_THROWS_AS(experiment("kind = unknown\n"), InputError);
  CHECK_THROWS_AS(ExperimentConfig::from(parse("g_model = a\nh_model = b\n")), FormatError);

  const ExperimentConfig d = experiment("kind = design_study\n");
  CHECK(d.gamma_grid.front() == 0.0);
  CHECK(std::isinf(d.gamma_grid.back()));
  CHECK(d.alpha_grid.size() == 21);
  CHECK(d.r_modes.size() == 4);
}

TEST_CASE("stamps carry the version, kind and a hash that ignores run-only keys") {
  const ExperimentConfig a = experiment("kind = alpha_sweep\nworkers = 1\nout_dir = x\n");
  const ExperimentConfig b = experiment("kind = alpha_sweep\nworkers = 4\nout_dir = y\nrender_svg = true\n");
  const ExperimentConfig c = experiment("kind = alpha_sweep\nattack.eps = 0.3\n");
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.config_hash != c.config_hash);
  CHECK(std::regex_match(a.stamp(), std::regex("# mixcert [0-9.]+ kind=alpha_sweep config_hash=[0-9a-f]{16}")));
}

TEST_CASE("missing model files are reported before running") {
  const ExperimentConfig cfg = experiment("kind = alpha_sweep\n");
  CHECK_THROWS_AS(load_models(cfg), InputError);
}

TEST_CASE("confidence cells") {
  Dataset one;
  one.inputs = Matrix(1, 2, Vector{0.0, 0.0});
  one.labels = {0};
  const ClassifierPtr h = constant_classifier(2, {0.9, 0.1});
  AttackSpec spec;
  spec.epsilon = 0.1;
  spec.steps = 3;
  const ConfidenceTable t = confidence_table(*h, *h, one, spec);
  REQUIRE(t.cells.size() == 8);
  for (const ConfidenceCell& c : t.cells) {
    if (c.correct) {
      REQUIRE(c.mean());
      CHECK(*c.mean() == Approx(0.8).margin(1e-15));
      CHECK(*c.median() == *c.mean());
    } else {
      CHECK_FALSE(c.mean());
    }
  }
  const std::string csv = confidence_csv(experiment("kind = confidence_table\n"), t);
  CHECK(csv.find("\nh,clean,correct,1,0.8,0.8,true\n") != std::string::npos);
  CHECK(csv.find("\nh,attacked,incorrect,0,,,\n") != std::string::npos);
}

TEST_CASE("confidence table on trained models has 8 cells with consistent counts") {
  const ExperimentConfig cfg = experiment("kind = confidence_table\n");
  const Dataset test = cfg.dataset.build(Split::test);
  const ConfidenceTable t = run_confidence_table(cfg, trained_models(), test);
  REQUIRE(t.cells.size() == 8);
  for (std::size_t k = 0; k < 8; k += 2) CHECK(t.cells[k].gaps.size() + t.cells[k + 1].gaps.size() == test.size());
}

TEST_CASE("alpha sweep endpoints match the base models") {
  const ExperimentConfig cfg = experiment("kind = alpha_sweep\nalpha_grid = 0, 0.5, 1\n");
  const Dataset test = cfg.dataset.build(Split::test);
  const AlphaSweepResult r = run_alpha_sweep(cfg, trained_models(), test);
  REQUIRE(r.points.size() == 3);
  CHECK(r.points.front().clean.hits == r.g_clean.hits);
  CHECK(r.points.front().attacked.at(AttackTarget::mix).hits == r.g_attacked.hits);
  CHECK(r.points.back().clean.hits == r.h_clean.hits);
  CHECK(r.points.back().attacked.at(AttackTarget::mix).hits == r.h_attacked.hits);
  const std::string csv = alpha_sweep_csv(cfg, r);
  CHECK(csv.find("\nalpha,clean_acc,std_attacked_acc,rob_attacked_acc,mix_attacked_acc,") != std::string::npos);
}

TEST_CASE("design study endpoints match the base models") {
  const ExperimentConfig cfg =
      experiment("kind = design_study\ngamma_grid = 0, 1, inf\ndesign.r_modes = one, grad_ratio\n");
  const Dataset test = cfg.dataset.build(Split::test);
  const DesignStudyResult r = run_design_study(cfg, trained_models(), test);
  REQUIRE(r.curves.size() == 4);
  for (const DesignCurve& c : r.curves) {
    CHECK(c.points.front().clean.hits == r.g_clean.hits);
    CHECK(c.points.front().attacked.at(AttackTarget::mix).hits == r.g_attacked.hits);
    CHECK(c.points.back().clean.hits == r.h_clean.hits);
    CHECK(c.points.back().attacked.at(AttackTarget::mix).hits == r.h_attacked.hits);
    CHECK(c.pareto_points >= 1);
  }
  const std::string csv = design_curve_csv(cfg, r.curves.front());
  CHECK(csv.find("\ninf,1,") != std::string::npos);
}

TEST_CASE("certified curves are non-increasing and RS dominates Lipschitz") {
  const ExperimentConfig cfg = experiment(
      "kind = certified_curve\nsmoothing.sigma = 0.25\nsmoothing.samples = 500\n"
      "cert.alphas = 0.5, 0.75, 1\nradius_grid = 0, linspace(0.05, 0.5, 10)\n");
  const Dataset test = cfg.dataset.build(Split::test);
  const CertifiedCurveResult r = run_certified_curve(cfg, trained_models(), test);
  REQUIRE(r.curves.size() == 6);
  for (const CertifiedCurve& c : r.curves) {
    for (std::size_t k = 1; k < c.points.size(); ++k) {
      CHECK(c.points[k].certified.at(c.method).hits <= c.points[k - 1].certified.at(c.method).hits);
    }
    CHECK(c.points.front().certified.at(c.method).hits == c.h_correct.hits);
  }
  for (std::size_t a = 0; a < 3; ++a) {
    const CertifiedCurve& lip = r.curves[a];
    const CertifiedCurve& rs = r.curves[3 + a];
    REQUIRE(lip.method == CertMethod::lipschitz_global);
    REQUIRE(rs.method == CertMethod::rs);
    for (std::size_t k = 0; k < lip.points.size(); ++k) {
      CHECK(rs.points[k].certified.at(CertMethod::rs).hits >=
            lip.points[k].certified.at(CertMethod::lipschitz_global).hits);
    }
  }
  // At alpha = 1 the radius-0 value is h's clean accuracy.
  SmoothingConfig sc = cfg.smoothing;
  const SmoothedClassifier smoothed(trained_models().h, sc);
  CHECK(r.curves[2].h_correct.hits == detail::count_correct(smoothed, test, 1).hits);
}

TEST_CASE("experiment runs are byte-identical across reruns and worker counts") {
  const auto dir = scratch_dir("determinism");
  save_model((dir / "g.model").string(), dynamic_cast<const ModelClassifier&>(*trained_models().g).model());
  save_model((dir / "h.model").string(), *trained_models().h_network);
  const std::string paths = "g_model = " + (dir / "g.model").string() + "\nh_model = " + (dir / "h.model").string() + "\n";
  for (const std::string kind : {"alpha_sweep", "certified_curve", "confidence_table"}) {
    const std::string text = std::string(kBase) + paths + "kind = " + kind +
                             "\nalpha_grid = 0, 0.5, 1\nsmoothing.samples = 300\nrender_svg = true\n";
    const OutputFiles a = run_experiment(ExperimentConfig::from(parse(text + "workers = 1\n")));
    const OutputFiles b = run_experiment(ExperimentConfig::from(parse(text + "workers = 1\n")));
    const OutputFiles c = run_experiment(ExperimentConfig::from(parse(text + "workers = 4\nout_dir = " +
                                                                      (dir / kind).string() + "\n")));
    CHECK(a == b);
    CHECK(a == c);
    CHECK(std::filesystem::exists(dir / kind / (std::string(kind) + ".csv")));
  }
  std::filesystem::remove_all(dir);
}
