#pragma once

// Experiment driver: dataset and model recipes from config files, and the
// four sweeps (design study, alpha sweep, confidence table, certified
// curves). Every CSV starts with a `# mixcert <version> kind=... config_hash=...`
// stamp followed by a header row.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixcert/attacks.hpp"
#include "mixcert/certification.hpp"
#include "mixcert/config.hpp"
#include "mixcert/data.hpp"
#include "mixcert/mixing.hpp"
#include "mixcert/model_io.hpp"
#include "mixcert/smoothing.hpp"
#include "mixcert/svg.hpp"
#include "mixcert/training.hpp"
#include "mixcert/version.hpp"

namespace mixcert {

// ---------------------------------------------------------------------------
// Recipes

/// Keys (prefix `dataset.`): kind = two_moons | blobs | csv, n_train, n_test,
/// noise, seed, class_count, dim, blob_radius, train_csv, test_csv, box_lo,
/// box_hi, shortcut_scale, shortcut_noise.
struct DatasetSpec {
  std::string kind = "two_moons";
  std::size_t n_train = 400;
  std::size_t n_test = 400;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::size_t class_count = 3;  // blobs
  std::size_t dim = 2;          // blobs: 1 (means evenly spaced on a segment) or 2
  double blob_radius = 2.0;     // blobs: means on the circle (or segment) of this radius
  std::string train_csv;
  std::string test_csv;
  std::optional<InputBox> box;
  double shortcut_scale = 0.0;  // 0 disables the extra coordinate
  double shortcut_noise = 0.0;

  static DatasetSpec from(const KeyValueConfig& cfg, std::uint64_t master_seed) {
    DatasetSpec s;
    s.kind = cfg.get("dataset.kind", s.kind);
    s.n_train = cfg.get_size("dataset.n_train", s.n_train);
    s.n_test = cfg.get_size("dataset.n_test", s.n_test);
    s.noise = cfg.get_double("dataset.noise", s.noise);
    s.seed = cfg.get_u64("dataset.seed", master_seed);
    s.class_count = cfg.get_size("dataset.class_count", s.class_count);
    s.dim = cfg.get_size("dataset.dim", s.dim);
    if (s.dim != 1 && s.dim != 2) throw InputError("dataset.dim must be 1 or 2");
    if (s.class_count < 2) throw InputError("dataset.class_count must be at least 2");
    s.blob_radius = cfg.get_double("dataset.blob_radius", s.blob_radius);
    s.train_csv = cfg.get("dataset.train_csv", "");
    s.test_csv = cfg.get("dataset.test_csv", "");
    if (cfg.has("dataset.box_lo") || cfg.has("dataset.box_hi")) {
      s.box = InputBox{cfg.get_double("dataset.box_lo"), cfg.get_double("dataset.box_hi")};
      if (!(s.box->lo < s.box->hi)) throw InputError("dataset.box_lo must be below dataset.box_hi");
    }
    s.shortcut_scale = cfg.get_double("dataset.shortcut_scale", 0.0);
    s.shortcut_noise = cfg.get_double("dataset.shortcut_noise", 0.0);
    if (s.kind != "two_moons" && s.kind != "blobs" && s.kind != "csv") {
      throw InputError("unknown dataset.kind '" + s.kind + "' (expected two_moons, blobs or csv)");
    }
    if (s.kind == "csv") {
      for (const std::string& p : {s.train_csv, s.test_csv}) {
        if (!p.empty() && !std::filesystem::exists(p)) throw InputError("dataset file '" + p + "' does not exist");
      }
    }
    return s;
  }

  Dataset build(Split split) const {
    const std::uint64_t split_seed = split == Split::train ? seed : derive_seed(seed, 1);
    const std::size_t n = split == Split::train ? n_train : n_test;
    Dataset ds;
    if (kind == "two_moons") {
      ds = make_two_moons(n, noise, split_seed, split);
    } else if (kind == "blobs") {
      Matrix means(class_count, dim);
      for (std::size_t k = 0; k < class_count; ++k) {
        if (dim == 1) {
          means(k, 0) = blob_radius * (2.0 * static_cast<double>(k) / static_cast<double>(class_count - 1) - 1.0);
          continue;
        }
        const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(class_count);
        means(k, 0) = blob_radius * std::cos(t);
        means(k, 1) = blob_radius * std::sin(t);
      }
      ds = make_gaussian_blobs(class_count, n, means, noise, split_seed, split);
    } else {
      const std::string& path = split == Split::train ? train_csv : test_csv;
      if (path.empty()) throw InputError("dataset.kind = csv needs dataset." + to_string(split) + "_csv");
      CsvSchema schema;
      schema.split = split;
      schema.box = box;
      ds = load_csv_dataset(path, schema);
    }
    if (shortcut_scale != 0.0) ds = append_shortcut_feature(ds, shortcut_scale, shortcut_noise, derive_seed(split_seed, 7));
    if (box) ds.box = box;
    ds.validate();
    return ds;
  }
};

/// Keys under `prefix`: norm (2 | inf), eps, steps, step_size, random_start, seed.
inline AttackSpec attack_spec_from(const KeyValueConfig& cfg, const std::string& prefix,
                                   std::uint64_t default_seed) {
  AttackSpec s;
  s.norm = parse_norm(cfg.get(prefix + ".norm", "inf"));
  s.epsilon = cfg.get_double(prefix + ".eps", 0.0);
  s.steps = cfg.get_size(prefix + ".steps", 20);
  if (cfg.has(prefix + ".step_size")) s.step_size = cfg.get_double(prefix + ".step_size");
  s.random_start = cfg.get_bool(prefix + ".random_start", false);
  s.seed = cfg.get_u64(prefix + ".seed", default_seed);
  s.validate();
  return s;
}

/// Keys: name, seed, model.hidden, model.activation, model.init_seed,
/// train.epochs, train.learning_rate, train.batch_size, train.seed,
/// train.adversarial (bool) with train.attack.* as in attack_spec_from.
struct TrainingJob {
  std::string name = "model";
  DatasetSpec dataset;
  ArchitectureSpec arch;
  TrainConfig train;

  static TrainingJob from(const KeyValueConfig& cfg) {
    TrainingJob job;
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    job.name = cfg.get("name", job.name);
    job.dataset = DatasetSpec::from(cfg, seed);
    job.arch.hidden = cfg.get_sizes("model.hidden", {16});
    job.arch.activation = parse_activation(cfg.get("model.activation", "tanh"));
    job.arch.init_seed = cfg.get_u64("model.init_seed", derive_seed(seed, 11));
    job.train.epochs = cfg.get_size("train.epochs", 100);
    job.train.learning_rate = cfg.get_double("train.learning_rate", 0.1);
    job.train.batch_size = cfg.get_size("train.batch_size", 32);
    job.train.seed = cfg.get_u64("train.seed", derive_seed(seed, 12));
    if (cfg.get_bool("train.adversarial", false)) {
      job.train.adversarial = attack_spec_from(cfg, "train.attack", derive_seed(seed, 13));
    }
    job.train.validate();
    return job;
  }

  FeedForwardModel run(TrainingLog* log = nullptr) const {
    return mixcert::train(arch, dataset.build(Split::train), train, log);
  }
};

// ---------------------------------------------------------------------------
// Experiment configuration

enum class ExperimentKind { design_study, alpha_sweep, confidence_table, certified_curve };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::design_study: return "design_study";
    case ExperimentKind::alpha_sweep: return "alpha_sweep";
    case ExperimentKind::confidence_table: return "confidence_table";
    case ExperimentKind::certified_curve: return "certified_curve";
  }
  return "";
}

inline ExperimentKind parse_experiment_kind(std::string_view s) {
  if (s == "design_study" || s == "design") return ExperimentKind::design_study;
  if (s == "alpha_sweep" || s == "alpha") return ExperimentKind::alpha_sweep;
  if (s == "confidence_table" || s == "confidence") return ExperimentKind::confidence_table;
  if (s == "certified_curve" || s == "certified") return ExperimentKind::certified_curve;
  throw InputError("unknown experiment kind '" + std::string(s) + "'");
}

/// `# mixcert <version> kind=<kind> config_hash=<16 hex digits>`
inline std::string stamp_line(const std::string& kind, std::uint64_t config_hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, config_hash);
  return std::string("# mixcert ") + kVersion + " kind=" + kind + " config_hash=" + buf;
}

/// Keys that never influence results and are left out of the config hash.
inline const std::set<std::string>& unhashed_keys() {
  static const std::set<std::string> keys{"workers", "out_dir", "render_svg"};
  return keys;
}

/// Top-level keys: kind, seed, out_dir, workers, render_svg, g_model,
/// h_model, alpha_grid, gamma_grid, radius_grid, cert.alphas, cert.methods,
/// cert.hoeffding_beta, design.r_modes, design.domains, smoothing.sigma,
/// smoothing.samples, smoothing.seed, smoothing.estimator, attack.*,
/// dataset.*.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::alpha_sweep;
  DatasetSpec dataset;
  std::string g_model;
  std::string h_model;
  std::vector<double> alpha_grid;
  std::vector<double> gamma_grid;
  std::vector<double> radius_grid;
  std::vector<double> cert_alphas;
  std::vector<CertMethod> cert_methods;
  std::optional<double> hoeffding_beta;
  std::vector<RMode> r_modes;
  std::vector<OutputDomain> domains;
  AttackSpec attack;
  SmoothingConfig smoothing;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool render_svg = false;
  std::uint64_t config_hash = 0;

  static std::vector<double> default_alpha_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 20; ++k) g.push_back(k == 20 ? 1.0 : k / 20.0);
    return g;
  }

  /// 0, 10^-3 ... 10^3 in half decades, then inf.
  static std::vector<double> default_gamma_grid() {
    std::vector<double> g{0.0};
    for (int k = -6; k <= 6; ++k) g.push_back(std::pow(10.0, k / 2.0));
    g.push_back(std::numeric_limits<double>::infinity());
    return g;
  }

  static ExperimentConfig from(const KeyValueConfig& cfg) {
    ExperimentConfig c;
    c.kind = parse_experiment_kind(cfg.get("kind"));
    c.seed = cfg.get_u64("seed", 0);
    c.out_dir = cfg.get("out_dir", "");
    c.workers = cfg.get_size("workers", 1);
    c.render_svg = cfg.get_bool("render_svg", false);
    c.dataset = DatasetSpec::from(cfg, c.seed);
    c.g_model = cfg.get("g_model");
    c.h_model = cfg.get("h_model");
    c.alpha_grid = cfg.get_list("alpha_grid", default_alpha_grid());
    c.gamma_grid = cfg.get_list("gamma_grid", default_gamma_grid());
    c.radius_grid = cfg.get_list("radius_grid", {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5});
    c.cert_alphas = cfg.get_list("cert.alphas", {0.5, 0.75, 1.0});
    for (const std::string& m : cfg.get_strings("cert.methods", {"lipschitz_global", "rs"})) {
      c.cert_methods.push_back(parse_cert_method(m));
    }
    if (cfg.has("cert.hoeffding_beta")) c.hoeffding_beta = cfg.get_double("cert.hoeffding_beta");
    for (const std::string& m : cfg.get_strings("design.r_modes", {"one", "grad_gi", "grad_max_gj", "grad_ratio"})) {
      c.r_modes.push_back(parse_r_mode(m));
    }
    for (const std::string& d : cfg.get_strings("design.domains", {"logit", "probability"})) {
      c.domains.push_back(parse_domain(d));
    }
    c.attack = attack_spec_from(cfg, "attack", derive_seed(c.seed, 21));
    c.smoothing.sigma = cfg.get_double("smoothing.sigma", c.smoothing.sigma);
    c.smoothing.samples = cfg.get_size("smoothing.samples", c.smoothing.samples);
    c.smoothing.seed = cfg.get_u64("smoothing.seed", derive_seed(c.seed, 22));
    c.smoothing.estimator = parse_estimator(cfg.get("smoothing.estimator", "mc"));
    c.config_hash = cfg.hash(unhashed_keys());
    c.validate();
    return c;
  }

  void validate() const {
    auto check_grid = [](const std::vector<double>& grid, const std::string& name, double lo, double hi) {
      if (grid.empty()) throw InputError(name + " must not be empty");
      for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] >= lo && grid[k] <= hi)) throw InputError(name + " has a value outside its range");
        if (k > 0 && !(grid[k] > grid[k - 1])) throw InputError(name + " must be strictly increasing");
      }
    };
    const double inf = std::numeric_limits<double>::infinity();
    switch (kind) {
      case ExperimentKind::alpha_sweep: check_grid(alpha_grid, "alpha_grid", 0.0, 1.0); break;
      case ExperimentKind::design_study:
        check_grid(gamma_grid, "gamma_grid", 0.0, inf);
        if (r_modes.empty() || domains.empty()) throw InputError("design study needs r-modes and domains");
        break;
      case ExperimentKind::certified_curve:
        check_grid(radius_grid, "radius_grid", 0.0, inf);
        if (radius_grid.front() != 0.0) throw InputError("radius_grid must start at 0");
        check_grid(cert_alphas, "cert.alphas", 0.0, 1.0);
        if (cert_methods.empty()) throw InputError("cert.methods must not be empty");
        for (CertMethod m : cert_methods) {
          if (m == CertMethod::lipschitz_local) {
            throw InputError("certified curves use sound methods only (lipschitz_global, rs)");
          }
        }
        break;
      case ExperimentKind::confidence_table: break;
    }
    if (workers < 1) throw InputError("workers must be at least 1");
  }

  std::string stamp() const { return stamp_line(to_string(kind), config_hash); }
};

struct ModelPair {
  ClassifierPtr g;
  ClassifierPtr h;
  std::shared_ptr<const FeedForwardModel> h_network;  // set when loaded from file
};

inline ModelPair load_models(const ExperimentConfig& config) {
  for (const std::string& p : {config.g_model, config.h_model}) {
    if (!std::filesystem::exists(p)) throw InputError("model file '" + p + "' does not exist");
  }
  ModelPair out;
  auto h = std::make_shared<const FeedForwardModel>(load_model(config.h_model));
  out.g = std::make_shared<ModelClassifier>(load_model(config.g_model));
  out.h = std::make_shared<ModelClassifier>(h);
  out.h_network = h;
  return out;
}

// ---------------------------------------------------------------------------
// Results

struct Count {
  std::size_t hits = 0;
  std::size_t total = 0;
  double ratio() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

struct CurvePoint {
  double abscissa = 0.0;
  Count clean;
  std::map<AttackTarget, Count> attacked;
  std::map<CertMethod, Count> certified;
};

struct AlphaSweepResult {
  std::vector<CurvePoint> points;
  Count g_clean, h_clean;
  Count g_attacked;  // g under STD attack
  Count h_attacked;  // h under ROB attack
};

struct DesignCurve {
  RMode r_mode = RMode::one;
  OutputDomain domain = OutputDomain::probability;
  std::vector<CurvePoint> points;  // abscissa = gamma, attacked[mix]
  std::size_t ratio_fallbacks = 0;
  std::size_t pareto_points = 0;
};

struct DesignStudyResult {
  std::vector<DesignCurve> curves;
  Count g_clean, h_clean, g_attacked, h_attacked;
};

struct ConfidenceCell {
  std::string model;      // "g" or "h"
  bool attacked = false;  // gap at the attack output rather than at x
  bool correct = false;
  std::vector<double> gaps;

  std::optional<double> mean() const {
    if (gaps.empty()) return std::nullopt;
    CompensatedSum s;
    for (double v : gaps) s.add(v);
    return s.value() / static_cast<double>(gaps.size());
  }
  std::optional<double> median() const {
    if (gaps.empty()) return std::nullopt;
    std::vector<double> v = gaps;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

struct ConfidenceTable {
  std::vector<ConfidenceCell> cells;  // g then h; clean then attacked; correct then incorrect
};

struct CertifiedCurve {
  CertMethod method = CertMethod::rs;
  double alpha = 1.0;
  std::vector<CurvePoint> points;  // abscissa = radius, certified[method]
  Count mix_clean;                 // argmax of the mixture at x
  Count h_correct;                 // h-correct points, all certified at radius 0
};

struct CertifiedCurveResult {
  std::vector<CertifiedCurve> curves;
};

// ---------------------------------------------------------------------------
// Runs

namespace detail {

inline Count count_correct(const Classifier& f, const Dataset& data, std::size_t workers) {
  std::vector<char> ok(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) { ok[i] = argmax(f.probs(data.input(i))) == data.labels[i]; });
  Count c{0, data.size()};
  for (char v : ok) c.hits += v;
  return c;
}

/// One PGD perturbation per test input against `f`.
inline std::vector<Vector> attack_all(const Classifier& f, const Dataset& data, const AttackSpec& spec,
                                      std::size_t workers) {
  std::vector<Vector> out(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    AttackSpec local = spec;
    if (!local.clip && data.box) local.clip = data.box;
    local.seed = derive_seed(spec.seed, i);
    out[i] = pgd_attack(f, data.input(i), data.labels[i], local).x_adv;
  });
  return out;
}

inline Count count_correct_at(const Classifier& f, const std::vector<Vector>& points, const Dataset& data,
                              std::size_t workers) {
  std::vector<char> ok(points.size());
  parallel_for(points.size(), workers, [&](std::size_t i) { ok[i] = argmax(f.probs(points[i])) == data.labels[i]; });
  Count c{0, points.size()};
  for (char v : ok) c.hits += v;
  return c;
}

inline std::string fmt(double v) { return format_double(v); }

inline std::string fmt_abscissa(double v) { return std::isinf(v) ? std::string("inf") : format_double(v); }

inline void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("failed writing '" + path + "'");
}

}  // namespace detail

inline AlphaSweepResult run_alpha_sweep(const ExperimentConfig& config, const ModelPair& models,
                                        const Dataset& test) {
  const std::size_t w = config.workers;
  AlphaSweepResult r;
  r.g_clean = detail::count_correct(*models.g, test, w);
  r.h_clean = detail::count_correct(*models.h, test, w);
  const auto std_adv = detail::attack_all(*models.g, test, config.attack, w);
  const auto rob_adv = detail::attack_all(*models.h, test, config.attack, w);
  r.g_attacked = detail::count_correct_at(*models.g, std_adv, test, w);
  r.h_attacked = detail::count_correct_at(*models.h, rob_adv, test, w);
  for (double alpha : config.alpha_grid) {
    const MixedClassifier mixed = MixedClassifier::alpha_mix(models.g, models.h, alpha);
    CurvePoint p;
    p.abscissa = alpha;
    p.clean = detail::count_correct(mixed, test, w);
    p.attacked[AttackTarget::std_model] = detail::count_correct_at(mixed, std_adv, test, w);
    p.attacked[AttackTarget::rob_model] = detail::count_correct_at(mixed, rob_adv, test, w);
    const auto mix_adv = detail::attack_all(mixed, test, config.attack, w);
    p.attacked[AttackTarget::mix] = detail::count_correct_at(mixed, mix_adv, test, w);
    r.points.push_back(std::move(p));
  }
  return r;
}

/// Marks every point not dominated in (clean, attacked) by a point of any curve.
inline void mark_pareto(DesignStudyResult& r) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (const DesignCurve& c : r.curves) {
    for (const CurvePoint& p : c.points) all.emplace_back(p.clean.hits, p.attacked.at(AttackTarget::mix).hits);
  }
  for (DesignCurve& c : r.curves) {
    c.pareto_points = 0;
    for (const CurvePoint& p : c.points) {
      const std::size_t a = p.clean.hits;
      const std::size_t b = p.attacked.at(AttackTarget::mix).hits;
      bool dominated = false;
      for (const auto& [oa, ob] : all) {
        if (oa >= a && ob >= b && (oa > a || ob > b)) {
          dominated = true;
          break;
        }
      }
      c.pareto_points += !dominated;
    }
  }
}

inline DesignStudyResult run_design_study(const ExperimentConfig& config, const ModelPair& models,
                                          const Dataset& test) {
  const std::size_t w = config.workers;
  DesignStudyResult r;
  r.g_clean = detail::count_correct(*models.g, test, w);
  r.h_clean = detail::count_correct(*models.h, test, w);
  r.g_attacked = detail::count_correct_at(*models.g, detail::attack_all(*models.g, test, config.attack, w), test, w);
  r.h_attacked = detail::count_correct_at(*models.h, detail::attack_all(*models.h, test, config.attack, w), test, w);
  for (RMode mode : config.r_modes) {
    for (OutputDomain domain : config.domains) {
      DesignCurve curve;
      curve.r_mode = mode;
      curve.domain = domain;
      for (double gamma : config.gamma_grid) {
        MixedClassifier::Config mc;
        mc.formulation = Formulation::smo3;
        mc.gamma = gamma;
        mc.r_mode = mode;
        mc.domain = domain;
        mc.norm = config.attack.norm;
        const MixedClassifier mixed(models.g, models.h, mc);
        CurvePoint p;
        p.abscissa = gamma;
        p.clean = detail::count_correct(mixed, test, w);
        p.attacked[AttackTarget::mix] =
            detail::count_correct_at(mixed, detail::attack_all(mixed, test, config.attack, w), test, w);
        curve.ratio_fallbacks += mixed.ratio_fallbacks();
        curve.points.push_back(std::move(p));
      }
      r.curves.push_back(std::move(curve));
    }
  }
  mark_pareto(r);
  return r;
}

/// Top-two probability gaps of `f` at `points`, split by correctness.
inline void collect_gaps(const Classifier& f, const std::vector<Vector>& points, const Dataset& data,
                         ConfidenceCell& correct, ConfidenceCell& incorrect) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vector p = f.probs(points[i]);
    const std::size_t pred = argmax(p);
    (pred == data.labels[i] ? correct : incorrect).gaps.push_back(top_two_gap(p));
  }
}

inline ConfidenceTable confidence_table(const Classifier& g, const Classifier& h, const Dataset& test,
                                        const AttackSpec& attack, std::size_t workers = 1) {
  ConfidenceTable t;
  std::vector<Vector> clean;
  for (std::size_t i = 0; i < test.size(); ++i) clean.emplace_back(test.input(i).begin(), test.input(i).end());
  for (const auto& [name, f] : {std::pair<std::string, const Classifier*>{"g", &g}, {"h", &h}}) {
    const auto adv = detail::attack_all(*f, test, attack, workers);
    for (bool attacked : {false, true}) {
      ConfidenceCell ok{name, attacked, true, {}};
      ConfidenceCell bad{name, attacked, false, {}};
      collect_gaps(*f, attacked ? adv : clean, test, ok, bad);
      t.cells.push_back(std::move(ok));
      t.cells.push_back(std::move(bad));
    }
  }
  return t;
}

inline ConfidenceTable run_confidence_table(const ExperimentConfig& config, const ModelPair& models,
                                            const Dataset& test) {
  return confidence_table(*models.g, *models.h, test, config.attack, config.workers);
}

/// Certified accuracy: the share of the whole test split where h (hence the
/// mixture) is correct and the certified radius reaches r.
inline CertifiedCurveResult run_certified_curve(const ExperimentConfig& config, const ModelPair& models,
                                                const Dataset& test) {
  const std::size_t w = config.workers;
  SmoothingConfig sc = config.smoothing;
  sc.workers = 1;
  auto smoothed = std::make_shared<SmoothedClassifier>(models.h, sc);
  CertifiedCurveResult r;
  for (CertMethod method : config.cert_methods) {
    for (double alpha : config.cert_alphas) {
      const MixedClassifier mixed = MixedClassifier::alpha_mix(models.g, smoothed, alpha);
      CertifyParams params;
      params.method = method;
      params.norm = Norm::l2;
      params.hoeffding_beta = config.hoeffding_beta;
      const std::vector<Certificate> certs = certify_dataset(mixed, test, params, w);
      CertifiedCurve curve;
      curve.method = method;
      curve.alpha = alpha;
      curve.mix_clean = detail::count_correct(mixed, test, w);
      curve.h_correct = Count{0, test.size()};
      for (const Certificate& c : certs) curve.h_correct.hits += !c.mispredicted;
      for (double radius : config.radius_grid) {
        CurvePoint p;
        p.abscissa = radius;
        Count cnt{0, test.size()};
        for (const Certificate& c : certs) cnt.hits += !c.mispredicted && c.radius >= radius;
        p.certified[method] = cnt;
        curve.points.push_back(std::move(p));
      }
      r.curves.push_back(std::move(curve));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Output

inline std::string alpha_sweep_csv(const ExperimentConfig& config, const AlphaSweepResult& r) {
  std::ostringstream out;
  out << config.stamp() << '\n';
  out << "alpha,clean_acc,std_attacked_acc,rob_attacked_acc,mix_attacked_acc,clean_count,std_count,rob_count,"
         "mix_count,total\n";
  for (const CurvePoint& p : r.points) {
    const Count& s = p.attacked.at(AttackTarget::std_model);
    const Count& b = p.attacked.at(AttackTarget::rob_model);
    const Count& m = p.attacked.at(AttackTarget::mix);
    out << detail::fmt(p.abscissa) << ',' << detail::fmt(p.clean.ratio()) << ',' << detail::fmt(s.ratio()) << ','
        << detail::fmt(b.ratio()) << ',' << detail::fmt(m.ratio()) << ',' << p.clean.hits << ',' << s.hits << ','
        << b.hits << ',' << m.hits << ',' << p.clean.total << '\n';
  }
  return out.str();
}

inline std::string design_curve_csv(const ExperimentConfig& config, const DesignCurve& c) {
  std::ostringstream out;
  out << config.stamp() << " r_mode=" << to_string(c.r_mode) << " domain=" << to_string(c.domain) << '\n';
  out << "gamma,alpha_equivalent,clean_acc,mix_attacked_acc,clean_count,mix_count,total\n";
  for (const CurvePoint& p : c.points) {
    const Count& m = p.attacked.at(AttackTarget::mix);
    out << detail::fmt_abscissa(p.abscissa) << ',' << detail::fmt(alpha_from_gamma(p.abscissa)) << ','
        << detail::fmt(p.clean.ratio()) << ',' << detail::fmt(m.ratio()) << ',' << p.clean.hits << ',' << m.hits
        << ',' << p.clean.total << '\n';
  }
  return out.str();
}

inline std::string design_summary_csv(const ExperimentConfig& config, const DesignStudyResult& r) {
  std::ostringstream out;
  out << config.stamp() << '\n';
  out << "r_mode,domain,points,pareto_points,max_clean_acc,max_mix_attacked_acc,area,ratio_fallbacks\n";
  for (const DesignCurve& c : r.curves) {
    double max_clean = 0.0, max_att = 0.0;
    std::vector<std::pair<double, double>> pts;
    for (const CurvePoint& p : c.points) {
      const double a = p.clean.ratio();
      const double b = p.attacked.at(AttackTarget::mix).ratio();
      max_clean = std::max(max_clean, a);
      max_att = std::max(max_att, b);
      pts.emplace_back(a, b);
    }
    // Area under the attacked-vs-clean curve, points ordered by clean accuracy.
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      area += (pts[k].first - pts[k - 1].first) * 0.5 * (pts[k].second + pts[k - 1].second);
    }
    out << to_string(c.r_mode) << ',' << to_string(c.domain) << ',' << c.points.size() << ',' << c.pareto_points
        << ',' << detail::fmt(max_clean) << ',' << detail::fmt(max_att) << ',' << detail::fmt(area) << ','
        << c.ratio_fallbacks << '\n';
  }
  return out.str();
}

inline std::string confidence_csv(const ExperimentConfig& config, const ConfidenceTable& t) {
  std::ostringstream out;
  out << config.stamp() << '\n';
  out << "model,condition,correctness,count,mean_gap,median_gap,mean_ge_median\n";
  for (const ConfidenceCell& c : t.cells) {
    out << c.model << ',' << (c.attacked ? "attacked" : "clean") << ',' << (c.correct ? "correct" : "incorrect")
        << ',' << c.gaps.size() << ',';
    const auto mean = c.mean();
    const auto median = c.median();
    if (mean) {
      out << detail::fmt(*mean) << ',' << detail::fmt(*median) << ',' << (*mean >= *median ? "true" : "false");
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

inline std::string certified_csv(const ExperimentConfig& config, const CertifiedCurveResult& r) {
  std::ostringstream out;
  out << config.stamp() << '\n';
  out << "method,alpha,radius,certified_acc,certified_count,total,mix_clean_acc,h_correct_acc\n";
  for (const CertifiedCurve& c : r.curves) {
    for (const CurvePoint& p : c.points) {
      const Count& k = p.certified.at(c.method);
      out << to_string(c.method) << ',' << detail::fmt(c.alpha) << ',' << detail::fmt(p.abscissa) << ','
          << detail::fmt(k.ratio()) << ',' << k.hits << ',' << k.total << ',' << detail::fmt(c.mix_clean.ratio())
          << ',' << detail::fmt(c.h_correct.ratio()) << '\n';
    }
  }
  return out.str();
}

/// Files written by one run, relative names mapped to contents.
using OutputFiles = std::map<std::string, std::string>;

inline OutputFiles render_outputs(const ExperimentConfig& config, const AlphaSweepResult& r) {
  OutputFiles files{{"alpha_sweep.csv", alpha_sweep_csv(config, r)}};
  std::ostringstream s;
  s << "g clean " << detail::fmt(r.g_clean.ratio()) << ", g under STD attack " << detail::fmt(r.g_attacked.ratio())
    << "\nh clean " << detail::fmt(r.h_clean.ratio()) << ", h under ROB attack "
    << detail::fmt(r.h_attacked.ratio()) << "\n";
  files["summary.txt"] = s.str();
  if (config.render_svg) {
    SvgChart chart{"Mixed classifier vs alpha", "alpha", "accuracy", false, {}};
    SvgSeries clean{"clean", {}, {}}, st{"STD attack", {}, {}}, rb{"ROB attack", {}, {}}, mx{"MIX attack", {}, {}};
    for (const CurvePoint& p : r.points) {
      for (SvgSeries* s2 : {&clean, &st, &rb, &mx}) s2->x.push_back(p.abscissa);
      clean.y.push_back(p.clean.ratio());
      st.y.push_back(p.attacked.at(AttackTarget::std_model).ratio());
      rb.y.push_back(p.attacked.at(AttackTarget::rob_model).ratio());
      mx.y.push_back(p.attacked.at(AttackTarget::mix).ratio());
    }
    chart.series = {clean, st, rb, mx};
    files["alpha_sweep.svg"] = render_svg(chart);
  }
  return files;
}

inline OutputFiles render_outputs(const ExperimentConfig& config, const DesignStudyResult& r) {
  OutputFiles files;
  SvgChart chart{"MIX-attacked vs clean accuracy", "clean accuracy", "attacked accuracy", false, {}};
  for (const DesignCurve& c : r.curves) {
    const std::string stem = "design_" + to_string(c.r_mode) + "_" + to_string(c.domain);
    files[stem + ".csv"] = design_curve_csv(config, c);
    SvgSeries s{to_string(c.r_mode) + "/" + to_string(c.domain), {}, {}};
    for (const CurvePoint& p : c.points) {
      s.x.push_back(p.clean.ratio());
      s.y.push_back(p.attacked.at(AttackTarget::mix).ratio());
    }
    chart.series.push_back(std::move(s));
  }
  files["design_pareto.csv"] = design_summary_csv(config, r);
  std::ostringstream s;
  s << "g clean " << detail::fmt(r.g_clean.ratio()) << ", g attacked " << detail::fmt(r.g_attacked.ratio())
    << "\nh clean " << detail::fmt(r.h_clean.ratio()) << ", h attacked " << detail::fmt(r.h_attacked.ratio())
    << "\n";
  files["summary.txt"] = s.str();
  if (config.render_svg) files["design_study.svg"] = render_svg(chart);
  return files;
}

inline OutputFiles render_outputs(const ExperimentConfig& config, const ConfidenceTable& t) {
  return {{"confidence_table.csv", confidence_csv(config, t)}};
}

inline OutputFiles render_outputs(const ExperimentConfig& config, const CertifiedCurveResult& r) {
  OutputFiles files{{"certified_curve.csv", certified_csv(config, r)}};
  if (config.render_svg) {
    SvgChart chart{"Certified accuracy", "radius", "certified accuracy", false, {}};
    for (const CertifiedCurve& c : r.curves) {
      SvgSeries s{to_string(c.method) + " a=" + detail::fmt(c.alpha), {}, {}};
      for (const CurvePoint& p : c.points) {
        s.x.push_back(p.abscissa);
        s.y.push_back(p.certified.at(c.method).ratio());
      }
      chart.series.push_back(std::move(s));
    }
    files["certified_curve.svg"] = render_svg(chart);
  }
  return files;
}

/// Writes all files after the run has finished; nothing is written on failure.
inline void write_outputs(const std::string& out_dir, const OutputFiles& files) {
  detail::ensure_dir(out_dir);
  for (const auto& [name, text] : files) {
    detail::write_text((std::filesystem::path(out_dir.empty() ? "." : out_dir) / name).string(), text);
  }
}

/// Loads models and data named in `config`, runs its experiment kind and
/// returns the rendered files (also written when out_dir is set).
inline OutputFiles run_experiment(const ExperimentConfig& config) {
  const ModelPair models = load_models(config);
  const Dataset test = config.dataset.build(Split::test);
  OutputFiles files;
  switch (config.kind) {
    case ExperimentKind::alpha_sweep: files = render_outputs(config, run_alpha_sweep(config, models, test)); break;
    case ExperimentKind::design_study: files = render_outputs(config, run_design_study(config, models, test)); break;
    case ExperimentKind::confidence_table:
      files = render_outputs(config, run_confidence_table(config, models, test));
      break;
    case ExperimentKind::certified_curve:
      files = render_outputs(config, run_certified_curve(config, models, test));
      break;
  }
  if (!config.out_dir.empty()) write_outputs(config.out_dir, files);
  return files;
}

}  // namespace mixcert
