// mixcert command-line interface.
//
//   mixcert <command> --config FILE [--seed N] [--out-dir DIR] [--workers N] [--set key=value]...
//
// Commands: generate-data, train, attack, mix-eval, certify, verify,
// rs-predict, sweep <kind>. Output files land in --out-dir (default ".").
// Exit codes: 0 success, 1 error, 2 verify found a counterexample.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mixcert/mixcert.hpp"

namespace {

using namespace mixcert;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> workers;
  std::vector<std::string> overrides;
  /// Command-specific flags, each bound to a config key.
  std::map<std::string, std::string> flag_values;
};

KeyValueConfig load_config(const CommonOptions& opts) {
  KeyValueConfig cfg = opts.config.empty() ? KeyValueConfig() : KeyValueConfig::load(opts.config);
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--set expects key=value, got '" + kv + "'");
    cfg.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  for (const auto& [key, value] : opts.flag_values) cfg.set(key, value);
  if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
  if (opts.out_dir) cfg.set("out_dir", *opts.out_dir);
  if (opts.workers) cfg.set("workers", std::to_string(*opts.workers));
  return cfg;
}

std::string out_dir_of(const KeyValueConfig& cfg) { return cfg.get("out_dir", "."); }
std::size_t workers_of(const KeyValueConfig& cfg) { return std::max<std::size_t>(1, cfg.get_size("workers", 1)); }
std::uint64_t seed_of(const KeyValueConfig& cfg) { return cfg.get_u64("seed", 0); }

std::string stamp(const std::string& command, const KeyValueConfig& cfg) {
  return stamp_line(command, cfg.hash(unhashed_keys()));
}

void emit(const KeyValueConfig& cfg, const std::string& name, const std::string& text) {
  write_outputs(out_dir_of(cfg), {{name, text}});
  std::cout << "wrote " << (std::filesystem::path(out_dir_of(cfg)) / name).string() << '\n';
}

Dataset test_split(const KeyValueConfig& cfg) {
  return DatasetSpec::from(cfg, seed_of(cfg)).build(Split::test);
}

ClassifierPtr load_classifier(const KeyValueConfig& cfg, const std::string& key) {
  const std::string path = cfg.get(key);
  if (!std::filesystem::exists(path)) throw InputError("model file '" + path + "' does not exist");
  return std::make_shared<ModelClassifier>(load_model(path));
}

SmoothingConfig smoothing_of(const KeyValueConfig& cfg) {
  SmoothingConfig sc;
  sc.sigma = cfg.get_double("smoothing.sigma", sc.sigma);
  sc.samples = cfg.get_size("smoothing.samples", sc.samples);
  sc.seed = cfg.get_u64("smoothing.seed", derive_seed(seed_of(cfg), 22));
  sc.estimator = parse_estimator(cfg.get("smoothing.estimator", "mc"));
  return sc;
}

/// h, smoothed when `h.smoothed = true` or when `force_smoothing` is set.
ClassifierPtr build_h(const KeyValueConfig& cfg, bool force_smoothing) {
  ClassifierPtr h = load_classifier(cfg, "h_model");
  if (force_smoothing || cfg.get_bool("h.smoothed", false)) {
    return std::make_shared<SmoothedClassifier>(h, smoothing_of(cfg));
  }
  return h;
}

MixedClassifier::Config mix_config_of(const KeyValueConfig& cfg) {
  MixedClassifier::Config mc;
  mc.formulation = parse_formulation(cfg.get("mix.formulation", "alpha"));
  mc.alpha = cfg.get_double("mix.alpha", mc.alpha);
  mc.gamma = cfg.get_double("mix.gamma", mc.gamma);
  mc.r_mode = parse_r_mode(cfg.get("mix.r_mode", "one"));
  mc.domain = parse_domain(cfg.get("mix.domain", "probability"));
  mc.norm = parse_norm(cfg.get("mix.norm", "inf"));
  return mc;
}

CertifyParams certify_params_of(const KeyValueConfig& cfg) {
  CertifyParams p;
  p.method = parse_cert_method(cfg.get("cert.method", "lipschitz_global"));
  p.norm = parse_norm(cfg.get("cert.norm", "2"));
  p.local_epsilon = cfg.get_double("cert.local_eps", p.local_epsilon);
  p.local_attack = attack_spec_from(cfg, "cert.local_attack", derive_seed(seed_of(cfg), 31));
  if (cfg.has("cert.hoeffding_beta")) p.hoeffding_beta = cfg.get_double("cert.hoeffding_beta");
  return p;
}

bool certify_needs_smoothing(const KeyValueConfig& cfg) {
  return parse_cert_method(cfg.get("cert.method", "lipschitz_global")) == CertMethod::rs;
}

// ---------------------------------------------------------------------------

int cmd_generate_data(const KeyValueConfig& cfg) {
  const DatasetSpec spec = DatasetSpec::from(cfg, seed_of(cfg));
  for (Split split : {Split::train, Split::test}) {
    std::ostringstream out;
    out << stamp("generate-data", cfg) << '\n';
    save_csv_dataset(out, spec.build(split));
    emit(cfg, to_string(split) + ".csv", out.str());
  }
  return 0;
}

int cmd_train(const KeyValueConfig& cfg) {
  const TrainingJob job = TrainingJob::from(cfg);
  TrainingLog log;
  const FeedForwardModel model = job.run(&log);
  std::ostringstream m;
  save_model(m, model);
  std::ostringstream l;
  l << stamp("train", cfg) << '\n' << "epoch,train_loss\n0," << format_double(log.initial_loss) << '\n';
  for (std::size_t e = 0; e < log.epoch_losses.size(); ++e) {
    l << (e + 1) << ',' << format_double(log.epoch_losses[e]) << '\n';
  }
  emit(cfg, job.name + ".model", m.str());
  emit(cfg, job.name + "_log.csv", l.str());
  const Dataset test = job.dataset.build(Split::test);
  std::cout << "test accuracy " << format_double(accuracy(ModelClassifier(model), test)) << '\n';
  return 0;
}

int cmd_attack(const KeyValueConfig& cfg) {
  const ClassifierPtr g = load_classifier(cfg, "g_model");
  const ClassifierPtr h = build_h(cfg, false);
  const MixedClassifier mixed(g, h, mix_config_of(cfg));
  const Dataset test = test_split(cfg);
  const AttackSpec spec = attack_spec_from(cfg, "attack", derive_seed(seed_of(cfg), 21));
  std::vector<AttackTarget> targets;
  for (const std::string& t : cfg.get_strings("attack.targets", {"STD", "ROB", "MIX"})) {
    targets.push_back(parse_target(t));
  }
  const AttackReport report = evaluate_under_attack(*g, *h, mixed, test, spec, targets, workers_of(cfg));
  std::ostringstream out;
  out << stamp("attack", cfg) << '\n';
  write_attack_csv(out, report);
  emit(cfg, "attack.csv", out.str());
  std::cout << "clean accuracy g " << format_double(report.clean_accuracy_g()) << " h "
            << format_double(report.clean_accuracy_h()) << " mix " << format_double(report.clean_accuracy_mix())
            << '\n';
  for (AttackTarget t : targets) {
    std::cout << to_string(t) << " attack: mix accuracy " << format_double(report.attacked_accuracy_mix(t)) << '\n';
  }
  return 0;
}

int cmd_mix_eval(const KeyValueConfig& cfg) {
  const ClassifierPtr g = load_classifier(cfg, "g_model");
  const ClassifierPtr h = build_h(cfg, false);
  const MixedClassifier mixed(g, h, mix_config_of(cfg));
  const Dataset test = test_split(cfg);
  std::vector<Vector> probs(test.size());
  parallel_for(test.size(), workers_of(cfg), [&](std::size_t i) { probs[i] = mixed.probs(test.input(i)); });
  std::ostringstream out;
  out << stamp("mix-eval", cfg) << '\n' << "index,label,predicted";
  for (std::size_t k = 0; k < mixed.class_count(); ++k) out << ",p_" << k;
  out << '\n';
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::size_t pred = argmax(probs[i]);
    correct += pred == test.labels[i];
    out << i << ',' << test.labels[i] << ',' << pred;
    for (double p : probs[i]) out << ',' << format_double(p);
    out << '\n';
  }
  emit(cfg, "mix_eval.csv", out.str());
  std::cout << "mixed accuracy " << format_double(test.empty() ? 0.0 : double(correct) / double(test.size()))
            << '\n';
  return 0;
}

MixedClassifier certification_mixture(const KeyValueConfig& cfg) {
  const ClassifierPtr g = load_classifier(cfg, "g_model");
  const ClassifierPtr h = build_h(cfg, certify_needs_smoothing(cfg));
  return MixedClassifier::alpha_mix(g, h, cfg.get_double("cert.alpha", 0.75));
}

int cmd_certify(const KeyValueConfig& cfg) {
  const MixedClassifier mixed = certification_mixture(cfg);
  const Dataset test = test_split(cfg);
  const std::vector<Certificate> certs = certify_dataset(mixed, test, certify_params_of(cfg), workers_of(cfg));
  std::ostringstream out;
  out << stamp("certify", cfg) << '\n';
  write_certificates_csv(out, certs);
  emit(cfg, "certificates.csv", out.str());
  std::size_t positive = 0;
  for (const Certificate& c : certs) positive += c.radius > 0.0;
  std::cout << positive << " of " << certs.size() << " inputs certified with positive radius\n";
  return 0;
}

int cmd_verify(const KeyValueConfig& cfg, const std::string& certs_path, std::size_t resolution) {
  const MixedClassifier mixed = certification_mixture(cfg);
  const Dataset test = test_split(cfg);
  std::ifstream in(certs_path);
  if (!in) throw InputError("cannot open certificates '" + certs_path + "'");
  const std::vector<Certificate> certs = read_certificates_csv(in, certs_path);
  std::ostringstream out;
  out << stamp("verify", cfg) << '\n' << "index,radius,verified,min_margin,points,counterexample\n";
  std::size_t failures = 0;
  for (const Certificate& c : certs) {
    if (c.index >= test.size()) throw InputError("certificate index " + std::to_string(c.index) + " is out of range");
    if (c.alpha != mixed.alpha()) throw InputError("certificate alpha does not match cert.alpha");
    const Verdict v = verify_certificate(mixed, c, test.input(c.index), resolution, workers_of(cfg));
    failures += !v.verified;
    out << c.index << ',' << format_double(c.radius) << ',' << (v.verified ? "true" : "false") << ','
        << (std::isinf(v.min_margin) ? std::string() : format_double(v.min_margin)) << ',' << v.points << ',';
    if (v.counterexample) {
      for (std::size_t j = 0; j < v.counterexample->size(); ++j) {
        out << (j ? " " : "") << format_double((*v.counterexample)[j]);
      }
    }
    out << '\n';
  }
  emit(cfg, "verification.csv", out.str());
  std::cout << failures << " counterexamples over " << certs.size() << " certificates\n";
  return failures == 0 ? 0 : 2;
}

int cmd_rs_predict(const KeyValueConfig& cfg) {
  const ClassifierPtr h = build_h(cfg, true);
  const Dataset test = test_split(cfg);
  std::vector<Vector> probs(test.size());
  parallel_for(test.size(), workers_of(cfg), [&](std::size_t i) { probs[i] = h->probs(test.input(i)); });
  std::ostringstream out;
  out << stamp("rs-predict", cfg) << '\n' << "index,label,predicted,runner_up";
  for (std::size_t k = 0; k < h->class_count(); ++k) out << ",p_" << k;
  out << '\n';
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::size_t y = argmax(probs[i]);
    out << i << ',' << test.labels[i] << ',' << y << ',' << runner_up(probs[i], y);
    for (double p : probs[i]) out << ',' << format_double(p);
    out << '\n';
  }
  emit(cfg, "rs_predict.csv", out.str());
  return 0;
}

int cmd_sweep(KeyValueConfig cfg, const std::string& kind) {
  if (!kind.empty()) cfg.set("kind", to_string(parse_experiment_kind(kind)));
  if (!cfg.has("out_dir")) cfg.set("out_dir", ".");
  const ExperimentConfig config = ExperimentConfig::from(cfg);
  const OutputFiles files = run_experiment(config);
  for (const auto& [name, text] : files) {
    std::cout << "wrote " << (std::filesystem::path(config.out_dir) / name).string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixcert: mixed classifiers with certified robustness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mixcert::kVersion));

  CommonOptions opts;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", opts.config, "key = value configuration file");
    if (config_required) c->required();
    c->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "master seed (overrides the config key `seed`)");
    sub->add_option("--out-dir", opts.out_dir, "output directory (overrides `out_dir`)");
    sub->add_option("--workers", opts.workers, "worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    sub->add_option("--set", opts.overrides, "override a config key, key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("generate-data", "write the train/test splits of a dataset recipe as CSV");
  auto* train = app.add_subcommand("train", "train a network (optionally adversarially) from a recipe");
  auto* attack = app.add_subcommand("attack", "PGD-attack g, h and the mixture on the test split");
  auto* mix = app.add_subcommand("mix-eval", "evaluate a mixture on the test split");
  auto* certify = app.add_subcommand("certify", "issue robustness certificates for the alpha mixture");
  auto* verify = app.add_subcommand("verify", "check certificates by exhaustive grid search");
  auto* rs = app.add_subcommand("rs-predict", "predictions of the smoothed h");
  auto* sweep = app.add_subcommand("sweep", "run an experiment sweep");
  for (CLI::App* sub : {gen, train, attack, mix, certify, verify, rs, sweep}) add_common(sub, sub != sweep);

  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&opts, key](const std::string& v) { opts.flag_values[key] = v; }, help + " (config key `" + key + "`)");
  };
  for (CLI::App* sub : {attack, mix, certify, verify}) {
    bind(sub, "--g-model", "g_model", "accurate base model file");
    bind(sub, "--h-model", "h_model", "robust base model file");
  }
  bind(mix, "--formulation", "mix.formulation", "alpha | smo1 | smo2 | smo3");
  bind(mix, "--alpha", "mix.alpha", "mixing weight of h for the alpha formulation");
  bind(mix, "--gamma", "mix.gamma", "gamma for smo1/smo2/smo3");
  bind(mix, "--r-mode", "mix.r_mode", "one | grad_gi | grad_max_gj | grad_ratio");
  bind(mix, "--domain", "mix.domain", "logit | probability");
  bind(mix, "--norm", "mix.norm", "attack norm whose dual measures gradients: 2 | inf");
  for (CLI::App* sub : {certify, verify}) {
    bind(sub, "--alpha", "cert.alpha", "mixing weight of h, in [0.5, 1] for non-trivial radii");
    bind(sub, "--method", "cert.method", "lipschitz_global | lipschitz_local | rs");
  }
  bind(rs, "--model", "h_model", "base model to smooth");
  for (CLI::App* sub : {rs, certify, verify}) {
    bind(sub, "--sigma", "smoothing.sigma", "smoothing noise level");
    bind(sub, "--samples", "smoothing.samples", "Monte Carlo sample count");
    bind(sub, "--estimator", "smoothing.estimator", "mc | quadrature");
  }
  bind(attack, "--eps", "attack.eps", "attack budget");
  bind(attack, "--norm", "attack.norm", "2 | inf");
  bind(attack, "--steps", "attack.steps", "PGD steps");
  bind(attack, "--alpha", "mix.alpha", "mixing weight of h");

  std::string certs_path;
  std::size_t resolution = 201;
  verify->add_option("--certs", certs_path, "certificates CSV written by `certify`")->required();
  verify->add_option("--resolution", resolution, "grid points per axis")->check(CLI::Range(1, 401));
  std::string sweep_kind;
  sweep->add_option("kind", sweep_kind, "design_study | alpha_sweep | confidence_table | certified_curve");

  CLI11_PARSE(app, argc, argv);

  try {
    const KeyValueConfig cfg = load_config(opts);
    if (gen->parsed()) return cmd_generate_data(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (attack->parsed()) return cmd_attack(cfg);
    if (mix->parsed()) return cmd_mix_eval(cfg);
    if (certify->parsed()) return cmd_certify(cfg);
    if (verify->parsed()) return cmd_verify(cfg, certs_path, resolution);
    if (rs->parsed()) return cmd_rs_predict(cfg);
    if (sweep->parsed()) {
      if (opts.config.empty() && sweep_kind.empty()) throw InputError("sweep needs --config or a kind");
      return cmd_sweep(cfg, sweep_kind);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
