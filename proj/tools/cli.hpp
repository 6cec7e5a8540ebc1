#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fabmix/datagen.hpp"
#include "fabmix/errors.hpp"
#include "fabmix/harness.hpp"
#include "fabmix/io.hpp"

namespace fabmix::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2 };

// Flags shared by the subcommands. Unset optionals fall back to library
// defaults (or to the config file for `experiment`).
struct Flags {
  std::optional<Eigen::Index> n, dim, k_true;
  Eigen::Index k_init = 8;
  std::vector<double> weights;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  int max_iters = 500;
  std::vector<std::string> learners;
  std::string mode = "exact-stats";
  std::optional<double> prune_threshold;
  std::optional<double> mean_scale, cov_scale;
  std::string config;
  std::string data;
  std::string out;
  bool wall_time = false;
};

inline GeneratorSpec generator_from(const Flags& f) {
  GeneratorSpec spec;
  if (f.n) spec.n = *f.n;
  if (f.dim) spec.dim = *f.dim;
  if (f.k_true) spec.k_true = *f.k_true;
  if (!f.weights.empty()) {
    spec.weights = f.weights;
  } else if (f.k_true && *f.k_true != 4) {
    spec.weights.assign(static_cast<std::size_t>(*f.k_true), 1.0 / static_cast<double>(*f.k_true));
  }
  if (f.mean_scale) spec.mean_scale = *f.mean_scale;
  if (f.cov_scale) spec.cov_scale = *f.cov_scale;
  spec.seed = f.seed;
  return spec;
}

inline LearnerSettings settings_from(const Flags& f) {
  LearnerSettings s;
  s.tol = f.tol;
  s.max_iters = f.max_iters;
  s.mode = parse_covariance_mode(f.mode);
  if (f.prune_threshold) s.prune_threshold = *f.prune_threshold;
  return s;
}

// Dataset from --data if given, otherwise generated from the generator flags.
inline Dataset load_or_generate(const Flags& f) {
  if (!f.data.empty()) return read_dataset_csv(std::filesystem::path(f.data)).data;
  return generate(generator_from(f)).data;
}

inline std::vector<std::string> provenance(Learner l, const Dataset& data, const MixtureModel& init,
                                           std::uint64_t seed) {
  return {"learner=" + std::string(to_string(l)) + " n=" + std::to_string(data.n()) +
              " dim=" + std::to_string(data.dim()) + " seed=" + std::to_string(seed),
          "dataset=" + hash_dataset(data) + " init=" + hash_model(init)};
}

inline int run_generate(const Flags& f, std::ostream& out) {
  const GeneratorSpec spec = generator_from(f);
  const LabeledDataset ld = generate(spec);
  if (f.out.empty()) {
    write_dataset_csv(out, ld.data, &ld.labels);
  } else {
    write_dataset_csv(std::filesystem::path(f.out), ld.data, &ld.labels);
  }
  return kOk;
}

inline int run_fit(const Flags& f, std::ostream& out) {
  const Learner learner = parse_learner(f.learners.empty() ? "fab_batch" : f.learners.front());
  const Dataset data = load_or_generate(f);
  const CellSeeds seeds{f.seed, derive_seed(f.seed, 2), derive_seed(f.seed, 3)};
  const MixtureModel init = initialize_from_data(data, f.k_init, seeds.init);
  const FitResult fit = run_learner(learner, data, init, settings_from(f), seeds.order);
  const std::filesystem::path dir = f.out.empty() ? "." : f.out;
  std::filesystem::create_directories(dir);
  write_trace_csv(dir / "trace.csv", fit.trace, f.wall_time, provenance(learner, data, init, f.seed));
  // Online learners also store their table, statistics and RNG for exact resume.
  nlohmann::json ckpt = fit.state ? state_to_json(*fit.state) : model_to_json(fit.model);
  ckpt["learner"] = std::string(to_string(learner));
  ckpt["converged"] = fit.converged;
  write_json(dir / "model.json", ckpt);
  out << to_string(learner) << ": " << fit.trace.size() - 1 << " iterations, final objective "
      << format_real(fit.trace.back().fic) << ", " << fit.model.size() << " components"
      << (fit.converged ? "" : " (not converged)") << '\n';
  return kOk;
}

inline int run_race(const Flags& f, std::ostream& out) {
  std::vector<Learner> learners;
  for (const auto& s : f.learners) learners.push_back(parse_learner(s));
  if (learners.empty()) learners = {Learner::fab_batch, Learner::fab_online};
  const Dataset data = load_or_generate(f);
  const MixtureModel init = initialize_from_data(data, f.k_init, derive_seed(f.seed, 2));
  const LearnerSettings settings = settings_from(f);
  const std::filesystem::path dir = f.out.empty() ? "race" : f.out;
  std::filesystem::create_directories(dir);

  std::vector<FicTrace> traces;
  for (Learner l : learners) {
    const FitResult fit = run_learner(l, data, init, settings, derive_seed(f.seed, 3));
    const ConvergenceCount cc = count_iterations_to_convergence(fit.trace, settings.tol);
    write_trace_csv(dir / (std::string(to_string(l)) + ".csv"), fit.trace, f.wall_time,
                    provenance(l, data, init, f.seed));
    out << to_string(l) << ": " << cc.iterations << " iterations to converge"
        << (cc.converged ? "" : " (not converged)") << ", final objective "
        << format_real(fit.trace.back().fic) << ", " << fit.model.size() << " components\n";
    traces.push_back(fit.trace);
  }

  std::ofstream side(dir / "race.csv");
  if (!side) throw Error("cannot write " + (dir / "race.csv").string());
  std::size_t len = 0;
  for (const auto& t : traces) len = std::max(len, t.size());
  side << "iteration";
  for (Learner l : learners) side << ',' << to_string(l);
  side << '\n';
  for (std::size_t i = 0; i < len; ++i) {
    side << i;
    for (const auto& t : traces) side << ',' << format_real(t.rows[std::min(i, t.size() - 1)].fic);
    side << '\n';
  }
  return kOk;
}

inline int run_experiment_cmd(const Flags& f, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = read_experiment_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.wall_time) cfg.wall_time = true;
  const RaceSummary summary = run_experiment(cfg);
  for (const auto& r : summary.rows) {
    out << to_string(r.learner) << " n=" << r.n << " dim=" << r.dim << ": " << r.repetitions_used
        << " runs, mean iterations " << format_real(r.mean_iters_to_converge) << ", mean final objective "
        << format_real(r.mean_final_fic) << '\n';
  }
  for (const auto& fail : summary.failures) {
    err << "run failed: " << to_string(fail.learner) << " n=" << fail.n << " dim=" << fail.dim
        << " seed=" << fail.seed << ": " << fail.error << '\n';
  }
  return summary.runs.empty() ? kNumerical : kOk;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Batch and online EM / FAB learners for Gaussian mixtures", "fabmix"};
  app.require_subcommand(1);
  Flags f;

  const std::vector<std::string> learner_names{"em_batch", "em_online", "fab_batch", "fab_online"};
  const auto add_generator = [&](CLI::App* sub) {
    sub->add_option("--n", f.n, "number of data points")->check(CLI::PositiveNumber);
    sub->add_option("--dim", f.dim, "dimension")->check(CLI::PositiveNumber);
    sub->add_option("--k-true", f.k_true, "number of true components")->check(CLI::PositiveNumber);
    sub->add_option("--weights", f.weights, "true mixing weights, comma separated")->delimiter(',');
    sub->add_option("--mean-scale", f.mean_scale, "means are uniform in [-s, s]^D");
    sub->add_option("--cov-scale", f.cov_scale, "covariance scale");
    sub->add_option("--seed", f.seed, "base seed");
  };
  const auto add_learning = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "dataset CSV (otherwise generated from the generator flags)");
    sub->add_option("--k-init", f.k_init, "initial number of components")->check(CLI::PositiveNumber);
    sub->add_option("--tol", f.tol, "relative convergence tolerance");
    sub->add_option("--max-iters", f.max_iters, "iteration / sweep limit")->check(CLI::PositiveNumber);
    sub->add_option("--mode", f.mode, "online covariance update")
        ->check(CLI::IsMember({"paper-faithful", "exact-stats"}));
    sub->add_option("--prune-threshold", f.prune_threshold, "FAB pruning threshold on N_c / N");
    sub->add_flag("--wall-time", f.wall_time, "record wall-clock times in trace files");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset CSV");
  add_generator(gen);
  gen->add_option("--out", f.out, "output file (default stdout)");

  auto* fit = app.add_subcommand("fit", "fit one learner; writes trace.csv and model.json");
  add_generator(fit);
  add_learning(fit);
  fit->add_option("--learner", f.learners, "learner")->check(CLI::IsMember(learner_names))->expected(1);
  fit->add_option("--out", f.out, "output directory");

  auto* race = app.add_subcommand("race", "run learners from one shared init side by side");
  add_generator(race);
  add_learning(race);
  race->add_option("--learner", f.learners, "learners (repeatable; default fab_batch and fab_online)")
      ->check(CLI::IsMember(learner_names))
      ->delimiter(',');
  race->add_option("--out", f.out, "output directory");

  auto* exp = app.add_subcommand("experiment", "run the full protocol from a config file");
  exp->add_option("--config", f.config, "key = value config file")->required();
  exp->add_option("--out", f.out, "output root (overrides output_dir)");
  exp->add_flag("--wall-time", f.wall_time, "record wall-clock times in trace files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return run_generate(f, out);
    if (*fit) return run_fit(f, out);
    if (*race) return run_race(f, out);
    return run_experiment_cmd(f, out, err);
  } catch (const SingularCovariance& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DegenerateComponent& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace fabmix::cli
