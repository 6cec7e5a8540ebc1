#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "fabmix/datagen.hpp"
#include "fabmix/errors.hpp"
#include "fabmix/fab.hpp"
#include "fabmix/fab_online.hpp"
#include "fabmix/incremental_em.hpp"
#include "fabmix/io.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/random.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

enum class Learner { em_batch, em_online, fab_batch, fab_online };

inline std::string_view to_string(Learner l) {
  switch (l) {
    case Learner::em_batch: return "em_batch";
    case Learner::em_online: return "em_online";
    case Learner::fab_batch: return "fab_batch";
    case Learner::fab_online: return "fab_online";
  }
  return "?";
}

inline Learner parse_learner(std::string_view s) {
  for (Learner l : {Learner::em_batch, Learner::em_online, Learner::fab_batch, Learner::fab_online}) {
    if (s == to_string(l)) return l;
  }
  throw Error("unknown learner '" + std::string(s) + "'");
}

struct LearnerSettings {
  double tol = 1e-6;
  int max_iters = 500;
  CovarianceMode mode = CovarianceMode::exact_stats;
  double prune_threshold = FabConfig{}.prune_threshold;
  int inner_v_iters = FabConfig{}.inner_v_iters;

  FabConfig fab_config(Eigen::Index dim) const {
    FabConfig cfg = FabConfig::for_dim(dim);
    cfg.tol = tol;
    cfg.max_iters = max_iters;
    cfg.mode = mode;
    cfg.prune_threshold = prune_threshold;
    cfg.inner_v_iters = inner_v_iters;
    return cfg;
  }
};

// Run one learner from `init`. Online learners draw their sweep order from
// `order_seed`.
inline FitResult run_learner(Learner learner, const Dataset& data, const MixtureModel& init,
                             const LearnerSettings& s, std::uint64_t order_seed) {
  switch (learner) {
    case Learner::em_batch: return fit_batch_em(data, init, s.tol, s.max_iters);
    case Learner::em_online:
      return fit_incremental_em(data, init, s.mode, s.tol, s.max_iters, order_seed);
    case Learner::fab_batch: return fit_fab_batch(data, init, s.fab_config(data.dim()));
    case Learner::fab_online: return fit_fab_online(data, init, s.fab_config(data.dim()), order_seed);
  }
  throw Error("unreachable learner");
}

struct ConvergenceCount {
  int iterations = 0;
  bool converged = false;
};

// Smallest t >= 1 from which every recorded relative change of the objective
// stays below tol. Returns the trace length, flagged, when there is none.
inline ConvergenceCount count_iterations_to_convergence(const FicTrace& trace, double tol) {
  if (trace.empty()) throw Error("count_iterations_to_convergence: empty trace");
  const auto& rows = trace.rows;
  std::size_t first_ok = rows.size();
  for (std::size_t t = rows.size(); t-- > 1;) {
    const double rel = std::abs(rows[t].fic - rows[t - 1].fic) / std::abs(rows[t - 1].fic);
    if (!(rel < tol)) break;
    first_ok = t;
  }
  if (first_ok == rows.size()) return {static_cast<int>(rows.size()), false};
  return {static_cast<int>(first_ok), true};
}

struct ExperimentConfig {
  std::string name = "experiment";
  // n, dim and seed are overwritten per cell.
  GeneratorSpec generator;
  std::vector<Eigen::Index> n_values{10000};
  std::vector<Eigen::Index> dim_values{10};
  Eigen::Index k_init = 8;
  int repetitions = 10;
  std::vector<Learner> learners{Learner::fab_batch, Learner::fab_online};
  LearnerSettings settings;
  // Tolerance for counting iterations to convergence; defaults to the learner tol.
  std::optional<double> count_tol;
  std::uint64_t base_seed = 1;
  std::vector<std::uint64_t> seeds;  // explicit per-repetition seeds, optional
  bool wall_time = false;
  std::filesystem::path output_dir = "out";
  bool write_files = true;

  double counting_tol() const { return count_tol.value_or(settings.tol); }

  std::uint64_t repetition_seed(int rep) const {
    return seeds.empty() ? base_seed + static_cast<std::uint64_t>(rep)
                         : seeds.at(static_cast<std::size_t>(rep));
  }

  void validate() const {
    if (repetitions < 1) throw Error("experiment: repetitions must be >= 1");
    if (n_values.empty() || dim_values.empty()) throw Error("experiment: n_values and dim_values must be non-empty");
    if (learners.empty()) throw Error("experiment: no learners");
    if (!seeds.empty() && static_cast<int>(seeds.size()) < repetitions) {
      throw Error("experiment: fewer seeds than repetitions");
    }
    if (k_init < 1) throw Error("experiment: k_init must be >= 1");
  }
};

// Seeds for one (n, dim, repetition) cell. Every learner in the cell sees the
// same dataset, init and sweep order.
struct CellSeeds {
  std::uint64_t data;
  std::uint64_t init;
  std::uint64_t order;
};

inline CellSeeds cell_seeds(std::uint64_t rep_seed, Eigen::Index n, Eigen::Index dim) {
  const std::uint64_t cell = derive_seed(derive_seed(rep_seed, static_cast<std::uint64_t>(n)),
                                         static_cast<std::uint64_t>(dim));
  return {cell, derive_seed(cell, 2), derive_seed(cell, 3)};
}

struct RunRecord {
  Learner learner;
  Eigen::Index n = 0;
  Eigen::Index dim = 0;
  std::uint64_t seed = 0;
  FitResult fit;
  ConvergenceCount count;
  std::string dataset_hash;
  std::string init_hash;
};

struct FailureRecord {
  Learner learner;
  Eigen::Index n = 0;
  Eigen::Index dim = 0;
  std::uint64_t seed = 0;
  std::string error;
};

struct SummaryRow {
  Learner learner;
  Eigen::Index n = 0;
  Eigen::Index dim = 0;
  std::vector<double> mean_fic_per_iteration;
  double mean_iters_to_converge = 0.0;
  double mean_final_fic = 0.0;
  double mean_final_components = 0.0;
  int repetitions_used = 0;
};

struct RaceSummary {
  std::vector<SummaryRow> rows;
  std::vector<RunRecord> runs;
  std::vector<FailureRecord> failures;

  const SummaryRow* find(Learner l, Eigen::Index n, Eigen::Index dim) const {
    for (const auto& r : rows)
      if (r.learner == l && r.n == n && r.dim == dim) return &r;
    return nullptr;
  }
};

// Element-wise mean of curves of unequal length; each curve is padded with
// its last value up to the longest one.
inline std::vector<double> mean_padded(const std::vector<const FicTrace*>& traces) {
  std::size_t len = 0;
  for (const auto* t : traces) len = std::max(len, t->size());
  std::vector<double> mean(len, 0.0);
  if (traces.empty()) return mean;
  for (const auto* t : traces) {
    for (std::size_t i = 0; i < len; ++i) mean[i] += t->rows[std::min(i, t->size() - 1)].fic;
  }
  for (double& m : mean) m /= static_cast<double>(traces.size());
  return mean;
}

inline std::string trace_file_name(Learner l, Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
  return std::string(to_string(l)) + "_n" + std::to_string(n) + "_d" + std::to_string(dim) + "_s" +
         std::to_string(seed) + ".csv";
}

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  return out;
}

inline void write_summary_files(const ExperimentConfig& cfg, const RaceSummary& summary,
                                const std::filesystem::path& dir) {
  {
    auto out = open_out(dir / "summary.csv");
    out << "learner,n,dim,repetitions_used,mean_iters_to_converge,mean_final_fic,mean_final_components\n";
    for (const auto& r : summary.rows) {
      out << to_string(r.learner) << ',' << r.n << ',' << r.dim << ',' << r.repetitions_used << ','
          << format_real(r.mean_iters_to_converge) << ',' << format_real(r.mean_final_fic) << ','
          << format_real(r.mean_final_components) << '\n';
    }
  }
  {
    auto out = open_out(dir / "failures.csv");
    out << "learner,n,dim,seed,error\n";
    for (const auto& f : summary.failures) {
      out << to_string(f.learner) << ',' << f.n << ',' << f.dim << ',' << f.seed << ','
          << csv_quote(f.error) << '\n';
    }
  }
  for (Eigen::Index n : cfg.n_values) {
    for (Eigen::Index dim : cfg.dim_values) {
      std::vector<const SummaryRow*> series;
      std::size_t len = 0;
      for (Learner l : cfg.learners) {
        if (const auto* r = summary.find(l, n, dim); r && !r->mean_fic_per_iteration.empty()) {
          series.push_back(r);
          len = std::max(len, r->mean_fic_per_iteration.size());
        }
      }
      auto out = open_out(dir / ("panel_n" + std::to_string(n) + "_d" + std::to_string(dim) + ".csv"));
      out << "iteration";
      for (const auto* r : series) out << ',' << to_string(r->learner);
      out << '\n';
      for (std::size_t i = 0; i < len; ++i) {
        out << i;
        for (const auto* r : series) {
          const auto& m = r->mean_fic_per_iteration;
          out << ',' << format_real(m[std::min(i, m.size() - 1)]);
        }
        out << '\n';
      }
    }
  }
}

}  // namespace detail

// Full batch-vs-online protocol: for every (n, dim, repetition) cell generate
// data, build one shared init, run every learner, then average per
// (learner, n, dim). Per-run failures are collected, not thrown.
inline RaceSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir = cfg.output_dir / cfg.name;
  if (cfg.write_files) std::filesystem::create_directories(dir);

  RaceSummary summary;
  for (Eigen::Index n : cfg.n_values) {
    for (Eigen::Index dim : cfg.dim_values) {
      for (int rep = 0; rep < cfg.repetitions; ++rep) {
        const std::uint64_t seed = cfg.repetition_seed(rep);
        const CellSeeds cs = cell_seeds(seed, n, dim);
        GeneratorSpec spec = cfg.generator;
        spec.n = n;
        spec.dim = dim;
        spec.seed = cs.data;
        Dataset data;
        MixtureModel init;
        try {
          data = generate(spec).data;
          init = initialize_from_data(data, cfg.k_init, cs.init);
        } catch (const Error& e) {
          for (Learner l : cfg.learners) summary.failures.push_back({l, n, dim, seed, e.what()});
          continue;
        }
        const std::string data_hash = hash_dataset(data);
        const std::string init_hash = hash_model(init);
        for (Learner l : cfg.learners) {
          try {
            RunRecord run{l, n, dim, seed, run_learner(l, data, init, cfg.settings, cs.order), {},
                          data_hash, init_hash};
            run.count = count_iterations_to_convergence(run.fit.trace, cfg.counting_tol());
            run.fit.state.reset();
            if (cfg.write_files) {
              write_trace_csv(dir / trace_file_name(l, n, dim, seed), run.fit.trace, cfg.wall_time,
                              {"learner=" + std::string(to_string(l)) + " n=" + std::to_string(n) +
                                   " dim=" + std::to_string(dim) + " seed=" + std::to_string(seed),
                               "dataset=" + data_hash + " init=" + init_hash});
            }
            summary.runs.push_back(std::move(run));
          } catch (const Error& e) {
            summary.failures.push_back({l, n, dim, seed, e.what()});
          }
        }
      }
      for (Learner l : cfg.learners) {
        std::vector<const FicTrace*> traces;
        SummaryRow row{l, n, dim, {}, 0.0, 0.0, 0.0, 0};
        for (const auto& r : summary.runs) {
          if (r.learner != l || r.n != n || r.dim != dim) continue;
          traces.push_back(&r.fit.trace);
          row.mean_iters_to_converge += r.count.iterations;
          row.mean_final_fic += r.fit.trace.back().fic;
          row.mean_final_components += r.fit.trace.back().n_components;
        }
        row.repetitions_used = static_cast<int>(traces.size());
        if (!traces.empty()) {
          const auto k = static_cast<double>(traces.size());
          row.mean_iters_to_converge /= k;
          row.mean_final_fic /= k;
          row.mean_final_components /= k;
          row.mean_fic_per_iteration = mean_padded(traces);
        }
        summary.rows.push_back(std::move(row));
      }
    }
  }
  if (cfg.write_files) detail::write_summary_files(cfg, summary, dir);
  return summary;
}

// ---------------------------------------------------------------------------
// Config file: flat `key = value` lines, '#' starts a comment.

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
std::vector<T> parse_list(const std::string& v, T (*one)(std::string_view)) {
  std::vector<T> out;
  for (auto part : split(v, ',')) {
    const std::string t = trim(part);
    if (!t.empty()) out.push_back(one(t));
  }
  return out;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  const std::string t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size()) throw Error("expected an integer, got '" + t + "'");
  return v;
}

inline bool parse_bool(std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw Error("expected a boolean, got '" + t + "'");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  using namespace detail;
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string val = trim(std::string_view(stripped).substr(eq + 1));
    try {
      if (key == "name") cfg.name = val;
      else if (key == "n_values") cfg.n_values = parse_list<Eigen::Index>(val, [](std::string_view s) { return static_cast<Eigen::Index>(parse_int(s)); });
      else if (key == "dim_values") cfg.dim_values = parse_list<Eigen::Index>(val, [](std::string_view s) { return static_cast<Eigen::Index>(parse_int(s)); });
      else if (key == "k_true") cfg.generator.k_true = parse_int(val);
      else if (key == "weights") cfg.generator.weights = parse_list<double>(val, [](std::string_view s) { return parse_real(s); });
      else if (key == "mean_scale") cfg.generator.mean_scale = parse_real(val);
      else if (key == "cov_scale") cfg.generator.cov_scale = parse_real(val);
      else if (key == "k_init") cfg.k_init = parse_int(val);
      else if (key == "repetitions") cfg.repetitions = static_cast<int>(parse_int(val));
      else if (key == "learners") cfg.learners = parse_list<Learner>(val, [](std::string_view s) { return parse_learner(s); });
      else if (key == "tol") cfg.settings.tol = parse_real(val);
      else if (key == "count_tol") cfg.count_tol = parse_real(val);
      else if (key == "max_iters") cfg.settings.max_iters = static_cast<int>(parse_int(val));
      else if (key == "mode") cfg.settings.mode = parse_covariance_mode(val);
      else if (key == "prune_threshold") cfg.settings.prune_threshold = parse_real(val);
      else if (key == "inner_v_iters") cfg.settings.inner_v_iters = static_cast<int>(parse_int(val));
      else if (key == "seed") cfg.base_seed = static_cast<std::uint64_t>(parse_int(val));
      else if (key == "seeds") cfg.seeds = parse_list<std::uint64_t>(val, [](std::string_view s) { return static_cast<std::uint64_t>(parse_int(s)); });
      else if (key == "wall_time") cfg.wall_time = parse_bool(val);
      else if (key == "output_dir") cfg.output_dir = val;
      else throw Error("unknown key '" + key + "'");
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_experiment_config(in);
}

}  // namespace fabmix
