#pragma once

#include <chrono>
#include <cmath>
#include <vector>

namespace fabmix {

struct TraceRow {
  int iteration = 0;
  // Objective driving convergence: the FIC lower bound for FAB learners,
  // the log-likelihood for plain EM learners.
  double fic = 0.0;
  double loglik = 0.0;
  int n_components = 0;
  double wall_ms = 0.0;
};

struct FicTrace {
  std::vector<TraceRow> rows;

  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }
  const TraceRow& back() const { return rows.back(); }

  void append(double fic, double loglik, int n_components, double wall_ms) {
    rows.push_back({static_cast<int>(rows.size()), fic, loglik, n_components, wall_ms});
  }

  // Relative change of the objective between the last two rows.
  double last_relative_change() const {
    if (rows.size() < 2) return INFINITY;
    const double prev = rows[rows.size() - 2].fic;
    return std::abs(rows.back().fic - prev) / std::abs(prev);
  }
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace fabmix
