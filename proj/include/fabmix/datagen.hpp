#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fabmix/errors.hpp"
#include "fabmix/gaussian.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/random.hpp"

namespace fabmix {

struct GeneratorSpec {
  Eigen::Index n = 10000;
  Eigen::Index k_true = 4;
  std::vector<double> weights{0.1, 0.2, 0.3, 0.4};
  Eigen::Index dim = 10;
  // Means are uniform in [-mean_scale, mean_scale]^D.
  double mean_scale = 10.0;
  // Covariances are A A^T + cov_scale I with A_ij ~ N(0, 1) * cov_scale / sqrt(D).
  double cov_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (k_true < 1 || dim < 1) throw Error("GeneratorSpec: k_true and dim must be >= 1");
    if (n < k_true) throw Error("GeneratorSpec: n must be >= k_true");
    if (static_cast<Eigen::Index>(weights.size()) != k_true) {
      throw Error("GeneratorSpec: expected " + std::to_string(k_true) + " weights, got " +
                  std::to_string(weights.size()));
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw Error("GeneratorSpec: weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("GeneratorSpec: weights must sum to 1");
    if (!(mean_scale > 0.0) || !(cov_scale > 0.0)) throw Error("GeneratorSpec: scales must be > 0");
  }
};

// Draw component parameters. Soft counts are the expected counts n * w_k.
inline MixtureModel sample_ground_truth(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto d = spec.dim;
  const double a_scale = spec.cov_scale / std::sqrt(static_cast<double>(d));
  MixtureModel model;
  model.dim = d;
  model.soft_counts.resize(spec.k_true);
  for (Eigen::Index k = 0; k < spec.k_true; ++k) {
    Vector mean(d);
    for (Eigen::Index j = 0; j < d; ++j) mean[j] = rng.uniform(-spec.mean_scale, spec.mean_scale);
    Matrix a(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal() * a_scale;
    }
    Matrix cov = a * a.transpose();
    cov.diagonal().array() += spec.cov_scale;
    const double w = spec.weights[static_cast<std::size_t>(k)];
    model.components.push_back({w, std::move(mean), repair_covariance(cov)});
    model.soft_counts[k] = w * static_cast<double>(spec.n);
  }
  return model;
}

struct LabeledDataset {
  Dataset data;
  std::vector<int> labels;
};

// Categorical component draw by weight, then mean + L z with z ~ N(0, I).
inline LabeledDataset sample_dataset(const MixtureModel& truth, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw Error("sample_dataset: n must be >= 1");
  Rng rng(seed);
  const auto d = truth.dim;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : truth.components) cumulative.push_back(acc += c.weight);
  RowMatrix points(n, d);
  std::vector<int> labels(static_cast<std::size_t>(n));
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    int k = 0;
    while (k + 1 < static_cast<int>(cumulative.size()) && u >= cumulative[static_cast<std::size_t>(k)]) ++k;
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    const auto& comp = truth.components[static_cast<std::size_t>(k)];
    points.row(i) = (comp.mean + comp.cov.chol().triangularView<Eigen::Lower>() * z).transpose();
    labels[static_cast<std::size_t>(i)] = k;
  }
  return {Dataset(std::move(points)), std::move(labels)};
}

// Ground truth from `spec.seed`, data from a derived stream.
inline LabeledDataset generate(const GeneratorSpec& spec) {
  return sample_dataset(sample_ground_truth(spec), spec.n, derive_seed(spec.seed, 1));
}

}  // namespace fabmix
