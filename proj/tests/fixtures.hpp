#pragma once

#include <cstdint>

#include "fabmix/datagen.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/random.hpp"

namespace fixtures {

using namespace fabmix;

inline Dataset random_dataset(Rng& rng, Eigen::Index n, Eigen::Index d, double spread = 3.0) {
  RowMatrix pts(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double shift = (i % 3) * spread;
    for (Eigen::Index j = 0; j < d; ++j) pts(i, j) = rng.normal() + shift;
  }
  return Dataset(std::move(pts));
}

inline Matrix random_spd(Rng& rng, Eigen::Index d) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  Matrix s = a * a.transpose() / static_cast<double>(d);
  s.diagonal().array() += 0.5;
  return s;
}

inline MixtureModel random_model(Rng& rng, Eigen::Index c, Eigen::Index d, Eigen::Index n_total) {
  MixtureModel m;
  m.dim = d;
  Vector w(c);
  for (Eigen::Index k = 0; k < c; ++k) w[k] = 0.2 + rng.uniform();
  w /= w.sum();
  for (Eigen::Index k = 0; k < c; ++k) {
    Vector mu(d);
    for (Eigen::Index j = 0; j < d; ++j) mu[j] = rng.uniform(-3.0, 3.0);
    m.components.push_back({w[k], mu, repair_covariance(random_spd(rng, d))});
  }
  m.soft_counts = w * static_cast<double>(n_total);
  return m;
}

// Table-1-style data at desk scale.
inline LabeledDataset desk_data(std::uint64_t seed, Eigen::Index n = 2000, Eigen::Index d = 2) {
  GeneratorSpec spec;
  spec.n = n;
  spec.dim = d;
  spec.seed = seed;
  return generate(spec);
}

}  // namespace fixtures
