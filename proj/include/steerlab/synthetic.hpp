// SPDX-License-Identifier: Apache-2.0
#pragma once

// Planted-direction activation generator. Hallucinated vectors are
// mu0 + delta * u + sigma * eps, non-hallucinated ones mu0 + sigma * eps, with
// one seeded base vector mu0 per (layer, offset) shared by both classes.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/random.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

struct SyntheticSpec {
  int d_model = 64;
  std::vector<double> planted_direction;
  double shift_magnitude = 1.0;
  double noise_sigma = 0.1;
  int samples_per_class = 200;
  std::uint64_t seed = 0;
  int num_layers = 1;
  std::vector<int> offsets{-1};
  std::string hallucinated_prefix = "h";
  std::string nh_prefix = "n";
};

struct SyntheticSet {
  ActivationContainer container;
  std::vector<std::string> hallucinated_ids;
  std::vector<std::string> nh_ids;
};

inline std::vector<double> random_unit_vector(int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(d));
  double norm = 0.0;
  while (norm < 1e-6) {
    for (auto& x : v) x = rng.normal();
    norm = l2_norm(v);
  }
  for (auto& x : v) x /= norm;
  return v;
}

inline std::string synthetic_id(const std::string& prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return prefix + buf;
}

inline SyntheticSet generate_synthetic(const SyntheticSpec& spec) {
  const auto d = static_cast<std::size_t>(spec.d_model);
  if (spec.planted_direction.size() != d) raise(ErrorKind::kShape, "planted direction length differs from d_model");
  if (std::abs(l2_norm(spec.planted_direction) - 1.0) > 1e-9) {
    raise(ErrorKind::kContract, "planted direction is not unit");
  }
  if (spec.shift_magnitude < 0.0 || spec.noise_sigma < 0.0 || spec.samples_per_class < 0) {
    raise(ErrorKind::kInput, "shift, sigma and sample count must be non-negative");
  }
  ModelGeometry geometry{spec.num_layers, spec.d_model, spec.offsets};
  geometry.validate();

  Rng rng(spec.seed);
  // Base vectors first so they do not depend on the sample count.
  std::vector<std::vector<double>> base;
  for (int l = 0; l < spec.num_layers; ++l) {
    for (std::size_t o = 0; o < spec.offsets.size(); ++o) {
      std::vector<double> mu(d);
      for (auto& x : mu) x = rng.normal();
      base.push_back(std::move(mu));
    }
  }

  SyntheticSet out{ActivationContainer(geometry), {}, {}};
  auto emit = [&](const std::string& id, bool hallucinated) {
    std::size_t slot = 0;
    for (int l = 0; l < spec.num_layers; ++l) {
      for (int off : spec.offsets) {
        const auto& mu = base[slot++];
        ActivationRecord rec{id, static_cast<std::uint32_t>(l), off, std::vector<float>(d)};
        for (std::size_t k = 0; k < d; ++k) {
          double value = mu[k] + spec.noise_sigma * rng.normal();
          if (hallucinated) value += spec.shift_magnitude * spec.planted_direction[k];
          rec.vector[k] = static_cast<float>(value);
        }
        out.container.add(std::move(rec));
      }
    }
  };
  for (int i = 0; i < spec.samples_per_class; ++i) {
    out.hallucinated_ids.push_back(synthetic_id(spec.hallucinated_prefix, i));
    emit(out.hallucinated_ids.back(), true);
    out.nh_ids.push_back(synthetic_id(spec.nh_prefix, i));
    emit(out.nh_ids.back(), false);
  }
  return out;
}

}  // namespace steerlab
