// SPDX-License-Identifier: Apache-2.0
#pragma once

// Difference-in-means extraction and directional ablation.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/toy_model.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

inline constexpr double kUnitTolerance = 1e-6;

// Mean over the given samples, summed in ascending sample_id order in double.
inline std::vector<double> mean_activation(const ActivationContainer& container, std::span<const std::string> sample_ids,
                                           int layer, int offset) {
  if (sample_ids.empty()) {
    raise(ErrorKind::kEmptySet, "mean over empty sample set at layer " + std::to_string(layer) + ", offset " +
                                    std::to_string(offset));
  }
  std::vector<const std::string*> ids;
  ids.reserve(sample_ids.size());
  for (const auto& id : sample_ids) ids.push_back(&id);
  std::sort(ids.begin(), ids.end(), [](const std::string* a, const std::string* b) { return *a < *b; });

  std::vector<double> sum(static_cast<std::size_t>(container.geometry().d_model), 0.0);
  for (const auto* id : ids) {
    const auto& rec = container.at(*id, layer, offset);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(rec.vector[k]);
  }
  const auto n = static_cast<double>(ids.size());
  for (auto& s : sum) s /= n;
  return sum;
}

inline Direction diff_in_means(const ActivationContainer& container, std::span<const std::string> type_ids,
                               std::span<const std::string> nh_ids, int layer, int offset, DirType dir_type) {
  auto mu = mean_activation(container, type_ids, layer, offset);
  const auto nu = mean_activation(container, nh_ids, layer, offset);
  for (std::size_t k = 0; k < mu.size(); ++k) mu[k] -= nu[k];
  Direction dir;
  dir.dir_type = dir_type;
  dir.layer = layer;
  dir.offset = offset;
  dir.raw_norm = l2_norm(mu);
  dir.vector = std::move(mu);
  return dir;
}

struct CandidateGrid {
  DirType dir_type = DirType::kOh;
  ModelGeometry geometry;
  // Offset-major: all layers for the first offset, then the next offset.
  std::vector<Direction> directions;
};

inline CandidateGrid build_candidate_grid(const ActivationContainer& container, std::span<const std::string> type_ids,
                                          std::span<const std::string> nh_ids, const ModelGeometry& geometry,
                                          DirType dir_type, unsigned threads = 1) {
  geometry.validate();
  std::string missing;
  std::size_t missing_count = 0;
  for (int off : geometry.post_instruction_offsets) {
    for (int l = 0; l < geometry.num_layers; ++l) {
      for (auto ids : {type_ids, nh_ids}) {
        for (const auto& id : ids) {
          if (container.find(id, l, off)) continue;
          if (missing_count++ < 20) missing += (missing.empty() ? "" : ", ") + describe({id, l, off});
        }
      }
    }
  }
  if (missing_count > 0) {
    raise(ErrorKind::kMissingRecord, "container lacks " + std::to_string(missing_count) + " keys: " + missing +
                                         (missing_count > 20 ? ", ..." : ""));
  }

  CandidateGrid grid{dir_type, geometry, {}};
  const auto num_offsets = geometry.post_instruction_offsets.size();
  const auto num_layers = static_cast<std::size_t>(geometry.num_layers);
  grid.directions.resize(num_offsets * num_layers);
  parallel_for(grid.directions.size(), threads, [&](std::size_t idx) {
    const int off = geometry.post_instruction_offsets[idx / num_layers];
    const int l = static_cast<int>(idx % num_layers);
    grid.directions[idx] = diff_in_means(container, type_ids, nh_ids, l, off, dir_type);
  });
  return grid;
}

inline Direction normalize(Direction dir) {
  const double norm = l2_norm(dir.vector);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    raise(ErrorKind::kDegenerateDirection, "cannot normalize direction at layer " + std::to_string(dir.layer) +
                                               ", offset " + std::to_string(dir.offset) + " (norm " +
                                               std::to_string(norm) + ")");
  }
  if (!dir.is_unit) dir.raw_norm = norm;
  for (auto& v : dir.vector) v /= norm;
  dir.is_unit = true;
  return dir;
}

inline void check_unit(std::span<const double> r_hat) {
  const double norm = l2_norm(r_hat);
  if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
    raise(ErrorKind::kContract, "ablation direction norm " + std::to_string(norm) + " is not 1");
  }
}

namespace detail {
// x <- x - alpha (r^T x) r, no checks.
inline void ablate_unchecked(std::span<double> x, std::span<const double> r_hat, double alpha) {
  if (alpha == 0.0) return;
  double proj = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) proj += r_hat[k] * x[k];
  const double scale = alpha * proj;
  for (std::size_t k = 0; k < x.size(); ++k) x[k] -= scale * r_hat[k];
}
}  // namespace detail

inline void ablate_in_place(std::span<double> x, std::span<const double> r_hat, double alpha) {
  if (x.size() != r_hat.size()) {
    raise(ErrorKind::kShape, "vector length " + std::to_string(x.size()) + " differs from direction length " +
                                 std::to_string(r_hat.size()));
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) raise(ErrorKind::kInput, "alpha must be finite and >= 0");
  check_unit(r_hat);
  detail::ablate_unchecked(x, r_hat, alpha);
}

inline std::vector<double> ablate(std::span<const double> x, std::span<const double> r_hat, double alpha) {
  std::vector<double> out(x.begin(), x.end());
  ablate_in_place(out, r_hat, alpha);
  return out;
}

inline Direction mix_direction(const Direction& r_hat_oh, const Direction& r_hat_eh, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) raise(ErrorKind::kInput, "lambda must lie in [0, 1]");
  if (r_hat_oh.vector.size() != r_hat_eh.vector.size()) raise(ErrorKind::kShape, "direction lengths differ");
  check_unit(r_hat_oh.vector);
  check_unit(r_hat_eh.vector);
  Direction mix;
  mix.dir_type = DirType::kMix;
  mix.layer = r_hat_oh.layer;
  mix.offset = r_hat_oh.offset;
  if (lambda == 0.0) {
    mix.vector = r_hat_oh.vector;
  } else if (lambda == 1.0) {
    mix.vector = r_hat_eh.vector;
  } else {
    mix.vector.resize(r_hat_oh.vector.size());
    for (std::size_t k = 0; k < mix.vector.size(); ++k) {
      mix.vector[k] = (1.0 - lambda) * r_hat_oh.vector[k] + lambda * r_hat_eh.vector[k];
    }
    const double norm = l2_norm(mix.vector);
    if (!(norm > 1e-12)) raise(ErrorKind::kDegenerateDirection, "mixed direction vanishes at this lambda");
    for (auto& v : mix.vector) v /= norm;
  }
  mix.is_unit = true;
  mix.raw_norm = 1.0;
  return mix;
}

// Ablation applied at every hook point, layer and position.
inline ResidualHook make_ablation_hook(const Direction& direction, double alpha) {
  if (!direction.is_unit) raise(ErrorKind::kContract, "ablation hook needs a unit direction");
  check_unit(direction.vector);
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) raise(ErrorKind::kInput, "alpha must be finite and >= 0");
  auto r_hat = std::make_shared<const std::vector<double>>(direction.vector);
  return [r_hat, alpha](HookPoint, int, std::span<double> residual) {
    if (residual.size() != r_hat->size()) raise(ErrorKind::kShape, "residual width differs from direction length");
    detail::ablate_unchecked(residual, *r_hat, alpha);
  };
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) raise(ErrorKind::kDegenerateDirection, "cosine of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace steerlab
