#pragma once

// Density-based patch sub-sampling and slide selection.
//
// Patch probabilities come from a 2-D Gaussian kernel density estimate over
// patch centers: p_i = fhat(x_i) / sum_j fhat(x_j), with
// fhat(x) = (1/(N h^2)) * sum_k exp(-||x - x_k||^2 / (2 h^2)).
// The kernel's 1/(2*pi) constant cancels under the normalization and is
// omitted, so densities are comparable only within one slide.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "msbcr/common.hpp"

namespace msbcr {

enum class KdeMode { exact, truncated };

// Truncated mode drops kernel terms beyond this many bandwidths.
constexpr double kKdeCutoffBandwidths = 6.0;

struct DensityProfile {
  std::vector<double> densities;  // fhat(x_i), finite and positive
  std::vector<double> probs;      // p_i, sums to 1
  double bandwidth = 0.0;         // pixels
};

struct SamplingPlan {
  // slide_id -> sorted distinct selected patch indices
  std::map<std::string, std::vector<std::uint32_t>> selections;
  double ratio = 1.0;
  KdeMode mode = KdeMode::exact;
};

namespace detail {

inline void check_coords(const MatD& coords, double h) {
  require(coords.rows >= 1, "patch_probabilities: need at least one patch");
  require(coords.cols == 2, "patch_probabilities: coords must be n x 2");
  require(h > 0.0 && std::isfinite(h), "patch_probabilities: bandwidth must be positive");
  if (!coords.all_finite()) throw DataError("patch_probabilities: non-finite coordinate");
}

// Exact O(N^2) evaluation exploiting kernel symmetry: each pair contributes
// to both densities.
inline std::vector<double> densities_exact(const MatD& coords, double h) {
  const std::size_t n = coords.rows;
  const double inv2h2 = 1.0 / (2.0 * h * h);
  std::vector<double> dens(n, 1.0);  // self term K(0) = 1
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = coords(i, 0), yi = coords(i, 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xi - coords(j, 0);
      const double dy = yi - coords(j, 1);
      const double k = std::exp(-(dx * dx + dy * dy) * inv2h2);
      dens[i] += k;
      dens[j] += k;
    }
  }
  return dens;
}

// Truncated evaluation over a uniform grid of cell size 6h; only the 3x3
// neighborhood can hold points within the cutoff radius.
inline std::vector<double> densities_truncated(const MatD& coords, double h) {
  const std::size_t n = coords.rows;
  const double cutoff = kKdeCutoffBandwidths * h;
  const double cutoff2 = cutoff * cutoff;
  const double inv2h2 = 1.0 / (2.0 * h * h);

  const double cell = cutoff;
  auto cell_key = [&](double x, double y) {
    auto cx = static_cast<std::int64_t>(std::floor(x / cell));
    auto cy = static_cast<std::int64_t>(std::floor(y / cell));
    return std::pair<std::int64_t, std::int64_t>(cx, cy);
  };
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::uint32_t>> grid;
  for (std::size_t i = 0; i < n; ++i)
    grid[cell_key(coords(i, 0), coords(i, 1))].push_back(static_cast<std::uint32_t>(i));

  std::vector<double> dens(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = coords(i, 0), yi = coords(i, 1);
    auto [cx, cy] = cell_key(xi, yi);
    double acc = 0.0;
    for (std::int64_t gx = cx - 1; gx <= cx + 1; ++gx) {
      for (std::int64_t gy = cy - 1; gy <= cy + 1; ++gy) {
        auto it = grid.find({gx, gy});
        if (it == grid.end()) continue;
        for (std::uint32_t j : it->second) {
          const double dx = xi - coords(j, 0);
          const double dy = yi - coords(j, 1);
          const double d2 = dx * dx + dy * dy;
          if (d2 > cutoff2) continue;
          acc += std::exp(-d2 * inv2h2);
        }
      }
    }
    dens[i] = acc;
  }
  return dens;
}

}  // namespace detail

inline DensityProfile patch_probabilities(const MatD& coords, double h, KdeMode mode = KdeMode::exact) {
  detail::check_coords(coords, h);
  const std::size_t n = coords.rows;

  DensityProfile profile;
  profile.bandwidth = h;
  profile.densities =
      (mode == KdeMode::exact) ? detail::densities_exact(coords, h) : detail::densities_truncated(coords, h);

  // fhat carries the 1/(N h^2) factor; the kernel constant is omitted.
  const double scale = 1.0 / (static_cast<double>(n) * h * h);
  for (double& d : profile.densities) d *= scale;

  const double total = pairwise_sum(profile.densities);
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericError("patch_probabilities: degenerate density sum");
  profile.probs.resize(n);
  for (std::size_t i = 0; i < n; ++i) profile.probs[i] = profile.densities[i] / total;
  return profile;
}

// Feature containers store coordinates as f32; the estimator math runs on
// doubles.
inline DensityProfile patch_probabilities(const MatF& coords, double h, KdeMode mode = KdeMode::exact) {
  MatD wide(coords.rows, coords.cols);
  for (std::size_t i = 0; i < coords.data.size(); ++i) wide.data[i] = static_cast<double>(coords.data[i]);
  return patch_probabilities(wide, h, mode);
}

// Weighted sampling without replacement via exponential keys
// (Efraimidis-Spirakis): draw u_i, keep the k largest u_i^(1/w_i). Selecting
// with a partial sort keeps this O(N log k) and fully determined by the seed.
inline std::vector<std::uint32_t> sample_patches_indices(const std::vector<double>& probs, double ratio,
                                                         std::uint64_t seed) {
  require(ratio > 0.0 && ratio <= 1.0, "sample_patches: ratio must be in (0,1]");
  const std::size_t n = probs.size();
  require(n >= 1, "sample_patches: empty profile");

  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))));
  if (k >= n) {
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    return all;
  }

  Rng rng(seed);
  std::vector<std::pair<double, std::uint32_t>> keys;
  keys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    // log(u)/w is the log of the exponential key; larger is better.
    keys.push_back({std::log(u) / probs[i], static_cast<std::uint32_t>(i)});
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<std::uint32_t> selected(k);
  for (std::size_t i = 0; i < k; ++i) selected[i] = keys[i].second;
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline std::vector<std::uint32_t> sample_patches(const DensityProfile& profile, double ratio, std::uint64_t seed) {
  return sample_patches_indices(profile.probs, ratio, seed);
}

// Equidistant slide selection: k=1 takes the middle section; k>=2 spans both
// endpoints with round(i*(n-1)/(k-1)) and resolves rounding collisions by
// advancing to the next unused index.
inline std::vector<std::uint32_t> uniform_slide_indices(std::size_t n, std::size_t k) {
  require(k >= 1, "uniform_slide_indices: k must be >= 1");
  require(k <= n, "uniform_slide_indices: k exceeds slide count");
  if (k == 1) return {static_cast<std::uint32_t>((n - 1) / 2)};

  std::vector<std::uint32_t> out;
  out.reserve(k);
  const double step = static_cast<double>(n - 1) / static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    auto idx = static_cast<std::uint32_t>(std::llround(static_cast<double>(i) * step));
    if (!out.empty() && idx <= out.back()) idx = out.back() + 1;
    out.push_back(idx);
  }
  return out;
}

// k distinct uniformly drawn slide indices (partial Fisher-Yates), sorted.
inline std::vector<std::uint32_t> random_slide_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(k >= 1, "random_slide_indices: k must be >= 1");
  require(k <= n, "random_slide_indices: k exceeds slide count");
  std::vector<std::uint32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<std::uint32_t> out(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Plan serialization: one line per slide, `slide_id<TAB>i1,i2,...`.
// ---------------------------------------------------------------------------

inline void write_sampling_plan(const SamplingPlan& plan, const std::filesystem::path& path) {
  std::string text;
  for (const auto& [slide_id, indices] : plan.selections) {
    text += slide_id;
    text += '\t';
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (i) text += ',';
      text += std::to_string(indices[i]);
    }
    text += '\n';
  }
  write_file_atomic(path, text);
}

inline SamplingPlan read_sampling_plan(const std::filesystem::path& path) {
  SamplingPlan plan;
  std::istringstream lines(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": missing tab separator");
    std::string slide_id = line.substr(0, tab);
    std::vector<std::uint32_t> indices;
    std::istringstream fields(line.substr(tab + 1));
    std::string field;
    while (std::getline(fields, field, ',')) {
      if (field.empty()) throw FormatError(path.string() + ": empty index field for " + slide_id);
      indices.push_back(static_cast<std::uint32_t>(std::stoul(field)));
      if (indices.size() >= 2 && indices[indices.size() - 2] >= indices.back())
        throw FormatError(path.string() + ": indices for " + slide_id + " must be sorted and distinct");
    }
    plan.selections[slide_id] = std::move(indices);
  }
  return plan;
}

}  // namespace msbcr
