#pragma once

// Synthetic cohort generator. Stands in for the private clinical dataset:
// covariate distributions follow the published per-group summary statistics,
// and BCR-positive patients carry a planted fraction of "hot" patches whose
// embeddings are shifted by the signal strength along a fixed unit direction.

#include <filesystem>
#include <set>

#include "msbcr/cohort.hpp"
#include "msbcr/features.hpp"

namespace msbcr {

struct SynthConfig {
  std::size_t patients = 200;
  std::size_t slides_per_patient = 8;
  std::size_t patches_per_slide = 200;
  std::size_t dim = 64;
  double signal = 1.0;        // s in [0,1]: embedding shift of hot patches
  double prevalence = 0.38;   // BCR fraction
  double hot_fraction = 0.40; // fraction of patches in tumor-core clusters
  double noise_sd = 0.4;      // embedding noise around the class means
  double horizon = 24.0;      // months; positives recur within this window
  double early_censor_fraction = 0.0;  // negatives censored before the horizon
  double late_event_fraction = 0.15;   // negatives recurring after the horizon
  std::filesystem::path out_dir;       // empty -> in-memory only
};

struct SynthResult {
  std::vector<PatientRecord> patients;
  std::vector<SlideRecord> slides;
  std::map<std::string, FeatureBlock> blocks;  // slide_id -> features
};

namespace detail {

// Per-group (BCR vs non-BCR) covariate statistics of the development cohort.
struct GroupStats {
  double age_mean, age_sd;
  double psa_mean, psa_sd;
  double tumor_mean, tumor_sd;
  // categorical weights include a trailing "missing" slot
  std::vector<double> t_stage;   // T2a,T2b,T2c,T3a,T3b,T4,missing
  std::vector<double> gleason;   // GS6,GS7,GS8,GS9,missing
  std::vector<double> margin;    // complete,residual,missing
  std::vector<double> lymphatic; // negative,positive,missing
  std::vector<double> pos_ln;    // 0,1,2,5,missing
};

inline const GroupStats& bcr_stats() {
  static const GroupStats s = {
      66.42, 5.76, 16.36, 16.06, 33.69, 24.54,
      {16, 1, 66, 58, 74, 3, 5},
      {4, 154, 22, 36, 4},
      {86, 133, 1},
      {166, 51, 3},
      {199, 9, 2, 1, 9},
  };
  return s;
}

inline const GroupStats& non_bcr_stats() {
  static const GroupStats s = {
      66.43, 6.23, 8.72, 6.86, 16.65, 15.61,
      {49, 2, 195, 68, 23, 1, 5},
      {73, 246, 12, 8, 3},
      {259, 81, 2},
      {315, 22, 5},
      {316, 3, 1, 0, 22},
  };
  return s;
}

inline std::size_t draw_categorical(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

inline PatientRecord synth_patient(const std::string& id, bool bcr, const SynthConfig& cfg, Rng& rng) {
  const GroupStats& g = bcr ? bcr_stats() : non_bcr_stats();
  PatientRecord p;
  p.patient_id = id;
  p.event = bcr ? 1 : 0;
  if (bcr) {
    // mean time to BCR 6.98 +/- 6.6 months, kept inside the horizon
    p.months = std::clamp(std::abs(rng.normal(6.98, 6.6)), 0.5, cfg.horizon - 0.5);
  } else if (rng.uniform() < cfg.early_censor_fraction) {
    p.months = 1.0 + rng.uniform() * (cfg.horizon - 2.0);
  } else if (rng.uniform() < cfg.late_event_fraction) {
    // recurrence after the horizon: still class-negative at this endpoint
    p.event = 1;
    p.months = cfg.horizon + rng.uniform() * (96.0 - cfg.horizon);
  } else {
    p.months = cfg.horizon + rng.uniform() * (96.0 - cfg.horizon);
  }

  p.age = rng.normal(g.age_mean, g.age_sd);
  p.psa = std::max(0.1, rng.normal(g.psa_mean, g.psa_sd));
  p.tumor_pct = std::clamp(rng.normal(g.tumor_mean, g.tumor_sd), 0.0, 100.0);

  std::size_t ts = draw_categorical(rng, g.t_stage);
  if (ts < 6) p.t_stage = static_cast<TStage>(ts);
  std::size_t gs = draw_categorical(rng, g.gleason);
  if (gs < 4) p.gleason = static_cast<int>(6 + gs);
  std::size_t mg = draw_categorical(rng, g.margin);
  if (mg < 2) p.margin = static_cast<int>(mg);
  std::size_t ly = draw_categorical(rng, g.lymphatic);
  if (ly < 2) p.lymphatic = static_cast<int>(ly);
  static const int kPosLnValues[] = {0, 1, 2, 5};
  std::size_t ln = draw_categorical(rng, g.pos_ln);
  if (ln < 4) p.pos_ln = kPosLnValues[ln];
  return p;
}

// Patch centers on the 512-pixel grid: a hot_fraction of patches packs into
// tight tumor-core clusters, the rest scatters as diffuse background tissue.
// The cores are where patch density concentrates, so density-weighted sampling favors
// them; in BCR-positive patients they are also the patches carrying signal.
struct SlideGeometry {
  MatF coords;                 // n x 2 level-0 pixel centers
  std::vector<bool> in_core;   // per patch
};

inline SlideGeometry synth_coords(std::size_t n_patches, double core_fraction, Rng& rng) {
  constexpr double kPatch = 512.0;
  // the grid grows with the patch count so the background fill always has room
  const int kGrid = std::max(80, static_cast<int>(std::ceil(2.0 * std::sqrt(static_cast<double>(n_patches)))));

  const std::size_t n_core = std::min(
      n_patches, static_cast<std::size_t>(std::llround(core_fraction * static_cast<double>(n_patches))));
  const std::size_t n_clusters = 2 + static_cast<std::size_t>(rng.uniform_int(3));
  std::vector<std::pair<double, double>> centers(n_clusters);
  for (auto& c : centers) {
    c.first = 12.0 + rng.uniform() * (kGrid - 24);
    c.second = 12.0 + rng.uniform() * (kGrid - 24);
  }
  // spread so a cluster never saturates its own footprint
  const double sigma =
      std::max(1.5, std::sqrt(static_cast<double>(n_core) / static_cast<double>(n_clusters)) / 3.0);

  std::set<std::pair<int, int>> cells;
  std::vector<std::pair<int, int>> core_cells, background_cells;
  while (core_cells.size() < n_core) {
    const auto& c = centers[rng.uniform_int(n_clusters)];
    const std::pair<int, int> cell = {
        std::clamp(static_cast<int>(std::lround(c.first + rng.normal() * sigma)), 0, kGrid - 1),
        std::clamp(static_cast<int>(std::lround(c.second + rng.normal() * sigma)), 0, kGrid - 1)};
    if (cells.insert(cell).second) core_cells.push_back(cell);
  }
  while (core_cells.size() + background_cells.size() < n_patches) {
    const std::pair<int, int> cell = {static_cast<int>(rng.uniform_int(kGrid)),
                                      static_cast<int>(rng.uniform_int(kGrid))};
    if (cells.insert(cell).second) background_cells.push_back(cell);
  }

  SlideGeometry geo;
  geo.coords = MatF(n_patches, 2);
  geo.in_core.assign(n_patches, false);
  std::size_t i = 0;
  for (const auto& [cx, cy] : core_cells) {
    geo.coords(i, 0) = static_cast<float>(cx * kPatch + kPatch / 2);
    geo.coords(i, 1) = static_cast<float>(cy * kPatch + kPatch / 2);
    geo.in_core[i] = true;
    ++i;
  }
  for (const auto& [cx, cy] : background_cells) {
    geo.coords(i, 0) = static_cast<float>(cx * kPatch + kPatch / 2);
    geo.coords(i, 1) = static_cast<float>(cy * kPatch + kPatch / 2);
    ++i;
  }
  return geo;
}

inline FeatureBlock synth_block(const SynthConfig& cfg, bool bcr, Rng& rng) {
  const std::size_t n = cfg.patches_per_slide;
  SlideGeometry geo = synth_coords(n, cfg.hot_fraction, rng);

  FeatureBlock block;
  block.coords = std::move(geo.coords);
  block.features = MatF(n, cfg.dim);
  for (float& v : block.features.data) v = static_cast<float>(rng.normal() * cfg.noise_sd);

  if (bcr && cfg.signal > 0.0) {
    const double shift = cfg.signal / std::sqrt(static_cast<double>(cfg.dim));
    for (std::size_t i = 0; i < n; ++i) {
      if (!geo.in_core[i]) continue;
      for (std::size_t j = 0; j < cfg.dim; ++j) block.features(i, j) += static_cast<float>(shift);
    }
  }
  return block;
}

}  // namespace detail

inline SynthResult synth_cohort(const SynthConfig& cfg, std::uint64_t seed) {
  require(cfg.dim >= 2, "synth_cohort: dim must be >= 2");
  require(cfg.patches_per_slide >= 1, "synth_cohort: need at least one patch per slide");
  require(cfg.patients >= 1 && cfg.slides_per_patient >= 1, "synth_cohort: empty cohort requested");
  require(cfg.signal >= 0.0 && cfg.signal <= 1.0, "synth_cohort: signal must be in [0,1]");
  require(cfg.hot_fraction >= 0.0 && cfg.hot_fraction <= 1.0, "synth_cohort: hot_fraction must be in [0,1]");

  SynthResult result;
  const bool write_files = !cfg.out_dir.empty();
  if (write_files) std::filesystem::create_directories(cfg.out_dir / "features");

  for (std::size_t i = 0; i < cfg.patients; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "P%04zu", i);
    Rng rng(derive_seed(seed, 0x9A71ull, i));
    const bool bcr = rng.uniform() < cfg.prevalence;
    result.patients.push_back(detail::synth_patient(id, bcr, cfg, rng));

    for (std::size_t sl = 0; sl < cfg.slides_per_patient; ++sl) {
      SlideRecord slide;
      slide.patient_id = id;
      slide.slide_id = std::string(id) + "_S" + std::to_string(sl);
      slide.slide_index = static_cast<int>(sl);
      slide.feature_path = "features/" + slide.slide_id + ".mswf";

      Rng slide_rng(derive_seed(seed, 0x511Dull, i, sl));
      FeatureBlock block = detail::synth_block(cfg, bcr, slide_rng);
      if (write_files) write_feature_block(block, cfg.out_dir / slide.feature_path);
      result.blocks[slide.slide_id] = std::move(block);
      result.slides.push_back(std::move(slide));
    }
  }

  if (write_files) {
    write_jsonl(result.patients, cfg.out_dir / "patients.jsonl");
    write_jsonl(result.slides, cfg.out_dir / "slides.jsonl");
  }
  return result;
}

}  // namespace msbcr
