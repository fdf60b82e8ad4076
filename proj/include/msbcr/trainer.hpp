#pragma once

// Training orchestration: per-fold training on density-sampled patient bags,
// k-fold cross-validation, and ensemble inference by probability averaging.
// The whole train -> predict pipeline is a pure function of (data, config,
// seed); fold models never see their held-out fold during fitting.

#include <filesystem>
#include <map>

#include "msbcr/cohort.hpp"
#include "msbcr/features.hpp"
#include "msbcr/mil.hpp"
#include "msbcr/sampler.hpp"
#include "msbcr/survstats.hpp"

namespace msbcr {

struct TrainConfig {
  double horizon = 24.0;          // months
  double train_patch_ratio = 0.10;
  std::size_t epochs = 20;
  std::size_t accumulation = 16;  // patients per optimizer step
  double lr = 5e-6;
  double weight_decay = 5e-7;
  double dropout = 0.25;
  std::uint64_t seed = 0;
  bool resample_each_epoch = true;
  std::size_t folds = 5;
  std::size_t embed_dim = 512;
  std::size_t attn_dim = 256;
  double kde_bandwidth = 512.0;   // patch size in level-0 pixels
  KdeMode kde_mode = KdeMode::exact;

  void validate() const {
    require(horizon > 0.0, "train config: horizon must be positive");
    require(train_patch_ratio > 0.0 && train_patch_ratio <= 1.0, "train config: ratio must be in (0,1]");
    require(epochs >= 1, "train config: epochs must be >= 1");
    require(accumulation >= 1, "train config: accumulation must be >= 1");
    require(folds >= 1, "train config: folds must be >= 1");
  }
};

// In-memory dataset: records plus loaded feature blocks and their cached
// density profiles.
struct CohortData {
  std::vector<PatientRecord> patients;
  std::map<std::string, std::vector<SlideRecord>> slides_by_patient;  // sorted by slide_index
  std::map<std::string, FeatureBlock> blocks;                          // slide_id -> block
  std::map<std::string, DensityProfile> profiles;                      // slide_id -> KDE profile
  std::size_t dim = 0;

  const PatientRecord* find_patient(const std::string& id) const {
    for (const auto& p : patients)
      if (p.patient_id == id) return &p;
    return nullptr;
  }
};

namespace detail {

inline void index_slides(CohortData& data) {
  for (auto& [pid, slides] : data.slides_by_patient)
    std::sort(slides.begin(), slides.end(),
              [](const SlideRecord& a, const SlideRecord& b) { return a.slide_index < b.slide_index; });
}

inline void compute_profiles(CohortData& data, double bandwidth, KdeMode mode) {
  std::vector<const std::pair<const std::string, FeatureBlock>*> entries;
  for (const auto& kv : data.blocks) entries.push_back(&kv);
  std::vector<DensityProfile> profiles(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    profiles[i] = patch_probabilities(entries[i]->second.coords, bandwidth, mode);
  });
  for (std::size_t i = 0; i < entries.size(); ++i) data.profiles[entries[i]->first] = std::move(profiles[i]);
}

}  // namespace detail

inline CohortData load_cohort(const std::filesystem::path& manifest_dir, double kde_bandwidth = 512.0,
                              KdeMode mode = KdeMode::exact) {
  CohortData data;
  data.patients = read_patients_jsonl(manifest_dir / "patients.jsonl");
  auto slides = read_slides_jsonl(manifest_dir / "slides.jsonl");
  require(!slides.empty(), "load_cohort: no slides in manifest");

  std::vector<FeatureBlock> blocks(slides.size());
  parallel_for(slides.size(), [&](std::size_t i) {
    blocks[i] = read_feature_block(manifest_dir / slides[i].feature_path);
  });
  for (std::size_t i = 0; i < slides.size(); ++i) {
    if (data.dim == 0) data.dim = blocks[i].dim();
    require(blocks[i].dim() == data.dim, "load_cohort: inconsistent embedding width across slides");
    data.blocks[slides[i].slide_id] = std::move(blocks[i]);
    data.slides_by_patient[slides[i].patient_id].push_back(slides[i]);
  }
  detail::index_slides(data);
  detail::compute_profiles(data, kde_bandwidth, mode);
  return data;
}

// Builds a CohortData from an in-memory synthetic cohort (no file round trip).
template <typename SynthLike>
CohortData cohort_from_synth(const SynthLike& synth, double kde_bandwidth = 512.0, KdeMode mode = KdeMode::exact) {
  CohortData data;
  data.patients = synth.patients;
  for (const auto& s : synth.slides) data.slides_by_patient[s.patient_id].push_back(s);
  data.blocks = synth.blocks;
  for (const auto& [sid, block] : data.blocks) {
    if (data.dim == 0) data.dim = block.dim();
    require(block.dim() == data.dim, "cohort_from_synth: inconsistent embedding width");
  }
  detail::index_slides(data);
  detail::compute_profiles(data, kde_bandwidth, mode);
  return data;
}

// ---------------------------------------------------------------------------
// Bag construction: per-slide density-weighted sampling with per-slide derived seeds, so
// slides can be processed in any order or in parallel.
// ---------------------------------------------------------------------------

struct SlideStrategy {
  enum class Kind { all, uniform, random } kind = Kind::all;
  std::size_t k = 0;

  static SlideStrategy all() { return {}; }
  static SlideStrategy uniform(std::size_t k) { return {Kind::uniform, k}; }
  static SlideStrategy random(std::size_t k) { return {Kind::random, k}; }
};

inline std::vector<SlideRecord> select_slides(const std::vector<SlideRecord>& slides,
                                              const SlideStrategy& strategy, std::uint64_t seed) {
  require(!slides.empty(), "select_slides: patient has no slides");
  if (strategy.kind == SlideStrategy::Kind::all) return slides;
  require(strategy.k >= 1, "select_slides: slide count must be >= 1");
  // a patient with fewer sections than requested contributes everything it has
  const std::size_t k = std::min(strategy.k, slides.size());
  std::vector<std::uint32_t> idx;
  if (strategy.kind == SlideStrategy::Kind::uniform)
    idx = uniform_slide_indices(slides.size(), k);
  else
    idx = random_slide_indices(slides.size(), k, seed);
  std::vector<SlideRecord> out;
  out.reserve(idx.size());
  for (std::uint32_t i : idx) out.push_back(slides[i]);
  return out;
}

inline PatientBag build_bag(const CohortData& data, const PatientRecord& patient, double patch_ratio,
                            const SlideStrategy& strategy, std::uint64_t sample_seed, double horizon) {
  auto it = data.slides_by_patient.find(patient.patient_id);
  require(it != data.slides_by_patient.end() && !it->second.empty(),
          "build_bag: patient " + patient.patient_id + " has no slides");
  const auto slides = select_slides(it->second, strategy, derive_seed(sample_seed, "slide-select"));

  std::vector<std::pair<const FeatureBlock*, std::vector<std::uint32_t>>> picks(slides.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s < slides.size(); ++s) {
    const auto& slide_id = slides[s].slide_id;
    auto block_it = data.blocks.find(slide_id);
    require(block_it != data.blocks.end(), "build_bag: missing feature block for " + slide_id);
    const auto& profile = data.profiles.at(slide_id);
    picks[s].first = &block_it->second;
    picks[s].second = sample_patches(profile, patch_ratio, derive_seed(sample_seed, slide_id));
    total += picks[s].second.size();
  }

  PatientBag bag;
  bag.label = derive_endpoint_label(patient, horizon).value;
  bag.instances = MatD(total, data.dim);
  std::size_t row = 0;
  for (const auto& [block, indices] : picks) {
    for (std::uint32_t idx : indices) {
      const float* src = block->features.row(idx);
      double* dst = bag.instances.row(row++);
      for (std::size_t j = 0; j < data.dim; ++j) dst[j] = static_cast<double>(src[j]);
    }
  }
  return bag;
}

// ---------------------------------------------------------------------------
// Fold training.
// ---------------------------------------------------------------------------

struct FoldResult {
  MilParams params;
  double best_val_auc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t optimizer_steps = 0;
};

inline double score_bag(const MilParams& params, const PatientBag& bag) {
  return forward(params, bag).probs[1];
}

inline FoldResult train_fold(const std::vector<PatientRecord>& train_patients,
                             const std::vector<PatientRecord>& val_patients, const CohortData& data,
                             const TrainConfig& cfg, std::uint64_t fold_seed) {
  cfg.validate();
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& p : train_patients) {
    auto label = derive_endpoint_label(p, cfg.horizon).value;
    if (label == Endpoint::positive) ++n_pos;
    if (label == Endpoint::negative) ++n_neg;
  }
  require(n_pos >= 1 && n_neg >= 1, "train_fold: training set must contain both classes");

  MilParams params = init_mil_params(data.dim, cfg.embed_dim, cfg.attn_dim, derive_seed(fold_seed, "init"));
  AdamState adam = AdamState::for_params(params, cfg.lr, cfg.weight_decay);

  // Validation bags are fixed once so per-epoch AUCs are comparable.
  std::vector<PatientBag> val_bags(val_patients.size());
  std::vector<int> val_labels(val_patients.size());
  parallel_for(val_patients.size(), [&](std::size_t i) {
    val_bags[i] = build_bag(data, val_patients[i], cfg.train_patch_ratio, SlideStrategy::all(),
                            derive_seed(fold_seed, "val-bag", i), cfg.horizon);
    val_labels[i] = val_bags[i].label == Endpoint::positive ? 1 : 0;
  });

  FoldResult best;
  best.best_val_auc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_patients.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(fold_seed, 0x0EDE2ull, epoch));
    shuffle_rng.shuffle(order);

    const std::uint64_t bag_epoch = cfg.resample_each_epoch ? epoch : 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t group = std::min(cfg.accumulation, order.size() - cursor);
      std::vector<PatientBag> bags(group);
      std::vector<Dropout> modes(group);
      parallel_for(group, [&](std::size_t g) {
        const std::size_t pi = order[cursor + g];
        bags[g] = build_bag(data, train_patients[pi], cfg.train_patch_ratio, SlideStrategy::all(),
                            derive_seed(fold_seed, 0xBA6ull, bag_epoch, pi), cfg.horizon);
        modes[g] = cfg.dropout > 0.0
                       ? Dropout::with(cfg.dropout, derive_seed(fold_seed, 0xD20Full, epoch, cursor + g))
                       : Dropout::off();
      });
      accumulate_and_step(adam, params, bags, modes);
      ++best.optimizer_steps;
      cursor += group;
    }

    if (!val_bags.empty()) {
      std::vector<double> val_scores(val_bags.size());
      parallel_for(val_bags.size(), [&](std::size_t i) { val_scores[i] = score_bag(params, val_bags[i]); });
      bool both = false;
      {
        bool pos = false, neg = false;
        for (int l : val_labels) (l ? pos : neg) = true;
        both = pos && neg;
      }
      if (both) {
        const double val_auc = auc({val_scores, val_labels});
        if (val_auc > best.best_val_auc) {
          best.best_val_auc = val_auc;
          best.best_epoch = epoch;
          best.params = params;
        }
        continue;
      }
    }
    // no usable validation signal: keep the latest epoch
    best.params = params;
    best.best_epoch = epoch;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Cross-validated ensemble.
// ---------------------------------------------------------------------------

struct EnsembleModel {
  std::vector<MilParams> models;
  double median_risk_score = 0.5;  // training-cohort median, for stratification
  double horizon = 24.0;
  TrainConfig config;

  std::size_t k() const { return models.size(); }
};

inline std::vector<PatientRecord> labeled_subset(const std::vector<PatientRecord>& patients, double horizon) {
  std::vector<PatientRecord> out;
  for (const auto& p : patients)
    if (derive_endpoint_label(p, horizon).value != Endpoint::excluded) out.push_back(p);
  return out;
}

inline double ensemble_predict(const EnsembleModel& model, const CohortData& data, const PatientRecord& patient,
                               double patch_ratio, const SlideStrategy& strategy, std::uint64_t seed) {
  require(!model.models.empty(), "ensemble_predict: empty ensemble");
  PatientBag bag = build_bag(data, patient, patch_ratio, strategy, derive_seed(seed, patient.patient_id),
                             model.horizon);
  double total = 0.0;
  for (const auto& fold_model : model.models) total += forward(fold_model, bag).probs[1];
  return total / static_cast<double>(model.models.size());
}

struct CvResult {
  EnsembleModel ensemble;
  std::map<std::string, double> oof_scores;  // out-of-fold risk per development patient
  std::vector<FoldResult> folds;
};

inline CvResult train_cv(const std::vector<PatientRecord>& development, const CohortData& data,
                         const TrainConfig& cfg) {
  cfg.validate();
  const auto labeled = labeled_subset(development, cfg.horizon);
  require(labeled.size() >= std::max<std::size_t>(cfg.folds, 2), "train_cv: too few labeled patients");

  std::vector<std::vector<PatientRecord>> folds;
  if (cfg.folds == 1) {
    folds.push_back(labeled);  // degenerate: validate on the training set itself
  } else {
    folds = make_folds(labeled, cfg.folds, derive_seed(cfg.seed, 0xF01Dull));
  }

  CvResult result;
  result.ensemble.horizon = cfg.horizon;
  result.ensemble.config = cfg;

  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<PatientRecord> train;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f || folds.size() == 1) train.insert(train.end(), folds[g].begin(), folds[g].end());
    FoldResult fold = train_fold(train, folds[f], data, cfg, derive_seed(cfg.seed, 0xF07Dull, f));

    // out-of-fold scores: full patch sampling over all slides, inference mode
    std::vector<double> scores(folds[f].size());
    parallel_for(folds[f].size(), [&](std::size_t i) {
      PatientBag bag = build_bag(data, folds[f][i], 1.0, SlideStrategy::all(), 0, cfg.horizon);
      scores[i] = score_bag(fold.params, bag);
    });
    for (std::size_t i = 0; i < folds[f].size(); ++i)
      result.oof_scores[folds[f][i].patient_id] = scores[i];

    result.ensemble.models.push_back(fold.params);
    result.folds.push_back(std::move(fold));
  }

  std::vector<double> oof;
  for (const auto& [pid, s] : result.oof_scores) oof.push_back(s);
  result.ensemble.median_risk_score = median_threshold(oof);
  return result;
}

// ---------------------------------------------------------------------------
// Ensemble directory: fold_<i>.msmp checkpoints plus a text meta file.
// ---------------------------------------------------------------------------

inline void save_ensemble(const EnsembleModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < model.models.size(); ++i)
    write_checkpoint(model.models[i], dir / ("fold_" + std::to_string(i) + ".msmp"));

  char buf[64];
  std::string meta;
  auto put = [&](const std::string& key, const std::string& value) { meta += key + " " + value + "\n"; };
  auto put_num = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    put(key, buf);
  };
  put("k", std::to_string(model.models.size()));
  put_num("horizon", model.horizon);
  put_num("median_risk_score", model.median_risk_score);
  put("seed", std::to_string(model.config.seed));
  put_num("train_patch_ratio", model.config.train_patch_ratio);
  put("epochs", std::to_string(model.config.epochs));
  put("accumulation", std::to_string(model.config.accumulation));
  put_num("lr", model.config.lr);
  put_num("weight_decay", model.config.weight_decay);
  put_num("dropout", model.config.dropout);
  put("resample_each_epoch", model.config.resample_each_epoch ? "1" : "0");
  put("embed_dim", std::to_string(model.config.embed_dim));
  put("attn_dim", std::to_string(model.config.attn_dim));
  put_num("kde_bandwidth", model.config.kde_bandwidth);
  put("kde_mode", model.config.kde_mode == KdeMode::exact ? "exact" : "truncated");
  write_file_atomic(dir / "ensemble.meta", meta);
}

inline EnsembleModel load_ensemble(const std::filesystem::path& dir) {
  std::map<std::string, std::string> kv;
  {
    std::istringstream lines(read_file(dir / "ensemble.meta"));
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      auto space = line.find(' ');
      if (space == std::string::npos) throw FormatError("ensemble.meta: malformed line: " + line);
      kv[line.substr(0, space)] = line.substr(space + 1);
    }
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("ensemble.meta: missing key " + key);
    return it->second;
  };

  EnsembleModel model;
  const std::size_t k = std::stoul(need("k"));
  require(k >= 1, "ensemble.meta: k must be >= 1");
  model.horizon = std::stod(need("horizon"));
  model.median_risk_score = std::stod(need("median_risk_score"));
  model.config.seed = std::stoull(need("seed"));
  model.config.horizon = model.horizon;
  model.config.train_patch_ratio = std::stod(need("train_patch_ratio"));
  model.config.epochs = std::stoul(need("epochs"));
  model.config.accumulation = std::stoul(need("accumulation"));
  model.config.lr = std::stod(need("lr"));
  model.config.weight_decay = std::stod(need("weight_decay"));
  model.config.dropout = std::stod(need("dropout"));
  model.config.resample_each_epoch = need("resample_each_epoch") == "1";
  model.config.embed_dim = std::stoul(need("embed_dim"));
  model.config.attn_dim = std::stoul(need("attn_dim"));
  model.config.kde_bandwidth = std::stod(need("kde_bandwidth"));
  model.config.kde_mode = need("kde_mode") == "truncated" ? KdeMode::truncated : KdeMode::exact;
  model.config.folds = k;

  for (std::size_t i = 0; i < k; ++i)
    model.models.push_back(read_checkpoint(dir / ("fold_" + std::to_string(i) + ".msmp")));
  return model;
}

}  // namespace msbcr
