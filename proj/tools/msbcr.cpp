// msbcr: multi-section WSI biochemical-recurrence pipeline CLI.
//
// Subcommands: synth, sample, train, infer, evaluate, compare, cox, km, sweep.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include "msbcr/harness.hpp"
#include "msbcr/synth.hpp"

namespace {

using namespace msbcr;

// --------------------------------------------------------------------------
// Shared helpers
// --------------------------------------------------------------------------

std::map<std::string, double> read_scores_csv(const std::filesystem::path& path) {
  std::istringstream lines(read_file(path));
  std::string line;
  std::map<std::string, double> scores;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line == "patient_id,risk_score") continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected patient_id,risk_score");
    scores[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  require(!scores.empty(), path.string() + ": no scores");
  return scores;
}

void write_scores_csv(const std::vector<std::pair<std::string, double>>& scores,
                      const std::filesystem::path& path) {
  std::string out = "patient_id,risk_score\n";
  char line[128];
  for (const auto& [id, s] : scores) {
    std::snprintf(line, sizeof(line), "%s,%.17g\n", id.c_str(), s);
    out += line;
  }
  write_file_atomic(path, out);
}

// Joins scores with endpoint labels; excluded patients drop out.
ScoredCohort join_labeled(const std::map<std::string, double>& scores,
                          const std::vector<PatientRecord>& patients, double horizon) {
  ScoredCohort cohort;
  for (const auto& p : patients) {
    auto it = scores.find(p.patient_id);
    if (it == scores.end()) continue;
    auto label = derive_endpoint_label(p, horizon).value;
    if (label == Endpoint::excluded) continue;
    cohort.scores.push_back(it->second);
    cohort.labels.push_back(label == Endpoint::positive ? 1 : 0);
  }
  require(!cohort.scores.empty(), "no scored patients with a usable label at this horizon");
  return cohort;
}

SlideStrategy parse_slide_strategy(const std::string& text) {
  if (text == "all") return SlideStrategy::all();
  auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string kind = text.substr(0, colon);
    const std::size_t k = std::stoul(text.substr(colon + 1));
    if (kind == "uniform") return SlideStrategy::uniform(k);
    if (kind == "random") return SlideStrategy::random(k);
  }
  throw DataError("slide strategy must be all, uniform:<k>, or random:<k>");
}

std::vector<std::pair<std::string, double>> score_cohort(const EnsembleModel& model, const CohortData& data,
                                                         const std::vector<PatientRecord>& patients,
                                                         double ratio, const SlideStrategy& strategy,
                                                         std::uint64_t seed) {
  std::vector<std::pair<std::string, double>> out(patients.size());
  parallel_for(patients.size(), [&](std::size_t i) {
    out[i] = {patients[i].patient_id,
              ensemble_predict(model, data, patients[i], ratio, strategy, seed)};
  });
  return out;
}

// The train/infer split is recorded next to the ensemble so later stages can
// select the same test patients.
void write_split(const std::vector<PatientRecord>& dev, const std::vector<PatientRecord>& test,
                 const std::filesystem::path& path) {
  std::string out;
  for (const auto& p : dev) out += p.patient_id + "\tdev\n";
  for (const auto& p : test) out += p.patient_id + "\ttest\n";
  write_file_atomic(path, out);
}

std::map<std::string, std::string> read_split(const std::filesystem::path& path) {
  std::map<std::string, std::string> split;
  std::istringstream lines(read_file(path));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed split line: " + line);
    split[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return split;
}

std::vector<PatientRecord> subset_patients(const std::vector<PatientRecord>& patients,
                                           const std::map<std::string, std::string>& split,
                                           const std::string& which) {
  std::vector<PatientRecord> out;
  for (const auto& p : patients) {
    auto it = split.find(p.patient_id);
    if (it != split.end() && it->second == which) out.push_back(p);
  }
  return out;
}

// --------------------------------------------------------------------------
// Subcommand bodies
// --------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& args) {
  SynthConfig cfg = args.cfg;
  cfg.out_dir = args.out;
  synth_cohort(cfg, args.seed);
  std::cout << "wrote " << cfg.patients << " patients, " << cfg.patients * cfg.slides_per_patient
            << " slides to " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string out = "ensemble";
  TrainConfig cfg;
  double split_ratio = 0.7;
  bool no_split = false;
};

int run_train(const TrainArgs& args) {
  CohortData data = load_cohort(args.manifest, args.cfg.kde_bandwidth, args.cfg.kde_mode);
  std::vector<PatientRecord> dev = data.patients, test;
  if (!args.no_split) {
    auto [d, t] = split_cohort(data.patients, args.split_ratio, derive_seed(args.cfg.seed, 0x5917ull));
    dev = std::move(d);
    test = std::move(t);
  }
  CvResult cv = train_cv(dev, data, args.cfg);
  save_ensemble(cv.ensemble, args.out);
  write_split(dev, test, std::filesystem::path(args.out) / "split.txt");
  std::cout << "trained " << cv.ensemble.k() << " fold models (horizon " << args.cfg.horizon
            << " months), median risk " << cv.ensemble.median_risk_score << "\n";
  for (std::size_t f = 0; f < cv.folds.size(); ++f)
    std::cout << "  fold " << f << ": best val AUC " << cv.folds[f].best_val_auc << " at epoch "
              << cv.folds[f].best_epoch << "\n";
  return 0;
}

struct InferArgs {
  std::string ensemble, manifest, out, subset = "all", slides = "all";
  double ratio = 1.0;
  std::uint64_t seed = 0;
};

int run_infer(const InferArgs& args) {
  EnsembleModel model = load_ensemble(args.ensemble);
  CohortData data = load_cohort(args.manifest, model.config.kde_bandwidth, model.config.kde_mode);
  std::vector<PatientRecord> patients = data.patients;
  if (args.subset != "all") {
    auto split = read_split(std::filesystem::path(args.ensemble) / "split.txt");
    patients = subset_patients(patients, split, args.subset);
    require(!patients.empty(), "no patients in subset '" + args.subset + "'");
  }
  auto scores = score_cohort(model, data, patients, args.ratio, parse_slide_strategy(args.slides), args.seed);
  write_scores_csv(scores, args.out);
  std::cout << "scored " << scores.size() << " patients -> " << args.out << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string scores, patients, out;
  double horizon = 24.0;
  std::size_t bootstrap = 2000;
  std::uint64_t seed = 0;
};

int run_evaluate(const EvaluateArgs& args) {
  auto scores = read_scores_csv(args.scores);
  auto patients = read_patients_jsonl(args.patients);
  ScoredCohort cohort = join_labeled(scores, patients, args.horizon);
  const double a = auc(cohort);
  auto [lo, hi] = bootstrap_auc_ci(cohort, args.bootstrap, args.seed);
  std::string report = evaluation_report_json(a, lo, hi, cohort.size(), args.horizon, args.seed);
  if (!args.out.empty()) write_file_atomic(args.out, report);
  std::cout << report;
  return 0;
}

struct CompareArgs {
  std::string a, b, patients;
  double horizon = 24.0;
};

int run_compare(const CompareArgs& args) {
  auto scores_a = read_scores_csv(args.a);
  auto scores_b = read_scores_csv(args.b);
  auto patients = read_patients_jsonl(args.patients);

  ScoredCohort cohort_a, cohort_b;
  for (const auto& p : patients) {
    auto ia = scores_a.find(p.patient_id);
    auto ib = scores_b.find(p.patient_id);
    if (ia == scores_a.end() && ib == scores_b.end()) continue;
    require(ia != scores_a.end() && ib != scores_b.end(),
            "compare: patient " + p.patient_id + " is missing from one score file");
    auto label = derive_endpoint_label(p, args.horizon).value;
    if (label == Endpoint::excluded) continue;
    const int y = label == Endpoint::positive ? 1 : 0;
    cohort_a.scores.push_back(ia->second);
    cohort_a.labels.push_back(y);
    cohort_b.scores.push_back(ib->second);
    cohort_b.labels.push_back(y);
  }
  DelongResult r = delong_test(cohort_a, cohort_b);
  char line[256];
  std::snprintf(line, sizeof(line), "auc_a %.6f\nauc_b %.6f\nz %.6f\np %.6g\n", r.auc_a, r.auc_b, r.z, r.p);
  std::cout << line;
  if (r.degenerate) std::cout << "degenerate 1\n";
  return 0;
}

struct CoxArgs {
  std::string scores, patients, out;
  bool score_only = false;
};

int run_cox(const CoxArgs& args) {
  auto scores = read_scores_csv(args.scores);
  auto patients = read_patients_jsonl(args.patients);
  SurvivalDesign design = build_survival_design(patients, scores, !args.score_only);
  require(!design.records.empty(), "cox: no complete cases");
  CoxFit fit = cox_fit(design.records, design.names);
  std::string report = cox_report_text(fit);
  report += "n " + std::to_string(design.records.size()) + "\n";
  for (const auto& name : design.dropped_constant) report += "dropped_constant " + name + "\n";
  if (!args.out.empty()) write_file_atomic(args.out, report);
  std::cout << report;
  return 0;
}

struct KmArgs {
  std::string scores, patients, train_scores, out_csv, out_svg;
};

int run_km(const KmArgs& args) {
  auto scores = read_scores_csv(args.scores);
  auto train_scores_map = read_scores_csv(args.train_scores.empty() ? args.scores : args.train_scores);
  auto patients = read_patients_jsonl(args.patients);

  std::vector<double> train_scores;
  for (const auto& [id, s] : train_scores_map) train_scores.push_back(s);

  std::vector<double> cohort_scores;
  std::vector<const PatientRecord*> cohort;
  for (const auto& p : patients) {
    auto it = scores.find(p.patient_id);
    if (it == scores.end()) continue;
    cohort.push_back(&p);
    cohort_scores.push_back(it->second);
  }
  require(!cohort.empty(), "km: no scored patients");

  auto groups = stratify_by_median(train_scores, cohort_scores);
  std::vector<double> times_low, times_high;
  std::vector<int> events_low, events_high;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (groups[i] == RiskGroup::low) {
      times_low.push_back(cohort[i]->months);
      events_low.push_back(cohort[i]->event);
    } else {
      times_high.push_back(cohort[i]->months);
      events_high.push_back(cohort[i]->event);
    }
  }
  require(!times_low.empty() && !times_high.empty(), "km: one risk group is empty");

  std::vector<std::pair<std::string, KmCurve>> curves = {
      {"low risk (n=" + std::to_string(times_low.size()) + ")", km_estimate(times_low, events_low)},
      {"high risk (n=" + std::to_string(times_high.size()) + ")", km_estimate(times_high, events_high)}};
  LogrankResult lr = logrank_test(times_low, events_low, times_high, events_high);

  if (!args.out_csv.empty()) write_file_atomic(args.out_csv, km_to_csv(curves));
  if (!args.out_svg.empty()) write_file_atomic(args.out_svg, km_to_svg(curves));
  char line[128];
  std::snprintf(line, sizeof(line), "logrank_chi2 %.6f\nlogrank_p %.6g\n", lr.chi2, lr.p);
  std::cout << line;
  if (lr.degenerate) std::cout << "degenerate 1\n";
  return 0;
}

struct SweepArgs {
  std::string axis = "infer_patch_ratio";
  std::vector<double> grid;
  std::string ensemble, manifest, subset = "all", strategy = "uniform", out_csv, out_svg;
  double horizon = 24.0;
  double patch_ratio = 0.01;
  std::size_t repetitions = 5;
  std::size_t bootstrap = 2000;
  std::uint64_t seed = 0;
  // train axis
  TrainConfig base_config;
  double split_ratio = 0.7;
};

int run_sweep(const SweepArgs& args) {
  SweepSpec spec;
  if (args.axis == "train_patch_ratio")
    spec.axis = SweepAxis::train_patch_ratio;
  else if (args.axis == "infer_patch_ratio")
    spec.axis = SweepAxis::infer_patch_ratio;
  else if (args.axis == "slide_count")
    spec.axis = SweepAxis::slide_count;
  else
    throw DataError("sweep axis must be train_patch_ratio, infer_patch_ratio, or slide_count");
  spec.grid = args.grid;
  spec.horizon = args.horizon;
  spec.seed = args.seed;
  spec.repetitions = args.repetitions;
  spec.bootstrap_iterations = args.bootstrap;
  spec.patch_ratio = args.patch_ratio;
  spec.slide_strategy =
      args.strategy == "random" ? SlideStrategy::Kind::random : SlideStrategy::Kind::uniform;

  SweepContext ctx;
  EnsembleModel model;
  CohortData data;
  std::map<std::string, std::string> split;

  if (spec.axis == SweepAxis::train_patch_ratio) {
    ctx.base_config = args.base_config;
    ctx.base_config.horizon = args.horizon;
    ctx.base_config.seed = args.seed;
    data = load_cohort(args.manifest, ctx.base_config.kde_bandwidth, ctx.base_config.kde_mode);
    auto [dev, test] = split_cohort(data.patients, args.split_ratio, derive_seed(args.seed, 0x5917ull));
    ctx.dev_data = &data;
    ctx.dev_patients = dev;
    ctx.test_data = &data;
    ctx.test_patients = test;
  } else {
    require(!args.ensemble.empty(), "sweep: --ensemble is required for inference axes");
    model = load_ensemble(args.ensemble);
    data = load_cohort(args.manifest, model.config.kde_bandwidth, model.config.kde_mode);
    ctx.model = &model;
    ctx.test_data = &data;
    ctx.test_patients = data.patients;
    if (args.subset != "all") {
      split = read_split(std::filesystem::path(args.ensemble) / "split.txt");
      ctx.test_patients = subset_patients(data.patients, split, args.subset);
      require(!ctx.test_patients.empty(), "sweep: no patients in subset '" + args.subset + "'");
    }
  }

  auto rows = sweep(spec, ctx);
  if (!args.out_csv.empty()) emit_csv(rows, args.out_csv);
  if (!args.out_svg.empty()) emit_svg(rows, args.out_svg);
  std::cout << tradeoff_csv(rows);
  return 0;
}

struct SampleArgs {
  std::string manifest, out;
  double ratio = 0.1;
  double bandwidth = 512.0;
  bool truncated = false;
  std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& args) {
  CohortData data = load_cohort(args.manifest, args.bandwidth,
                                args.truncated ? KdeMode::truncated : KdeMode::exact);
  SamplingPlan plan;
  plan.ratio = args.ratio;
  plan.mode = args.truncated ? KdeMode::truncated : KdeMode::exact;
  for (const auto& [slide_id, profile] : data.profiles)
    plan.selections[slide_id] = sample_patches(profile, args.ratio, derive_seed(args.seed, slide_id));
  write_sampling_plan(plan, args.out);
  std::cout << "sampled " << plan.selections.size() << " slides at ratio " << args.ratio << " -> " << args.out
            << "\n";
  return 0;
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--ratio", cfg.train_patch_ratio, "training patch sub-sampling ratio");
  cmd->add_option("--epochs", cfg.epochs, "training epochs per fold");
  cmd->add_option("--accumulation", cfg.accumulation, "patients per optimizer step");
  cmd->add_option("--lr", cfg.lr, "Adam learning rate");
  cmd->add_option("--weight-decay", cfg.weight_decay, "coupled L2 weight decay");
  cmd->add_option("--dropout", cfg.dropout, "dropout rate");
  cmd->add_option("--folds", cfg.folds, "cross-validation folds");
  cmd->add_option("--embed-dim", cfg.embed_dim, "embedding hidden width");
  cmd->add_option("--attn-dim", cfg.attn_dim, "attention hidden width");
  cmd->add_option("--bandwidth", cfg.kde_bandwidth, "KDE bandwidth in pixels");
  cmd->add_flag_callback("--no-resample", [&cfg] { cfg.resample_each_epoch = false; },
                         "sample training bags once instead of every epoch");
  cmd->add_flag_callback("--truncated-kde", [&cfg] { cfg.kde_mode = KdeMode::truncated; },
                         "use the truncated KDE fast path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-section WSI biochemical-recurrence pipeline"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort");
  synth_cmd->add_option("--patients", synth_args.cfg.patients, "patient count")->required();
  synth_cmd->add_option("--slides", synth_args.cfg.slides_per_patient, "slides per patient");
  synth_cmd->add_option("--patches", synth_args.cfg.patches_per_slide, "patches per slide");
  synth_cmd->add_option("--dim", synth_args.cfg.dim, "embedding width");
  synth_cmd->add_option("--signal", synth_args.cfg.signal, "planted signal strength in [0,1]");
  synth_cmd->add_option("--prevalence", synth_args.cfg.prevalence, "BCR fraction");
  synth_cmd->add_option("--hot-fraction", synth_args.cfg.hot_fraction, "hot patch fraction for positives");
  synth_cmd->add_option("--horizon", synth_args.cfg.horizon, "recurrence horizon in months");
  synth_cmd->add_option("--early-censor", synth_args.cfg.early_censor_fraction,
                        "fraction of negatives censored before the horizon");
  synth_cmd->add_option("--late-event", synth_args.cfg.late_event_fraction,
                        "fraction of negatives recurring after the horizon");
  synth_cmd->add_option("--noise-sd", synth_args.cfg.noise_sd, "embedding noise scale");
  synth_cmd->add_option("--seed", synth_args.seed, "generator seed");
  synth_cmd->add_option("--out", synth_args.out, "output manifest directory")->required();

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "write a density-based sampling plan");
  sample_cmd->add_option("--manifest", sample_args.manifest, "manifest directory")->required();
  sample_cmd->add_option("--ratio", sample_args.ratio, "patch sub-sampling ratio");
  sample_cmd->add_option("--bandwidth", sample_args.bandwidth, "KDE bandwidth in pixels");
  sample_cmd->add_flag("--truncated-kde", sample_args.truncated, "use the truncated KDE fast path");
  sample_cmd->add_option("--seed", sample_args.seed, "sampling seed");
  sample_cmd->add_option("--out", sample_args.out, "output plan file")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a cross-validated ensemble");
  train_cmd->add_option("--manifest", train_args.manifest, "manifest directory")->required();
  train_cmd->add_option("--out", train_args.out, "ensemble output directory");
  train_cmd->add_option("--seed", train_args.cfg.seed, "training seed");
  train_cmd->add_option("--horizon", train_args.cfg.horizon, "endpoint horizon in months (12 or 24)");
  train_cmd->add_option("--split", train_args.split_ratio, "development fraction of the cohort");
  train_cmd->add_flag("--no-split", train_args.no_split, "train on the whole manifest");
  add_train_options(train_cmd, train_args.cfg);

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "score patients with a trained ensemble");
  infer_cmd->add_option("--ensemble", infer_args.ensemble, "ensemble directory")->required();
  infer_cmd->add_option("--manifest", infer_args.manifest, "manifest directory")->required();
  infer_cmd->add_option("--out", infer_args.out, "output scores CSV")->required();
  infer_cmd->add_option("--subset", infer_args.subset, "all, dev, or test");
  infer_cmd->add_option("--ratio", infer_args.ratio, "inference patch sub-sampling ratio");
  infer_cmd->add_option("--slides", infer_args.slides, "all, uniform:<k>, or random:<k>");
  infer_cmd->add_option("--seed", infer_args.seed, "sampling seed");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "AUC with bootstrap confidence interval");
  eval_cmd->add_option("--scores", eval_args.scores, "scores CSV")->required();
  eval_cmd->add_option("--patients", eval_args.patients, "patients.jsonl")->required();
  eval_cmd->add_option("--horizon", eval_args.horizon, "endpoint horizon in months");
  eval_cmd->add_option("--bootstrap", eval_args.bootstrap, "bootstrap iterations");
  eval_cmd->add_option("--seed", eval_args.seed, "bootstrap seed");
  eval_cmd->add_option("--out", eval_args.out, "write the JSON report here");

  CompareArgs compare_args;
  auto* compare_cmd = app.add_subcommand("compare", "DeLong test between two score files");
  compare_cmd->add_option("--a", compare_args.a, "first scores CSV")->required();
  compare_cmd->add_option("--b", compare_args.b, "second scores CSV")->required();
  compare_cmd->add_option("--patients", compare_args.patients, "patients.jsonl")->required();
  compare_cmd->add_option("--horizon", compare_args.horizon, "endpoint horizon in months");
  std::uint64_t unused_seed = 0;
  compare_cmd->add_option("--seed", unused_seed, "accepted for uniformity; this subcommand is deterministic");

  CoxArgs cox_args;
  auto* cox_cmd = app.add_subcommand("cox", "multivariable Cox proportional hazards");
  cox_cmd->add_option("--scores", cox_args.scores, "risk scores CSV")->required();
  cox_cmd->add_option("--patients", cox_args.patients, "patients.jsonl")->required();
  cox_cmd->add_flag("--score-only", cox_args.score_only, "fit the risk score without clinical covariates");
  cox_cmd->add_option("--out", cox_args.out, "write the table here");
  cox_cmd->add_option("--seed", unused_seed, "accepted for uniformity; this subcommand is deterministic");

  KmArgs km_args;
  auto* km_cmd = app.add_subcommand("km", "Kaplan-Meier by median risk stratification");
  km_cmd->add_option("--scores", km_args.scores, "cohort scores CSV")->required();
  km_cmd->add_option("--patients", km_args.patients, "patients.jsonl")->required();
  km_cmd->add_option("--train-scores", km_args.train_scores, "training scores CSV for the median threshold");
  km_cmd->add_option("--out-csv", km_args.out_csv, "KM curve CSV");
  km_cmd->add_option("--out-svg", km_args.out_svg, "KM plot SVG");
  km_cmd->add_option("--seed", unused_seed, "accepted for uniformity; this subcommand is deterministic");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy/time trade-off sweep");
  sweep_cmd->add_option("--axis", sweep_args.axis, "train_patch_ratio, infer_patch_ratio, or slide_count");
  sweep_cmd->add_option("--grid", sweep_args.grid, "grid values")->required()->delimiter(',');
  sweep_cmd->add_option("--ensemble", sweep_args.ensemble, "ensemble directory (inference axes)");
  sweep_cmd->add_option("--manifest", sweep_args.manifest, "manifest directory")->required();
  sweep_cmd->add_option("--subset", sweep_args.subset, "all, dev, or test");
  sweep_cmd->add_option("--strategy", sweep_args.strategy, "uniform or random (slide_count axis)");
  sweep_cmd->add_option("--patch-ratio", sweep_args.patch_ratio, "fixed patch ratio for slide_count axis");
  sweep_cmd->add_option("--horizon", sweep_args.horizon, "endpoint horizon in months");
  sweep_cmd->add_option("--repetitions", sweep_args.repetitions, "timing repetitions");
  sweep_cmd->add_option("--bootstrap", sweep_args.bootstrap, "bootstrap iterations");
  sweep_cmd->add_option("--seed", sweep_args.seed, "sweep seed");
  sweep_cmd->add_option("--split", sweep_args.split_ratio, "development fraction (train axis)");
  sweep_cmd->add_option("--out-csv", sweep_args.out_csv, "trade-off CSV");
  sweep_cmd->add_option("--out-svg", sweep_args.out_svg, "trade-off SVG");
  add_train_options(sweep_cmd, sweep_args.base_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (sample_cmd->parsed()) return run_sample(sample_args);
    if (train_cmd->parsed()) return run_train(train_args);
    if (infer_cmd->parsed()) return run_infer(infer_args);
    if (eval_cmd->parsed()) return run_evaluate(eval_args);
    if (compare_cmd->parsed()) return run_compare(compare_args);
    if (cox_cmd->parsed()) return run_cox(cox_args);
    if (km_cmd->parsed()) return run_km(km_args);
    if (sweep_cmd->parsed()) return run_sweep(sweep_args);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
