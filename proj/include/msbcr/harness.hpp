#pragma once

// Sweep orchestration for the accuracy/inference-time trade-off: patch-ratio
// sweeps, slide-count sweeps under uniform or random selection, and training
// ratio sweeps. Statistical columns are bit-reproducible given the seed; only
// wall-time varies between runs.

#include <chrono>

#include "msbcr/survstats.hpp"
#include "msbcr/trainer.hpp"

namespace msbcr {

enum class SweepAxis { train_patch_ratio, infer_patch_ratio, slide_count };

struct SweepSpec {
  SweepAxis axis = SweepAxis::infer_patch_ratio;
  std::vector<double> grid;  // ratios in (0,1] or slide counts >= 1
  SlideStrategy::Kind slide_strategy = SlideStrategy::Kind::uniform;  // slide_count axis
  double patch_ratio = 0.01;  // fixed patch ratio for the slide_count axis
  double horizon = 24.0;
  std::uint64_t seed = 0;
  std::size_t repetitions = 5;  // timing repetitions per grid point
  std::size_t bootstrap_iterations = 2000;

  void validate() const {
    require(!grid.empty(), "sweep: empty grid");
    for (double v : grid) {
      if (axis == SweepAxis::slide_count)
        require(v >= 1.0 && v == std::floor(v), "sweep: slide counts must be integers >= 1");
      else
        require(v > 0.0 && v <= 1.0, "sweep: ratios must be in (0,1]");
    }
    require(repetitions >= 1, "sweep: repetitions must be >= 1");
  }
};

struct TradeoffRow {
  double axis_value = 0.0;
  double auc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double mean_seconds = 0.0;  // wall time per patient; median over repetitions
  std::size_t n = 0;          // patients evaluated

  bool operator==(const TradeoffRow& o) const = default;
};

namespace detail {

struct ScoredPatients {
  std::vector<double> scores;
  std::vector<int> labels;
  double seconds_per_patient = 0.0;
};

// One inference pass over the labeled cohort. Timing covers sampling plus
// model evaluation (features are already resident), per the compute trade-off
// being measured; scores are deterministic given the seed.
inline ScoredPatients run_inference(const EnsembleModel& model, const CohortData& data,
                                    const std::vector<PatientRecord>& patients, double patch_ratio,
                                    const SlideStrategy& strategy, std::uint64_t seed) {
  ScoredPatients out;
  out.scores.resize(patients.size());
  out.labels.resize(patients.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(patients.size(), [&](std::size_t i) {
    out.scores[i] = ensemble_predict(model, data, patients[i], patch_ratio, strategy, seed);
    out.labels[i] = derive_endpoint_label(patients[i], model.horizon).value == Endpoint::positive ? 1 : 0;
  });
  const auto stop = std::chrono::steady_clock::now();
  out.seconds_per_patient = std::chrono::duration<double>(stop - start).count() /
                            static_cast<double>(std::max<std::size_t>(1, patients.size()));
  return out;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

struct SweepContext {
  const CohortData* test_data = nullptr;
  std::vector<PatientRecord> test_patients;
  const EnsembleModel* model = nullptr;     // inference axes
  const CohortData* dev_data = nullptr;     // train_patch_ratio axis
  std::vector<PatientRecord> dev_patients;
  TrainConfig base_config;
};

inline std::vector<TradeoffRow> sweep(const SweepSpec& spec, const SweepContext& ctx) {
  spec.validate();
  require(ctx.test_data != nullptr, "sweep: test cohort required");
  const auto labeled = labeled_subset(ctx.test_patients, spec.horizon);
  require(!labeled.empty(), "sweep: no labeled test patients at this horizon");

  std::vector<TradeoffRow> rows;
  for (std::size_t gi = 0; gi < spec.grid.size(); ++gi) {
    const double value = spec.grid[gi];

    const EnsembleModel* model = ctx.model;
    EnsembleModel trained;
    double patch_ratio = 1.0;
    SlideStrategy strategy = SlideStrategy::all();

    switch (spec.axis) {
      case SweepAxis::train_patch_ratio: {
        require(ctx.dev_data != nullptr && !ctx.dev_patients.empty(), "sweep: development cohort required");
        TrainConfig cfg = ctx.base_config;
        cfg.horizon = spec.horizon;
        cfg.train_patch_ratio = value;
        trained = train_cv(ctx.dev_patients, *ctx.dev_data, cfg).ensemble;
        model = &trained;
        patch_ratio = 1.0;  // evaluation always uses full patch sampling on this axis
        break;
      }
      case SweepAxis::infer_patch_ratio:
        require(model != nullptr, "sweep: trained ensemble required");
        require(model->horizon == spec.horizon, "sweep: model and sweep horizons must match");
        patch_ratio = value;
        break;
      case SweepAxis::slide_count:
        require(model != nullptr, "sweep: trained ensemble required");
        require(model->horizon == spec.horizon, "sweep: model and sweep horizons must match");
        patch_ratio = spec.patch_ratio;
        strategy = spec.slide_strategy == SlideStrategy::Kind::random
                       ? SlideStrategy::random(static_cast<std::size_t>(value))
                       : SlideStrategy::uniform(static_cast<std::size_t>(value));
        break;
    }

    const std::uint64_t point_seed = derive_seed(spec.seed, 0x53EEull, gi);
    auto scored = detail::run_inference(*model, *ctx.test_data, labeled, patch_ratio, strategy, point_seed);

    std::vector<double> rep_seconds = {scored.seconds_per_patient};
    for (std::size_t rep = 1; rep < spec.repetitions; ++rep) {
      auto timed = detail::run_inference(*model, *ctx.test_data, labeled, patch_ratio, strategy, point_seed);
      rep_seconds.push_back(timed.seconds_per_patient);
    }

    TradeoffRow row;
    row.axis_value = value;
    row.n = labeled.size();
    row.auc = auc({scored.scores, scored.labels});
    auto [lo, hi] = bootstrap_auc_ci({scored.scores, scored.labels}, spec.bootstrap_iterations,
                                     derive_seed(point_seed, 0xB007ull));
    row.ci_low = lo;
    row.ci_high = hi;
    row.mean_seconds = detail::median_of(rep_seconds);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV emission; %.17g keeps the parse round trip exact.
// ---------------------------------------------------------------------------

inline constexpr const char* kTradeoffCsvHeader = "axis,auc,ci_low,ci_high,mean_seconds,n";

inline std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  require(!rows.empty(), "emit_csv: no rows");
  std::string out = std::string(kTradeoffCsvHeader) + "\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", r.axis_value, r.auc, r.ci_low,
                  r.ci_high, r.mean_seconds, r.n);
    out += line;
  }
  return out;
}

inline void emit_csv(const std::vector<TradeoffRow>& rows, const std::filesystem::path& path) {
  write_file_atomic(path, tradeoff_csv(rows));
}

inline std::vector<TradeoffRow> parse_tradeoff_csv(const std::filesystem::path& path) {
  std::istringstream lines(read_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(lines, line)), "tradeoff csv: empty file");
  if (line != kTradeoffCsvHeader) throw FormatError("tradeoff csv: unexpected header: " + line);
  std::vector<TradeoffRow> rows;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    TradeoffRow r;
    unsigned long long n = 0;
    if (std::sscanf(line.c_str(), "%lg,%lg,%lg,%lg,%lg,%llu", &r.axis_value, &r.auc, &r.ci_low, &r.ci_high,
                    &r.mean_seconds, &n) != 6)
      throw FormatError("tradeoff csv: malformed row: " + line);
    r.n = static_cast<std::size_t>(n);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Dual-axis SVG: AUC with its CI band on the left axis, wall time on the
// right. Grid points are laid out evenly; bytes are deterministic for
// identical rows.
// ---------------------------------------------------------------------------

inline std::string tradeoff_svg(const std::vector<TradeoffRow>& rows) {
  require(!rows.empty(), "emit_svg: no rows");
  const double width = 640, height = 420;
  const double left = 60, right = 64, top = 24, bottom = 56;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = rows.size();

  double t_max = 1e-12;
  for (const auto& r : rows) t_max = std::max(t_max, r.mean_seconds);

  auto px = [&](std::size_t i) {
    return n == 1 ? left + plot_w / 2 : left + plot_w * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  auto py_auc = [&](double a) { return top + plot_h * (1.0 - a); };
  auto py_time = [&](double t) { return top + plot_h * (1.0 - t / t_max); };
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  auto label = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\" font-family=\"Helvetica,sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double a = i / 5.0;
    svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(py_auc(a)) + "\" x2=\"" + num(left + plot_w) +
           "\" y2=\"" + num(py_auc(a)) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + num(left - 8) + "\" y=\"" + num(py_auc(a) + 4) + "\" text-anchor=\"end\">" + num(a) +
           "</text>\n";
    svg += "<text x=\"" + num(left + plot_w + 8) + "\" y=\"" + num(py_auc(a) + 4) +
           "\" text-anchor=\"start\" fill=\"#b2182b\">" + num(a * t_max) + "</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    svg += "<text x=\"" + num(px(i)) + "\" y=\"" + num(top + plot_h + 18) + "\" text-anchor=\"middle\">" +
           label(rows[i].axis_value) + "</text>\n";
  }
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" +
         num(top + plot_h) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + num(left + plot_w) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left + plot_w) +
         "\" y2=\"" + num(top + plot_h) + "\" stroke=\"#b2182b\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + plot_h) + "\" x2=\"" + num(left + plot_w) +
         "\" y2=\"" + num(top + plot_h) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  // CI band
  std::string band = "M" + num(px(0)) + " " + num(py_auc(rows[0].ci_high));
  for (std::size_t i = 1; i < n; ++i) band += " L" + num(px(i)) + " " + num(py_auc(rows[i].ci_high));
  for (std::size_t i = n; i-- > 0;) band += " L" + num(px(i)) + " " + num(py_auc(rows[i].ci_low));
  band += " Z";
  svg += "<path d=\"" + band + "\" fill=\"#2166ac\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";

  std::string auc_path = "M" + num(px(0)) + " " + num(py_auc(rows[0].auc));
  for (std::size_t i = 1; i < n; ++i) auc_path += " L" + num(px(i)) + " " + num(py_auc(rows[i].auc));
  svg += "<path d=\"" + auc_path + "\" fill=\"none\" stroke=\"#2166ac\" stroke-width=\"2\"/>\n";

  std::string time_path = "M" + num(px(0)) + " " + num(py_time(rows[0].mean_seconds));
  for (std::size_t i = 1; i < n; ++i) time_path += " L" + num(px(i)) + " " + num(py_time(rows[i].mean_seconds));
  svg += "<path d=\"" + time_path +
         "\" fill=\"none\" stroke=\"#b2182b\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n";

  for (std::size_t i = 0; i < n; ++i) {
    svg += "<circle cx=\"" + num(px(i)) + "\" cy=\"" + num(py_auc(rows[i].auc)) +
           "\" r=\"3\" fill=\"#2166ac\"/>\n";
    svg += "<circle cx=\"" + num(px(i)) + "\" cy=\"" + num(py_time(rows[i].mean_seconds)) +
           "\" r=\"3\" fill=\"#b2182b\"/>\n";
  }
  svg += "<text x=\"" + num(left + plot_w / 2) + "\" y=\"" + num(height - 12) +
         "\" text-anchor=\"middle\">sweep value</text>\n";
  svg += "<text x=\"16\" y=\"" + num(top + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(top + plot_h / 2) + ")\" fill=\"#2166ac\">AUC</text>\n";
  svg += "<text x=\"" + num(width - 14) + "\" y=\"" + num(top + plot_h / 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(90 " + num(width - 14) + " " + num(top + plot_h / 2) +
         ")\" fill=\"#b2182b\">seconds/patient</text>\n";
  svg += "</svg>\n";
  return svg;
}

inline void emit_svg(const std::vector<TradeoffRow>& rows, const std::filesystem::path& path) {
  write_file_atomic(path, tradeoff_svg(rows));
}

}  // namespace msbcr
