#pragma once

// Cohort data model: patient/slide records, endpoint labeling at a horizon,
// stratified splits and folds, JSONL manifests.

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "msbcr/common.hpp"

namespace msbcr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class TStage { T2a, T2b, T2c, T3a, T3b, T4 };

inline const char* to_string(TStage s) {
  switch (s) {
    case TStage::T2a: return "T2a";
    case TStage::T2b: return "T2b";
    case TStage::T2c: return "T2c";
    case TStage::T3a: return "T3a";
    case TStage::T3b: return "T3b";
    case TStage::T4:  return "T4";
  }
  return "?";
}

inline TStage t_stage_from_string(const std::string& s) {
  if (s == "T2a") return TStage::T2a;
  if (s == "T2b") return TStage::T2b;
  if (s == "T2c") return TStage::T2c;
  if (s == "T3a") return TStage::T3a;
  if (s == "T3b") return TStage::T3b;
  if (s == "T4") return TStage::T4;
  throw DataError("unknown T stage: " + s);
}

struct PatientRecord {
  std::string patient_id;
  int event = 0;        // 1 = BCR observed
  double months = 0.0;  // time to BCR if event=1, else follow-up time

  // Clinical covariates; any may be missing.
  std::optional<double> age;
  std::optional<double> psa;
  std::optional<int> gleason;  // 6..10
  std::optional<TStage> t_stage;
  std::optional<int> margin;      // 1 = residual tumor at margin
  std::optional<int> lymphatic;   // 1 = lymphatic invasion
  std::optional<double> tumor_pct;
  std::optional<int> pos_ln;

  void validate() const {
    require(months >= 0.0, "patient " + patient_id + ": months must be >= 0");
    require(event == 0 || event == 1, "patient " + patient_id + ": event must be 0 or 1");
    if (gleason) require(*gleason >= 6 && *gleason <= 10, "patient " + patient_id + ": gleason out of [6,10]");
    if (tumor_pct) require(*tumor_pct >= 0.0 && *tumor_pct <= 100.0, "patient " + patient_id + ": tumor_pct out of [0,100]");
    if (pos_ln) require(*pos_ln >= 0, "patient " + patient_id + ": pos_ln must be >= 0");
  }
};

struct SlideRecord {
  std::string patient_id;
  std::string slide_id;
  int slide_index = 0;  // anatomical section order within the patient
  std::string feature_path;
};

enum class Endpoint { positive, negative, excluded };

struct EndpointLabel {
  Endpoint value = Endpoint::excluded;
  double horizon = 0.0;  // months
};

// ---------------------------------------------------------------------------
// Endpoint labeling. Censored before the horizon -> excluded: such patients
// carry no usable classification label at that horizon. They stay in the
// survival analyses, which consume (time, event) directly.
// ---------------------------------------------------------------------------

inline EndpointLabel derive_endpoint_label(const PatientRecord& rec, double horizon) {
  require(horizon > 0.0, "horizon must be positive");
  require(rec.months >= 0.0, "months must be >= 0");
  EndpointLabel label;
  label.horizon = horizon;
  if (rec.event == 1 && rec.months <= horizon) {
    label.value = Endpoint::positive;
  } else if (rec.months >= horizon) {
    label.value = Endpoint::negative;
  } else {
    label.value = Endpoint::excluded;
  }
  return label;
}

// ---------------------------------------------------------------------------
// Stratified splitting. The strata are the event flags; within each stratum
// membership is a seeded shuffle. Development size is round(ratio * n) overall,
// apportioned to strata by largest remainder.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> stratum_indices(const std::vector<PatientRecord>& patients, int event) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (patients[i].event == event) idx.push_back(i);
  return idx;
}

}  // namespace detail

inline std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_cohort(
    const std::vector<PatientRecord>& patients, double ratio, std::uint64_t seed) {
  require(!patients.empty(), "split_cohort: empty cohort");
  require(ratio > 0.0 && ratio < 1.0, "split_cohort: ratio must be in (0,1)");

  const std::size_t n = patients.size();
  const std::size_t dev_total = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));

  std::vector<std::vector<std::size_t>> strata = {detail::stratum_indices(patients, 1),
                                                  detail::stratum_indices(patients, 0)};

  // Largest-remainder apportionment of dev_total across strata.
  std::vector<std::size_t> take(strata.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    double exact = ratio * static_cast<double>(strata[s].size());
    take[s] = static_cast<std::size_t>(std::floor(exact));
    take[s] = std::min(take[s], strata[s].size());
    assigned += take[s];
    remainders.push_back({exact - std::floor(exact), s});
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (const auto& [rem, s] : remainders) {
    if (assigned >= dev_total) break;
    if (take[s] < strata[s].size()) {
      ++take[s];
      ++assigned;
    }
  }

  std::vector<PatientRecord> dev, test;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    Rng rng(derive_seed(seed, 0xC0501Dull, s));
    rng.shuffle(strata[s]);
    for (std::size_t i = 0; i < strata[s].size(); ++i) {
      (i < take[s] ? dev : test).push_back(patients[strata[s][i]]);
    }
  }
  return {std::move(dev), std::move(test)};
}

// Stratified k folds: each stratum is shuffled and dealt round-robin, the deal
// position carrying over between strata so fold sizes differ by at most one.
inline std::vector<std::vector<PatientRecord>> make_folds(const std::vector<PatientRecord>& development,
                                                          std::size_t k, std::uint64_t seed) {
  require(k >= 2, "make_folds: k must be >= 2");
  require(development.size() >= k, "make_folds: k exceeds cohort size");

  std::vector<std::vector<PatientRecord>> folds(k);
  std::size_t cursor = 0;
  for (int event : {1, 0}) {
    std::vector<std::size_t> idx = detail::stratum_indices(development, event);
    Rng rng(derive_seed(seed, 0xF01D5ull, static_cast<std::uint64_t>(event)));
    rng.shuffle(idx);
    for (std::size_t i : idx) {
      folds[cursor % k].push_back(development[i]);
      ++cursor;
    }
  }
  return folds;
}

// ---------------------------------------------------------------------------
// JSONL manifests. Missing covariates serialize as null.
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PatientRecord& p) {
  nlohmann::json j;
  j["patient_id"] = p.patient_id;
  j["event"] = p.event;
  j["months"] = p.months;
  j["age"] = p.age ? nlohmann::json(*p.age) : nlohmann::json(nullptr);
  j["psa"] = p.psa ? nlohmann::json(*p.psa) : nlohmann::json(nullptr);
  j["gleason"] = p.gleason ? nlohmann::json(*p.gleason) : nlohmann::json(nullptr);
  j["t_stage"] = p.t_stage ? nlohmann::json(to_string(*p.t_stage)) : nlohmann::json(nullptr);
  j["margin"] = p.margin ? nlohmann::json(*p.margin) : nlohmann::json(nullptr);
  j["lymphatic"] = p.lymphatic ? nlohmann::json(*p.lymphatic) : nlohmann::json(nullptr);
  j["tumor_pct"] = p.tumor_pct ? nlohmann::json(*p.tumor_pct) : nlohmann::json(nullptr);
  j["pos_ln"] = p.pos_ln ? nlohmann::json(*p.pos_ln) : nlohmann::json(nullptr);
  return j;
}

inline PatientRecord patient_from_json(const nlohmann::json& j) {
  PatientRecord p;
  try {
    p.patient_id = j.at("patient_id").get<std::string>();
    p.event = j.at("event").get<int>();
    p.months = j.at("months").get<double>();
    auto opt_num = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    auto opt_int = [&](const char* key) -> std::optional<int> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<int>();
    };
    p.age = opt_num("age");
    p.psa = opt_num("psa");
    p.gleason = opt_int("gleason");
    if (j.contains("t_stage") && !j.at("t_stage").is_null())
      p.t_stage = t_stage_from_string(j.at("t_stage").get<std::string>());
    p.margin = opt_int("margin");
    p.lymphatic = opt_int("lymphatic");
    p.tumor_pct = opt_num("tumor_pct");
    p.pos_ln = opt_int("pos_ln");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed patient record: ") + e.what());
  }
  p.validate();
  return p;
}

inline nlohmann::json to_json(const SlideRecord& s) {
  nlohmann::json j;
  j["patient_id"] = s.patient_id;
  j["slide_id"] = s.slide_id;
  j["slide_index"] = s.slide_index;
  j["feature_path"] = s.feature_path;
  return j;
}

inline SlideRecord slide_from_json(const nlohmann::json& j) {
  SlideRecord s;
  try {
    s.patient_id = j.at("patient_id").get<std::string>();
    s.slide_id = j.at("slide_id").get<std::string>();
    s.slide_index = j.at("slide_index").get<int>();
    s.feature_path = j.at("feature_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed slide record: ") + e.what());
  }
  require(s.slide_index >= 0, "slide " + s.slide_id + ": slide_index must be >= 0");
  return s;
}

template <typename T, typename FromJson>
std::vector<T> read_jsonl(const std::filesystem::path& path, FromJson&& from) {
  std::string bytes = read_file(path);
  std::vector<T> out;
  std::istringstream lines(bytes);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    out.push_back(from(j));
  }
  return out;
}

inline std::vector<PatientRecord> read_patients_jsonl(const std::filesystem::path& path) {
  return read_jsonl<PatientRecord>(path, [](const nlohmann::json& j) { return patient_from_json(j); });
}

inline std::vector<SlideRecord> read_slides_jsonl(const std::filesystem::path& path) {
  auto slides = read_jsonl<SlideRecord>(path, [](const nlohmann::json& j) { return slide_from_json(j); });
  // slide_index must be unique and contiguous from 0 within each patient
  std::map<std::string, std::vector<int>> per_patient;
  for (const auto& s : slides) per_patient[s.patient_id].push_back(s.slide_index);
  for (auto& [pid, idx] : per_patient) {
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] != static_cast<int>(i))
        throw DataError("patient " + pid + ": slide_index values must be contiguous from 0");
  }
  return slides;
}

template <typename T>
void write_jsonl(const std::vector<T>& records, const std::filesystem::path& path) {
  std::string bytes;
  for (const T& r : records) {
    bytes += to_json(r).dump();
    bytes += '\n';
  }
  write_file_atomic(path, bytes);
}

}  // namespace msbcr
