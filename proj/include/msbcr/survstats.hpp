#pragma once

// Survival and ROC statistics: Mann-Whitney AUC, percentile-bootstrap CIs,
// DeLong's paired test, Cox proportional hazards (Efron ties, Newton),
// Harrell's C, Kaplan-Meier with Greenwood bands, two-group log-rank, and
// median-threshold risk stratification.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "msbcr/cohort.hpp"
#include "msbcr/common.hpp"

namespace msbcr {

struct ScoredCohort {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = positive class

  std::size_t size() const { return scores.size(); }
};

namespace detail {

// Two-sided tail of the standard normal.
inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Upper tail of chi-square with 1 df.
inline double chi2_1df_p(double chi2) { return std::erfc(std::sqrt(std::max(chi2, 0.0) / 2.0)); }

// 1-based midranks (ties get the average rank).
inline std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

inline void check_two_classes(const ScoredCohort& cohort, const char* who) {
  require(cohort.scores.size() == cohort.labels.size(), std::string(who) + ": scores/labels length mismatch");
  require(!cohort.scores.empty(), std::string(who) + ": empty cohort");
  for (double s : cohort.scores)
    if (!std::isfinite(s)) throw DataError(std::string(who) + ": non-finite score");
  bool has_pos = false, has_neg = false;
  for (int l : cohort.labels) (l == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw DataError(std::string(who) + ": both classes must be present");
}

// DeLong structural components: per-positive and per-negative placements.
struct Placements {
  std::vector<double> v10;  // one per positive
  std::vector<double> v01;  // one per negative
  double auc = 0.0;
};

inline Placements placements(const ScoredCohort& cohort) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    (cohort.labels[i] == 1 ? pos : neg).push_back(cohort.scores[i]);
  const std::size_t m = pos.size(), n = neg.size();

  std::vector<double> combined = pos;
  combined.insert(combined.end(), neg.begin(), neg.end());
  std::vector<double> rank_all = midranks(combined);
  std::vector<double> rank_pos = midranks(pos);
  std::vector<double> rank_neg = midranks(neg);

  Placements p;
  p.v10.resize(m);
  p.v01.resize(n);
  for (std::size_t i = 0; i < m; ++i) p.v10[i] = (rank_all[i] - rank_pos[i]) / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) p.v01[j] = 1.0 - (rank_all[m + j] - rank_neg[j]) / static_cast<double>(m);

  // Rank-sum AUC with an exact numerator: midranks are half-integers, so the
  // accumulated wins count is exact in double and the single division is
  // correctly rounded.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) rank_sum += rank_all[i];
  const double wins = rank_sum - 0.5 * static_cast<double>(m) * static_cast<double>(m + 1);
  p.auc = wins / (static_cast<double>(m) * static_cast<double>(n));
  return p;
}

inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const double ma = pairwise_sum(a) / static_cast<double>(n);
  const double mb = pairwise_sum(b) / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - ma) * (b[i] - mb);
  return acc / static_cast<double>(n - 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// AUC: Mann-Whitney with midranks, ties count one half.
// ---------------------------------------------------------------------------

inline double auc(const ScoredCohort& cohort) {
  detail::check_two_classes(cohort, "auc");
  return detail::placements(cohort).auc;
}

// Percentile bootstrap (2.5/97.5) over patient-level resamples. Resamples
// missing a class are redrawn from the same stream. Iterations run in
// parallel into fixed slots; the percentile pass is a fixed-order sort.
inline std::pair<double, double> bootstrap_auc_ci(const ScoredCohort& cohort, std::size_t iterations,
                                                  std::uint64_t seed) {
  detail::check_two_classes(cohort, "bootstrap_auc_ci");
  require(iterations >= 1, "bootstrap_auc_ci: iterations must be >= 1");
  const std::size_t n = cohort.size();

  std::vector<double> stats(iterations);
  parallel_for(iterations, [&](std::size_t it) {
    Rng rng(derive_seed(seed, 0xB007ull, it));
    ScoredCohort resample;
    resample.scores.resize(n);
    resample.labels.resize(n);
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 10000) throw NumericError("bootstrap_auc_ci: cannot draw a two-class resample");
      bool has_pos = false, has_neg = false;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(n));
        resample.scores[i] = cohort.scores[j];
        resample.labels[i] = cohort.labels[j];
        (resample.labels[i] == 1 ? has_pos : has_neg) = true;
      }
      if (has_pos && has_neg) break;
    }
    stats[it] = auc(resample);
  });

  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double h = q * static_cast<double>(stats.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    const double frac = h - std::floor(h);
    return stats[lo] + frac * (stats[hi] - stats[lo]);
  };
  return {quantile(0.025), quantile(0.975)};
}

// ---------------------------------------------------------------------------
// DeLong's test for two correlated ROC curves over the same patients.
// ---------------------------------------------------------------------------

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double z = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero variance with equal AUCs
};

inline DelongResult delong_test(const ScoredCohort& a, const ScoredCohort& b) {
  detail::check_two_classes(a, "delong_test");
  detail::check_two_classes(b, "delong_test");
  require(a.size() == b.size(), "delong_test: cohorts must cover identical patients");
  require(a.labels == b.labels, "delong_test: cohorts must carry identical labels");

  auto pa = detail::placements(a);
  auto pb = detail::placements(b);
  const double m = static_cast<double>(pa.v10.size());
  const double n = static_cast<double>(pa.v01.size());

  const double s10 = detail::sample_cov(pa.v10, pa.v10) + detail::sample_cov(pb.v10, pb.v10) -
                     2.0 * detail::sample_cov(pa.v10, pb.v10);
  const double s01 = detail::sample_cov(pa.v01, pa.v01) + detail::sample_cov(pb.v01, pb.v01) -
                     2.0 * detail::sample_cov(pa.v01, pb.v01);
  const double var = s10 / m + s01 / n;

  DelongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  if (var <= 0.0 || !std::isfinite(var)) {
    if (pa.auc == pb.auc) {
      r.z = 0.0;
      r.p = 1.0;
      r.degenerate = true;
      return r;
    }
    throw NumericError("delong_test: zero variance with unequal AUCs");
  }
  r.z = (pa.auc - pb.auc) / std::sqrt(var);
  r.p = detail::normal_two_sided_p(r.z);
  return r;
}

// ---------------------------------------------------------------------------
// Cox proportional hazards: Efron tie correction, Newton-Raphson with step
// halving, observed-information covariance, Wald tests, Harrell's C.
// ---------------------------------------------------------------------------

struct SurvivalRecord {
  double time = 0.0;
  int event = 0;
  std::vector<double> covariates;
};

struct CoxTerm {
  std::string name;
  double beta = 0.0;
  double se = 0.0;
  double hr = 1.0;
  double hr_lo = 0.0;
  double hr_hi = 0.0;
  double wald_p = 1.0;
};

struct CoxFit {
  std::vector<CoxTerm> terms;
  MatD covariance;  // inverse observed information
  double log_likelihood = 0.0;
  double c_index = 0.5;
  int iterations = 0;
  bool converged = false;
  std::string trace;
};

namespace detail {

// Cholesky factorization of a symmetric positive-definite matrix. Returns the
// index of the first failing pivot, or -1 on success.
inline int cholesky(const MatD& a, MatD& l) {
  const std::size_t p = a.rows;
  l = MatD(p, p);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(acc > 1e-12 * std::max(1.0, std::abs(a(i, i))))) return static_cast<int>(i);
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return -1;
}

inline std::vector<double> cholesky_solve(const MatD& l, const std::vector<double>& b) {
  const std::size_t p = l.rows;
  std::vector<double> y(p), x(p);
  for (std::size_t i = 0; i < p; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
    y[i] = acc / l(i, i);
  }
  for (std::size_t ii = p; ii-- > 0;) {
    double acc = y[ii];
    for (std::size_t k = ii + 1; k < p; ++k) acc -= l(k, ii) * x[k];
    x[ii] = acc / l(ii, ii);
  }
  return x;
}

inline MatD cholesky_inverse(const MatD& l) {
  const std::size_t p = l.rows;
  MatD inv(p, p);
  std::vector<double> e(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    std::vector<double> col = cholesky_solve(l, e);
    for (std::size_t i = 0; i < p; ++i) inv(i, j) = col[i];
  }
  // symmetrize against round-off
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = inv(j, i) = v;
    }
  return inv;
}

struct CoxObjective {
  double ll = 0.0;
  std::vector<double> grad;
  MatD info;  // observed information (negative Hessian)
};

// Efron partial likelihood, gradient, and information in one sweep over event
// times in decreasing order (the risk set grows as subjects enter).
inline CoxObjective cox_objective(const std::vector<SurvivalRecord>& recs, const std::vector<double>& beta) {
  const std::size_t n = recs.size();
  const std::size_t p = beta.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return recs[a].time > recs[b].time; });

  std::vector<double> eta(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) acc += beta[j] * recs[i].covariates[j];
    eta[i] = acc;
    r[i] = std::exp(acc);
  }

  CoxObjective out;
  out.grad.assign(p, 0.0);
  out.info = MatD(p, p);

  double s0 = 0.0;
  std::vector<double> s1(p, 0.0);
  MatD s2(p, p);

  auto add_subject = [&](std::size_t i) {
    s0 += r[i];
    const auto& x = recs[i].covariates;
    for (std::size_t a = 0; a < p; ++a) {
      s1[a] += r[i] * x[a];
      for (std::size_t b = 0; b <= a; ++b) s2(a, b) += r[i] * x[a] * x[b];
    }
  };

  std::vector<double> d_s1(p), u(p);
  MatD d_s2(p, p);

  std::size_t i = 0;
  while (i < n) {
    // all subjects with this time enter the risk set together
    const double t = recs[order[i]].time;
    std::size_t j = i;
    std::vector<std::size_t> deaths;
    while (j < n && recs[order[j]].time == t) {
      add_subject(order[j]);
      if (recs[order[j]].event == 1) deaths.push_back(order[j]);
      ++j;
    }
    i = j;
    if (deaths.empty()) continue;

    const double d = static_cast<double>(deaths.size());
    double d_s0 = 0.0;
    std::fill(d_s1.begin(), d_s1.end(), 0.0);
    d_s2 = MatD(p, p);
    for (std::size_t k : deaths) {
      out.ll += eta[k];
      d_s0 += r[k];
      const auto& x = recs[k].covariates;
      for (std::size_t a = 0; a < p; ++a) {
        out.grad[a] += x[a];
        d_s1[a] += r[k] * x[a];
        for (std::size_t b = 0; b <= a; ++b) d_s2(a, b) += r[k] * x[a] * x[b];
      }
    }

    for (std::size_t l = 0; l < deaths.size(); ++l) {
      const double f = static_cast<double>(l) / d;
      const double phi = s0 - f * d_s0;
      out.ll -= std::log(phi);
      for (std::size_t a = 0; a < p; ++a) u[a] = (s1[a] - f * d_s1[a]) / phi;
      for (std::size_t a = 0; a < p; ++a) {
        out.grad[a] -= u[a];
        for (std::size_t b = 0; b <= a; ++b)
          out.info(a, b) += (s2(a, b) - f * d_s2(a, b)) / phi - u[a] * u[b];
      }
    }
  }

  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a + 1; b < p; ++b) out.info(a, b) = out.info(b, a);
  return out;
}

}  // namespace detail

inline double harrell_c(const std::vector<double>& times, const std::vector<int>& events,
                        const std::vector<double>& risks);

inline CoxFit cox_fit(const std::vector<SurvivalRecord>& records, const std::vector<std::string>& names) {
  require(!records.empty(), "cox_fit: no records");
  const std::size_t p = names.size();
  require(p >= 1, "cox_fit: no covariates");
  std::size_t n_events = 0;
  std::map<double, int> event_times;
  for (const auto& r : records) {
    require(r.time >= 0.0, "cox_fit: negative time");
    require(r.covariates.size() == p, "cox_fit: covariate width mismatch");
    for (double v : r.covariates)
      if (!std::isfinite(v)) throw DataError("cox_fit: non-finite covariate (filter incomplete cases first)");
    if (r.event == 1) {
      ++n_events;
      event_times[r.time] = 1;
    }
  }
  require(event_times.size() >= 2, "cox_fit: need at least 2 distinct event times");

  // per-covariate scale, for scale-free divergence detection
  std::vector<double> covariate_sd(p, 0.0);
  {
    const double n = static_cast<double>(records.size());
    std::vector<double> mean(p, 0.0);
    for (const auto& r : records)
      for (std::size_t a = 0; a < p; ++a) mean[a] += r.covariates[a] / n;
    for (const auto& r : records)
      for (std::size_t a = 0; a < p; ++a) {
        const double d = r.covariates[a] - mean[a];
        covariate_sd[a] += d * d / n;
      }
    for (double& v : covariate_sd) v = std::sqrt(v);
  }

  std::vector<double> beta(p, 0.0);
  auto obj = detail::cox_objective(records, beta);

  // Rank check at the null: a failing Cholesky pivot names the dependent column.
  {
    MatD l;
    int bad = detail::cholesky(obj.info, l);
    if (bad >= 0)
      throw DataError("cox_fit: design matrix rank deficient at column '" + names[static_cast<std::size_t>(bad)] +
                      "'");
  }

  CoxFit fit;
  std::ostringstream trace;
  const int max_iter = 100;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    double max_score = 0.0;
    for (double g : obj.grad) max_score = std::max(max_score, std::abs(g));
    trace << "iter " << iter << ": ll=" << obj.ll << " max|score|=" << max_score << "\n";
    if (max_score < 1e-8) {
      fit.converged = true;
      break;
    }

    MatD l;
    int bad = detail::cholesky(obj.info, l);
    if (bad >= 0)
      throw NumericError("cox_fit: information matrix not positive definite at column '" +
                         names[static_cast<std::size_t>(bad)] + "'\n" + trace.str());
    std::vector<double> step = detail::cholesky_solve(l, obj.grad);

    double scale = 1.0;
    std::vector<double> candidate(p);
    detail::CoxObjective next;
    for (int halving = 0; halving < 40; ++halving) {
      for (std::size_t a = 0; a < p; ++a) candidate[a] = beta[a] + scale * step[a];
      next = detail::cox_objective(records, candidate);
      if (std::isfinite(next.ll) && next.ll >= obj.ll) break;
      scale *= 0.5;
    }
    if (!std::isfinite(next.ll))
      throw NumericError("cox_fit: partial likelihood not finite along the Newton direction\n" + trace.str());
    const double rel_change = std::abs(next.ll - obj.ll) / (std::abs(obj.ll) + 1e-10);
    beta = candidate;
    obj = std::move(next);

    // |beta| * sd(x) is the per-sd log-hazard span; values this large only
    // arise when the likelihood is monotone in beta
    for (std::size_t a = 0; a < p; ++a)
      if (std::abs(beta[a]) * covariate_sd[a] > 30.0)
        throw NumericError("cox_fit: coefficient '" + names[a] + "' diverges (monotone partial likelihood)\n" +
                           trace.str());
    if (rel_change < 1e-10) {
      fit.converged = true;
      ++iter;
      break;
    }
  }
  if (!fit.converged)
    throw NumericError("cox_fit: no convergence in " + std::to_string(max_iter) + " iterations\n" + trace.str());

  fit.iterations = iter;
  fit.trace = trace.str();
  fit.log_likelihood = obj.ll;

  MatD l;
  int bad = detail::cholesky(obj.info, l);
  if (bad >= 0) throw NumericError("cox_fit: information matrix singular at the optimum");
  fit.covariance = detail::cholesky_inverse(l);

  fit.terms.resize(p);
  for (std::size_t a = 0; a < p; ++a) {
    CoxTerm& t = fit.terms[a];
    t.name = names[a];
    t.beta = beta[a];
    t.se = std::sqrt(std::max(fit.covariance(a, a), 0.0));
    t.hr = std::exp(t.beta);
    t.hr_lo = std::exp(t.beta - 1.959963984540054 * t.se);
    t.hr_hi = std::exp(t.beta + 1.959963984540054 * t.se);
    t.wald_p = t.se > 0.0 ? detail::normal_two_sided_p(t.beta / t.se) : 1.0;
    // Monotone likelihood: the standardized coefficient walks out while its
    // standard error explodes, so the Wald statistic collapses.
    const double scaled_beta = std::abs(t.beta) * covariate_sd[a];
    const double scaled_se = t.se * covariate_sd[a];
    if (scaled_beta > 5.0 && scaled_se > 100.0 * std::max(1.0, scaled_beta))
      throw NumericError("cox_fit: coefficient '" + t.name +
                         "' diverges with unbounded variance (monotone partial likelihood / perfect "
                         "separation)\n" +
                         trace.str());
  }

  std::vector<double> times, risks;
  std::vector<int> events;
  for (const auto& r : records) {
    times.push_back(r.time);
    events.push_back(r.event);
    double acc = 0.0;
    for (std::size_t a = 0; a < p; ++a) acc += beta[a] * r.covariates[a];
    risks.push_back(acc);
  }
  fit.c_index = harrell_c(times, events, risks);
  return fit;
}

// ---------------------------------------------------------------------------
// Harrell's C. A pair is comparable iff the shorter time ends in an event;
// risk ties count one half. Sweep in decreasing time order with a Fenwick
// tree over risk ranks, so equal times never pair up.
// ---------------------------------------------------------------------------

namespace detail {

struct Fenwick {
  std::vector<std::int64_t> tree;
  explicit Fenwick(std::size_t n) : tree(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  }
  std::int64_t prefix(std::size_t count) const {  // sum of the first `count` ranks
    std::int64_t s = 0;
    for (std::size_t i = count; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  }
};

}  // namespace detail

inline double harrell_c(const std::vector<double>& times, const std::vector<int>& events,
                        const std::vector<double>& risks) {
  const std::size_t n = times.size();
  require(events.size() == n && risks.size() == n, "harrell_c: length mismatch");
  for (double t : times) require(t >= 0.0, "harrell_c: negative time");
  for (double r : risks) require(std::isfinite(r), "harrell_c: non-finite risk");

  // dense risk ranks
  std::vector<double> sorted_risks = risks;
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
                                    sorted_risks.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  detail::Fenwick fen(sorted_risks.size());
  std::size_t inserted = 0;
  double concordant = 0.0;
  std::int64_t comparable = 0;

  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    // queries first: subjects inserted so far all have strictly larger times
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t idx = order[k];
      if (events[idx] != 1) continue;
      const std::size_t rk = rank_of(risks[idx]);
      const std::int64_t below = fen.prefix(rk);              // later subjects with lower risk
      const std::int64_t equal = fen.prefix(rk + 1) - below;  // risk ties
      concordant += static_cast<double>(below) + 0.5 * static_cast<double>(equal);
      comparable += static_cast<std::int64_t>(inserted);
    }
    for (std::size_t k = i; k < j; ++k) {
      fen.add(rank_of(risks[order[k]]));
      ++inserted;
    }
    i = j;
  }

  if (comparable == 0) throw DataError("harrell_c: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

// ---------------------------------------------------------------------------
// Kaplan-Meier product-limit estimator with Greenwood 95% bands.
// ---------------------------------------------------------------------------

struct KmCurve {
  std::vector<double> times;      // step times; first entry is 0
  std::vector<double> survival;   // starts at 1, non-increasing
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<std::size_t> at_risk;
};

inline KmCurve km_estimate(const std::vector<double>& times, const std::vector<int>& events) {
  const std::size_t n = times.size();
  require(n >= 1, "km_estimate: empty input");
  require(events.size() == n, "km_estimate: length mismatch");
  for (double t : times) require(t >= 0.0, "km_estimate: negative time");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KmCurve curve;
  curve.times.push_back(0.0);
  curve.survival.push_back(1.0);
  curve.ci_low.push_back(1.0);
  curve.ci_high.push_back(1.0);
  curve.at_risk.push_back(n);

  double s = 1.0;
  double greenwood = 0.0;
  std::size_t at_risk = n;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    std::size_t deaths = 0, leaving = 0;
    std::size_t j = i;
    while (j < n && times[order[j]] == t) {
      if (events[order[j]] == 1) ++deaths;
      ++leaving;
      ++j;
    }
    if (deaths > 0) {
      const double nn = static_cast<double>(at_risk);
      const double dd = static_cast<double>(deaths);
      s *= 1.0 - dd / nn;
      greenwood += (at_risk > deaths) ? dd / (nn * (nn - dd)) : 0.0;
      const double se = s * std::sqrt(greenwood);
      curve.times.push_back(t);
      curve.survival.push_back(s);
      curve.ci_low.push_back(std::max(0.0, s - 1.959963984540054 * se));
      curve.ci_high.push_back(std::min(1.0, s + 1.959963984540054 * se));
      curve.at_risk.push_back(at_risk);
    }
    at_risk -= leaving;
    i = j;
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Two-group log-rank test (1 df).
// ---------------------------------------------------------------------------

struct LogrankResult {
  double chi2 = 0.0;
  double p = 1.0;
  bool degenerate = false;  // no events, or no variance
};

inline LogrankResult logrank_test(const std::vector<double>& times_a, const std::vector<int>& events_a,
                                  const std::vector<double>& times_b, const std::vector<int>& events_b) {
  require(!times_a.empty() && !times_b.empty(), "logrank_test: both groups must be nonempty");
  require(times_a.size() == events_a.size() && times_b.size() == events_b.size(),
          "logrank_test: length mismatch");

  struct Subject {
    double time;
    int event;
    int group;
  };
  std::vector<Subject> all;
  for (std::size_t i = 0; i < times_a.size(); ++i) all.push_back({times_a[i], events_a[i], 0});
  for (std::size_t i = 0; i < times_b.size(); ++i) all.push_back({times_b[i], events_b[i], 1});
  for (const auto& s : all) require(s.time >= 0.0, "logrank_test: negative time");
  std::sort(all.begin(), all.end(), [](const Subject& x, const Subject& y) { return x.time < y.time; });

  double observed_a = 0.0, expected_a = 0.0, variance = 0.0;
  std::size_t risk_a = times_a.size(), risk_b = times_b.size();

  std::size_t i = 0;
  while (i < all.size()) {
    const double t = all[i].time;
    std::size_t d_a = 0, d_b = 0, leave_a = 0, leave_b = 0;
    std::size_t j = i;
    while (j < all.size() && all[j].time == t) {
      if (all[j].group == 0) {
        ++leave_a;
        if (all[j].event == 1) ++d_a;
      } else {
        ++leave_b;
        if (all[j].event == 1) ++d_b;
      }
      ++j;
    }
    const std::size_t d = d_a + d_b;
    const std::size_t at_risk = risk_a + risk_b;
    if (d > 0 && at_risk > 1) {
      const double nn = static_cast<double>(at_risk);
      const double na = static_cast<double>(risk_a);
      const double nb = static_cast<double>(risk_b);
      const double dd = static_cast<double>(d);
      observed_a += static_cast<double>(d_a);
      expected_a += dd * na / nn;
      variance += dd * (na / nn) * (nb / nn) * (nn - dd) / (nn - 1.0);
    }
    risk_a -= leave_a;
    risk_b -= leave_b;
    i = j;
  }

  LogrankResult r;
  if (variance <= 0.0) {
    r.degenerate = true;
    return r;
  }
  const double diff = observed_a - expected_a;
  r.chi2 = diff * diff / variance;
  r.p = detail::chi2_1df_p(r.chi2);
  return r;
}

// ---------------------------------------------------------------------------
// Median-threshold stratification. Threshold is the training-cohort median
// (mean of the middle two for even n); strictly greater means high risk.
// ---------------------------------------------------------------------------

enum class RiskGroup { low, high };

inline double median_threshold(std::vector<double> training_scores) {
  require(!training_scores.empty(), "stratify_by_median: empty training scores");
  std::sort(training_scores.begin(), training_scores.end());
  const std::size_t n = training_scores.size();
  return n % 2 == 1 ? training_scores[n / 2]
                    : 0.5 * (training_scores[n / 2 - 1] + training_scores[n / 2]);
}

inline std::vector<RiskGroup> stratify_by_median(const std::vector<double>& training_scores,
                                                 const std::vector<double>& cohort_scores) {
  const double threshold = median_threshold(training_scores);
  std::vector<RiskGroup> out(cohort_scores.size());
  for (std::size_t i = 0; i < cohort_scores.size(); ++i)
    out[i] = cohort_scores[i] > threshold ? RiskGroup::high : RiskGroup::low;
  return out;
}

// ---------------------------------------------------------------------------
// Covariate design for the multivariable model: clinical covariates plus the
// AI risk score, T stage expanded to indicators with T2a as the reference.
// Incomplete cases are dropped.
// ---------------------------------------------------------------------------

struct SurvivalDesign {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> names;
  std::vector<std::string> patient_ids;      // rows kept after complete-case filtering
  std::vector<std::string> dropped_constant; // zero-information columns removed
};

inline SurvivalDesign build_survival_design(const std::vector<PatientRecord>& patients,
                                            const std::map<std::string, double>& risk_scores,
                                            bool include_clinical = true) {
  SurvivalDesign design;
  if (include_clinical) {
    design.names = {"psa",        "gleason",    "margin",     "tumor_pct", "pos_ln",   "age",
                    "t_stage:2b", "t_stage:2c", "t_stage:3a", "t_stage:3b", "t_stage:4", "lymphatic"};
  }
  design.names.push_back("ai_risk_score");

  for (const auto& p : patients) {
    auto it = risk_scores.find(p.patient_id);
    if (it == risk_scores.end()) continue;
    SurvivalRecord rec;
    rec.time = p.months;
    rec.event = p.event;
    if (include_clinical) {
      if (!p.psa || !p.gleason || !p.margin || !p.tumor_pct || !p.pos_ln || !p.age || !p.t_stage || !p.lymphatic)
        continue;  // complete cases only
      rec.covariates = {*p.psa,
                        static_cast<double>(*p.gleason),
                        static_cast<double>(*p.margin),
                        *p.tumor_pct,
                        static_cast<double>(*p.pos_ln),
                        *p.age,
                        *p.t_stage == TStage::T2b ? 1.0 : 0.0,
                        *p.t_stage == TStage::T2c ? 1.0 : 0.0,
                        *p.t_stage == TStage::T3a ? 1.0 : 0.0,
                        *p.t_stage == TStage::T3b ? 1.0 : 0.0,
                        *p.t_stage == TStage::T4 ? 1.0 : 0.0,
                        static_cast<double>(*p.lymphatic)};
    }
    rec.covariates.push_back(it->second);
    design.records.push_back(std::move(rec));
    design.patient_ids.push_back(p.patient_id);
  }

  // A constant column carries no information in a proportional-hazards model
  // (there is no intercept); keep it and the information matrix is singular.
  if (!design.records.empty()) {
    std::vector<bool> keep(design.names.size(), false);
    for (std::size_t j = 0; j < design.names.size(); ++j) {
      const double first = design.records[0].covariates[j];
      for (const auto& r : design.records)
        if (r.covariates[j] != first) {
          keep[j] = true;
          break;
        }
    }
    std::vector<std::string> kept_names;
    for (std::size_t j = 0; j < design.names.size(); ++j)
      (keep[j] ? kept_names : design.dropped_constant).push_back(design.names[j]);
    if (!design.dropped_constant.empty()) {
      for (auto& r : design.records) {
        std::vector<double> kept_row;
        for (std::size_t j = 0; j < keep.size(); ++j)
          if (keep[j]) kept_row.push_back(r.covariates[j]);
        r.covariates = std::move(kept_row);
      }
      design.names = std::move(kept_names);
    }
  }
  return design;
}

// ---------------------------------------------------------------------------
// Report emission.
// ---------------------------------------------------------------------------

inline std::string evaluation_report_json(double auc_value, double ci_low, double ci_high, std::size_t n,
                                          double horizon, std::uint64_t seed) {
  nlohmann::json j;
  j["auc"] = auc_value;
  j["ci_low"] = ci_low;
  j["ci_high"] = ci_high;
  j["n"] = n;
  j["horizon"] = horizon;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

inline std::string cox_report_text(const CoxFit& fit) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %10s %12s\n", "term", "beta", "hr", "ci_low",
                "ci_high", "wald_p");
  out << line;
  for (const auto& t : fit.terms) {
    std::snprintf(line, sizeof(line), "%-16s %10.4f %10.4f %10.4f %10.4f %12.4g\n", t.name.c_str(), t.beta,
                  t.hr, t.hr_lo, t.hr_hi, t.wald_p);
    out << line;
  }
  std::snprintf(line, sizeof(line), "c_index %.4f\n", fit.c_index);
  out << line;
  return out.str();
}

// KM CSV: one row per step per group.
inline std::string km_to_csv(const std::vector<std::pair<std::string, KmCurve>>& groups) {
  std::string out = "time,survival,ci_low,ci_high,at_risk,group\n";
  char line[160];
  for (const auto& [name, curve] : groups) {
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%zu,%s\n", curve.times[i], curve.survival[i],
                    curve.ci_low[i], curve.ci_high[i], curve.at_risk[i], name.c_str());
      out += line;
    }
  }
  return out;
}

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

// Deterministic step-curve SVG with shaded confidence bands, one color per
// group. Byte-for-byte identical for identical inputs.
inline std::string km_to_svg(const std::vector<std::pair<std::string, KmCurve>>& groups) {
  require(!groups.empty(), "km_to_svg: no groups");
  const double width = 640, height = 420;
  const double left = 60, right = 20, top = 24, bottom = 48;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double t_max = 1.0;
  for (const auto& [name, c] : groups)
    for (double t : c.times) t_max = std::max(t_max, t);

  auto px = [&](double t) { return left + plot_w * (t / t_max); };
  auto py = [&](double s) { return top + plot_h * (1.0 - s); };

  static const char* kColors[] = {"#2166ac", "#b2182b", "#1b7837", "#762a83"};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\" font-family=\"Helvetica,sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";

  // axes and gridlines
  for (int i = 0; i <= 5; ++i) {
    const double s = i / 5.0;
    const double y = py(s);
    svg += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(y) + "\" x2=\"" +
           detail::svg_num(left + plot_w) + "\" y2=\"" + detail::svg_num(y) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::svg_num(left - 8) + "\" y=\"" + detail::svg_num(y + 4) +
           "\" text-anchor=\"end\">" + detail::svg_num(s) + "</text>\n";
  }
  for (int i = 0; i <= 6; ++i) {
    const double t = t_max * i / 6.0;
    svg += "<text x=\"" + detail::svg_num(px(t)) + "\" y=\"" + detail::svg_num(top + plot_h + 18) +
           "\" text-anchor=\"middle\">" + detail::svg_num(t) + "</text>\n";
  }
  svg += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(top) + "\" x2=\"" +
         detail::svg_num(left) + "\" y2=\"" + detail::svg_num(top + plot_h) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(top + plot_h) + "\" x2=\"" +
         detail::svg_num(left + plot_w) + "\" y2=\"" + detail::svg_num(top + plot_h) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"" + detail::svg_num(left + plot_w / 2) + "\" y=\"" + detail::svg_num(height - 10) +
         "\" text-anchor=\"middle\">months</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::svg_num(top + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::svg_num(top + plot_h / 2) + ")\">recurrence-free survival</text>\n";

  std::size_t color_idx = 0;
  for (const auto& [name, curve] : groups) {
    const char* color = kColors[color_idx % 4];

    // shaded band: step outline down the upper edge, back along the lower edge
    std::string band = "M" + detail::svg_num(px(curve.times[0])) + " " + detail::svg_num(py(curve.ci_high[0]));
    for (std::size_t i = 1; i < curve.times.size(); ++i) {
      band += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.ci_high[i - 1]));
      band += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.ci_high[i]));
    }
    band += " L" + detail::svg_num(px(t_max)) + " " + detail::svg_num(py(curve.ci_high.back()));
    band += " L" + detail::svg_num(px(t_max)) + " " + detail::svg_num(py(curve.ci_low.back()));
    for (std::size_t i = curve.times.size(); i-- > 1;) {
      band += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.ci_low[i]));
      band += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.ci_low[i - 1]));
    }
    band += " L" + detail::svg_num(px(curve.times[0])) + " " + detail::svg_num(py(curve.ci_low[0])) + " Z";
    svg += "<path d=\"" + band + "\" fill=\"" + color + "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";

    std::string path = "M" + detail::svg_num(px(curve.times[0])) + " " + detail::svg_num(py(curve.survival[0]));
    for (std::size_t i = 1; i < curve.times.size(); ++i) {
      path += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.survival[i - 1]));
      path += " L" + detail::svg_num(px(curve.times[i])) + " " + detail::svg_num(py(curve.survival[i]));
    }
    path += " L" + detail::svg_num(px(t_max)) + " " + detail::svg_num(py(curve.survival.back()));
    svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";

    const double ly = top + 16 + 18 * static_cast<double>(color_idx);
    svg += "<rect x=\"" + detail::svg_num(left + plot_w - 150) + "\" y=\"" + detail::svg_num(ly - 9) +
           "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + detail::svg_num(left + plot_w - 132) + "\" y=\"" + detail::svg_num(ly + 1) + "\">" +
           name + "</text>\n";
    ++color_idx;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace msbcr
