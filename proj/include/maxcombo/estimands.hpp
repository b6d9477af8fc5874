#pragma once

// Treatment-effect quantifiers and the proportional-hazards diagnostic.
//
// One-sided p-values here are oriented towards treatment benefit: small p
// means the treatment arm looks better (lower hazard, longer survival).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maxcombo/error.hpp"
#include "maxcombo/normal.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/survival_data.hpp"

namespace maxcombo {

enum class EffectScale { HazardRatio, Difference, Ratio, Probability };

inline const char* to_string(EffectScale s) {
  switch (s) {
    case EffectScale::HazardRatio: return "hazard_ratio";
    case EffectScale::Difference: return "difference";
    case EffectScale::Ratio: return "ratio";
    case EffectScale::Probability: return "probability";
  }
  return "?";
}

struct EffectEstimate {
  std::string name;
  double estimate = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::optional<double> p_value;
  std::optional<double> se;  // on the scale the interval was built on
  EffectScale scale = EffectScale::Difference;
  bool estimable = true;
  std::string note;

  static EffectEstimate inestimable(std::string name, EffectScale scale, std::string why) {
    EffectEstimate e;
    e.name = std::move(name);
    e.scale = scale;
    e.estimable = false;
    e.note = std::move(why);
    return e;
  }
};

inline double z_for_level(double level) { return norm_quantile(0.5 + 0.5 * level); }

// ---------------------------------------------------------------------------
// Cox HR and Grambsch-Therneau

inline EffectEstimate cox_hr(const SurvivalDataset& data, double level = 0.95) {
  const auto w = weighted_hr(data, WeightSpec{0, 0});
  const double z = z_for_level(level);
  EffectEstimate e;
  e.name = "cox_hr";
  e.scale = EffectScale::HazardRatio;
  e.estimate = w.hr();
  e.ci_lower = std::exp(w.log_hr - z * w.se);
  e.ci_upper = std::exp(w.log_hr + z * w.se);
  e.se = w.se;
  e.p_value = norm_cdf(w.log_hr / w.se);
  return e;
}

enum class TimeTransform { Identity, KM };

struct SchoenfeldPoint {
  double time = 0.0;
  double scaled_residual = 0.0;
};

struct PHDiagnostic {
  double gt_statistic = 0.0;
  double gt_p_value = 1.0;
  double log_hr = 0.0;
  std::vector<SchoenfeldPoint> schoenfeld;
};

inline PHDiagnostic gt_test(const SurvivalDataset& data,
                            TimeTransform transform = TimeTransform::Identity) {
  data.require_both_arms();
  const auto table = build_risk_table(data);
  if (table.size() < 3) throw ValidationError("Grambsch-Therneau test needs at least 3 event times");
  const auto sl = pooled_left_survival(table);
  const auto fit = weighted_hr(table, sl, WeightSpec{0, 0});
  const double beta = fit.log_hr;

  const std::size_t m = table.size();
  std::vector<double> r(m), g(m);
  double info = 0.0, D = 0.0, gbar = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& row = table[i];
    const double p = detail::event_prob_treatment(row, beta);
    r[i] = row.d1 - row.d * p;
    info += row.d * p * (1.0 - p);
    D += row.d;
    g[i] = transform == TimeTransform::Identity ? row.time : 1.0 - sl[i];
    gbar += row.d * g[i];
  }
  if (!(info > 0.0)) throw Error("degenerate Cox information");
  gbar /= D;
  const double var_beta = 1.0 / info;

  PHDiagnostic out;
  out.log_hr = beta;
  double num = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    num += (g[i] - gbar) * r[i];
    ss += table[i].d * (g[i] - gbar) * (g[i] - gbar);
    out.schoenfeld.push_back({table[i].time, beta + D * var_beta * r[i] / table[i].d});
  }
  if (!(ss > 0.0)) throw Error("degenerate time transform in Grambsch-Therneau test");
  out.gt_statistic = num * num / (info * ss / D);
  out.gt_p_value = chisq_upper(out.gt_statistic, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// RMST / RMTL

/// Default truncation: the smaller of the two arms' largest observed times.
inline double default_tau(const SurvivalDataset& data) {
  data.require_both_arms();
  return std::min(data.max_time(Arm::Control), data.max_time(Arm::Treatment));
}

inline double resolve_tau(const SurvivalDataset& data, std::optional<double> tau) {
  const double limit = default_tau(data);
  if (!tau) return limit;
  if (!(*tau > 0.0) || !std::isfinite(*tau)) throw ValidationError("tau must be positive");
  if (*tau > limit)
    throw ValidationError("tau " + detail::format_double(*tau) +
                          " exceeds the follow-up of an arm (max " + detail::format_double(limit) + ")");
  return *tau;
}

struct RMSTArm {
  double rmst = 0.0;
  double variance = 0.0;
};

/// Exact step-function integral of S over [0, tau] with the KM-integral variance.
inline RMSTArm rmst_of_curve(const KMCurve& km, double tau) {
  RMSTArm out;
  const auto& steps = km.steps();
  double prev_t = 0.0, prev_s = 1.0;
  std::size_t used = 0;
  for (; used < steps.size() && steps[used].time <= tau; ++used) {
    out.rmst += prev_s * (steps[used].time - prev_t);
    prev_t = steps[used].time;
    prev_s = steps[used].surv;
  }
  out.rmst += prev_s * (tau - prev_t);

  // Area from each step to tau, accumulated backwards.
  double area = 0.0;
  double right = tau;
  for (std::size_t i = used; i-- > 0;) {
    area += steps[i].surv * (right - steps[i].time);
    right = steps[i].time;
    if (area == 0.0) continue;
    const int n = steps[i].at_risk, d = steps[i].events;
    if (n > d) out.variance += area * area * d / (static_cast<double>(n) * (n - d));
  }
  return out;
}

struct RMSTResult {
  double tau = 0.0;
  EffectEstimate control;
  EffectEstimate treatment;
  EffectEstimate difference;  // treatment minus control
};

inline RMSTResult rmst(const SurvivalDataset& data, std::optional<double> tau_opt = {},
                       double level = 0.95) {
  const double tau = resolve_tau(data, tau_opt);
  const double z = z_for_level(level);
  const auto a0 = rmst_of_curve(km_estimate(data, ArmSelector::Control), tau);
  const auto a1 = rmst_of_curve(km_estimate(data, ArmSelector::Treatment), tau);

  auto arm_est = [&](const RMSTArm& a, const char* name) {
    EffectEstimate e;
    e.name = name;
    e.scale = EffectScale::Difference;
    e.estimate = a.rmst;
    e.se = std::sqrt(a.variance);
    e.ci_lower = a.rmst - z * *e.se;
    e.ci_upper = a.rmst + z * *e.se;
    return e;
  };
  RMSTResult out;
  out.tau = tau;
  out.control = arm_est(a0, "rmst_control");
  out.treatment = arm_est(a1, "rmst_treatment");
  auto& d = out.difference;
  d.name = "rmst_difference";
  d.scale = EffectScale::Difference;
  d.estimate = a1.rmst - a0.rmst;
  const double se = std::sqrt(a0.variance + a1.variance);
  d.se = se;
  d.ci_lower = d.estimate - z * se;
  d.ci_upper = d.estimate + z * se;
  if (se > 0.0) d.p_value = norm_cdf(-d.estimate / se);
  else d.note = "zero variance; no p-value";
  return out;
}

inline EffectEstimate rmtl(const SurvivalDataset& data, std::optional<double> tau_opt = {},
                           double level = 0.95) {
  const double tau = resolve_tau(data, tau_opt);
  const auto a0 = rmst_of_curve(km_estimate(data, ArmSelector::Control), tau);
  const auto a1 = rmst_of_curve(km_estimate(data, ArmSelector::Treatment), tau);
  const double l0 = tau - a0.rmst, l1 = tau - a1.rmst;
  if (!(l0 > 0.0)) throw Error("control RMTL is 0; ratio undefined");
  EffectEstimate e;
  e.name = "rmtl_ratio";
  e.scale = EffectScale::Ratio;
  e.estimate = l1 / l0;
  if (!(l1 > 0.0)) {
    e.estimable = false;
    e.note = "treatment RMTL is 0; log-scale interval undefined";
    e.ci_lower = e.ci_upper = e.estimate;
    return e;
  }
  const double se = std::sqrt(a1.variance / (l1 * l1) + a0.variance / (l0 * l0));
  const double z = z_for_level(level);
  e.se = se;
  e.ci_lower = std::exp(std::log(e.estimate) - z * se);
  e.ci_upper = std::exp(std::log(e.estimate) + z * se);
  if (se > 0.0) e.p_value = norm_cdf(std::log(e.estimate) / se);
  return e;
}

// ---------------------------------------------------------------------------
// Milestone survival

inline EffectEstimate milestone_difference(const SurvivalDataset& data, double t_star,
                                           double level = 0.95) {
  data.require_both_arms();
  if (!(t_star >= 0.0) || t_star > default_tau(data))
    throw ValidationError("milestone time " + detail::format_double(t_star) +
                          " is beyond the follow-up of an arm");
  const auto k0 = km_estimate(data, ArmSelector::Control);
  const auto k1 = km_estimate(data, ArmSelector::Treatment);
  EffectEstimate e;
  e.name = "milestone_" + detail::format_double(t_star);
  e.scale = EffectScale::Difference;
  e.estimate = k1.survival(t_star) - k0.survival(t_star);
  const double se = std::sqrt(k0.variance(t_star) + k1.variance(t_star));
  const double z = z_for_level(level);
  e.se = se;
  e.ci_lower = std::max(-1.0, e.estimate - z * se);
  e.ci_upper = std::min(1.0, e.estimate + z * se);
  if (se > 0.0) e.p_value = norm_cdf(-e.estimate / se);
  else e.note = "zero variance; no p-value";
  return e;
}

// ---------------------------------------------------------------------------
// Piecewise HR (occurrence / exposure)

struct PiecewiseInterval {
  double start = 0.0;
  double end = std::numeric_limits<double>::infinity();
  int d0 = 0, d1 = 0;
  double exposure0 = 0.0, exposure1 = 0.0;
  EffectEstimate hr;
};

inline std::vector<PiecewiseInterval> piecewise_hr(const SurvivalDataset& data,
                                                   const std::vector<double>& cutpoints,
                                                   double level = 0.95) {
  data.require_both_arms();
  for (std::size_t i = 0; i < cutpoints.size(); ++i) {
    if (!(cutpoints[i] > 0.0) || !std::isfinite(cutpoints[i]))
      throw ValidationError("cutpoints must be positive and finite");
    if (i > 0 && !(cutpoints[i] > cutpoints[i - 1]))
      throw ValidationError("cutpoints must be strictly ascending");
  }
  std::vector<PiecewiseInterval> out(cutpoints.size() + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].start = k == 0 ? 0.0 : cutpoints[k - 1];
    if (k < cutpoints.size()) out[k].end = cutpoints[k];
  }
  for (const auto& r : data.records()) {
    for (auto& iv : out) {
      if (r.time <= iv.start && iv.start > 0.0) break;
      const double expo = std::max(0.0, std::min(r.time, iv.end) - iv.start);
      const bool ev = r.event && r.time > iv.start && r.time <= iv.end;
      if (r.arm == Arm::Treatment) {
        iv.exposure1 += expo;
        iv.d1 += ev;
      } else {
        iv.exposure0 += expo;
        iv.d0 += ev;
      }
    }
  }
  const double z = z_for_level(level);
  for (auto& iv : out) {
    const std::string name = "piecewise_hr_" + detail::format_double(iv.start) + "_" +
                             (std::isfinite(iv.end) ? detail::format_double(iv.end) : "inf");
    if (iv.d0 == 0 || iv.d1 == 0) {
      iv.hr = EffectEstimate::inestimable(name, EffectScale::HazardRatio,
                                          "no events in an arm within the interval");
      continue;
    }
    const double lhr = std::log((iv.d1 / iv.exposure1) / (iv.d0 / iv.exposure0));
    const double se = std::sqrt(1.0 / iv.d1 + 1.0 / iv.d0);
    auto& e = iv.hr;
    e.name = name;
    e.scale = EffectScale::HazardRatio;
    e.estimate = std::exp(lhr);
    e.se = se;
    e.ci_lower = std::exp(lhr - z * se);
    e.ci_upper = std::exp(lhr + z * se);
    e.p_value = norm_cdf(lhr / se);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weighted Kaplan-Meier (Pepe-Fleming)

struct WKMResult {
  double tau = 0.0;
  double statistic = 0.0;  // sqrt(n0 n1 / n) * integral of w (S1 - S0)
  double se = 0.0;
  double z = 0.0;
  double p_value = 0.5;    // one-sided, small when treatment survival is higher
};

namespace detail {

// KM of the censoring distribution; events count as "censored" for it and are
// removed before censorings at tied times.
inline KMCurve censoring_km(const SurvivalDataset& data, Arm arm) {
  std::vector<SubjectRecord> recs;
  for (const auto& r : data.records())
    if (r.arm == arm) recs.push_back({r.time, !r.event, Arm::Control});
  std::sort(recs.begin(), recs.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) { return a.time < b.time; });
  std::vector<KMStep> steps;
  int at_risk = static_cast<int>(recs.size());
  double s = 1.0;
  for (std::size_t k = 0; k < recs.size();) {
    const double t = recs[k].time;
    int cens = 0, events = 0;
    for (; k < recs.size() && recs[k].time == t; ++k) (recs[k].event ? cens : events)++;
    // Events at t leave first, so censorings at t see at_risk - events.
    const int n_c = at_risk - events;
    if (cens > 0) {
      KMStep st;
      st.time = t;
      st.at_risk = n_c;
      st.events = cens;
      st.surv_left = s;
      s *= 1.0 - static_cast<double>(cens) / n_c;
      st.surv = s;
      steps.push_back(st);
    }
    at_risk -= cens + events;
  }
  return KMCurve(std::move(steps), recs.empty() ? 0.0 : recs.back().time, recs.size());
}

}  // namespace detail

inline WKMResult wkm_test(const SurvivalDataset& data, std::optional<double> tau_opt = {}) {
  const double tau = resolve_tau(data, tau_opt);
  const double n0 = static_cast<double>(data.count(Arm::Control));
  const double n1 = static_cast<double>(data.count(Arm::Treatment));
  const double n = n0 + n1;
  const double p0 = n0 / n, p1 = n1 / n;

  const auto s0 = km_estimate(data, ArmSelector::Control);
  const auto s1 = km_estimate(data, ArmSelector::Treatment);
  const auto sp = km_estimate(data, ArmSelector::Pooled);
  const auto c0 = detail::censoring_km(data, Arm::Control);
  const auto c1 = detail::censoring_km(data, Arm::Treatment);

  std::vector<double> grid{0.0, tau};
  for (const KMCurve* c : {&s0, &s1, &sp, &c0, &c1})
    for (const auto& st : c->steps())
      if (st.time < tau) grid.push_back(st.time);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  // On [g_j, g_{j+1}) every step function is constant; C(t-) there is C(g_j)
  // except at g_j itself, which has measure zero.
  auto weight_at = [&](double t) {
    const double a = c0.survival(t), b = c1.survival(t);
    const double den = p1 * b + p0 * a;
    return den > 0.0 ? a * b / den : 0.0;
  };
  double integral = 0.0;
  const std::size_t m = grid.size();
  std::vector<double> seg_area(m, 0.0);  // integral of w * S_pooled over [g_j, g_{j+1})
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double a = grid[j], len = grid[j + 1] - a;
    const double w = weight_at(a);
    integral += w * (s1.survival(a) - s0.survival(a)) * len;
    seg_area[j] = w * sp.survival(a) * len;
  }
  const double scale = std::sqrt(n0 * n1 / n);

  // Variance: sum over pooled event times t <= tau of
  //   A(t)^2 (p0 C0(t-) + p1 C1(t-)) / (C0(t-) C1(t-)) * (S(t-) - S(t)) / (S(t) S(t-)).
  std::vector<double> tail(m, 0.0);
  for (std::size_t j = m - 1; j-- > 0;) tail[j] = tail[j + 1] + seg_area[j];
  double var = 0.0;
  for (const auto& st : sp.steps()) {
    if (st.time > tau) break;
    const auto j = static_cast<std::size_t>(
        std::lower_bound(grid.begin(), grid.end(), st.time) - grid.begin());
    const double A = j < m ? tail[j] : 0.0;
    if (A == 0.0) continue;
    const double a = c0.survival_left(st.time), b = c1.survival_left(st.time);
    if (!(a > 0.0 && b > 0.0 && st.surv > 0.0)) continue;
    var += A * A * (p0 * a + p1 * b) / (a * b) * (st.surv_left - st.surv) / (st.surv * st.surv_left);
  }
  if (!(var > 0.0)) throw Error("degenerate variance in weighted Kaplan-Meier test");

  WKMResult out;
  out.tau = tau;
  out.statistic = scale * integral;
  out.se = std::sqrt(var);
  out.z = out.statistic / out.se;
  out.p_value = norm_cdf(-out.z);
  return out;
}

// ---------------------------------------------------------------------------
// Net benefit (generalized pairwise comparison)

struct PairCounts {
  double wins = 0.0;
  double losses = 0.0;
  double pairs = 0.0;
};

namespace detail {

// Counts pairs (x, y) with y an event and x - y > margin, for x in xs.
inline double count_beaten(const std::vector<double>& xs, std::vector<double> event_times,
                           double margin) {
  std::sort(event_times.begin(), event_times.end());
  double c = 0.0;
  for (double x : xs) {
    const double lim = x - margin;  // need y < lim strictly
    c += static_cast<double>(std::lower_bound(event_times.begin(), event_times.end(), lim) -
                             event_times.begin());
  }
  return c;
}

inline PairCounts pair_counts(const std::vector<SubjectRecord>& trt,
                              const std::vector<SubjectRecord>& ctl, double margin) {
  std::vector<double> xt, xc, et, ec;
  for (const auto& r : trt) {
    xt.push_back(r.time);
    if (r.event) et.push_back(r.time);
  }
  for (const auto& r : ctl) {
    xc.push_back(r.time);
    if (r.event) ec.push_back(r.time);
  }
  PairCounts pc;
  pc.wins = count_beaten(xt, ec, margin);
  pc.losses = count_beaten(xc, et, margin);
  pc.pairs = static_cast<double>(trt.size()) * static_cast<double>(ctl.size());
  return pc;
}

inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

}  // namespace detail

/// Treatment wins when the control subject had an event and the treatment
/// subject was still being followed more than `margin` later; losses mirror.
inline PairCounts net_benefit_counts(const SurvivalDataset& data, double margin) {
  std::vector<SubjectRecord> trt, ctl;
  for (const auto& r : data.records()) (r.arm == Arm::Treatment ? trt : ctl).push_back(r);
  return detail::pair_counts(trt, ctl, margin);
}

inline EffectEstimate net_benefit(const SurvivalDataset& data, double margin,
                                  int resamples = 2000, std::uint64_t seed = 1,
                                  double level = 0.95) {
  data.require_both_arms();
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ValidationError("margin must be >= 0");
  if (resamples < 2) throw ValidationError("net benefit needs at least 2 resamples");
  std::vector<SubjectRecord> trt, ctl;
  for (const auto& r : data.records()) (r.arm == Arm::Treatment ? trt : ctl).push_back(r);
  const auto base = detail::pair_counts(trt, ctl, margin);

  EffectEstimate e;
  e.name = "net_benefit_" + detail::format_double(margin);
  e.scale = EffectScale::Probability;
  e.estimate = (base.wins - base.losses) / base.pairs;

  std::mt19937_64 rng(seed);
  std::vector<SubjectRecord> bt(trt.size()), bc(ctl.size());
  double sum = 0.0, sum2 = 0.0;
  for (int b = 0; b < resamples; ++b) {
    for (auto& x : bt) x = trt[detail::draw_index(rng, trt.size())];
    for (auto& x : bc) x = ctl[detail::draw_index(rng, ctl.size())];
    const auto pc = detail::pair_counts(bt, bc, margin);
    const double v = (pc.wins - pc.losses) / pc.pairs;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / resamples;
  const double se = std::sqrt(std::max(0.0, (sum2 - resamples * mean * mean) / (resamples - 1)));
  const double z = z_for_level(level);
  e.se = se;
  e.ci_lower = std::max(-1.0, e.estimate - z * se);
  e.ci_upper = std::min(1.0, e.estimate + z * se);
  if (se > 0.0) e.p_value = norm_cdf(-e.estimate / se);
  else e.note = "zero bootstrap variance; no p-value";
  return e;
}

}  // namespace maxcombo
