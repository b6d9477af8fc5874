#pragma once

// Sample-size workflow for a MaxCombo primary analysis: per-component
// weighted log-rank sizing on a fixed time grid, the null correlation of the
// components from one large simulated trial, the multiplicity-adjusted
// boundary, and simulation confirmation of the chosen size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maxcombo/error.hpp"
#include "maxcombo/mvnorm.hpp"
#include "maxcombo/normal.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/simulation.hpp"

namespace maxcombo {

struct DesignInput {
  EnrollmentModel enrollment{EnrollmentKind::UniformOverDuration, 15.0};
  PiecewiseHazard control = PiecewiseHazard::from_median(8.0);
  PiecewiseHazard treatment = PiecewiseHazard::from_median(8.0);  // alternative
  double dropout_rate = 0.0;
  double alpha = 0.025;  // one-sided
  double power = 0.9;
  ComboSpec combo = ComboSpec::standard();
  std::vector<double> durations{18.0, 24.0, 32.0, 40.0};  // size-vs-duration grid
  double duration = 32.0;                                 // chosen trial duration
  double allocation = 1.0;                                // treatment : control
  double grid_step = 1.0 / 30.0;
  int n_large = 5000;  // null trial used for the correlation estimate

  void validate() const {
    if (!(alpha > 0.0 && alpha < power && power < 1.0))
      throw ValidationError("design needs 0 < alpha < power < 1");
    if (!(dropout_rate >= 0.0)) throw ValidationError("dropout rate must be >= 0");
    if (!(allocation > 0.0)) throw ValidationError("allocation ratio must be positive");
    if (!(grid_step > 0.0)) throw ValidationError("grid step must be positive");
    if (n_large < 1000) throw ValidationError("correlation trial needs n_large >= 1000");
    enrollment.validate();
    if (!(duration > enrollment.end()))
      throw ValidationError("trial duration must exceed the enrollment period");
    for (double d : durations)
      if (!(d > enrollment.end()))
        throw ValidationError("every candidate duration must exceed the enrollment period");
  }

  double p_treatment() const { return allocation / (1.0 + allocation); }
};

struct SampleSize {
  int events = 0;
  int subjects = 0;
  double event_probability = 0.0;
  double drift = 0.0;  // mean of the standardized statistic per sqrt(subject)
};

/// Fraction of a subject's cohort still under administrative follow-up at
/// time t since entry, for a trial analysed at calendar `duration`.
inline double admin_followup_fraction(const EnrollmentModel& e, double duration, double t) {
  if (e.kind == EnrollmentKind::Instantaneous) return t < duration ? 1.0 : 0.0;
  return std::clamp((duration - t) / e.duration, 0.0, 1.0);
}

/// Fixed-grid (Lakatos-style) sample size for one FH weight under the
/// design alternative. Mean and variance increments are accumulated at grid
/// midpoints with the weight evaluated at the pooled model survival.
inline SampleSize wlr_sample_size(const DesignInput& d, const WeightSpec& w, double level,
                                  double duration) {
  if (!(level > 0.0 && level < 0.5)) throw ValidationError("nominal level must be in (0, 0.5)");
  if (!(duration > d.enrollment.end()))
    throw ValidationError("trial duration must exceed the enrollment period");
  const double p1 = d.p_treatment(), p0 = 1.0 - p1;
  const auto steps = static_cast<long>(std::ceil(duration / d.grid_step - 1e-9));
  const double dt = duration / static_cast<double>(steps);

  double mu = 0.0, var = 0.0, pev = 0.0;
  for (long j = 0; j < steps; ++j) {
    const double t = (static_cast<double>(j) + 0.5) * dt;
    const double s0 = d.control.survival(t), s1 = d.treatment.survival(t);
    const double l0 = d.control.rate(t), l1 = d.treatment.rate(t);
    const double keep = std::exp(-d.dropout_rate * t) * admin_followup_fraction(d.enrollment, duration, t);
    const double n0 = p0 * s0 * keep, n1 = p1 * s1 * keep;
    const double n = n0 + n1;
    pev += (n0 * l0 + n1 * l1) * dt;
    if (n <= 0.0) continue;
    const double wt = w(p0 * s0 + p1 * s1);
    mu += wt * n1 * n0 / n * (l1 - l0) * dt;
    var += wt * wt * n1 * n0 / (n * n) * (n1 * l1 + n0 * l0) * dt;
  }
  if (!(mu < 0.0) || !(var > 0.0))
    throw Error("alternative gives no benefit for " + w.label() + "; power is unreachable");

  const double z = norm_quantile(1.0 - level) + norm_quantile(d.power);
  const double n_req = z * z * var / (mu * mu);
  if (!std::isfinite(n_req) || n_req > 1e8)
    throw Error("required sample size diverges for " + w.label());

  SampleSize out;
  out.drift = mu / std::sqrt(var);
  out.event_probability = pev;
  // Round up to a whole number of allocation blocks when the ratio is 1:1.
  auto n_int = static_cast<int>(std::ceil(n_req - 1e-9));
  if (d.allocation == 1.0 && n_int % 2 != 0) ++n_int;
  out.subjects = n_int;
  out.events = static_cast<int>(std::ceil(n_int * pev - 1e-9));
  return out;
}

// ---------------------------------------------------------------------------
// Null correlation and boundary

inline TrialScenario null_scenario(const DesignInput& d, int n_total, CutoffRule cutoff) {
  TrialScenario s;
  s.label = "null";
  s.n_treatment = static_cast<int>(std::lround(n_total * d.p_treatment()));
  s.n_control = n_total - s.n_treatment;
  s.enrollment = d.enrollment;
  s.control = d.control;
  s.treatment = d.control;
  s.dropout_rate = d.dropout_rate;
  s.cutoff = cutoff;
  return s;
}

inline TrialScenario alternative_scenario(const DesignInput& d, int n_total, CutoffRule cutoff) {
  auto s = null_scenario(d, n_total, cutoff);
  s.label = "alternative";
  s.treatment = d.treatment;
  return s;
}

/// Correlation of the combo components on one large null trial analysed at
/// calendar `duration`.
inline CorrelationMatrix estimate_null_correlation(const DesignInput& d, double duration,
                                                   std::uint64_t seed) {
  if (d.n_large < 1000) throw ValidationError("correlation trial needs n_large >= 1000");
  const auto s = null_scenario(d, d.n_large, CutoffRule::at_calendar(duration));
  const auto data = simulate_trial(s, seed);
  const auto cs = combo_statistics(build_risk_table(data), d.combo);
  return cs.correlation();
}

struct AdjustedBoundary {
  double z_cutoff = 0.0;
  double nominal_level = 0.0;
};

inline AdjustedBoundary adjusted_boundary(const CorrelationMatrix& corr, double alpha,
                                          const MVNOptions& opt = {}) {
  AdjustedBoundary b;
  b.z_cutoff = equicoordinate_lower_quantile(corr, alpha, opt);
  b.nominal_level = norm_cdf(b.z_cutoff);
  return b;
}

// ---------------------------------------------------------------------------
// Full design

struct DurationRow {
  double duration = 0.0;
  std::vector<SampleSize> components;
  std::size_t smallest = 0;
};

/// Smallest duration whose smallest-component size is within `fraction` of
/// the size at the longest duration; the knee of the size-vs-duration curve.
inline std::optional<double> knee_duration(const std::vector<DurationRow>& grid,
                                           double fraction = 0.25) {
  if (grid.empty()) return std::nullopt;
  auto min_size = [](const DurationRow& r) { return r.components[r.smallest].subjects; };
  const DurationRow* longest = &grid.front();
  for (const auto& r : grid)
    if (r.duration > longest->duration) longest = &r;
  const double target = (1.0 + fraction) * min_size(*longest);
  std::optional<double> best;
  for (const auto& r : grid)
    if (min_size(r) <= target && (!best || r.duration < *best)) best = r.duration;
  return best;
}

struct ConfirmationScenario {
  TrialScenario scenario;   // n and cutoff are overwritten by the design loop
  enum class Role { TypeI, Power, Report } role = Role::Report;
};

struct ConfirmationResult {
  std::string label;
  ConfirmationScenario::Role role = ConfirmationScenario::Role::Report;
  OperatingCharacteristics oc;
};

struct DesignOptions {
  int replicates = 2000;
  std::uint64_t seed = 1;
  double event_increment = 0.05;   // per loop iteration
  double followup_increment = 1.0;  // calendar months per loop iteration
  int max_iterations = 20;
  double mc_margin_se = 2.0;       // accept within this many MC standard errors
  unsigned threads = 0;
  MVNOptions mvn{};
};

struct DesignResult {
  std::vector<DurationRow> grid;  // at the unadjusted alpha
  std::optional<double> knee;
  double chosen_duration = 0.0;
  CorrelationMatrix null_correlation = CorrelationMatrix::identity(1);
  AdjustedBoundary boundary;
  std::vector<SampleSize> components;  // at the chosen duration and nominal level
  std::size_t selected = 0;
  SampleSize initial;
  int final_subjects = 0;
  int final_events = 0;
  double final_duration = 0.0;
  SampleSize logrank_comparison;  // classical log-rank at alpha, chosen duration
  std::vector<ConfirmationResult> confirmation;
  int iterations = 0;
  bool confirmed = false;
};

inline DesignResult design_trial(const DesignInput& d,
                                 std::vector<ConfirmationScenario> extra_scenarios,
                                 const DesignOptions& opt) {
  d.validate();
  if (opt.replicates < 1) throw ValidationError("replicates must be > 0");
  DesignResult r;

  for (double dur : d.durations) {
    DurationRow row;
    row.duration = dur;
    for (const auto& w : d.combo.weights()) row.components.push_back(wlr_sample_size(d, w, d.alpha, dur));
    for (std::size_t i = 1; i < row.components.size(); ++i)
      if (row.components[i].subjects < row.components[row.smallest].subjects) row.smallest = i;
    r.grid.push_back(std::move(row));
  }
  r.knee = knee_duration(r.grid);
  r.chosen_duration = d.duration;

  r.null_correlation = estimate_null_correlation(d, d.duration, derive_seed(opt.seed, 0xC0447));
  r.boundary = adjusted_boundary(r.null_correlation, d.alpha, opt.mvn);

  for (const auto& w : d.combo.weights())
    r.components.push_back(wlr_sample_size(d, w, r.boundary.nominal_level, d.duration));
  for (std::size_t i = 1; i < r.components.size(); ++i)
    if (r.components[i].subjects < r.components[r.selected].subjects) r.selected = i;
  r.initial = r.components[r.selected];
  r.logrank_comparison = wlr_sample_size(d, WeightSpec{0, 0}, d.alpha, d.duration);

  std::vector<ConfirmationScenario> scen;
  scen.push_back({null_scenario(d, 2, CutoffRule::at_calendar(1.0)), ConfirmationScenario::Role::TypeI});
  scen.push_back({alternative_scenario(d, 2, CutoffRule::at_calendar(1.0)), ConfirmationScenario::Role::Power});
  for (auto& e : extra_scenarios) scen.push_back(std::move(e));

  const auto decision = Decision::boundary(r.boundary.z_cutoff);
  double n = r.initial.subjects, events = r.initial.events, followup = d.duration;
  for (int it = 0; it < opt.max_iterations; ++it) {
    r.iterations = it + 1;
    int n_int = static_cast<int>(std::ceil(n - 1e-9));
    if (d.allocation == 1.0 && n_int % 2 != 0) ++n_int;
    const int ev_int = static_cast<int>(std::ceil(events - 1e-9));
    const auto cutoff = CutoffRule::later_of(ev_int, followup);

    r.confirmation.clear();
    bool ok = true;
    for (std::size_t k = 0; k < scen.size(); ++k) {
      auto s = scen[k].scenario;
      s.n_treatment = static_cast<int>(std::lround(n_int * d.p_treatment()));
      s.n_control = n_int - s.n_treatment;
      s.cutoff = cutoff;
      ConfirmationResult cr;
      cr.label = s.label;
      cr.role = scen[k].role;
      cr.oc = operating_characteristics(s, d.combo, decision, std::max(opt.replicates, kMinSimulationReplicates),
                                        derive_seed(opt.seed, 1000 + k), opt.threads);
      const double margin = opt.mc_margin_se * cr.oc.mc_se;
      if (cr.role == ConfirmationScenario::Role::TypeI && cr.oc.rejection_rate > d.alpha + margin) ok = false;
      if (cr.role == ConfirmationScenario::Role::Power && cr.oc.rejection_rate < d.power - margin) ok = false;
      r.confirmation.push_back(std::move(cr));
    }
    r.final_subjects = n_int;
    r.final_events = ev_int;
    r.final_duration = followup;
    if (ok) {
      r.confirmed = true;
      break;
    }
    n *= 1.0 + opt.event_increment;
    events *= 1.0 + opt.event_increment;
    followup += opt.followup_increment;
  }
  return r;
}

}  // namespace maxcombo
