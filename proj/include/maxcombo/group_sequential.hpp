#pragma once

// One interim look on the log-rank statistic with O'Brien-Fleming-type alpha
// spending, followed by a final MaxCombo analysis whose boundary accounts for
// the alpha already spent and the interim-final correlation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maxcombo/design.hpp"
#include "maxcombo/error.hpp"
#include "maxcombo/estimands.hpp"
#include "maxcombo/mvnorm.hpp"
#include "maxcombo/normal.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/simulation.hpp"

namespace maxcombo {

enum class SpendingFunction { OBrienFlemingLanDeMets };

struct GSPlan {
  double information_fraction = 0.75;
  SpendingFunction spending = SpendingFunction::OBrienFlemingLanDeMets;
  double alpha = 0.025;
  ComboSpec combo = ComboSpec::standard();
  double futility_hr = 1.5;

  void validate() const {
    if (!(information_fraction > 0.0 && information_fraction < 1.0))
      throw ValidationError("information fraction must be in (0, 1)");
    if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must be in (0, 0.5)");
    if (!(futility_hr > 0.0)) throw ValidationError("futility HR threshold must be positive");
  }
};

struct SpentBoundary {
  double z = 0.0;
  double nominal_p = 0.0;
};

/// Lan-DeMets O'Brien-Fleming spending a(t) = 2(1 - Phi(z_{1-alpha/2} / sqrt(t))),
/// returned as a lower-tail boundary.
inline SpentBoundary obf_spending_boundary(double t, double alpha) {
  if (!(t > 0.0 && t <= 1.0)) throw ValidationError("information fraction must be in (0, 1]");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must be in (0, 0.5)");
  SpentBoundary b;
  b.nominal_p = 2.0 * norm_cdf(-norm_quantile(1.0 - alpha / 2.0) / std::sqrt(t));
  b.z = norm_quantile(b.nominal_p);
  return b;
}

/// (1 + k) correlation of the interim log-rank statistic and the final
/// combo components, under independent increments:
/// corr(LR(t), G^{r,g}(1)) = V(G^{r/2,g/2}(t)) / sqrt(V_LR(t) V^{r,g}(1)).
inline CorrelationMatrix interim_final_correlation(const RiskTable& interim,
                                                   const RiskTable& final_table,
                                                   const ComboSpec& combo) {
  if (interim.total_events() > final_table.total_events())
    throw ValidationError("interim data has more events than the final data");
  const auto sl_i = pooled_left_survival(interim);
  const auto sl_f = pooled_left_survival(final_table);
  const auto cs = combo_statistics(final_table, sl_f, combo);
  const WeightSpec lr{0, 0};
  const double v_lr = detail::covariance_from_left_survival(interim, sl_i, lr, lr);
  if (!(v_lr > 0.0)) throw Error("degenerate variance for the interim log-rank statistic");

  const auto k = static_cast<Eigen::Index>(combo.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(k + 1, k + 1);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double c = detail::covariance_from_left_survival(interim, sl_i, lr, combo[static_cast<std::size_t>(j)]);
    m(0, j + 1) = m(j + 1, 0) = c / std::sqrt(v_lr * cs.covariance(j, j));
    for (Eigen::Index l = 0; l < j; ++l) {
      const double r = cs.covariance(j, l) / std::sqrt(cs.covariance(j, j) * cs.covariance(l, l));
      m(j + 1, l + 1) = m(l + 1, j + 1) = r;
    }
  }
  return CorrelationMatrix::symmetrized(m);
}

/// Final boundary z_F solving
///   P(Z_I <= z_I) + P(Z_I > z_I, min_j Z_j <= z_F) = alpha
/// with the interim statistic first in `gamma`.
inline double final_boundary(const CorrelationMatrix& gamma, double z_i, double alpha,
                             const MVNOptions& opt = {}) {
  const int dim = gamma.dim();
  if (dim < 2) throw ValidationError("interim-final correlation needs dimension >= 2");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must be in (0, 0.5)");
  if (!(norm_cdf(z_i) < alpha)) throw ValidationError("interim boundary spends all of alpha");
  const double inf = std::numeric_limits<double>::infinity();
  auto g = [&](double z, const MVNOptions& o) {
    std::vector<double> lo(static_cast<std::size_t>(dim), z), hi(static_cast<std::size_t>(dim), inf);
    lo[0] = z_i;
    // 1 - P(Z_I > z_I, all final Z > z) is the total rejection probability.
    return 1.0 - mvn_rectangle(lo, hi, gamma, o).probability - alpha;
  };
  return detail::solve_level(g, -8.0, 0.0, opt);
}

enum class FutilityRecommendation { Continue, StopHarm };

struct FutilityResult {
  FutilityRecommendation recommendation = FutilityRecommendation::Continue;
  std::optional<double> hr;
  std::string note;
};

/// Advisory only: recommends stopping for harm when the Cox HR exceeds the
/// threshold. Never changes the efficacy boundaries.
inline FutilityResult futility_check(const SurvivalDataset& interim, double threshold = 1.5) {
  FutilityResult r;
  try {
    r.hr = cox_hr(interim).estimate;
    if (*r.hr > threshold) r.recommendation = FutilityRecommendation::StopHarm;
  } catch (const Error& e) {
    r.note = std::string("hazard ratio inestimable: ") + e.what();
  }
  return r;
}

struct GSBoundaries {
  double information_fraction = 0.0;
  double z_interim = 0.0;
  double p_interim = 0.0;
  double z_final = 0.0;
  double p_final = 0.0;  // nominal, Phi(z_final)
  CorrelationMatrix correlation = CorrelationMatrix::identity(1);
  int interim_events = 0;
  int final_events = 0;
};

/// Boundaries from observed interim and final snapshots of the same trial.
inline GSBoundaries observed_boundaries(const GSPlan& plan, const SurvivalDataset& interim,
                                        const SurvivalDataset& final_data,
                                        const MVNOptions& opt = {}) {
  if (!(plan.alpha > 0.0 && plan.alpha < 0.5)) throw ValidationError("alpha must be in (0, 0.5)");
  interim.require_both_arms();
  final_data.require_both_arms();
  if (interim.events() > final_data.events())
    throw ValidationError("interim snapshot has more events than the final snapshot");
  if (interim.size() > final_data.size())
    throw ValidationError("final snapshot is not a superset of the interim snapshot");
  const auto ti = build_risk_table(interim);
  const auto tf = build_risk_table(final_data);
  GSBoundaries b;
  b.interim_events = ti.total_events();
  b.final_events = tf.total_events();
  b.information_fraction = static_cast<double>(b.interim_events) / b.final_events;
  const auto sb = obf_spending_boundary(b.information_fraction, plan.alpha);
  b.z_interim = sb.z;
  b.p_interim = sb.nominal_p;
  b.correlation = interim_final_correlation(ti, tf, plan.combo);
  if (b.information_fraction >= 1.0) {
    b.z_final = b.z_interim;
  } else {
    b.z_final = final_boundary(b.correlation, b.z_interim, plan.alpha, opt);
  }
  b.p_final = norm_cdf(b.z_final);
  return b;
}

/// Planning mode: boundaries from one large simulated null trial whose final
/// cutoff mirrors the design (`final_events` scaled to the large trial, or the
/// calendar time, whichever comes later) and whose interim is at the planned
/// information fraction.
inline GSBoundaries planned_boundaries(const GSPlan& plan, const DesignInput& d,
                                       int design_subjects, int final_events, double duration,
                                       std::uint64_t seed, const MVNOptions& opt = {}) {
  plan.validate();
  if (design_subjects < 2 || final_events < 1)
    throw ValidationError("planning mode needs positive subjects and events");
  const double scale = static_cast<double>(d.n_large) / design_subjects;
  const int big_events = static_cast<int>(std::lround(final_events * scale));
  const auto s = null_scenario(d, d.n_large, CutoffRule::later_of(big_events, duration));
  const auto lt = generate_latent(s, seed);
  const auto fin = apply_cutoff(lt, s.cutoff);
  const int fin_events = static_cast<int>(fin.data.events());
  const int int_events = std::max(1, static_cast<int>(std::lround(plan.information_fraction * fin_events)));
  const auto itm = apply_cutoff(lt, CutoffRule::at_events(int_events));

  const auto ti = build_risk_table(itm.data);
  const auto tf = build_risk_table(fin.data);
  GSBoundaries b;
  // Event counts are reported at the design's size, not the expected-table size.
  b.interim_events = static_cast<int>(std::lround(ti.total_events() / scale));
  b.final_events = static_cast<int>(std::lround(tf.total_events() / scale));
  b.information_fraction = plan.information_fraction;
  const auto sb = obf_spending_boundary(plan.information_fraction, plan.alpha);
  b.z_interim = sb.z;
  b.p_interim = sb.nominal_p;
  b.correlation = interim_final_correlation(ti, tf, plan.combo);
  b.z_final = final_boundary(b.correlation, b.z_interim, plan.alpha, opt);
  b.p_final = norm_cdf(b.z_final);
  return b;
}

struct TwoLookOutcome {
  bool reject_interim = false;
  bool reject_final = false;
  bool stop_harm = false;
};

struct TwoLookSummary {
  int replicates = 0;
  int completed = 0;
  double rejection_rate = 0.0;  // either look
  double interim_rejection_rate = 0.0;
  double mc_se = 0.0;
  double stop_harm_rate = 0.0;
};

/// Simulates the two-look procedure with fixed boundaries. The interim is at
/// the k-th event where k is the information fraction times the scenario's
/// event target; the final analysis uses the scenario's own cutoff rule.
inline TwoLookSummary simulate_two_look(const TrialScenario& s, const GSPlan& plan,
                                        double z_interim, double z_final, int interim_events,
                                        int replicates, std::uint64_t seed, unsigned threads = 0) {
  if (replicates < kMinSimulationReplicates)
    throw ValidationError("replicates must be >= " + std::to_string(kMinSimulationReplicates));
  const auto res = run_replicates<TwoLookOutcome>(
      replicates, seed,
      [&](int, std::uint64_t rs) {
        TwoLookOutcome o;
        const auto lt = generate_latent(s, rs);
        const auto itm = apply_cutoff(lt, CutoffRule::at_events(interim_events));
        const auto lr = wlr_test(itm.data, WeightSpec{0, 0});
        o.stop_harm = futility_check(itm.data, plan.futility_hr).recommendation ==
                      FutilityRecommendation::StopHarm;
        if (lr.Z <= z_interim) {
          o.reject_interim = true;
          return o;
        }
        const auto fin = apply_cutoff(lt, s.cutoff);
        const auto cs = combo_statistics(build_risk_table(fin.data), plan.combo);
        o.reject_final = cs.z_min <= z_final;
        return o;
      },
      threads);
  TwoLookSummary sum;
  sum.replicates = replicates;
  int rej = 0, rej_i = 0, harm = 0;
  for (const auto& r : res) {
    if (!r) continue;
    ++sum.completed;
    rej += r->reject_interim || r->reject_final;
    rej_i += r->reject_interim;
    harm += r->stop_harm;
  }
  if (sum.completed > 0) {
    const double n = sum.completed;
    sum.rejection_rate = rej / n;
    sum.interim_rejection_rate = rej_i / n;
    sum.stop_harm_rate = harm / n;
    sum.mc_se = std::sqrt(sum.rejection_rate * (1.0 - sum.rejection_rate) / n);
  }
  return sum;
}

}  // namespace maxcombo
