// Acceptance checks AC1-AC8. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset, e.g. `acceptance 2 3`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "../oracles.hpp"
#include "maxcombo/maxcombo.hpp"

using namespace maxcombo;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kSeed = 20240601;

struct Check {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (ok ? "" : "!") << what << "; ";
  }
  void within(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s.precision(6);
    s << what << "=" << got << " (target " << want << " +/- " << tol << ")";
    expect(std::abs(got - want) <= tol, s.str());
  }
};

// Weight order of the reference null matrix.
const std::vector<WeightSpec> kReferenceOrder{{0, 0}, {0, 1}, {1, 0}, {1, 1}};

Eigen::MatrixXd reference_null_matrix() {
  Eigen::MatrixXd m(4, 4);
  m << 1, .864, .913, .940, .864, 1, .583, .892, .913, .583, 1, .792, .940, .892, .793, 1;
  return m;
}

Eigen::MatrixXd reference_interim_matrix() {
  Eigen::MatrixXd m(5, 5);
  m << 1.000, 0.858, 0.565, 0.926, 0.769, 0.858, 1.000, 0.863, 0.930, 0.940, 0.565, 0.863, 1.000, 0.617,
      0.922, 0.926, 0.930, 0.618, 1.000, 0.794, 0.768, 0.940, 0.922, 0.794, 1.000;
  return m;
}

DesignInput delayed_design_input() {
  DesignInput d;
  d.enrollment = {EnrollmentKind::UniformOverDuration, 15.0};
  d.control = PiecewiseHazard::from_median(8.0);
  const double lc = std::numbers::ln2 / 8.0;
  d.treatment = PiecewiseHazard({6.0}, {lc, 0.56 * lc});
  d.dropout_rate = 0.001;
  d.duration = 31.0;
  return d;
}

// ---------------------------------------------------------------------------

Check ac1() {
  Check c;
  std::mt19937_64 rng(kSeed);
  const auto spec = ComboSpec::standard();
  const std::vector<WeightSpec> extra{{0, 0}, {0, 1}, {1, 1}, {1, 0}, {0.5, 0}, {0, 0.5}, {0.5, 0.5}, {2, 1}};
  double worst = 0.0;
  int cases = 0;
  for (int n : {20, 50, 200}) {
    for (int rep = 0; rep < 67; ++rep, ++cases) {
      const auto d = oracle::random_dataset(rng, n);
      const auto t = build_risk_table(d);
      const auto km = km_estimate(d);
      for (const auto& a : extra)
        for (const auto& b : extra) {
          const double cov = wlr_covariance(t, km, a, b);
          double v = 0.0;
          try {
            v = wlr_test(t, km, midpoint(a, b)).V;
          } catch (const Error&) {
            v = 0.0;  // zero-variance weight on this dataset
          }
          worst = std::max(worst, std::abs(cov - v) / std::max(1.0, std::abs(v)));
        }
    }
  }
  c.expect(cases >= 200, std::to_string(cases) + " datasets");
  std::ostringstream s;
  s << "max relative gap " << worst << " (tol 1e-12)";
  c.expect(worst <= 1e-12, s.str());
  return c;
}

Check ac2() {
  Check c;
  const auto corr = CorrelationMatrix::symmetrized(reference_null_matrix());
  const auto b = adjusted_boundary(corr, 0.025);
  c.within(b.z_cutoff, -2.286, 0.01, "z_cutoff");
  c.within(b.nominal_level, 0.011, 0.001, "nominal level");
  return c;
}

Check ac3() {
  Check c;
  const auto g = CorrelationMatrix::symmetrized(reference_interim_matrix());
  c.within(final_boundary(g, -2.34, 0.025), -2.305, 0.015, "z_F");
  const auto sb = obf_spending_boundary(0.75, 0.025);
  c.within(sb.z, -2.34, 0.01, "z_I");
  c.within(sb.nominal_p, 0.0096, 0.0005, "p_I");
  return c;
}

Check ac4() {
  Check c;
  struct Row {
    const char* scenario;
    bool modified;
    double target, tol;
  };
  const Row rows[] = {
      {"strong_null_1", false, 0.021, 0.005},
      {"severe_late_crossing", false, 0.050, 0.006},
      {"strong_null_2", false, 0.489, 0.015},
      {"strong_null_1_enroll6", false, 0.023, 0.006},
      {"severe_late_crossing_enroll6", false, 0.058, 0.006},
      {"strong_null_2", true, 0.018, 0.005},
      {"severe_late_crossing", true, 0.026, 0.005},
      {"ph_marginal", true, 0.761, 0.015},
      {"delayed_effect", true, 0.782, 0.015},
      {"ph_marginal", false, 0.744, 0.015},
      {"delayed_effect", false, 0.799, 0.015},
  };
  for (const auto& r : rows) {
    const auto spec = r.modified ? ComboSpec::modified() : ComboSpec::standard();
    const auto oc = operating_characteristics(scenarios::by_name(r.scenario), spec, Decision::level(0.025), 20000,
                                              kSeed);
    c.within(oc.rejection_rate, r.target, r.tol, std::string(r.scenario) + (r.modified ? "/modified" : ""));
  }
  return c;
}

Check ac5() {
  Check c;
  const auto d = delayed_design_input();
  DesignOptions opt;
  opt.replicates = 20000;
  opt.seed = kSeed;
  std::vector<ConfirmationScenario> extra{{scenarios::ph_hr0692(), ConfirmationScenario::Role::Report}};
  const auto r = design_trial(d, extra, opt);
  c.within(r.final_subjects, 472, 0.05 * 472, "final subjects");
  c.within(r.final_events, 372, 0.05 * 372, "final events");
  const auto target = CorrelationMatrix::symmetrized(reference_null_matrix()).matrix();
  std::vector<int> at;
  for (const auto& w : kReferenceOrder)
    at.push_back(static_cast<int>(std::ranges::find(d.combo.weights(), w) - d.combo.weights().begin()));
  double gap = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) gap = std::max(gap, std::abs(r.null_correlation.matrix()(at[i], at[j]) - target(i, j)));
  c.within(gap, 0.0, 0.03, "max |Gamma0 - reference|");
  for (const auto& cr : r.confirmation)
    if (cr.label == "ph_hr0692") c.within(cr.oc.rejection_rate, 0.886, 0.015, "PH power at HR 0.692");
  c.within(r.logrank_comparison.subjects, 690, 0.05 * 690, "log-rank subjects");
  c.within(r.logrank_comparison.events, 544, 0.05 * 544, "log-rank events");
  return c;
}

Check ac6() {
  Check c;
  const auto d = delayed_design_input();
  const int n = 472, events = 372;
  const auto null = null_scenario(d, n, CutoffRule::later_of(events, d.duration));
  const auto corr = estimate_null_correlation(d, d.duration, derive_seed(kSeed, 1));
  const double z_mc = adjusted_boundary(corr, d.alpha).z_cutoff;
  const double z_single = norm_quantile(d.alpha);
  const auto spec = ComboSpec::standard();

  using Hits = std::array<int, 5>;
  const auto res = run_replicates<Hits>(10000, derive_seed(kSeed, 2), [&](int, std::uint64_t s) {
    const auto data = simulate_trial(null, s);
    const auto cs = combo_statistics(build_risk_table(data), spec);
    Hits h{};
    for (std::size_t j = 0; j < 4; ++j) h[j] = cs.components[j].Z <= z_single;
    h[4] = cs.z_min <= z_mc;
    return h;
  });
  Hits total{};
  int done = 0;
  for (const auto& r : res) {
    if (!r) continue;
    ++done;
    for (std::size_t j = 0; j < 5; ++j) total[j] += (*r)[j];
  }
  for (std::size_t j = 0; j < 4; ++j)
    c.within(static_cast<double>(total[j]) / done, 0.025, 0.005, spec[j].label());
  c.within(static_cast<double>(total[4]) / done, 0.025, 0.005, "MaxCombo");

  GSPlan plan;
  const auto b = planned_boundaries(plan, d, n, events, d.duration, derive_seed(kSeed, 3));
  const int interim = static_cast<int>(std::lround(plan.information_fraction * events));
  const auto two = simulate_two_look(null, plan, b.z_interim, b.z_final, interim, 20000, derive_seed(kSeed, 4));
  std::ostringstream s;
  s << "two-look type I " << two.rejection_rate << " <= " << 0.025 + 3 * two.mc_se;
  c.expect(two.rejection_rate <= 0.025 + 3 * two.mc_se, s.str());
  return c;
}

Check ac7() {
  Check c;
  std::mt19937_64 rng(kSeed);
  double cox = 0.0, u = 0.0, v = 0.0, rm = 0.0, km = 0.0;
  int cox_cases = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto small = oracle::random_dataset(rng, 6 + rep % 5);
    if (small.events(Arm::Control) > 0 && small.events(Arm::Treatment) > 0) {
      try {
        cox = std::max(cox, std::abs(std::log(cox_hr(small).estimate) - oracle::cox_beta_bruteforce(small)));
        ++cox_cases;
      } catch (const Error&) {
        // monotone likelihood: no finite estimate to compare
      }
    }
    const auto d = oracle::random_dataset(rng, 40);
    for (const auto spec = ComboSpec::standard(); const auto& w : spec.weights()) {
      const auto got = wlr_test(d, w);
      const auto want = oracle::wlr_direct(d, w.rho, w.gamma);
      u = std::max(u, std::abs(got.U - want.U) / std::max(1.0, std::abs(want.U)));
      v = std::max(v, std::abs(got.V - want.V) / std::max(1.0, want.V));
    }
    const auto r = rmst(d);
    rm = std::max({rm, std::abs(r.control.estimate - oracle::rmst_step(d, Arm::Control, r.tau)),
                   std::abs(r.treatment.estimate - oracle::rmst_step(d, Arm::Treatment, r.tau))});
    const auto k = km_estimate(d);
    for (double t = 0.0; t < 30.0; t += 0.5) km = std::max(km, std::abs(k.survival(t) - oracle::km_pooled(d, t)));
  }
  c.expect(cox_cases > 20, std::to_string(cox_cases) + " Cox cases");
  auto bound = [&](double got, double tol, const char* what) {
    std::ostringstream s;
    s << what << " " << got << " <= " << tol;
    c.expect(got <= tol, s.str());
  };
  bound(cox, 1e-6, "Cox");
  bound(u, 1e-12, "WLR U");
  bound(v, 1e-12, "WLR V");
  bound(rm, 1e-10, "RMST");
  bound(km, 1e-12, "KM");
  return c;
}

Check ac8() {
  Check c;
  std::mt19937_64 rng(kSeed);
  double swap = 0.0, scale = 0.0, perm = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    const auto d = oracle::random_dataset(rng, 100, rep % 2 == 0);
    const auto base = combo_statistics(build_risk_table(d), ComboSpec::standard());
    const auto sw = combo_statistics(build_risk_table(d.swapped_arms()), ComboSpec::standard());
    const auto sc = combo_statistics(build_risk_table(d.scaled_times(7.25)), ComboSpec::standard());
    auto recs = d.records();
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto pm = combo_statistics(build_risk_table(SurvivalDataset(recs)), ComboSpec::standard());
    for (std::size_t j = 0; j < 4; ++j) {
      swap = std::max(swap, std::abs(base.components[j].Z + sw.components[j].Z));
      scale = std::max(scale, std::abs(base.components[j].Z - sc.components[j].Z));
      perm = std::max(perm, std::abs(base.components[j].Z - pm.components[j].Z));
    }
    swap = std::max(swap, std::abs(rmst(d).difference.estimate + rmst(d.swapped_arms()).difference.estimate));
    swap = std::max(swap, std::abs(net_benefit(d, 0.0, 50).estimate + net_benefit(d.swapped_arms(), 0.0, 50).estimate));
  }
  c.expect(swap <= 1e-12, "arm swap " + std::to_string(swap));
  c.expect(scale <= 1e-12, "time scale " + std::to_string(scale));
  c.expect(perm == 0.0, "permutation " + std::to_string(perm));

  double inv = 0.0;
  for (double r : {0.2, 0.5, 0.8}) {
    const auto corr = CorrelationMatrix::equicorrelated(4, r);
    const double z = equicoordinate_lower_quantile(corr, 0.025);
    const std::vector<double> lo(4, z), hi(4, kInf);
    inv = std::max(inv, std::abs(1.0 - mvn_rectangle(lo, hi, corr).probability - 0.025));
  }
  c.expect(inv <= 2e-5, "quantile inversion " + std::to_string(inv));

  std::set<int> rejections;
  for (unsigned t : {1u, 2u, 5u})
    rejections.insert(operating_characteristics(scenarios::delayed_effect(), ComboSpec::standard(),
                                                Decision::level(0.025), 300, kSeed, t)
                          .rejections);
  c.expect(rejections.size() == 1, "thread-count determinism");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const std::array<std::function<Check()>, 8> checks{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all = true;
  for (int i = 0; i < 8; ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = checks[static_cast<std::size_t>(i)]();
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && c.pass;
    std::printf("AC%d %s [%.1fs] %s\n", i + 1, c.pass ? "PASS" : "FAIL", secs, c.detail.str().c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
