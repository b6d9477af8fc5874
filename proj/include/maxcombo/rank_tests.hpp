#pragma once

// Fleming-Harrington weighted log-rank statistics, their joint null
// covariance, the MaxCombo test and the weighted hazard ratio.
//
// Sign convention: U sums observed minus expected events in the treatment
// arm, so a treatment benefit gives a negative Z. MaxCombo takes the minimum
// component and rejects in the lower tail.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "maxcombo/error.hpp"
#include "maxcombo/mvnorm.hpp"
#include "maxcombo/normal.hpp"
#include "maxcombo/survival_data.hpp"

namespace maxcombo {

struct WeightSpec {
  double rho = 0.0;
  double gamma = 0.0;

  WeightSpec() = default;
  WeightSpec(double r, double g) : rho(r), gamma(g) {
    if (!(rho >= 0.0) || !(gamma >= 0.0) || !std::isfinite(rho) || !std::isfinite(gamma))
      throw ValidationError("weight exponents must be finite and >= 0");
  }

  /// FH weight at pooled left-limit survival s; 0^0 is taken as 1.
  double operator()(double s) const {
    const double a = rho == 0.0 ? 1.0 : std::pow(s, rho);
    const double b = gamma == 0.0 ? 1.0 : std::pow(1.0 - s, gamma);
    return a * b;
  }

  std::string label() const {
    return "G(" + detail::format_double(rho) + "," + detail::format_double(gamma) + ")";
  }

  friend bool operator==(const WeightSpec&, const WeightSpec&) = default;
};

/// Exponent-averaged weight; its variance is the covariance of a and b.
inline WeightSpec midpoint(const WeightSpec& a, const WeightSpec& b) {
  return {0.5 * (a.rho + b.rho), 0.5 * (a.gamma + b.gamma)};
}

class ComboSpec {
 public:
  explicit ComboSpec(std::vector<WeightSpec> w) : weights_(std::move(w)) {
    if (weights_.empty()) throw ValidationError("combo needs at least one weight");
    if (static_cast<int>(weights_.size()) > kMaxMvnDimension)
      throw ValidationError("combo supports at most 6 weights");
    for (std::size_t i = 0; i < weights_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (weights_[i] == weights_[j])
          throw ValidationError("duplicate weight " + weights_[i].label() + " in combo");
  }

  static ComboSpec standard() { return ComboSpec({{0, 0}, {0, 1}, {1, 1}, {1, 0}}); }
  static ComboSpec modified() { return ComboSpec({{0, 0}, {0, 0.5}, {0.5, 0.5}, {0.5, 0}}); }

  const std::vector<WeightSpec>& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  const WeightSpec& operator[](std::size_t i) const { return weights_[i]; }

 private:
  std::vector<WeightSpec> weights_;
};

struct WLRResult {
  WeightSpec weight;
  double U = 0.0;
  double V = 0.0;
  double Z = 0.0;
  double p_value = 0.5;  // one-sided, Phi(Z)
};

// ---------------------------------------------------------------------------
// Per-row quantities shared by every weight

/// Pooled KM left limits S(t_i-) at the risk-table rows.
inline std::vector<double> pooled_left_survival(const RiskTable& table) {
  std::vector<double> s(table.size());
  double cur = 1.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    s[i] = cur;
    cur *= 1.0 - static_cast<double>(table[i].d) / table[i].n;
  }
  return s;
}

inline std::vector<double> pooled_left_survival(const RiskTable& table, const KMCurve& pooled) {
  std::vector<double> s(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) s[i] = pooled.survival_left(table[i].time);
  return s;
}

/// Hypergeometric variance factor n1 n0 d (n-d) / (n^2 (n-1)); 0 when n == 1.
inline double variance_factor(const RiskRow& r) {
  if (r.n <= 1) return 0.0;
  const double n = r.n;
  return static_cast<double>(r.n1) * r.n0 * r.d * (n - r.d) / (n * n * (n - 1.0));
}

inline double observed_minus_expected(const RiskRow& r) {
  return r.d1 - static_cast<double>(r.n1) * r.d / r.n;
}

namespace detail {

inline WLRResult wlr_from_left_survival(const RiskTable& table, std::span<const double> sl,
                                        const WeightSpec& w) {
  WLRResult res;
  res.weight = w;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const double wi = w(sl[i]);
    if (wi == 0.0) continue;
    res.U += wi * observed_minus_expected(table[i]);
    res.V += wi * wi * variance_factor(table[i]);
  }
  if (!(res.V > 0.0)) throw Error("degenerate variance for weight " + w.label());
  res.Z = res.U / std::sqrt(res.V);
  res.p_value = norm_cdf(res.Z);
  return res;
}

inline double covariance_from_left_survival(const RiskTable& table, std::span<const double> sl,
                                            const WeightSpec& a, const WeightSpec& b) {
  double c = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i)
    c += a(sl[i]) * b(sl[i]) * variance_factor(table[i]);
  return c;
}

}  // namespace detail

inline WLRResult wlr_test(const RiskTable& table, const KMCurve& pooled, const WeightSpec& w) {
  const auto sl = pooled_left_survival(table, pooled);
  return detail::wlr_from_left_survival(table, sl, w);
}

inline WLRResult wlr_test(const SurvivalDataset& data, const WeightSpec& w) {
  data.require_both_arms();
  const auto table = build_risk_table(data);
  const auto sl = pooled_left_survival(table);
  return detail::wlr_from_left_survival(table, sl, w);
}

inline double wlr_covariance(const RiskTable& table, const KMCurve& pooled, const WeightSpec& a,
                             const WeightSpec& b) {
  const auto sl = pooled_left_survival(table, pooled);
  return detail::covariance_from_left_survival(table, sl, a, b);
}

// ---------------------------------------------------------------------------
// MaxCombo

/// Component statistics and joint covariance for a combo on one risk table.
struct ComboStatistics {
  std::vector<WLRResult> components;
  Eigen::MatrixXd covariance;
  std::size_t selected = 0;  // argmin Z, first in list order on ties
  double z_min = 0.0;

  CorrelationMatrix correlation() const { return CorrelationMatrix::from_covariance(covariance); }
};

inline ComboStatistics combo_statistics(const RiskTable& table, std::span<const double> sl,
                                        const ComboSpec& spec) {
  ComboStatistics cs;
  const auto k = spec.size();
  cs.components.reserve(k);
  for (const auto& w : spec.weights())
    cs.components.push_back(detail::wlr_from_left_survival(table, sl, w));
  cs.covariance.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    cs.covariance(i, i) = cs.components[i].V;
    for (std::size_t j = 0; j < i; ++j) {
      const double c = detail::covariance_from_left_survival(table, sl, spec[i], spec[j]);
      cs.covariance(i, j) = cs.covariance(j, i) = c;
    }
  }
  cs.z_min = cs.components[0].Z;
  for (std::size_t i = 1; i < k; ++i) {
    if (cs.components[i].Z < cs.z_min) {
      cs.z_min = cs.components[i].Z;
      cs.selected = i;
    }
  }
  return cs;
}

inline ComboStatistics combo_statistics(const RiskTable& table, const ComboSpec& spec) {
  const auto sl = pooled_left_survival(table);
  return combo_statistics(table, sl, spec);
}

/// P(min_j Z_j <= z_min) under N(0, corr), clamped to the analytic bounds
/// [Phi(z_min), k Phi(z_min)] to absorb integration noise.
inline double maxcombo_adjusted_p(double z_min, const CorrelationMatrix& corr,
                                  const MVNOptions& opt = {}) {
  const double lo = norm_cdf(z_min);
  const double hi = std::min(1.0, corr.dim() * lo);
  if (corr.dim() == 1) return lo;
  return std::clamp(prob_min_below(z_min, corr, opt), lo, hi);
}

/// Rejection decision at a one-sided level without integrating when the
/// unadjusted or Bonferroni bounds already decide it.
inline bool maxcombo_rejects_at_level(double z_min, const CorrelationMatrix& corr, double alpha,
                                      const MVNOptions& opt = {}) {
  const int k = corr.dim();
  if (z_min > norm_quantile(alpha)) return false;
  if (z_min <= norm_quantile(alpha / k)) return true;
  std::vector<double> lo(static_cast<std::size_t>(k), z_min);
  std::vector<double> hi(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
  return 1.0 - mvn_rectangle_vs(lo, hi, corr, 1.0 - alpha, opt).probability <= alpha;
}

struct WeightedHR {
  WeightSpec weight;
  double log_hr = 0.0;
  double se = 0.0;  // of log HR
  double hr() const { return std::exp(log_hr); }
};

struct HRInterval {
  double estimate = 1.0;
  double lower = 1.0;
  double upper = 1.0;
  double critical_value = 1.96;
};

struct MaxComboResult {
  std::vector<WLRResult> components;
  CorrelationMatrix correlation = CorrelationMatrix::identity(1);
  std::size_t selected = 0;
  double z_min = 0.0;
  double adjusted_p = 1.0;
  std::optional<WeightedHR> whr;        // at the selected weight
  std::optional<HRInterval> whr_ci;     // simultaneous interval
  std::string whr_note;                 // why whr is absent, if it is

  const WeightSpec& selected_weight() const { return components[selected].weight; }
};

// ---------------------------------------------------------------------------
// Weighted hazard ratio

namespace detail {

inline double event_prob_treatment(const RiskRow& r, double beta) {
  if (r.n1 == 0) return 0.0;
  if (r.n0 == 0) return 1.0;
  const double e = r.n1 * std::exp(beta);
  return e / (r.n0 + e);
}

}  // namespace detail

/// Weighted Breslow score for the treatment log HR.
inline double weighted_score(const RiskTable& table, std::span<const double> w, double beta) {
  double u = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (w[i] == 0.0) continue;
    const auto& r = table[i];
    u += w[i] * (r.d1 - r.d * detail::event_prob_treatment(r, beta));
  }
  return u;
}

inline WeightedHR weighted_hr(const RiskTable& table, std::span<const double> sl,
                              const WeightSpec& ws) {
  std::vector<double> w(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) w[i] = ws(sl[i]);

  // Limits of the score as beta -> -inf / +inf decide whether a finite root exists.
  double u_neg = 0.0, u_pos = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table[i];
    u_neg += w[i] * (r.d1 - (r.n0 == 0 ? r.d : 0));
    u_pos += w[i] * (r.d1 - (r.n1 > 0 ? r.d : 0));
  }
  if (!(u_neg > 0.0) || !(u_pos < 0.0))
    throw Error("monotone likelihood: hazard ratio estimate is infinite for " + ws.label());

  constexpr double kBound = 10.0;
  auto f = [&](double b) { return weighted_score(table, w, b); };
  const double flo = f(-kBound), fhi = f(kBound);
  if (flo < 0.0 || fhi > 0.0)
    throw Error("weighted hazard ratio root outside log HR range [-10, 10]");
  std::uintmax_t iters = 300;
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-10; };
  const auto [a, b] = boost::math::tools::toms748_solve(f, -kBound, kBound, flo, fhi, tol, iters);
  if (iters >= 300) throw Error("weighted hazard ratio did not converge");

  WeightedHR res;
  res.weight = ws;
  res.log_hr = 0.5 * (a + b);
  double K = 0.0, J = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const double p = detail::event_prob_treatment(table[i], res.log_hr);
    const double info = table[i].d * p * (1.0 - p);
    J += w[i] * info;
    K += w[i] * w[i] * info;
  }
  if (!(J > 0.0)) throw Error("degenerate information for weighted hazard ratio");
  res.se = std::sqrt(K) / J;
  return res;
}

inline WeightedHR weighted_hr(const SurvivalDataset& data, const WeightSpec& w) {
  data.require_both_arms();
  if (data.events(Arm::Control) == 0 || data.events(Arm::Treatment) == 0)
    throw Error("monotone likelihood: an arm has no events");
  const auto table = build_risk_table(data);
  const auto sl = pooled_left_survival(table);
  return weighted_hr(table, sl, w);
}

/// exp(log HR -/+ c * SE).
inline HRInterval hr_interval(const WeightedHR& whr, double c) {
  return {whr.hr(), std::exp(whr.log_hr - c * whr.se), std::exp(whr.log_hr + c * whr.se), c};
}

struct MaxComboOptions {
  MVNOptions mvn{};
  bool with_whr = true;
  double coverage = 0.95;
};

inline MaxComboResult maxcombo_test(const SurvivalDataset& data, const ComboSpec& spec,
                                    const MaxComboOptions& opt = {}) {
  data.require_both_arms();
  if (data.events() < 2) throw ValidationError("MaxCombo needs at least 2 events");
  const auto table = build_risk_table(data);
  const auto sl = pooled_left_survival(table);
  auto cs = combo_statistics(table, sl, spec);

  MaxComboResult res;
  res.components = std::move(cs.components);
  res.correlation = CorrelationMatrix::from_covariance(cs.covariance);
  res.selected = cs.selected;
  res.z_min = cs.z_min;
  res.adjusted_p = maxcombo_adjusted_p(res.z_min, res.correlation, opt.mvn);

  if (opt.with_whr) {
    try {
      res.whr = weighted_hr(table, sl, res.selected_weight());
      const double c = equicoordinate_central_quantile(res.correlation, opt.coverage, opt.mvn);
      res.whr_ci = hr_interval(*res.whr, c);
    } catch (const Error& e) {
      res.whr.reset();
      res.whr_ci.reset();
      res.whr_note = e.what();
    }
  }
  return res;
}

/// Weighted HR at the MaxCombo-selected weight with a simultaneous interval.
inline HRInterval simultaneous_ci(const SurvivalDataset& data, const ComboSpec& spec,
                                  double coverage = 0.95, const MVNOptions& mvn = {}) {
  MaxComboOptions opt;
  opt.mvn = mvn;
  opt.coverage = coverage;
  const auto res = maxcombo_test(data, spec, opt);
  if (!res.whr_ci) throw Error("simultaneous interval unavailable: " + res.whr_note);
  return *res.whr_ci;
}

}  // namespace maxcombo
