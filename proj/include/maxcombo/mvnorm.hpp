#pragma once

// Multivariate normal rectangle probabilities (dimension 1..6) and
// equicoordinate quantiles.
//
// The integrator is Genz's separation-of-variables transform with
// prioritized variable ordering, evaluated on a randomly shifted Richtmyer
// lattice with the baker's transform and antithetic pairs. The error bound is
// three standard errors across the independent shifts. Shifts come from a
// per-call generator seeded from MVNOptions::seed, so a call is a pure
// function of its arguments.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "maxcombo/error.hpp"
#include "maxcombo/normal.hpp"

namespace maxcombo {

inline constexpr int kMaxMvnDimension = 6;

class CorrelationMatrix {
 public:
  static constexpr double kClipEigenvalue = 1e-10;
  static constexpr double kIndefiniteTolerance = 1e-2;
  static constexpr double kStructureTolerance = 1e-8;

  explicit CorrelationMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    const auto k = m_.rows();
    if (k != m_.cols()) throw ValidationError("correlation matrix must be square");
    if (k < 1 || k > kMaxMvnDimension)
      throw ValidationError("correlation matrix dimension must be in [1, 6]");
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        if (!std::isfinite(m_(i, j)))
          throw ValidationError("correlation matrix has a non-finite entry");
        if (std::abs(m_(i, j) - m_(j, i)) > kStructureTolerance)
          throw ValidationError("correlation matrix is not symmetric");
      }
      if (std::abs(m_(i, i) - 1.0) > kStructureTolerance)
        throw ValidationError("correlation matrix needs a unit diagonal");
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      m_(i, i) = 1.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        const double v = 0.5 * (m_(i, j) + m_(j, i));
        if (std::abs(v) > 1.0 + kStructureTolerance)
          throw ValidationError("correlation entry outside [-1, 1]");
        m_(i, j) = m_(j, i) = std::clamp(v, -1.0, 1.0);
      }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m_);
    min_eigenvalue_ = eig.eigenvalues().minCoeff();
    if (min_eigenvalue_ < -kIndefiniteTolerance)
      throw ValidationError("correlation matrix is not positive semidefinite (min eigenvalue " +
                            std::to_string(min_eigenvalue_) + ")");
    if (k > 1 && min_eigenvalue_ < kClipEigenvalue) {
      Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(kClipEigenvalue);
      Eigen::MatrixXd r = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
      const Eigen::VectorXd d = r.diagonal().cwiseSqrt().cwiseInverse();
      m_ = d.asDiagonal() * r * d.asDiagonal();
      m_ = 0.5 * (m_ + m_.transpose());
      m_.diagonal().setOnes();
      regularized_ = true;
    }
  }

  /// Symmetrizes by averaging before validation; for matrices printed with
  /// rounding asymmetries.
  static CorrelationMatrix symmetrized(const Eigen::MatrixXd& m) {
    return CorrelationMatrix(0.5 * (m + m.transpose()));
  }

  static CorrelationMatrix from_covariance(const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd d = cov.diagonal();
    if ((d.array() <= 0.0).any()) throw Error("degenerate variance in covariance matrix");
    const Eigen::VectorXd inv = d.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd c = inv.asDiagonal() * cov * inv.asDiagonal();
    c.diagonal().setOnes();
    return symmetrized(c);
  }

  static CorrelationMatrix identity(int k) {
    return CorrelationMatrix(Eigen::MatrixXd::Identity(k, k));
  }

  static CorrelationMatrix equicorrelated(int k, double r) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(k, k, r);
    m.diagonal().setOnes();
    return CorrelationMatrix(m);
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const Eigen::MatrixXd& matrix() const { return m_; }
  /// True when eigenvalues were clipped to make the matrix numerically PSD.
  bool regularized() const { return regularized_; }
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  Eigen::MatrixXd m_;
  bool regularized_ = false;
  double min_eigenvalue_ = 1.0;
};

struct MVNOptions {
  double abs_accuracy = 1e-5;
  std::uint64_t seed = 0x5EEDF00DULL;
  int shifts = 10;
  int min_points = 256;        // lattice points per shift, first pass
  int max_points = 1 << 17;    // lattice points per shift, cap
};

struct MVNResult {
  double probability = 0.0;
  double error = 0.0;
};

namespace detail {

// Conditioning plan for one rectangle: permuted Cholesky factor and bounds.
// A pivot whose conditional variance vanishes is a deterministic linear
// function of earlier variables; its bounds are folded into the last
// nonsingular variable it depends on, which keeps the integrand smooth.
struct GenzPlan {
  int k = 0;
  std::array<double, kMaxMvnDimension> a{}, b{};
  std::array<std::array<double, kMaxMvnDimension>, kMaxMvnDimension> L{};
  std::array<double, kMaxMvnDimension> diag{};
  std::array<bool, kMaxMvnDimension> singular{};
  std::array<int, kMaxMvnDimension> attach{};  // singular row -> pivot index, -1 if none
  bool infeasible = false;
};

inline constexpr double kSingularVariance = 1e-9;

inline double truncated_mean(double lo, double hi) {
  const double p = norm_cdf(hi) - norm_cdf(lo);
  const double plo = std::isfinite(lo) ? norm_pdf(lo) : 0.0;
  const double phi = std::isfinite(hi) ? norm_pdf(hi) : 0.0;
  if (p < 1e-300) {
    if (!std::isfinite(lo)) return hi;
    if (!std::isfinite(hi)) return lo;
    return 0.5 * (lo + hi);
  }
  return (plo - phi) / p;
}

// Cholesky with Genz-Bretz prioritization: at each step pick the remaining
// variable with the narrowest conditional interval.
inline GenzPlan make_plan(std::span<const double> lower, std::span<const double> upper,
                          const Eigen::MatrixXd& corr) {
  GenzPlan p;
  const int k = static_cast<int>(lower.size());
  p.k = k;
  Eigen::MatrixXd c = corr;
  std::array<double, kMaxMvnDimension> lo{}, hi{}, y{};
  for (int i = 0; i < k; ++i) {
    lo[i] = lower[i];
    hi[i] = upper[i];
  }
  Eigen::MatrixXd Lf = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    int best = i;
    double best_p = std::numeric_limits<double>::infinity();
    for (int j = i; j < k; ++j) {
      double s2 = c(j, j);
      double shift = 0.0;
      for (int m = 0; m < i; ++m) {
        s2 -= Lf(j, m) * Lf(j, m);
        shift += Lf(j, m) * y[m];
      }
      double prob;
      if (s2 > kSingularVariance) {
        const double s = std::sqrt(s2);
        prob = norm_cdf((hi[j] - shift) / s) - norm_cdf((lo[j] - shift) / s);
      } else {
        prob = -1.0;  // deterministic rows go first so they attach early
      }
      if (prob < best_p) {
        best_p = prob;
        best = j;
      }
    }
    if (best != i) {
      std::swap(lo[i], lo[best]);
      std::swap(hi[i], hi[best]);
      c.row(i).swap(c.row(best));
      c.col(i).swap(c.col(best));
      Lf.row(i).swap(Lf.row(best));
    }
    double s2 = c(i, i);
    for (int m = 0; m < i; ++m) s2 -= Lf(i, m) * Lf(i, m);
    if (s2 > kSingularVariance) {
      const double s = std::sqrt(s2);
      Lf(i, i) = s;
      for (int j = i + 1; j < k; ++j) {
        double v = c(j, i);
        for (int m = 0; m < i; ++m) v -= Lf(j, m) * Lf(i, m);
        Lf(j, i) = v / s;
      }
      double shift = 0.0;
      for (int m = 0; m < i; ++m) shift += Lf(i, m) * y[m];
      y[i] = truncated_mean((lo[i] - shift) / s, (hi[i] - shift) / s);
    } else {
      Lf(i, i) = 0.0;
      for (int j = i + 1; j < k; ++j) Lf(j, i) = 0.0;
      y[i] = 0.0;
      p.singular[i] = true;
    }
  }
  for (int i = 0; i < k; ++i) {
    p.a[i] = lo[i];
    p.b[i] = hi[i];
    p.diag[i] = Lf(i, i);
    for (int m = 0; m < i; ++m) p.L[i][m] = Lf(i, m);
    p.attach[i] = -1;
    if (!p.singular[i]) continue;
    for (int m = i - 1; m >= 0; --m) {
      if (!p.singular[m] && std::abs(p.L[i][m]) > 1e-12) {
        p.attach[i] = m;
        break;
      }
    }
    // A deterministic row with no dependence is the constant 0.
    if (p.attach[i] < 0 && !(p.a[i] <= 0.0 && 0.0 <= p.b[i])) p.infeasible = true;
  }
  return p;
}

// Integrand at w in [0,1]^(number of nonsingular pivots - 1).
inline double genz_integrand(const GenzPlan& p, const double* w) {
  std::array<double, kMaxMvnDimension> y{};
  double f = 1.0;
  int wi = 0;
  int remaining = 0;
  for (int i = 0; i < p.k; ++i) remaining += !p.singular[i];
  for (int i = 0; i < p.k; ++i) {
    if (p.singular[i]) continue;
    double shift = 0.0;
    for (int m = 0; m < i; ++m) shift += p.L[i][m] * y[m];
    const double s = p.diag[i];
    double lo = (p.a[i] - shift) / s;
    double hi = (p.b[i] - shift) / s;
    for (int r = i + 1; r < p.k; ++r) {
      if (!p.singular[r] || p.attach[r] != i) continue;
      double partial = 0.0;
      for (int m = 0; m < i; ++m) partial += p.L[r][m] * y[m];
      const double coef = p.L[r][i];
      double l2 = (p.a[r] - partial) / coef;
      double h2 = (p.b[r] - partial) / coef;
      if (coef < 0.0) std::swap(l2, h2);
      lo = std::max(lo, l2);
      hi = std::min(hi, h2);
    }
    if (!(lo < hi)) return 0.0;
    const double d = norm_cdf(lo);
    const double e = norm_cdf(hi);
    const double width = e - d;
    if (width <= 0.0) return 0.0;
    f *= width;
    if (--remaining > 0) {
      double u = d + w[wi++] * width;
      u = std::clamp(u, 1e-300, 1.0 - 1e-16);
      y[i] = norm_quantile(u);
    }
  }
  return f;
}

inline int free_dimensions(const GenzPlan& p) {
  int n = 0;
  for (int i = 0; i < p.k; ++i) n += !p.singular[i];
  return std::max(n - 1, 0);
}

// Randomized lattice integration; stops when the error bound meets the
// accuracy, or, when `threshold` is set, as soon as the estimate is separated
// from it by more than the error bound.
inline MVNResult integrate(const GenzPlan& plan, const MVNOptions& opt,
                           std::optional<double> threshold) {
  if (plan.infeasible) return {0.0, 0.0};
  const int dims = free_dimensions(plan);
  if (dims == 0) {
    const double v = genz_integrand(plan, nullptr);
    return {std::clamp(v, 0.0, 1.0), 0.0};
  }

  static constexpr std::array<double, kMaxMvnDimension> kPrimes = {2, 3, 5, 7, 11, 13};
  std::array<double, kMaxMvnDimension> gen{};
  for (int i = 0; i < dims; ++i) gen[i] = std::fmod(std::sqrt(kPrimes[i]), 1.0);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int shifts = std::max(opt.shifts, 2);
  std::vector<std::array<double, kMaxMvnDimension>> shift(shifts);
  for (auto& s : shift)
    for (int i = 0; i < dims; ++i) s[i] = unif(rng);

  std::vector<double> sums(shifts, 0.0);
  long long evaluated = 0;
  long long target = std::max(opt.min_points, 16);
  MVNResult res;
  std::array<double, kMaxMvnDimension> w{}, wa{};
  for (;;) {
    for (int s = 0; s < shifts; ++s) {
      double acc = 0.0;
      for (long long j = evaluated + 1; j <= target; ++j) {
        for (int i = 0; i < dims; ++i) {
          double x = std::fmod(static_cast<double>(j) * gen[i] + shift[s][i], 1.0);
          x = std::abs(2.0 * x - 1.0);
          w[i] = x;
          wa[i] = 1.0 - x;
        }
        acc += 0.5 * (genz_integrand(plan, w.data()) + genz_integrand(plan, wa.data()));
      }
      sums[s] += acc;
    }
    evaluated = target;
    double mean = 0.0;
    for (double v : sums) mean += v / static_cast<double>(evaluated);
    mean /= shifts;
    double var = 0.0;
    for (double v : sums) {
      const double dv = v / static_cast<double>(evaluated) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(shifts) * (shifts - 1);
    res.probability = std::clamp(mean, 0.0, 1.0);
    res.error = 3.0 * std::sqrt(var);
    if (res.error <= opt.abs_accuracy || target >= opt.max_points) break;
    if (threshold && std::abs(res.probability - *threshold) > res.error) break;
    target = std::min<long long>(target * 2, opt.max_points);
  }
  return res;
}

inline void check_bounds(std::span<const double> lower, std::span<const double> upper, int k) {
  if (static_cast<int>(lower.size()) != k || static_cast<int>(upper.size()) != k)
    throw ValidationError("mvn_rectangle: bound dimensions do not match the matrix");
  for (int i = 0; i < k; ++i)
    if (std::isnan(lower[i]) || std::isnan(upper[i]))
      throw ValidationError("mvn_rectangle: NaN bound");
}

}  // namespace detail

/// P(lower <= Z <= upper) for Z ~ N(0, corr). Infinite bounds are allowed.
inline MVNResult mvn_rectangle(std::span<const double> lower, std::span<const double> upper,
                               const CorrelationMatrix& corr, const MVNOptions& opt = {}) {
  const int k = corr.dim();
  detail::check_bounds(lower, upper, k);
  for (int i = 0; i < k; ++i)
    if (!(lower[i] < upper[i])) return {0.0, 0.0};
  if (k == 1) return {norm_cdf(upper[0]) - norm_cdf(lower[0]), 0.0};
  return detail::integrate(detail::make_plan(lower, upper, corr.matrix()), opt, std::nullopt);
}

/// Like mvn_rectangle, but only as precise as needed to tell whether the
/// probability is above or below `threshold`.
inline MVNResult mvn_rectangle_vs(std::span<const double> lower, std::span<const double> upper,
                                  const CorrelationMatrix& corr, double threshold,
                                  const MVNOptions& opt = {}) {
  const int k = corr.dim();
  detail::check_bounds(lower, upper, k);
  for (int i = 0; i < k; ++i)
    if (!(lower[i] < upper[i])) return {0.0, 0.0};
  if (k == 1) return {norm_cdf(upper[0]) - norm_cdf(lower[0]), 0.0};
  return detail::integrate(detail::make_plan(lower, upper, corr.matrix()), opt, threshold);
}

/// P(min_j Z_j <= c).
inline double prob_min_below(double c, const CorrelationMatrix& corr, const MVNOptions& opt = {}) {
  const int k = corr.dim();
  std::vector<double> lo(k, c), hi(k, std::numeric_limits<double>::infinity());
  return 1.0 - mvn_rectangle(lo, hi, corr, opt).probability;
}

namespace detail {

// Bracketed root search (TOMS 748) for a monotone objective with a sign
// change over [lo, hi].
template <class F>
double bracketed_root(F&& f, double lo, double hi, int max_iter, double tol) {
  const double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0) == (fhi > 0)) throw Error("quantile search: root not bracketed");
  std::uintmax_t iters = static_cast<std::uintmax_t>(max_iter);
  auto stop = [tol](double a, double b) { return std::abs(b - a) < tol; };
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, stop, iters);
  if (iters >= static_cast<std::uintmax_t>(max_iter)) throw Error("quantile search did not converge");
  return 0.5 * (a + b);
}

// Root of a level equation g(c, options) = 0 whose terms are lattice
// probabilities: a cheap coarse solve brackets the root, then Newton steps at
// full accuracy with the coarse slope polish it.
template <class G>
double solve_level(G&& g, double lo, double hi, const MVNOptions& opt) {
  MVNOptions coarse = opt;
  coarse.abs_accuracy = std::max(opt.abs_accuracy, 3e-4);
  coarse.max_points = std::min(opt.max_points, 1 << 11);
  auto gc = [&](double c) { return g(c, coarse); };
  const double c0 = bracketed_root(gc, lo, hi, 200, 1e-5);
  if (coarse.abs_accuracy <= opt.abs_accuracy && coarse.max_points >= opt.max_points) return c0;
  constexpr double kSlopeStep = 0.02;
  const double slope = (gc(std::min(c0 + kSlopeStep, hi)) - gc(std::max(c0 - kSlopeStep, lo))) /
                       (std::min(c0 + kSlopeStep, hi) - std::max(c0 - kSlopeStep, lo));
  if (!(std::abs(slope) > 0.0)) return c0;
  // Stop once the full-accuracy residual is within twice the integration target.
  double c = c0, best = c0, best_r = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 5; ++it) {
    const double r = g(c, opt);
    if (std::abs(r) < best_r) best_r = std::abs(r), best = c;
    if (best_r <= 2.0 * opt.abs_accuracy) break;
    c = std::clamp(c - r / slope, lo, hi);
  }
  c = best;
  return c;
}

}  // namespace detail

/// c with P(min_j Z_j <= c) = target, searched on [-8, 0].
inline double equicoordinate_lower_quantile(const CorrelationMatrix& corr, double target,
                                            const MVNOptions& opt = {}) {
  if (!(target > 0.0 && target <= 0.5))
    throw ValidationError("lower quantile target must be in (0, 0.5]");
  if (corr.dim() == 1) return norm_quantile(target);
  auto g = [&](double c, const MVNOptions& o) { return prob_min_below(c, corr, o) - target; };
  return detail::solve_level(g, -8.0, 0.0, opt);
}

/// C* with P(|Z_j| <= C* for all j) = coverage, searched on [0, 8].
inline double equicoordinate_central_quantile(const CorrelationMatrix& corr, double coverage,
                                              const MVNOptions& opt = {}) {
  if (!(coverage > 0.5 && coverage < 1.0))
    throw ValidationError("coverage must be in (0.5, 1)");
  if (corr.dim() == 1) return norm_quantile(0.5 + 0.5 * coverage);
  const int k = corr.dim();
  auto g = [&](double c, const MVNOptions& o) {
    std::vector<double> lo(k, -c), hi(k, c);
    return mvn_rectangle(lo, hi, corr, o).probability - coverage;
  };
  return detail::solve_level(g, 1e-6, 8.0, opt);
}

}  // namespace maxcombo
