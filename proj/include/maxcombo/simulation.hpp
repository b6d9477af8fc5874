#pragma once

// Piecewise-exponential trial simulation and the operating-characteristics
// engine.
//
// Reproducibility: replicate r draws from a generator seeded with
// derive_seed(master, r), so any replicate can be regenerated alone and the
// aggregate does not depend on how replicates are spread over threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "maxcombo/error.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/survival_data.hpp"

namespace maxcombo {

class PiecewiseHazard {
 public:
  PiecewiseHazard() : PiecewiseHazard({}, {1.0}) {}

  /// `cutpoints` are the interior change points (ascending, > 0); there is one
  /// more rate than cutpoints and the last rate extends indefinitely.
  PiecewiseHazard(std::vector<double> cutpoints, std::vector<double> rates)
      : cuts_(std::move(cutpoints)), rates_(std::move(rates)) {
    if (rates_.size() != cuts_.size() + 1)
      throw ValidationError("piecewise hazard needs one more rate than cutpoints");
    for (double r : rates_)
      if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("hazard rates must be positive");
    for (std::size_t i = 0; i < cuts_.size(); ++i)
      if (!(cuts_[i] > (i ? cuts_[i - 1] : 0.0)) || !std::isfinite(cuts_[i]))
        throw ValidationError("hazard cutpoints must be positive and strictly ascending");
  }

  static PiecewiseHazard exponential(double rate) { return PiecewiseHazard({}, {rate}); }
  static PiecewiseHazard from_median(double median) {
    return exponential(std::numbers::ln2 / median);
  }

  const std::vector<double>& cutpoints() const { return cuts_; }
  const std::vector<double>& rates() const { return rates_; }

  double rate(double t) const {
    const auto i = std::upper_bound(cuts_.begin(), cuts_.end(), t) - cuts_.begin();
    return rates_[static_cast<std::size_t>(i)];
  }

  double cumulative(double t) const {
    double h = 0.0, start = 0.0;
    for (std::size_t i = 0; i < rates_.size(); ++i) {
      const double end = i < cuts_.size() ? cuts_[i] : std::numeric_limits<double>::infinity();
      if (t <= end) return h + rates_[i] * (t - start);
      h += rates_[i] * (end - start);
      start = end;
    }
    return h;
  }

  double survival(double t) const { return std::exp(-cumulative(t)); }

  /// Inverse CDF: walk the segments until -log(u) of cumulative hazard is spent.
  double sample(double u) const {
    double remaining = -std::log(u);
    double start = 0.0;
    for (std::size_t i = 0; i < rates_.size(); ++i) {
      const double end = i < cuts_.size() ? cuts_[i] : std::numeric_limits<double>::infinity();
      const double seg = rates_[i] * (end - start);
      if (remaining <= seg) return start + remaining / rates_[i];
      remaining -= seg;
      start = end;
    }
    return std::numeric_limits<double>::infinity();
  }

 private:
  std::vector<double> cuts_;
  std::vector<double> rates_;
};

inline double sample_event_time(const PiecewiseHazard& h, double u) { return h.sample(u); }

enum class EnrollmentKind { UniformOverDuration, Instantaneous };

struct EnrollmentModel {
  EnrollmentKind kind = EnrollmentKind::UniformOverDuration;
  double duration = 12.0;

  void validate() const {
    if (kind == EnrollmentKind::UniformOverDuration && !(duration > 0.0 && std::isfinite(duration)))
      throw ValidationError("uniform enrollment needs a positive duration");
  }
  double end() const { return kind == EnrollmentKind::Instantaneous ? 0.0 : duration; }
};

enum class CutoffKind { CalendarTime, EventCount, LaterOf };

struct CutoffRule {
  CutoffKind kind = CutoffKind::CalendarTime;
  std::optional<double> calendar;
  std::optional<int> events;

  static CutoffRule at_calendar(double t) { return {CutoffKind::CalendarTime, t, std::nullopt}; }
  static CutoffRule at_events(int k) { return {CutoffKind::EventCount, std::nullopt, k}; }
  static CutoffRule later_of(int k, double t) { return {CutoffKind::LaterOf, t, k}; }

  void validate() const {
    const bool need_cal = kind != CutoffKind::EventCount;
    const bool need_ev = kind != CutoffKind::CalendarTime;
    if (need_cal && (!calendar || !(*calendar > 0.0)))
      throw ValidationError("cutoff rule needs a positive calendar time");
    if (need_ev && (!events || *events < 1))
      throw ValidationError("cutoff rule needs a positive event count");
  }
};

struct TrialScenario {
  std::string label;
  int n_control = 100;
  int n_treatment = 100;
  EnrollmentModel enrollment;
  PiecewiseHazard control;
  PiecewiseHazard treatment;
  double dropout_rate = 0.0;  // exponential hazard per time unit
  CutoffRule cutoff;

  void validate() const {
    if (n_control < 1 || n_treatment < 1) throw ValidationError("each arm needs n >= 1");
    if (!(dropout_rate >= 0.0) || !std::isfinite(dropout_rate))
      throw ValidationError("dropout rate must be >= 0");
    enrollment.validate();
    cutoff.validate();
  }
};

// ---------------------------------------------------------------------------
// Randomness

/// One splitmix64 step; used both to derive replicate seeds and as a mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ splitmix64(index);
  return splitmix64(s);
}

/// Uniform on the open interval (0, 1) with 53 random bits.
inline double open_uniform(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Latent trial and cutoff

struct LatentSubject {
  Arm arm = Arm::Control;
  double entry = 0.0;    // calendar enrollment time
  double event = 0.0;    // latent event time since entry
  double dropout = std::numeric_limits<double>::infinity();

  /// Calendar time of an observed event, or +inf if dropout comes first.
  double event_calendar() const {
    return event <= dropout ? entry + event : std::numeric_limits<double>::infinity();
  }
};

struct LatentTrial {
  std::vector<LatentSubject> subjects;
  double enrollment_end = 0.0;  // calendar time of the last enrollment
};

inline LatentTrial generate_latent(const TrialScenario& s, std::uint64_t seed) {
  s.validate();
  std::mt19937_64 rng(seed);
  LatentTrial lt;
  lt.subjects.reserve(static_cast<std::size_t>(s.n_control + s.n_treatment));
  auto add = [&](Arm arm, int n, const PiecewiseHazard& h) {
    for (int i = 0; i < n; ++i) {
      LatentSubject sub;
      sub.arm = arm;
      sub.entry = s.enrollment.kind == EnrollmentKind::Instantaneous
                      ? 0.0
                      : open_uniform(rng) * s.enrollment.duration;
      sub.event = h.sample(open_uniform(rng));
      const double ud = open_uniform(rng);
      if (s.dropout_rate > 0.0) sub.dropout = -std::log(ud) / s.dropout_rate;
      lt.enrollment_end = std::max(lt.enrollment_end, sub.entry);
      lt.subjects.push_back(sub);
    }
  };
  add(Arm::Control, s.n_control, s.control);
  add(Arm::Treatment, s.n_treatment, s.treatment);
  return lt;
}

/// Calendar time of the k-th observed event (events are never lost to
/// administrative censoring, only to dropout).
inline double kth_event_calendar(const LatentTrial& lt, int k) {
  std::vector<double> ev;
  ev.reserve(lt.subjects.size());
  for (const auto& s : lt.subjects) {
    const double c = s.event_calendar();
    if (std::isfinite(c)) ev.push_back(c);
  }
  if (k > static_cast<int>(ev.size()))
    throw Error("event-count cutoff unsatisfiable: requested " + std::to_string(k) +
                " events, at most " + std::to_string(ev.size()) + " occur");
  std::nth_element(ev.begin(), ev.begin() + (k - 1), ev.end());
  return ev[static_cast<std::size_t>(k - 1)];
}

inline double resolve_cutoff(const LatentTrial& lt, const CutoffRule& rule) {
  rule.validate();
  switch (rule.kind) {
    case CutoffKind::CalendarTime: return *rule.calendar;
    case CutoffKind::EventCount: return kth_event_calendar(lt, *rule.events);
    case CutoffKind::LaterOf:
      return std::max(kth_event_calendar(lt, *rule.events), *rule.calendar);
  }
  return *rule.calendar;
}

/// Analysis dataset censored at calendar time `cutoff`. Subjects enrolled
/// after the cutoff are excluded.
inline SurvivalDataset censor_at(const LatentTrial& lt, double cutoff) {
  std::vector<SubjectRecord> recs;
  recs.reserve(lt.subjects.size());
  for (const auto& s : lt.subjects) {
    if (s.entry > cutoff) continue;
    const double admin = cutoff - s.entry;
    SubjectRecord r;
    r.arm = s.arm;
    if (s.event <= s.dropout && s.event <= admin) {
      r.time = s.event;
      r.event = true;
    } else {
      r.time = std::min(s.dropout, admin);
    }
    recs.push_back(r);
  }
  if (recs.empty()) throw Error("cutoff precedes every enrollment; empty dataset");
  return SurvivalDataset(std::move(recs));
}

struct CutTrial {
  SurvivalDataset data;
  double cutoff = 0.0;
};

inline CutTrial apply_cutoff(const LatentTrial& lt, const CutoffRule& rule) {
  const double c = resolve_cutoff(lt, rule);
  return {censor_at(lt, c), c};
}

inline SurvivalDataset simulate_trial(const TrialScenario& s, std::uint64_t seed) {
  return apply_cutoff(generate_latent(s, seed), s.cutoff).data;
}

// ---------------------------------------------------------------------------
// Replicate engine

inline unsigned default_threads() {
  const unsigned h = std::thread::hardware_concurrency();
  return h == 0 ? 1u : h;
}

/// Runs fn(r, seed_r) for r in [0, replicates) and returns results by index.
/// Exceptions derived from maxcombo::Error are captured per replicate.
template <class Result, class Fn>
std::vector<std::optional<Result>> run_replicates(int replicates, std::uint64_t seed, Fn&& fn,
                                                  unsigned threads = 0,
                                                  std::vector<std::string>* errors = nullptr) {
  std::vector<std::optional<Result>> out(static_cast<std::size_t>(replicates));
  std::vector<std::string> errs(static_cast<std::size_t>(replicates));
  std::atomic<int> next{0};
  std::exception_ptr fatal;
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= replicates || stop.load()) return;
      try {
        out[static_cast<std::size_t>(r)] = fn(r, derive_seed(seed, static_cast<std::uint64_t>(r)));
      } catch (const Error& e) {
        errs[static_cast<std::size_t>(r)] = e.what();
      } catch (...) {
        if (!stop.exchange(true)) fatal = std::current_exception();
        return;
      }
    }
  };
  if (threads == 0) threads = default_threads();
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(replicates, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  if (errors) {
    errors->clear();
    for (auto& e : errs)
      if (!e.empty()) errors->push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operating characteristics

/// Reject when z_min <= boundary, or when the adjusted p-value <= level.
struct Decision {
  enum class Kind { Boundary, Level } kind = Kind::Level;
  double value = 0.025;

  static Decision boundary(double z) { return {Kind::Boundary, z}; }
  static Decision level(double a) { return {Kind::Level, a}; }
};

struct ReplicateOutcome {
  bool reject = false;
  std::size_t selected = 0;
  double z_min = 0.0;
  int events = 0;
  double cutoff = 0.0;
};

inline bool decide(const ComboStatistics& cs, const Decision& d, const MVNOptions& mvn = {}) {
  if (d.kind == Decision::Kind::Boundary) return cs.z_min <= d.value;
  if (cs.components.size() == 1) return cs.components[0].p_value <= d.value;
  return maxcombo_rejects_at_level(cs.z_min, cs.correlation(), d.value, mvn);
}

inline ReplicateOutcome evaluate_replicate(const TrialScenario& s, const ComboSpec& spec,
                                           const Decision& d, std::uint64_t seed,
                                           const MVNOptions& mvn = {}) {
  const auto cut = apply_cutoff(generate_latent(s, seed), s.cutoff);
  cut.data.require_both_arms();
  const auto table = build_risk_table(cut.data);
  const auto cs = combo_statistics(table, spec);
  ReplicateOutcome o;
  o.reject = decide(cs, d, mvn);
  o.selected = cs.selected;
  o.z_min = cs.z_min;
  o.events = table.total_events();
  o.cutoff = cut.cutoff;
  return o;
}

struct OperatingCharacteristics {
  int replicates = 0;       // requested
  int completed = 0;        // excluding failed replicates
  int failures = 0;
  std::vector<std::string> failure_messages;  // first few
  int rejections = 0;
  double rejection_rate = 0.0;
  double mc_se = 0.0;
  std::vector<double> selection_frequency;  // per combo weight, among completed
  double mean_events = 0.0;
  double mean_cutoff = 0.0;
};

inline OperatingCharacteristics summarize(const std::vector<std::optional<ReplicateOutcome>>& res,
                                          std::size_t k, std::vector<std::string> errors) {
  OperatingCharacteristics oc;
  oc.replicates = static_cast<int>(res.size());
  oc.selection_frequency.assign(k, 0.0);
  double ev = 0.0, cut = 0.0;
  for (const auto& r : res) {
    if (!r) continue;
    ++oc.completed;
    oc.rejections += r->reject;
    oc.selection_frequency[r->selected] += 1.0;
    ev += r->events;
    cut += r->cutoff;
  }
  oc.failures = oc.replicates - oc.completed;
  if (errors.size() > 5) errors.resize(5);
  oc.failure_messages = std::move(errors);
  if (oc.completed > 0) {
    const double n = oc.completed;
    oc.rejection_rate = oc.rejections / n;
    oc.mc_se = std::sqrt(oc.rejection_rate * (1.0 - oc.rejection_rate) / n);
    for (auto& f : oc.selection_frequency) f /= n;
    oc.mean_events = ev / n;
    oc.mean_cutoff = cut / n;
  }
  return oc;
}

inline constexpr int kMinSimulationReplicates = 100;

inline OperatingCharacteristics operating_characteristics(const TrialScenario& s,
                                                          const ComboSpec& spec,
                                                          const Decision& d, int replicates,
                                                          std::uint64_t seed,
                                                          unsigned threads = 0) {
  if (replicates < kMinSimulationReplicates)
    throw ValidationError("replicates must be >= " + std::to_string(kMinSimulationReplicates));
  s.validate();
  std::vector<std::string> errors;
  const auto res = run_replicates<ReplicateOutcome>(
      replicates, seed,
      [&](int, std::uint64_t rs) { return evaluate_replicate(s, spec, d, rs); }, threads,
      &errors);
  return summarize(res, spec.size(), std::move(errors));
}

// ---------------------------------------------------------------------------
// Scenario library

namespace scenarios {

inline constexpr double kControlMedian = 15.0;

/// Post-change treatment rate that makes S_T(t_meet) equal the control
/// survival, given an initial treatment rate over [0, change).
inline double meeting_rate(double control_rate, double early_rate, double change, double t_meet) {
  return (control_rate * t_meet - early_rate * change) / (t_meet - change);
}

inline TrialScenario small_trial_base(std::string label, double enroll) {
  TrialScenario s;
  s.label = std::move(label);
  s.n_control = s.n_treatment = 100;
  s.enrollment = {EnrollmentKind::UniformOverDuration, enroll};
  s.control = PiecewiseHazard::from_median(kControlMedian);
  s.cutoff = CutoffRule::at_calendar(36.0);
  return s;
}

inline TrialScenario strong_null_1(double enroll = 12.0) {
  auto s = small_trial_base(enroll == 12.0 ? "strong_null_1" : "strong_null_1_enroll6", enroll);
  const double lc = std::numbers::ln2 / kControlMedian, le = std::numbers::ln2 / 9.0;
  s.treatment = PiecewiseHazard({6.0}, {le, meeting_rate(lc, le, 6.0, 36.0)});
  return s;
}

/// After month 6 the treatment hazard is 0.79 times the control hazard
/// (rate 0.0365); the survival curves cross at about month 25.
inline TrialScenario severe_late_crossing(double enroll = 12.0) {
  auto s = small_trial_base(
      enroll == 12.0 ? "severe_late_crossing" : "severe_late_crossing_enroll6", enroll);
  const double lc = std::numbers::ln2 / kControlMedian, le = std::numbers::ln2 / 9.0;
  s.treatment = PiecewiseHazard({6.0}, {le, 0.79 * lc});
  return s;
}

/// Time unit is years here.
inline TrialScenario strong_null_2() {
  TrialScenario s;
  s.label = "strong_null_2";
  s.n_control = s.n_treatment = 1000;
  s.enrollment = {EnrollmentKind::Instantaneous, 0.0};
  s.control = PiecewiseHazard::exponential(0.25);
  s.treatment = PiecewiseHazard({0.1}, {4.0, 0.19});
  s.cutoff = CutoffRule::at_calendar(5.0);
  return s;
}

/// Proportional hazards (HR 0.63) in the 100-per-arm small-trial setting.
inline TrialScenario ph_marginal() {
  auto s = small_trial_base("ph_marginal", 12.0);
  s.treatment = PiecewiseHazard::exponential(0.63 * std::numbers::ln2 / kControlMedian);
  return s;
}

/// No effect for 6 months, then HR 0.5, in the small-trial setting.
inline TrialScenario delayed_effect() {
  auto s = small_trial_base("delayed_effect", 12.0);
  const double lc = std::numbers::ln2 / kControlMedian;
  s.treatment = PiecewiseHazard({6.0}, {lc, 0.5 * lc});
  return s;
}

// Larger design setting: control median 8, 15-month enrollment, dropout 0.001.
inline constexpr double kDesignMedian = 8.0;
inline constexpr double kDesignDropout = 0.001;

inline TrialScenario design_base(std::string label, int n_total, CutoffRule cutoff) {
  TrialScenario s;
  s.label = std::move(label);
  s.n_control = n_total / 2;
  s.n_treatment = n_total - n_total / 2;
  s.enrollment = {EnrollmentKind::UniformOverDuration, 15.0};
  s.control = PiecewiseHazard::from_median(kDesignMedian);
  s.treatment = s.control;
  s.dropout_rate = kDesignDropout;
  s.cutoff = cutoff;
  return s;
}

inline TrialScenario design_null(int n_total = 1000, CutoffRule cutoff = CutoffRule::at_calendar(32.0)) {
  return design_base("design_null", n_total, cutoff);
}

inline TrialScenario delayed_6m_hr056(int n_total = 472,
                                      CutoffRule cutoff = CutoffRule::later_of(372, 31.0)) {
  auto s = design_base("delayed_6m_hr056", n_total, cutoff);
  const double lc = std::numbers::ln2 / kDesignMedian;
  s.treatment = PiecewiseHazard({6.0}, {lc, 0.56 * lc});
  return s;
}

inline TrialScenario ph_hr0692(int n_total = 472,
                               CutoffRule cutoff = CutoffRule::later_of(372, 31.0)) {
  auto s = design_base("ph_hr0692", n_total, cutoff);
  s.treatment = PiecewiseHazard::exponential(0.692 * std::numbers::ln2 / kDesignMedian);
  return s;
}

inline const std::map<std::string, std::function<TrialScenario()>>& library() {
  static const std::map<std::string, std::function<TrialScenario()>> lib = {
      {"strong_null_1", [] { return strong_null_1(); }},
      {"strong_null_1_enroll6", [] { return strong_null_1(6.0); }},
      {"severe_late_crossing", [] { return severe_late_crossing(); }},
      {"severe_late_crossing_enroll6", [] { return severe_late_crossing(6.0); }},
      {"strong_null_2", [] { return strong_null_2(); }},
      {"ph_marginal", [] { return ph_marginal(); }},
      {"delayed_effect", [] { return delayed_effect(); }},
      {"design_null", [] { return design_null(); }},
      {"delayed_6m_hr056", [] { return delayed_6m_hr056(); }},
      {"ph_hr0692", [] { return ph_hr0692(); }},
  };
  return lib;
}

inline std::vector<std::string> names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : library()) out.push_back(k);
  return out;
}

inline TrialScenario by_name(const std::string& name) {
  const auto& lib = library();
  const auto it = lib.find(name);
  if (it == lib.end()) {
    std::string avail;
    for (const auto& n : names()) avail += (avail.empty() ? "" : ", ") + n;
    throw ValidationError("unknown scenario '" + name + "'; available: " + avail);
  }
  return it->second();
}

}  // namespace scenarios

}  // namespace maxcombo
