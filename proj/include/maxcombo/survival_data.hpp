#pragma once

// Right-censored two-arm survival data: records, CSV interchange, the pooled
// risk table behind every rank statistic, and Kaplan-Meier curves.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maxcombo/error.hpp"

namespace maxcombo {

enum class Arm : std::uint8_t { Control = 0, Treatment = 1 };

inline Arm other(Arm a) {
  return a == Arm::Control ? Arm::Treatment : Arm::Control;
}

struct SubjectRecord {
  double time = 0.0;  // follow-up time, opaque unit (months by convention)
  bool event = false;
  Arm arm = Arm::Control;

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

class SurvivalDataset {
 public:
  SurvivalDataset() = default;

  explicit SurvivalDataset(std::vector<SubjectRecord> records)
      : records_(std::move(records)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const double t = records_[i].time;
      if (!std::isfinite(t) || t < 0.0) {
        throw ValidationError("record " + std::to_string(i + 1) +
                              ": time must be finite and nonnegative");
      }
    }
  }

  const std::vector<SubjectRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::size_t count(Arm arm) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(),
                      [arm](const SubjectRecord& r) { return r.arm == arm; }));
  }

  std::size_t events() const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(),
                      [](const SubjectRecord& r) { return r.event; }));
  }

  std::size_t events(Arm arm) const {
    return static_cast<std::size_t>(std::count_if(
        records_.begin(), records_.end(),
        [arm](const SubjectRecord& r) { return r.event && r.arm == arm; }));
  }

  double max_time(Arm arm) const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& r : records_)
      if (r.arm == arm) m = std::max(m, r.time);
    return m;
  }

  /// Same subjects with Control and Treatment labels exchanged.
  SurvivalDataset swapped_arms() const {
    auto recs = records_;
    for (auto& r : recs) r.arm = other(r.arm);
    return SurvivalDataset(std::move(recs));
  }

  /// Same subjects with every time multiplied by `factor` (> 0).
  SurvivalDataset scaled_times(double factor) const {
    auto recs = records_;
    for (auto& r : recs) r.time *= factor;
    return SurvivalDataset(std::move(recs));
  }

  void require_both_arms() const {
    if (count(Arm::Control) == 0 || count(Arm::Treatment) == 0)
      throw ValidationError("dataset needs at least one record per arm");
  }

 private:
  std::vector<SubjectRecord> records_;
};

// ---------------------------------------------------------------------------
// CSV interchange

struct ColumnMap {
  std::string time = "time";
  std::string event = "event";
  std::string arm = "arm";
  std::string control_label = "0";
  std::string treatment_label = "1";
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a CSV stream with a header row. Errors name the data row (1-based,
/// header excluded) and the column.
inline SurvivalDataset read_csv(std::istream& in, const ColumnMap& cols = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("csv: missing column '" + name + "'");
  };
  const std::size_t it = find_col(cols.time);
  const std::size_t ie = find_col(cols.event);
  const std::size_t ia = find_col(cols.arm);

  std::vector<SubjectRecord> recs;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    auto cell = [&](std::size_t idx, const std::string& name) {
      if (idx >= cells.size())
        throw ValidationError("csv row " + std::to_string(row) + ", column '" + name +
                              "': missing cell");
      return cells[idx];
    };
    auto fail = [&](const std::string& name, std::string_view value, const char* why) {
      throw ValidationError("csv row " + std::to_string(row) + ", column '" + name +
                            "': " + why + " ('" + std::string(value) + "')");
    };

    SubjectRecord r;
    const auto ts = cell(it, cols.time);
    const auto t = detail::parse_double(ts);
    if (!t) fail(cols.time, ts, "not a number");
    if (!std::isfinite(*t) || *t < 0.0) fail(cols.time, ts, "time must be finite and >= 0");
    r.time = *t;

    const auto es = cell(ie, cols.event);
    if (es == "1") r.event = true;
    else if (es == "0") r.event = false;
    else fail(cols.event, es, "event must be 0 or 1");

    const auto as = cell(ia, cols.arm);
    if (as == cols.control_label) r.arm = Arm::Control;
    else if (as == cols.treatment_label) r.arm = Arm::Treatment;
    else fail(cols.arm, as, "unknown arm label");

    recs.push_back(r);
  }
  return SurvivalDataset(std::move(recs));
}

inline SurvivalDataset load_csv(const std::string& path, const ColumnMap& cols = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_csv(in, cols);
}

/// Writes shortest round-trip representations, so load(write(x)) == x.
inline void write_csv(std::ostream& out, const SurvivalDataset& data,
                      const ColumnMap& cols = {}) {
  out << cols.time << ',' << cols.event << ',' << cols.arm << '\n';
  for (const auto& r : data.records()) {
    out << detail::format_double(r.time) << ',' << (r.event ? '1' : '0') << ','
        << (r.arm == Arm::Control ? cols.control_label : cols.treatment_label) << '\n';
  }
}

inline void save_csv(const std::string& path, const SurvivalDataset& data,
                     const ColumnMap& cols = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(out, data, cols);
}

// ---------------------------------------------------------------------------
// Risk table

struct RiskRow {
  double time = 0.0;
  int n = 0, d = 0;    // pooled at risk / events
  int n1 = 0, d1 = 0;  // treatment
  int n0 = 0, d0 = 0;  // control
};

class RiskTable {
 public:
  explicit RiskTable(std::vector<RiskRow> rows) : rows_(std::move(rows)) {
    for (const auto& r : rows_) events_ += r.d;
  }

  const std::vector<RiskRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const RiskRow& operator[](std::size_t i) const { return rows_[i]; }
  int total_events() const { return events_; }

 private:
  std::vector<RiskRow> rows_;
  int events_ = 0;
};

/// One row per distinct pooled event time. Censorings tied with an event time
/// stay in the risk set at that time.
inline RiskTable build_risk_table(const SurvivalDataset& data) {
  const auto& recs = data.records();
  std::vector<std::size_t> idx(recs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return recs[a].time < recs[b].time; });

  int at_risk[2] = {static_cast<int>(data.count(Arm::Control)),
                    static_cast<int>(data.count(Arm::Treatment))};
  std::vector<RiskRow> rows;
  for (std::size_t k = 0; k < idx.size();) {
    const double t = recs[idx[k]].time;
    int dev[2] = {0, 0}, removed[2] = {0, 0};
    for (; k < idx.size() && recs[idx[k]].time == t; ++k) {
      const auto& r = recs[idx[k]];
      const int a = static_cast<int>(r.arm);
      ++removed[a];
      if (r.event) ++dev[a];
    }
    if (dev[0] + dev[1] > 0) {
      RiskRow row;
      row.time = t;
      row.n0 = at_risk[0];
      row.n1 = at_risk[1];
      row.d0 = dev[0];
      row.d1 = dev[1];
      row.n = row.n0 + row.n1;
      row.d = row.d0 + row.d1;
      rows.push_back(row);
    }
    at_risk[0] -= removed[0];
    at_risk[1] -= removed[1];
  }
  if (rows.empty()) throw Error("no events");
  RiskTable table(std::move(rows));
  if (static_cast<std::size_t>(table.total_events()) != data.events())
    throw Error("risk table event count mismatch");
  return table;
}

// ---------------------------------------------------------------------------
// Kaplan-Meier

enum class ArmSelector { Pooled, Control, Treatment };

struct KMStep {
  double time = 0.0;
  int at_risk = 0;
  int events = 0;
  double surv = 1.0;       // S(t)
  double surv_left = 1.0;  // S(t-)
  double greenwood = 0.0;  // cumulative sum of d/(n(n-d)); +inf once n == d
};

class KMCurve {
 public:
  KMCurve(std::vector<KMStep> steps, double max_time, std::size_t subjects)
      : steps_(std::move(steps)), max_time_(max_time), subjects_(subjects) {}

  const std::vector<KMStep>& steps() const { return steps_; }
  double max_time() const { return max_time_; }
  std::size_t subjects() const { return subjects_; }

  /// Right-continuous S(t).
  double survival(double t) const {
    const auto i = last_step_at_or_before(t);
    return i ? steps_[*i].surv : 1.0;
  }

  /// S(t-): survival just before t.
  double survival_left(double t) const {
    const auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                                     [](const KMStep& s, double v) { return s.time < v; });
    if (it == steps_.begin()) return 1.0;
    return std::prev(it)->surv;
  }

  /// Greenwood variance S(t)^2 * sum_{t_i <= t} d_i / (n_i (n_i - d_i)).
  double variance(double t) const {
    const auto i = last_step_at_or_before(t);
    if (!i) return 0.0;
    const auto& s = steps_[*i];
    if (s.surv == 0.0) return 0.0;
    return s.surv * s.surv * s.greenwood;
  }

 private:
  std::optional<std::size_t> last_step_at_or_before(double t) const {
    const auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                                     [](double v, const KMStep& s) { return v < s.time; });
    if (it == steps_.begin()) return std::nullopt;
    return static_cast<std::size_t>(std::distance(steps_.begin(), it) - 1);
  }

  std::vector<KMStep> steps_;
  double max_time_ = 0.0;
  std::size_t subjects_ = 0;
};

inline KMCurve km_estimate(const SurvivalDataset& data,
                           ArmSelector which = ArmSelector::Pooled) {
  std::vector<std::pair<double, bool>> obs;
  obs.reserve(data.size());
  for (const auto& r : data.records()) {
    const bool keep = which == ArmSelector::Pooled ||
                      (which == ArmSelector::Control && r.arm == Arm::Control) ||
                      (which == ArmSelector::Treatment && r.arm == Arm::Treatment);
    if (keep) obs.emplace_back(r.time, r.event);
  }
  if (obs.empty()) throw ValidationError("Kaplan-Meier: selected subset is empty");
  std::sort(obs.begin(), obs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<KMStep> steps;
  int at_risk = static_cast<int>(obs.size());
  double s = 1.0, gw = 0.0;
  for (std::size_t k = 0; k < obs.size();) {
    const double t = obs[k].first;
    int d = 0, removed = 0;
    for (; k < obs.size() && obs[k].first == t; ++k) {
      ++removed;
      if (obs[k].second) ++d;
    }
    if (d > 0) {
      KMStep st;
      st.time = t;
      st.at_risk = at_risk;
      st.events = d;
      st.surv_left = s;
      s *= 1.0 - static_cast<double>(d) / at_risk;
      st.surv = s;
      gw = (at_risk > d) ? gw + static_cast<double>(d) / (static_cast<double>(at_risk) * (at_risk - d))
                         : std::numeric_limits<double>::infinity();
      st.greenwood = gw;
      steps.push_back(st);
    }
    at_risk -= removed;
  }
  return KMCurve(std::move(steps), obs.back().first, obs.size());
}

/// Smallest event time with S(t) <= 0.5; empty if the curve stays above 0.5.
inline std::optional<double> km_median(const KMCurve& curve) {
  for (const auto& s : curve.steps())
    if (s.surv <= 0.5) return s.time;
  return std::nullopt;
}

}  // namespace maxcombo
