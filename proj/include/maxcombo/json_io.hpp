#pragma once

// JSON encoding of configurations and results. Decoders reject unknown keys
// and name the offending element by its path; encoders refuse non-finite
// numbers so reports never carry silent sentinels.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "maxcombo/design.hpp"
#include "maxcombo/error.hpp"
#include "maxcombo/estimands.hpp"
#include "maxcombo/group_sequential.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/simulation.hpp"

namespace maxcombo::json_io {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Encoding helpers

inline Json num(double v, const std::string& what) {
  if (!std::isfinite(v)) throw Error("non-finite value for '" + what + "'");
  return v;
}

inline Json opt_num(const std::optional<double>& v, const std::string& what) {
  return v ? num(*v, what) : Json(nullptr);
}

inline Json matrix(const Eigen::MatrixXd& m, const std::string& what) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j), what));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Decoding helpers

/// Object view that records consumed keys so leftovers can be reported.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ValidationError(at(key) + ": required");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ValidationError(at(key) + ": expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : (seen_.insert(key), fallback);
  }

  int integer(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw ValidationError(at(key) + ": expected an integer");
    return v.get<int>();
  }
  int integer(const std::string& key, int fallback) {
    return has(key) ? integer(key) : (seen_.insert(key), fallback);
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ValidationError(at(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : (seen_.insert(key), fallback);
  }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw ValidationError(at(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ValidationError(at(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError(path_ + "." + k + ": unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ValidationError(path + ": " + msg);
  }
}

// ---------------------------------------------------------------------------
// Weights

inline Json to_json(const WeightSpec& w) { return Json{{"rho", w.rho}, {"gamma", w.gamma}}; }

inline WeightSpec weight_from_json(const Json& j, const std::string& path) {
  return with_path(path, [&] {
    if (j.is_array()) {
      if (j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ValidationError(path + ": expected [rho, gamma]");
      return WeightSpec(j[0].get<double>(), j[1].get<double>());
    }
    Reader r(j, path);
    WeightSpec w(r.number("rho"), r.number("gamma"));
    r.finish();
    return w;
  });
}

inline Json to_json(const ComboSpec& c) {
  Json a = Json::array();
  for (const auto& w : c.weights()) a.push_back(to_json(w));
  return a;
}

/// "standard", "modified", or an array of weights.
inline ComboSpec combo_from_json(const Json& j, const std::string& path) {
  return with_path(path, [&] {
    if (j.is_string()) {
      const auto s = j.get<std::string>();
      if (s == "standard") return ComboSpec::standard();
      if (s == "modified") return ComboSpec::modified();
      throw ValidationError(path + ": unknown combo '" + s + "' (standard, modified or a list)");
    }
    if (!j.is_array()) throw ValidationError(path + ": expected a name or a list of weights");
    std::vector<WeightSpec> ws;
    for (std::size_t i = 0; i < j.size(); ++i)
      ws.push_back(weight_from_json(j[i], path + "[" + std::to_string(i) + "]"));
    return ComboSpec(std::move(ws));
  });
}

/// Parses "standard", "modified" or "r,g;r,g;...".
inline ComboSpec combo_from_string(const std::string& s) {
  if (s == "standard") return ComboSpec::standard();
  if (s == "modified") return ComboSpec::modified();
  std::vector<WeightSpec> ws;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(';', start), s.size());
    const auto item = s.substr(start, end - start);
    const auto cells = detail::split_csv_line(item);
    if (cells.size() != 2) throw ValidationError("weights: expected 'rho,gamma' in '" + item + "'");
    const auto r = detail::parse_double(cells[0]);
    const auto g = detail::parse_double(cells[1]);
    if (!r || !g) throw ValidationError("weights: not a number in '" + item + "'");
    ws.emplace_back(*r, *g);
    start = end + 1;
  }
  return ComboSpec(std::move(ws));
}

// ---------------------------------------------------------------------------
// Trial scenarios

inline Json to_json(const PiecewiseHazard& h) {
  return Json{{"cutpoints", h.cutpoints()}, {"rates", h.rates()}};
}

/// {"median": m}, {"rate": r}, {"cutpoints": [...], "rates": [...]}, or,
/// when `reference` is given, {"cutpoints": [...], "hazard_ratios": [...]}
/// relative to it.
inline PiecewiseHazard hazard_from_json(const Json& j, const std::string& path,
                                        const PiecewiseHazard* reference = nullptr) {
  return with_path(path, [&] {
    Reader r(j, path);
    PiecewiseHazard h;
    if (r.has("median")) {
      const double m = r.number("median");
      if (!(m > 0.0)) throw ValidationError(r.at("median") + ": must be positive");
      h = PiecewiseHazard::from_median(m);
    } else if (r.has("rate")) {
      h = PiecewiseHazard::exponential(r.number("rate"));
    } else if (r.has("hazard_ratios")) {
      if (!reference) throw ValidationError(r.at("hazard_ratios") + ": no reference hazard here");
      const auto cuts = r.has("cutpoints") ? r.numbers("cutpoints") : std::vector<double>{};
      const auto hrs = r.numbers("hazard_ratios");
      const PiecewiseHazard ratio(cuts, hrs);
      std::vector<double> all = cuts;
      all.insert(all.end(), reference->cutpoints().begin(), reference->cutpoints().end());
      std::sort(all.begin(), all.end());
      all.erase(std::unique(all.begin(), all.end()), all.end());
      std::vector<double> rates;
      double start = 0.0;
      for (std::size_t i = 0; i <= all.size(); ++i) {
        const double t = i < all.size() ? 0.5 * (start + all[i]) : start + 1.0;
        rates.push_back(ratio.rate(t) * reference->rate(t));
        if (i < all.size()) start = all[i];
      }
      h = PiecewiseHazard(all, rates);
    } else {
      const auto cuts = r.has("cutpoints") ? r.numbers("cutpoints") : std::vector<double>{};
      h = PiecewiseHazard(cuts, r.numbers("rates"));
    }
    r.finish();
    return h;
  });
}

inline Json to_json(const EnrollmentModel& e) {
  if (e.kind == EnrollmentKind::Instantaneous) return Json{{"kind", "instantaneous"}};
  return Json{{"kind", "uniform"}, {"duration", e.duration}};
}

inline EnrollmentModel enrollment_from_json(const Json& j, const std::string& path) {
  return with_path(path, [&] {
    Reader r(j, path);
    EnrollmentModel e;
    const auto kind = r.string("kind", "uniform");
    if (kind == "instantaneous") {
      e = {EnrollmentKind::Instantaneous, 0.0};
    } else if (kind == "uniform") {
      e = {EnrollmentKind::UniformOverDuration, r.number("duration")};
    } else {
      throw ValidationError(r.at("kind") + ": expected 'uniform' or 'instantaneous'");
    }
    r.finish();
    e.validate();
    return e;
  });
}

inline Json to_json(const CutoffRule& c) {
  Json j = Json::object();
  if (c.calendar) j["calendar"] = *c.calendar;
  if (c.events) j["events"] = *c.events;
  return j;
}

/// {"calendar": t}, {"events": k}, or both for the later of the two.
inline CutoffRule cutoff_from_json(const Json& j, const std::string& path) {
  return with_path(path, [&] {
    Reader r(j, path);
    CutoffRule c;
    const bool cal = r.has("calendar"), ev = r.has("events");
    if (cal && ev) c = CutoffRule::later_of(r.integer("events"), r.number("calendar"));
    else if (cal) c = CutoffRule::at_calendar(r.number("calendar"));
    else if (ev) c = CutoffRule::at_events(r.integer("events"));
    else throw ValidationError(path + ": needs 'calendar', 'events' or both");
    r.finish();
    c.validate();
    return c;
  });
}

inline Json to_json(const TrialScenario& s) {
  return Json{{"label", s.label},
              {"n_control", s.n_control},
              {"n_treatment", s.n_treatment},
              {"enrollment", to_json(s.enrollment)},
              {"control", to_json(s.control)},
              {"treatment", to_json(s.treatment)},
              {"dropout_rate", s.dropout_rate},
              {"cutoff", to_json(s.cutoff)}};
}

/// Full scenario, or {"base": "<library name>", ...overrides}.
inline TrialScenario scenario_from_json(const Json& j, const std::string& path) {
  return with_path(path, [&] {
    Reader r(j, path);
    TrialScenario s;
    if (r.has("base")) s = scenarios::by_name(r.string("base"));
    s.label = r.string("label", s.label.empty() ? "scenario" : s.label);
    s.n_control = r.integer("n_control", s.n_control);
    s.n_treatment = r.integer("n_treatment", s.n_treatment);
    if (r.has("enrollment")) s.enrollment = enrollment_from_json(r.raw("enrollment"), r.at("enrollment"));
    if (r.has("control")) s.control = hazard_from_json(r.raw("control"), r.at("control"));
    if (r.has("treatment"))
      s.treatment = hazard_from_json(r.raw("treatment"), r.at("treatment"), &s.control);
    s.dropout_rate = r.number("dropout_rate", s.dropout_rate);
    if (r.has("cutoff")) s.cutoff = cutoff_from_json(r.raw("cutoff"), r.at("cutoff"));
    r.finish();
    s.validate();
    return s;
  });
}

// ---------------------------------------------------------------------------
// Design

struct DesignConfig {
  DesignInput input;
  DesignOptions options;  // seed, replicates and threads come from the command line
  std::vector<ConfirmationScenario> scenarios;
};

inline const char* to_string(ConfirmationScenario::Role r) {
  switch (r) {
    case ConfirmationScenario::Role::TypeI: return "type_i";
    case ConfirmationScenario::Role::Power: return "power";
    case ConfirmationScenario::Role::Report: return "report";
  }
  return "report";
}

inline ConfirmationScenario::Role role_from_string(const std::string& s, const std::string& path) {
  if (s == "type_i") return ConfirmationScenario::Role::TypeI;
  if (s == "power") return ConfirmationScenario::Role::Power;
  if (s == "report") return ConfirmationScenario::Role::Report;
  throw ValidationError(path + ": expected 'type_i', 'power' or 'report'");
}

inline Json to_json(const DesignConfig& c) {
  const auto& d = c.input;
  Json scen = Json::array();
  for (const auto& s : c.scenarios) {
    auto j = to_json(s.scenario);
    j.erase("n_control");
    j.erase("n_treatment");
    j.erase("cutoff");
    scen.push_back(Json{{"role", to_string(s.role)}, {"scenario", j}});
  }
  return Json{{"alpha", d.alpha},
              {"power", d.power},
              {"enrollment", to_json(d.enrollment)},
              {"control", to_json(d.control)},
              {"treatment", to_json(d.treatment)},
              {"dropout_rate", d.dropout_rate},
              {"allocation", d.allocation},
              {"combo", to_json(d.combo)},
              {"durations", d.durations},
              {"duration", d.duration},
              {"grid_step", d.grid_step},
              {"n_large", d.n_large},
              {"loop",
               {{"event_increment", c.options.event_increment},
                {"followup_increment", c.options.followup_increment},
                {"max_iterations", c.options.max_iterations},
                {"mc_margin_se", c.options.mc_margin_se}}},
              {"confirmation_scenarios", scen}};
}

inline DesignConfig design_from_json(const Json& j, const std::string& path = "design") {
  return with_path(path, [&] {
    Reader r(j, path);
    DesignConfig c;
    auto& d = c.input;
    d.alpha = r.number("alpha", d.alpha);
    d.power = r.number("power", d.power);
    if (r.has("enrollment")) d.enrollment = enrollment_from_json(r.raw("enrollment"), r.at("enrollment"));
    if (r.has("control")) d.control = hazard_from_json(r.raw("control"), r.at("control"));
    d.treatment = r.has("treatment") ? hazard_from_json(r.raw("treatment"), r.at("treatment"), &d.control)
                                     : d.control;
    d.dropout_rate = r.number("dropout_rate", d.dropout_rate);
    d.allocation = r.number("allocation", d.allocation);
    if (r.has("combo")) d.combo = combo_from_json(r.raw("combo"), r.at("combo"));
    if (r.has("durations")) d.durations = r.numbers("durations");
    d.duration = r.number("duration", d.duration);
    d.grid_step = r.number("grid_step", d.grid_step);
    d.n_large = r.integer("n_large", d.n_large);
    if (r.has("loop")) {
      Reader l(r.raw("loop"), r.at("loop"));
      c.options.event_increment = l.number("event_increment", c.options.event_increment);
      c.options.followup_increment = l.number("followup_increment", c.options.followup_increment);
      c.options.max_iterations = l.integer("max_iterations", c.options.max_iterations);
      c.options.mc_margin_se = l.number("mc_margin_se", c.options.mc_margin_se);
      l.finish();
      if (!(c.options.event_increment >= 0.0) || !(c.options.followup_increment >= 0.0))
        throw ValidationError(r.at("loop") + ": increments must be >= 0");
      if (c.options.max_iterations < 1)
        throw ValidationError(r.at("loop") + ".max_iterations: must be >= 1");
    }
    if (r.has("confirmation_scenarios")) {
      const auto& arr = r.raw("confirmation_scenarios");
      if (!arr.is_array()) throw ValidationError(r.at("confirmation_scenarios") + ": expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto p = r.at("confirmation_scenarios") + "[" + std::to_string(i) + "]";
        Reader e(arr[i], p);
        ConfirmationScenario cs;
        cs.role = role_from_string(e.string("role", "report"), e.at("role"));
        // Sizes and the cutoff are set by the design loop.
        Json sj = e.raw("scenario");
        if (sj.is_object()) {
          sj["n_control"] = 1;
          sj["n_treatment"] = 1;
          sj["cutoff"] = Json{{"calendar", 1.0}};
        }
        cs.scenario = scenario_from_json(sj, e.at("scenario"));
        e.finish();
        c.scenarios.push_back(std::move(cs));
      }
    }
    r.finish();
    d.validate();
    return c;
  });
}

inline Json to_json(const SampleSize& s, const WeightSpec& w) {
  return Json{{"weight", w.label()},
              {"events", s.events},
              {"subjects", s.subjects},
              {"event_probability", num(s.event_probability, "event_probability")},
              {"drift", num(s.drift, "drift")}};
}

inline Json to_json(const OperatingCharacteristics& oc, const ComboSpec& combo) {
  Json sel = Json::object();
  for (std::size_t i = 0; i < combo.size(); ++i)
    sel[combo[i].label()] = num(oc.selection_frequency[i], "selection_frequency");
  return Json{{"replicates", oc.replicates},
              {"completed", oc.completed},
              {"failures", oc.failures},
              {"failure_messages", oc.failure_messages},
              {"rejections", oc.rejections},
              {"rejection_rate", num(oc.rejection_rate, "rejection_rate")},
              {"mc_se", num(oc.mc_se, "mc_se")},
              {"selection_frequency", sel},
              {"mean_events", num(oc.mean_events, "mean_events")},
              {"mean_cutoff", num(oc.mean_cutoff, "mean_cutoff")}};
}

inline Json to_json(const CorrelationMatrix& c) {
  return Json{{"matrix", matrix(c.matrix(), "correlation")}, {"regularized", c.regularized()}};
}

inline Json to_json(const DesignResult& r, const DesignInput& d) {
  Json grid = Json::array();
  for (const auto& row : r.grid) {
    Json comps = Json::array();
    for (std::size_t i = 0; i < row.components.size(); ++i)
      comps.push_back(to_json(row.components[i], d.combo[i]));
    grid.push_back(Json{{"duration", row.duration},
                        {"smallest", d.combo[row.smallest].label()},
                        {"components", comps}});
  }
  Json comps = Json::array();
  for (std::size_t i = 0; i < r.components.size(); ++i) comps.push_back(to_json(r.components[i], d.combo[i]));
  Json conf = Json::array();
  for (const auto& c : r.confirmation)
    conf.push_back(Json{{"scenario", c.label}, {"role", to_string(c.role)}, {"operating_characteristics", to_json(c.oc, d.combo)}});
  return Json{{"duration_grid", grid},
              {"knee_duration", opt_num(r.knee, "knee_duration")},
              {"chosen_duration", r.chosen_duration},
              {"null_correlation", to_json(r.null_correlation)},
              {"boundary",
               {{"z_cutoff", num(r.boundary.z_cutoff, "z_cutoff")},
                {"nominal_level", num(r.boundary.nominal_level, "nominal_level")},
                {"alpha", d.alpha}}},
              {"components", comps},
              {"selected", d.combo[r.selected].label()},
              {"initial", to_json(r.initial, d.combo[r.selected])},
              {"final", {{"subjects", r.final_subjects}, {"events", r.final_events}, {"followup", r.final_duration}}},
              {"logrank_comparison", to_json(r.logrank_comparison, WeightSpec{0, 0})},
              {"confirmation", conf},
              {"iterations", r.iterations},
              {"confirmed", r.confirmed}};
}

// ---------------------------------------------------------------------------
// Group sequential plans

struct PlanningInputs {
  DesignConfig design;
  int subjects = 0;
  int final_events = 0;
  double duration = 0.0;
};

struct PlanConfig {
  GSPlan plan;
  std::optional<PlanningInputs> planning;
};

inline Json to_json(const PlanConfig& c) {
  Json j{{"information_fraction", c.plan.information_fraction},
         {"alpha", c.plan.alpha},
         {"spending", "obrien_fleming"},
         {"combo", to_json(c.plan.combo)},
         {"futility_hr", c.plan.futility_hr}};
  if (c.planning)
    j["planning"] = Json{{"design", to_json(c.planning->design)},
                         {"subjects", c.planning->subjects},
                         {"final_events", c.planning->final_events},
                         {"duration", c.planning->duration}};
  return j;
}

/// Interim timing by information fraction, or by interim/final event counts.
inline PlanConfig plan_from_json(const Json& j, const std::string& path = "plan") {
  return with_path(path, [&] {
    Reader r(j, path);
    PlanConfig c;
    auto& p = c.plan;
    if (r.has("interim_events") || r.has("final_events")) {
      const int ie = r.integer("interim_events"), fe = r.integer("final_events");
      if (ie < 1 || fe <= ie) throw ValidationError(path + ": need 0 < interim_events < final_events");
      p.information_fraction = static_cast<double>(ie) / fe;
      if (r.has("information_fraction"))
        throw ValidationError(r.at("information_fraction") + ": conflicts with event counts");
    } else {
      p.information_fraction = r.number("information_fraction", p.information_fraction);
    }
    p.alpha = r.number("alpha", p.alpha);
    const auto sp = r.string("spending", "obrien_fleming");
    if (sp != "obrien_fleming") throw ValidationError(r.at("spending") + ": only 'obrien_fleming' is supported");
    if (r.has("combo")) p.combo = combo_from_json(r.raw("combo"), r.at("combo"));
    p.futility_hr = r.number("futility_hr", p.futility_hr);
    if (r.has("planning")) {
      Reader q(r.raw("planning"), r.at("planning"));
      PlanningInputs pi;
      pi.design = design_from_json(q.raw("design"), q.at("design"));
      pi.subjects = q.integer("subjects");
      pi.final_events = q.integer("final_events");
      pi.duration = q.number("duration");
      q.finish();
      c.planning = std::move(pi);
    }
    r.finish();
    p.validate();
    return c;
  });
}

inline Json to_json(const GSBoundaries& b) {
  return Json{{"information_fraction", num(b.information_fraction, "information_fraction")},
              {"z_interim", num(b.z_interim, "z_interim")},
              {"p_interim", num(b.p_interim, "p_interim")},
              {"z_final", num(b.z_final, "z_final")},
              {"p_final", num(b.p_final, "p_final")},
              {"interim_events", b.interim_events},
              {"final_events", b.final_events},
              {"correlation", to_json(b.correlation)}};
}

// ---------------------------------------------------------------------------
// Analysis results

inline Json to_json(const EffectEstimate& e) {
  Json j{{"name", e.name}, {"scale", to_string(e.scale)}, {"estimable", e.estimable}};
  if (e.estimable) {
    j["estimate"] = num(e.estimate, e.name);
    j["ci_lower"] = num(e.ci_lower, e.name + ".ci_lower");
    j["ci_upper"] = num(e.ci_upper, e.name + ".ci_upper");
    j["se"] = opt_num(e.se, e.name + ".se");
    j["p_value"] = opt_num(e.p_value, e.name + ".p_value");
  } else {
    j["estimate"] = nullptr;
    j["ci_lower"] = nullptr;
    j["ci_upper"] = nullptr;
    j["se"] = nullptr;
    j["p_value"] = nullptr;
  }
  j["note"] = e.note;
  return j;
}

}  // namespace maxcombo::json_io
