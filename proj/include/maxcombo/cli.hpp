#pragma once

// Command-line surface: analyze, design, simulate, boundaries and replay.
//
// Every command first resolves its flags and config files into one JSON
// config, then executes from that config alone. The resolved config and the
// master seed go into manifest.json, so `replay` reruns a command exactly.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maxcombo/design.hpp"
#include "maxcombo/error.hpp"
#include "maxcombo/estimands.hpp"
#include "maxcombo/group_sequential.hpp"
#include "maxcombo/json_io.hpp"
#include "maxcombo/rank_tests.hpp"
#include "maxcombo/simulation.hpp"
#include "maxcombo/survival_data.hpp"

namespace maxcombo::cli {

using json_io::Json;
namespace fs = std::filesystem;

inline constexpr const char* kToolName = "maxcombo";
inline constexpr const char* kVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct RunSpec {
  std::string command;
  Json config;
  std::uint64_t seed = 1;
  int replicates = 0;
  unsigned threads = 0;  // 0: all hardware threads; never changes results
};

// ---------------------------------------------------------------------------
// Output helpers

class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw Error("write failed for '" + path.string() + "'");
    files_.push_back(name);
  }

  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

  const std::vector<std::string>& files() const { return files_; }
  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) { row_strings(header); }

  CsvTable& row(const std::vector<Json>& cells) {
    if (cells.size() != width_) throw Error("csv row width mismatch");
    std::vector<std::string> s;
    for (const auto& c : cells) s.push_back(cell(c));
    row_strings(s);
    return *this;
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  static std::string cell(const Json& c) {
    if (c.is_null()) return "";
    if (c.is_string()) return quote(c.get<std::string>());
    if (c.is_boolean()) return c.get<bool>() ? "true" : "false";
    if (c.is_number_integer()) return std::to_string(c.get<long long>());
    if (c.is_number()) return detail::format_double(c.get<double>());
    return quote(c.dump());
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  std::size_t width_;
  std::ostringstream out_;
};

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeConfig {
  std::string data;
  ColumnMap columns;
  ComboSpec combo = ComboSpec::standard();
  std::vector<double> milestones;
  std::vector<double> cutpoints;
  std::optional<double> tau;
  double margin = 0.0;
  double level = 0.95;
  int resamples = 2000;
  bool two_sided = false;
  double ph_alpha = 0.05;  // GT p-value below this marks PH as not reasonable
};

inline Json to_json(const AnalyzeConfig& c) {
  return Json{{"data", c.data},
              {"columns",
               {{"time", c.columns.time},
                {"event", c.columns.event},
                {"arm", c.columns.arm},
                {"control_label", c.columns.control_label},
                {"treatment_label", c.columns.treatment_label}}},
              {"combo", json_io::to_json(c.combo)},
              {"milestones", c.milestones},
              {"cutpoints", c.cutpoints},
              {"tau", c.tau ? Json(*c.tau) : Json(nullptr)},
              {"margin", c.margin},
              {"level", c.level},
              {"resamples", c.resamples},
              {"two_sided", c.two_sided},
              {"ph_alpha", c.ph_alpha}};
}

inline AnalyzeConfig analyze_from_json(const Json& j) {
  json_io::Reader r(j, "analyze");
  AnalyzeConfig c;
  c.data = r.string("data");
  if (r.has("columns")) {
    json_io::Reader k(r.raw("columns"), r.at("columns"));
    c.columns.time = k.string("time", c.columns.time);
    c.columns.event = k.string("event", c.columns.event);
    c.columns.arm = k.string("arm", c.columns.arm);
    c.columns.control_label = k.string("control_label", c.columns.control_label);
    c.columns.treatment_label = k.string("treatment_label", c.columns.treatment_label);
    k.finish();
  }
  if (r.has("combo")) c.combo = json_io::combo_from_json(r.raw("combo"), r.at("combo"));
  if (r.has("milestones")) c.milestones = r.numbers("milestones");
  if (r.has("cutpoints")) c.cutpoints = r.numbers("cutpoints");
  if (r.has("tau") && !r.raw("tau").is_null()) c.tau = r.number("tau");
  c.margin = r.number("margin", c.margin);
  c.level = r.number("level", c.level);
  c.resamples = r.integer("resamples", c.resamples);
  if (r.has("two_sided")) {
    const auto& v = r.raw("two_sided");
    if (!v.is_boolean()) throw ValidationError(r.at("two_sided") + ": expected a boolean");
    c.two_sided = v.get<bool>();
  }
  c.ph_alpha = r.number("ph_alpha", c.ph_alpha);
  r.finish();
  if (!(c.level > 0.5 && c.level < 1.0)) throw ValidationError("analyze.level: must be in (0.5, 1)");
  if (!(c.ph_alpha > 0.0 && c.ph_alpha < 1.0)) throw ValidationError("analyze.ph_alpha: must be in (0, 1)");
  if (c.resamples < 2) throw ValidationError("analyze.resamples: must be >= 2");
  return c;
}

enum class Role { Primary, Supportive, Completeness };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::Primary: return "primary";
    case Role::Supportive: return "supportive";
    case Role::Completeness: return "completeness";
  }
  return "supportive";
}

struct ReportedEffect {
  EffectEstimate estimate;
  Role ph_role = Role::Supportive;      // when proportional hazards look reasonable
  Role non_ph_role = Role::Supportive;  // otherwise
};

template <class F>
EffectEstimate guarded(const std::string& name, EffectScale scale, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return EffectEstimate::inestimable(name, scale, e.what());
  }
}

/// The three-step analysis: MaxCombo test, PH assessment, effect summary.
/// Both effect-summary branches are always computed; the GT outcome only
/// decides which one is flagged as recommended.
inline Json analysis_report(const SurvivalDataset& data, const AnalyzeConfig& c, std::uint64_t seed) {
  data.require_both_arms();
  // A user-chosen horizon that the data cannot support is an input error, not an inestimable effect.
  if (c.tau) {
    try {
      resolve_tau(data, c.tau);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("--tau: ") + e.what());
    }
  }
  auto pv = [&](double p_one) { return c.two_sided ? std::min(1.0, 2.0 * std::min(p_one, 1.0 - p_one)) : p_one; };
  auto pv_opt = [&](std::optional<double> p) { return p ? std::optional<double>(pv(*p)) : p; };
  using json_io::num;

  Json rep;
  rep["dataset"] = Json{{"subjects", data.size()},
                        {"events", data.events()},
                        {"control", {{"subjects", data.count(Arm::Control)}, {"events", data.events(Arm::Control)}}},
                        {"treatment", {{"subjects", data.count(Arm::Treatment)}, {"events", data.events(Arm::Treatment)}}}};
  rep["p_value_convention"] = c.two_sided ? "two_sided" : "one_sided";

  // Step 1: hypothesis test.
  MaxComboOptions mo;
  mo.coverage = c.level;
  const auto mc = maxcombo_test(data, c.combo, mo);
  auto wlr_json = [&](const WLRResult& w) {
    return Json{{"weight", w.weight.label()},
                {"rho", w.weight.rho},
                {"gamma", w.weight.gamma},
                {"U", num(w.U, "U")},
                {"V", num(w.V, "V")},
                {"Z", num(w.Z, "Z")},
                {"p_value", num(pv(w.p_value), "p_value")}};
  };
  Json comps = Json::array();
  for (const auto& w : mc.components) comps.push_back(wlr_json(w));
  Json tests;
  tests["logrank"] = wlr_json(wlr_test(data, WeightSpec{0, 0}));
  tests["components"] = comps;
  tests["maxcombo"] = Json{{"selected", mc.selected_weight().label()},
                           {"z_min", num(mc.z_min, "z_min")},
                           {"adjusted_p_one_sided", num(mc.adjusted_p, "adjusted_p")},
                           {"correlation", json_io::to_json(mc.correlation)}};
  try {
    const auto w = wkm_test(data, c.tau);
    tests["weighted_km"] = Json{{"estimable", true},
                                {"tau", num(w.tau, "tau")},
                                {"statistic", num(w.statistic, "statistic")},
                                {"se", num(w.se, "se")},
                                {"z", num(w.z, "z")},
                                {"p_value", num(pv(w.p_value), "p_value")},
                                {"note", ""}};
  } catch (const Error& e) {
    tests["weighted_km"] = Json{{"estimable", false}, {"tau", nullptr}, {"statistic", nullptr}, {"se", nullptr},
                                {"z", nullptr}, {"p_value", nullptr}, {"note", e.what()}};
  }
  rep["tests"] = tests;

  // Step 2: PH assessment.
  std::optional<PHDiagnostic> gt;
  std::string gt_note;
  try {
    gt = gt_test(data, TimeTransform::KM);
  } catch (const Error& e) {
    gt_note = e.what();
  }
  const bool ph_reasonable = gt && gt->gt_p_value >= c.ph_alpha;
  const char* branch = ph_reasonable ? "hazard_ratio" : "multiple_quantifiers";
  if (gt) {
    rep["ph_assessment"] = Json{{"estimable", true},
                                {"transform", "km"},
                                {"gt_statistic", num(gt->gt_statistic, "gt_statistic")},
                                {"gt_p_value", num(gt->gt_p_value, "gt_p_value")},
                                {"log_hr", num(gt->log_hr, "log_hr")},
                                {"threshold", c.ph_alpha},
                                {"ph_reasonable", ph_reasonable},
                                {"recommended_branch", branch},
                                {"note", ""}};
  } else {
    rep["ph_assessment"] = Json{{"estimable", false},   {"transform", "km"},         {"gt_statistic", nullptr},
                                {"gt_p_value", nullptr}, {"log_hr", nullptr},          {"threshold", c.ph_alpha},
                                {"ph_reasonable", false}, {"recommended_branch", branch},
                                {"note", "GT test unavailable, reporting multiple quantifiers: " + gt_note}};
  }

  // Step 3: effect summary.
  std::vector<ReportedEffect> effects;
  auto add = [&](EffectEstimate e, Role ph, Role non_ph) {
    e.p_value = pv_opt(e.p_value);
    effects.push_back({std::move(e), ph, non_ph});
  };
  add(guarded("cox_hr", EffectScale::HazardRatio, [&] { return cox_hr(data, c.level); }),
      Role::Primary, Role::Primary);
  for (std::size_t i = 0; i < c.milestones.size(); ++i) {
    const double t = c.milestones[i];
    add(guarded("milestone_" + detail::format_double(t), EffectScale::Difference,
                [&] { return milestone_difference(data, t, c.level); }),
        Role::Supportive, i == 0 ? Role::Primary : Role::Supportive);
  }
  {
    std::optional<RMSTResult> rm;
    std::string why;
    try {
      rm = rmst(data, c.tau, c.level);
    } catch (const Error& e) {
      why = e.what();
    }
    if (rm) {
      add(rm->difference, Role::Supportive, Role::Primary);
      add(rm->control, Role::Supportive, Role::Supportive);
      add(rm->treatment, Role::Supportive, Role::Supportive);
    } else {
      add(EffectEstimate::inestimable("rmst_difference", EffectScale::Difference, why), Role::Supportive, Role::Primary);
      add(EffectEstimate::inestimable("rmst_control", EffectScale::Difference, why), Role::Supportive, Role::Supportive);
      add(EffectEstimate::inestimable("rmst_treatment", EffectScale::Difference, why), Role::Supportive, Role::Supportive);
    }
  }
  add(guarded("rmtl_ratio", EffectScale::Ratio, [&] { return rmtl(data, c.tau, c.level); }),
      Role::Supportive, Role::Supportive);

  std::vector<PiecewiseInterval> pw;
  try {
    pw = piecewise_hr(data, c.cutpoints, c.level);
  } catch (const Error& e) {
    add(EffectEstimate::inestimable("piecewise_hr", EffectScale::HazardRatio, e.what()), Role::Supportive,
        Role::Supportive);
  }
  for (const auto& iv : pw) add(iv.hr, Role::Supportive, Role::Supportive);

  add(guarded("net_benefit_" + detail::format_double(c.margin), EffectScale::Probability,
              [&] { return net_benefit(data, c.margin, c.resamples, seed, c.level); }),
      Role::Supportive, Role::Supportive);

  {
    EffectEstimate e;
    if (mc.whr && mc.whr_ci) {
      e.name = "weighted_hr";
      e.scale = EffectScale::HazardRatio;
      e.estimate = mc.whr_ci->estimate;
      e.ci_lower = mc.whr_ci->lower;
      e.ci_upper = mc.whr_ci->upper;
      e.se = mc.whr->se;
      e.note = "weight " + mc.selected_weight().label() + "; simultaneous interval, critical value " +
               detail::format_double(mc.whr_ci->critical_value);
    } else {
      e = EffectEstimate::inestimable("weighted_hr", EffectScale::HazardRatio, mc.whr_note);
    }
    add(e, Role::Completeness, Role::Completeness);
  }

  Json eff = Json::array();
  for (const auto& r : effects) {
    auto j = json_io::to_json(r.estimate);
    j["ph_role"] = to_string(r.ph_role);
    j["non_ph_role"] = to_string(r.non_ph_role);
    j["recommended_primary"] = (ph_reasonable ? r.ph_role : r.non_ph_role) == Role::Primary;
    eff.push_back(std::move(j));
  }
  rep["effects"] = eff;

  // KM medians and plot series.
  const double z = z_for_level(c.level);
  Json medians = Json::object();
  Json km_series = Json::array();
  for (const Arm arm : {Arm::Control, Arm::Treatment}) {
    const auto km = km_estimate(data, arm == Arm::Control ? ArmSelector::Control : ArmSelector::Treatment);
    const auto med = km_median(km);
    const char* name = arm == Arm::Control ? "control" : "treatment";
    medians[name] = Json{{"estimable", med.has_value()},
                         {"estimate", json_io::opt_num(med, "median")},
                         {"note", med ? "" : "survival stays above 0.5"}};
    km_series.push_back(Json{{"arm", name}, {"time", 0.0}, {"survival", 1.0}, {"lower", 1.0}, {"upper", 1.0},
                             {"at_risk", data.count(arm)}, {"events", 0}});
    for (const auto& s : km.steps()) {
      double lo = 0.0, hi = 0.0;
      if (s.surv > 0.0) {
        const double h = z * std::sqrt(s.greenwood);
        lo = s.surv * std::exp(-h);
        hi = std::min(1.0, s.surv * std::exp(h));
      }
      km_series.push_back(Json{{"arm", name}, {"time", num(s.time, "time")}, {"survival", num(s.surv, "survival")},
                               {"lower", num(lo, "lower")}, {"upper", num(hi, "upper")},
                               {"at_risk", s.at_risk}, {"events", s.events}});
    }
  }
  rep["km_medians"] = medians;

  Json sch = Json::array();
  if (gt)
    for (const auto& p : gt->schoenfeld)
      sch.push_back(Json{{"time", num(p.time, "time")}, {"scaled_residual", num(p.scaled_residual, "scaled_residual")}});
  Json pws = Json::array();
  for (const auto& iv : pw) {
    Json j{{"start", iv.start},
           {"end", std::isfinite(iv.end) ? Json(iv.end) : Json(nullptr)},
           {"events_control", iv.d0},
           {"events_treatment", iv.d1},
           {"exposure_control", num(iv.exposure0, "exposure")},
           {"exposure_treatment", num(iv.exposure1, "exposure")},
           {"estimable", iv.hr.estimable}};
    j["hr"] = iv.hr.estimable ? num(iv.hr.estimate, "hr") : Json(nullptr);
    j["lower"] = iv.hr.estimable ? num(iv.hr.ci_lower, "lower") : Json(nullptr);
    j["upper"] = iv.hr.estimable ? num(iv.hr.ci_upper, "upper") : Json(nullptr);
    pws.push_back(std::move(j));
  }
  rep["plot_data"] = Json{{"km", km_series}, {"schoenfeld", sch}, {"piecewise_hr", pws}};
  return rep;
}

inline void write_analysis_tables(OutputDir& out, const Json& rep) {
  CsvTable tests({"test", "weight", "U", "V", "Z", "p_value"});
  tests.row({"logrank", rep["tests"]["logrank"]["weight"], rep["tests"]["logrank"]["U"], rep["tests"]["logrank"]["V"],
             rep["tests"]["logrank"]["Z"], rep["tests"]["logrank"]["p_value"]});
  for (const auto& w : rep["tests"]["components"])
    tests.row({"wlr", w["weight"], w["U"], w["V"], w["Z"], w["p_value"]});
  const auto& m = rep["tests"]["maxcombo"];
  tests.row({"maxcombo", m["selected"], nullptr, nullptr, m["z_min"], m["adjusted_p_one_sided"]});
  out.write("tests.csv", tests.str());

  CsvTable eff({"name", "scale", "estimable", "estimate", "ci_lower", "ci_upper", "se", "p_value", "ph_role",
                "non_ph_role", "recommended_primary", "note"});
  for (const auto& e : rep["effects"])
    eff.row({e["name"], e["scale"], e["estimable"], e["estimate"], e["ci_lower"], e["ci_upper"], e["se"],
             e["p_value"], e["ph_role"], e["non_ph_role"], e["recommended_primary"], e["note"]});
  out.write("effects.csv", eff.str());

  CsvTable km({"arm", "time", "survival", "lower", "upper", "at_risk", "events"});
  for (const auto& p : rep["plot_data"]["km"])
    km.row({p["arm"], p["time"], p["survival"], p["lower"], p["upper"], p["at_risk"], p["events"]});
  out.write("km_curves.csv", km.str());

  CsvTable sch({"time", "scaled_residual"});
  for (const auto& p : rep["plot_data"]["schoenfeld"]) sch.row({p["time"], p["scaled_residual"]});
  out.write("schoenfeld.csv", sch.str());

  CsvTable pw({"start", "end", "hr", "lower", "upper", "events_control", "events_treatment"});
  for (const auto& p : rep["plot_data"]["piecewise_hr"])
    pw.row({p["start"], p["end"], p["hr"], p["lower"], p["upper"], p["events_control"], p["events_treatment"]});
  out.write("piecewise_hr.csv", pw.str());
}

inline void exec_analyze(const RunSpec& run, OutputDir& out) {
  const auto c = analyze_from_json(run.config);
  const auto data = load_csv(c.data, c.columns);
  const auto rep = analysis_report(data, c, run.seed);
  out.write_json("analysis.json", rep);
  write_analysis_tables(out, rep);
}

// ---------------------------------------------------------------------------
// simulate

inline Json decision_json(const Decision& d) {
  return Json{{"kind", d.kind == Decision::Kind::Boundary ? "boundary" : "level"}, {"value", d.value}};
}

inline void exec_simulate(const RunSpec& run, OutputDir& out) {
  json_io::Reader r(run.config, "simulate");
  const auto s = json_io::scenario_from_json(r.raw("scenario"), r.at("scenario"));
  const auto combo = json_io::combo_from_json(r.raw("combo"), r.at("combo"));
  json_io::Reader dr(r.raw("decision"), r.at("decision"));
  const auto kind = dr.string("kind");
  const double value = dr.number("value");
  dr.finish();
  r.finish();
  Decision d;
  if (kind == "boundary") {
    d = Decision::boundary(value);
  } else if (kind == "level") {
    if (!(value > 0.0 && value < 0.5)) throw ValidationError("simulate.decision.value: level must be in (0, 0.5)");
    d = Decision::level(value);
  } else {
    throw ValidationError("simulate.decision.kind: expected 'boundary' or 'level'");
  }
  const auto oc = operating_characteristics(s, combo, d, run.replicates, run.seed, run.threads);
  Json rep{{"scenario", s.label}, {"combo", json_io::to_json(combo)}, {"decision", decision_json(d)},
           {"operating_characteristics", json_io::to_json(oc, combo)}};
  out.write_json("simulation.json", rep);
  CsvTable t({"scenario", "replicates", "completed", "failures", "rejection_rate", "mc_se", "mean_events",
              "mean_cutoff"});
  t.row({s.label, oc.replicates, oc.completed, oc.failures, oc.rejection_rate, oc.mc_se, oc.mean_events,
         oc.mean_cutoff});
  out.write("simulation.csv", t.str());
}

// ---------------------------------------------------------------------------
// design

inline void exec_design(const RunSpec& run, OutputDir& out) {
  auto c = json_io::design_from_json(run.config);
  if (run.replicates < 1) throw ValidationError("replicates must be > 0");
  c.options.replicates = run.replicates;
  c.options.seed = run.seed;
  c.options.threads = run.threads;
  const auto res = design_trial(c.input, c.scenarios, c.options);
  const auto rep = json_io::to_json(res, c.input);
  out.write_json("design.json", rep);

  CsvTable grid({"duration", "weight", "events", "subjects"});
  for (const auto& row : rep["duration_grid"])
    for (const auto& comp : row["components"]) grid.row({row["duration"], comp["weight"], comp["events"], comp["subjects"]});
  out.write("design_grid.csv", grid.str());

  CsvTable comps({"weight", "events", "subjects", "selected"});
  for (const auto& comp : rep["components"])
    comps.row({comp["weight"], comp["events"], comp["subjects"], comp["weight"] == rep["selected"]});
  out.write("design_components.csv", comps.str());

  CsvTable conf({"scenario", "role", "rejection_rate", "mc_se", "completed", "mean_events", "mean_cutoff"});
  for (const auto& e : rep["confirmation"]) {
    const auto& oc = e["operating_characteristics"];
    conf.row({e["scenario"], e["role"], oc["rejection_rate"], oc["mc_se"], oc["completed"], oc["mean_events"],
              oc["mean_cutoff"]});
  }
  out.write("design_confirmation.csv", conf.str());

  std::vector<std::string> header;
  for (const auto& w : c.input.combo.weights()) header.push_back(w.label());
  CsvTable corr(header);
  for (const auto& row : rep["null_correlation"]["matrix"]) corr.row(std::vector<Json>(row.begin(), row.end()));
  out.write("null_correlation.csv", corr.str());
}

// ---------------------------------------------------------------------------
// boundaries

inline void exec_boundaries(const RunSpec& run, OutputDir& out) {
  json_io::Reader r(run.config, "boundaries");
  const auto pc = json_io::plan_from_json(r.raw("plan"), r.at("plan"));
  const auto mode = r.string("mode");
  GSBoundaries b;
  Json extra = Json::object();
  if (mode == "observed") {
    ColumnMap cols;
    const auto ip = r.string("interim");
    const auto fp = r.string("final");
    r.finish();
    const auto interim = load_csv(ip, cols);
    const auto final_data = load_csv(fp, cols);
    b = observed_boundaries(pc.plan, interim, final_data);
    const auto fut = futility_check(interim, pc.plan.futility_hr);
    extra["futility"] = Json{{"recommendation", fut.recommendation == FutilityRecommendation::StopHarm ? "stop_harm" : "continue"},
                             {"hr", json_io::opt_num(fut.hr, "hr")},
                             {"threshold", pc.plan.futility_hr},
                             {"note", fut.note}};
  } else if (mode == "planning") {
    r.finish();
    if (!pc.planning) throw ValidationError("boundaries.plan.planning: required in planning mode");
    const auto& p = *pc.planning;
    b = planned_boundaries(pc.plan, p.design.input, p.subjects, p.final_events, p.duration, run.seed);
  } else {
    throw ValidationError("boundaries.mode: expected 'observed' or 'planning'");
  }
  auto rep = json_io::to_json(b);
  rep["mode"] = mode;
  rep["alpha"] = pc.plan.alpha;
  rep["spending"] = "obrien_fleming";
  for (auto& [k, v] : extra.items()) rep[k] = v;
  out.write_json("boundaries.json", rep);
  CsvTable t({"look", "information_fraction", "events", "z_boundary", "nominal_p"});
  t.row({"interim", rep["information_fraction"], rep["interim_events"], rep["z_interim"], rep["p_interim"]});
  t.row({"final", 1.0, rep["final_events"], rep["z_final"], rep["p_final"]});
  out.write("boundaries.csv", t.str());
}

// ---------------------------------------------------------------------------
// Dispatch and manifest

inline void execute(const RunSpec& run, OutputDir& out) {
  if (run.command == "analyze") exec_analyze(run, out);
  else if (run.command == "simulate") exec_simulate(run, out);
  else if (run.command == "design") exec_design(run, out);
  else if (run.command == "boundaries") exec_boundaries(run, out);
  else throw ValidationError("manifest: unknown command '" + run.command + "'");
}

inline Json manifest(const RunSpec& run, const std::vector<std::string>& files, double seconds) {
  return Json{{"tool", kToolName},
              {"version", kVersion},
              {"command", run.command},
              {"seed", run.seed},
              {"replicates", run.replicates},
              {"config", run.config},
              {"outputs", files},
              {"timing_seconds", seconds}};
}

inline RunSpec run_from_manifest(const Json& m) {
  json_io::Reader r(m, "manifest");
  RunSpec run;
  run.command = r.string("command");
  const auto& seed = r.raw("seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer())
    throw ValidationError("manifest.seed: expected an unsigned integer");
  run.seed = seed.get<std::uint64_t>();
  run.replicates = r.integer("replicates");
  run.config = r.raw("config");
  r.raw("tool");
  r.raw("version");
  r.raw("outputs");
  r.raw("timing_seconds");
  r.finish();
  return run;
}

inline void run_and_record(const RunSpec& run, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  OutputDir out(dir);
  execute(run, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto files = out.files();
  files.push_back("manifest.json");
  out.write_json("manifest.json", manifest(run, files, secs));
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"MaxCombo survival analysis, trial simulation and design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::uint64_t seed = 1;
  int replicates = -1;
  unsigned threads = 0;
  std::string outdir = "out";
  auto common = [&](CLI::App* sc, int default_reps) {
    sc->add_option("--seed", seed, "master seed")->capture_default_str();
    sc->add_option("--out", outdir, "output directory")->capture_default_str();
    sc->add_option("--threads", threads, "worker threads, 0 = all (results do not depend on it)");
    sc->add_option("--replicates", replicates, "replicates (default " + std::to_string(default_reps) + ")");
  };

  auto* an = app.add_subcommand("analyze", "three-step analysis of a two-arm survival dataset");
  AnalyzeConfig ac;
  std::string weights = "standard";
  std::optional<double> tau;
  an->add_option("--data", ac.data, "CSV with time, event and arm columns")->required();
  an->add_option("--weights", weights, "standard, modified, or 'rho,gamma;rho,gamma;...'")->capture_default_str();
  an->add_option("--milestones", ac.milestones, "milestone times; the first is the primary t*")->delimiter(',');
  an->add_option("--cutpoints", ac.cutpoints, "piecewise HR cutpoints")->delimiter(',');
  an->add_option("--tau", tau, "RMST/RMTL/WKM horizon (default: shorter arm follow-up)");
  an->add_option("--margin", ac.margin, "net-benefit margin")->capture_default_str();
  an->add_option("--level", ac.level, "confidence level")->capture_default_str();
  an->add_option("--ph-alpha", ac.ph_alpha, "GT p-value threshold for the PH branch")->capture_default_str();
  an->add_flag("--two-sided", ac.two_sided, "report two-sided p-values");
  an->add_option("--time-col", ac.columns.time)->capture_default_str();
  an->add_option("--event-col", ac.columns.event)->capture_default_str();
  an->add_option("--arm-col", ac.columns.arm)->capture_default_str();
  an->add_option("--control-label", ac.columns.control_label)->capture_default_str();
  an->add_option("--treatment-label", ac.columns.treatment_label)->capture_default_str();
  common(an, 2000);

  auto* de = app.add_subcommand("design", "sample size and duration for a MaxCombo design");
  std::string design_cfg;
  de->add_option("--config", design_cfg, "design config JSON")->required();
  common(de, 2000);

  auto* si = app.add_subcommand("simulate", "operating characteristics of a scenario");
  std::string scenario, sim_weights = "standard";
  std::optional<double> level, boundary;
  si->add_option("--scenario", scenario, "library name or scenario JSON path")->required();
  si->add_option("--weights", sim_weights, "standard, modified, or 'rho,gamma;...'")->capture_default_str();
  auto* lv = si->add_option("--level", level, "one-sided level for the adjusted p-value (default 0.025)");
  si->add_option("--boundary", boundary, "fixed z boundary on the minimum statistic")->excludes(lv);
  common(si, 1000);

  auto* bo = app.add_subcommand("boundaries", "interim and final group-sequential boundaries");
  std::string plan_path, interim_path, final_path;
  bo->add_option("--plan", plan_path, "plan config JSON")->required();
  auto* ip = bo->add_option("--interim", interim_path, "interim snapshot CSV (observed mode)");
  auto* fp = bo->add_option("--final", final_path, "final snapshot CSV (observed mode)");
  ip->needs(fp);
  fp->needs(ip);
  common(bo, 0);

  auto* re = app.add_subcommand("replay", "rerun a command from its manifest");
  std::string manifest_path;
  re->add_option("--manifest", manifest_path, "manifest.json from an earlier run")->required();
  re->add_option("--out", outdir, "output directory")->capture_default_str();
  re->add_option("--threads", threads, "worker threads, 0 = all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunSpec run;
    run.seed = seed;
    run.threads = threads;
    if (an->parsed()) {
      run.command = "analyze";
      ac.combo = json_io::combo_from_string(weights);
      ac.data = fs::absolute(ac.data).lexically_normal().string();
      ac.tau = tau;
      ac.resamples = replicates < 0 ? 2000 : replicates;
      run.replicates = ac.resamples;
      run.config = to_json(ac);
      analyze_from_json(run.config);
    } else if (de->parsed()) {
      run.command = "design";
      run.replicates = replicates < 0 ? 2000 : replicates;
      if (run.replicates < 1) throw ValidationError("--replicates: must be > 0");
      run.config = json_io::to_json(json_io::design_from_json(read_json_file(design_cfg)));
    } else if (si->parsed()) {
      run.command = "simulate";
      run.replicates = replicates < 0 ? 1000 : replicates;
      if (run.replicates < kMinSimulationReplicates)
        throw ValidationError("--replicates: must be >= " + std::to_string(kMinSimulationReplicates));
      const auto s = scenario.ends_with(".json") ? json_io::scenario_from_json(read_json_file(scenario), "scenario")
                                                 : scenarios::by_name(scenario);
      const Decision d = boundary ? Decision::boundary(*boundary) : Decision::level(level.value_or(0.025));
      run.config = Json{{"scenario", json_io::to_json(s)},
                        {"combo", json_io::to_json(json_io::combo_from_string(sim_weights))},
                        {"decision", decision_json(d)}};
    } else if (bo->parsed()) {
      run.command = "boundaries";
      run.replicates = 0;
      const auto pc = json_io::plan_from_json(read_json_file(plan_path));
      run.config = Json{{"plan", json_io::to_json(pc)}};
      if (!interim_path.empty()) {
        run.config["mode"] = "observed";
        run.config["interim"] = fs::absolute(interim_path).lexically_normal().string();
        run.config["final"] = fs::absolute(final_path).lexically_normal().string();
      } else {
        run.config["mode"] = "planning";
      }
    } else {
      run = run_from_manifest(read_json_file(manifest_path));
      run.threads = threads;
    }
    run_and_record(run, outdir);
    out << run.command << ": wrote " << (fs::path(outdir) / "manifest.json").string() << "\n";
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace maxcombo::cli
