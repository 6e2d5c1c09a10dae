#include "clustsens/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "clustsens/dataset.hpp"
#include "clustsens/errors.hpp"
#include "clustsens/fit_io.hpp"
#include "clustsens/meta.hpp"
#include "clustsens/mixed_models.hpp"
#include "clustsens/scenario_io.hpp"
#include "clustsens/sensitivity.hpp"
#include "clustsens/simulation.hpp"

namespace clustsens::cli {

using nlohmann::json;

namespace {

struct Globals {
  std::string format;  // empty: per-command default
  int precision = 6;
  std::optional<std::uint64_t> seed;
  int workers = 0;
};

// Round every floating-point leaf to `precision` significant digits so the
// JSON payload carries exactly what the CSV form would print.
void round_floats(json& node, int precision) {
  if (node.is_number_float()) {
    node = std::strtod(format_number(node.get<double>(), precision).c_str(), nullptr);
  } else if (node.is_structured()) {
    for (auto& child : node) round_floats(child, precision);
  }
}

std::string csv_field(const json& value, int precision) {
  if (value.is_null()) return "";
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_number_float()) return format_number(value.get<double>(), precision);
  if (value.is_number()) return value.dump();
  std::string s = value.is_string() ? value.get<std::string>() : value.dump();
  if (s.find_first_of(",\"\n") != std::string::npos) {
    std::string quoted = "\"";
    for (char c : s) quoted += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return quoted + "\"";
  }
  return s;
}

// Key/value CSV of a nested document; keys are dotted paths.
void write_key_value_csv(const json& doc, int precision, std::ostream& out) {
  out << "key,value\n";
  const json flat = doc.flatten();
  for (const auto& item : flat.items()) {
    std::string key = item.key().substr(1);
    for (auto& c : key) {
      if (c == '/') c = '.';
    }
    out << key << ',' << csv_field(item.value(), precision) << '\n';
  }
}

void emit(json doc, const std::string& format, int precision, std::ostream& out) {
  if (format == "csv") {
    write_key_value_csv(doc, precision, out);
  } else {
    round_floats(doc, precision);
    out << doc.dump(2) << '\n';
  }
}

json effect_json(const ConfoundedEffect& e) {
  return {{"x", e.x},         {"estimate", e.estimate}, {"std_error", e.std_error}, {"lb", e.lb},
          {"ub", e.ub},       {"level", e.level},       {"scale", to_string(e.scale)}};
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string scale;
  int quadrature = 15;
};

void cmd_fit(const FitArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto ds = load_csv(a.data, parse_outcome_scale(a.scale));
  for (const auto& s : positivity_report(ds)) {
    if (s.flagged) {
      err << "warning: positivity: x = " << s.covariate_x << " has " << s.treated << " treated and " << s.control
          << " control units\n";
    }
  }
  const MixedModelFit fit = ds.scale() == OutcomeScale::continuous ? fit_lmm(ds) : fit_glmm_logit(ds, a.quadrature);
  if (fit.boundary) err << "note: random-intercept variance estimate is on the boundary (0)\n";

  // Fit documents feed later commands, so they keep full precision.
  const json doc = fit_to_json(fit);
  if (g.format == "csv") {
    write_key_value_csv(doc, 17, out);
  } else {
    out << doc.dump(2) << '\n';
  }
}

// ---- sensitivity -----------------------------------------------------------

struct SensitivityArgs {
  std::string fit;
  std::optional<double> estimate, lb, ub;
  double level = 0.95;
  double x = 0.0;
  std::string scale = "mean-difference";
  std::vector<double> theta, m1x, m0x, p1x, p0x, mu1x, mu0x;
};

EffectScale parse_effect_scale(const std::string& text) {
  if (text == "mean-difference") return EffectScale::mean_difference;
  if (text == "log-RR") return EffectScale::log_rr;
  throw DomainError("unknown effect scale '" + text + "' (expected mean-difference or log-RR)");
}

std::optional<SensitivitySpec> build_spec(const SensitivityArgs& a) {
  const bool any = !a.m1x.empty() || !a.m0x.empty() || !a.p1x.empty() || !a.p0x.empty() || !a.mu1x.empty() ||
                   !a.mu0x.empty();
  if (a.theta.empty()) {
    if (any) throw DomainError("confounder moments need a matching --theta");
    return std::nullopt;
  }
  int families = 0;
  SensitivitySpec spec;
  auto take = [&](const std::vector<double>& treated, const std::vector<double>& control, const char* names,
                  auto make) {
    if (treated.empty() && control.empty()) return;
    ++families;
    if (treated.size() != a.theta.size() || control.size() != a.theta.size()) {
      throw DomainError(std::string("each --theta needs one value of each of ") + names);
    }
    for (std::size_t i = 0; i < a.theta.size(); ++i) {
      const auto one = make(a.theta[i], treated[i], control[i]);
      spec.confounders.push_back(one.confounders.front());
    }
  };
  take(a.m1x, a.m0x, "--m1x/--m0x", SensitivitySpec::continuous);
  take(a.p1x, a.p0x, "--p1x/--p0x", SensitivitySpec::binary_u);
  take(a.mu1x, a.mu0x, "--mu1x/--mu0x", SensitivitySpec::normal_u);
  if (families != 1) {
    throw DomainError("give exactly one of --m1x/--m0x, --p1x/--p0x or --mu1x/--mu0x with --theta");
  }
  spec.validate();
  return spec;
}

MixedModelFit read_fit_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fit document '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DomainError("fit document '" + path + "' is not valid JSON: " + e.what());
  }
  return fit_from_json(doc);
}

void cmd_sensitivity(const SensitivityArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const bool triple = a.estimate || a.lb || a.ub;
  if (triple == !a.fit.empty()) throw DomainError("give either --fit or all of --estimate/--lb/--ub");
  if (triple && !(a.estimate && a.lb && a.ub)) throw DomainError("--estimate, --lb and --ub go together");

  std::optional<MixedModelFit> fit;
  ConfoundedEffect effect;
  if (!a.fit.empty()) {
    fit = read_fit_document(a.fit);
    effect = confounded_effect(*fit, a.x, a.level);
  } else {
    effect = effect_from_interval(*a.estimate, *a.lb, *a.ub, a.level, parse_effect_scale(a.scale), a.x);
  }
  const auto spec = build_spec(a);
  const auto minimal = minimal_bias_factor(effect);

  json doc;
  doc["confounded_effect"] = effect_json(effect);
  doc["minimal_bias_factor"] = {{"value", minimal.value}, {"direction", to_string(minimal.direction)}};
  std::string verdict;
  if (minimal.direction == EffectDirection::null_inclusive) verdict = "no confounding needed";
  if (spec) {
    if (fit) {
      for (const auto& w : approximation_warnings(*fit, *spec)) err << "warning: " << w << '\n';
    }
    const auto bias = bias_factor(*spec);
    const auto adjusted = adjust(effect, bias);
    const bool explained = explains_away(effect, bias);
    doc["bias_factor"] = bias.value;
    doc["adjusted_effect"] = {{"estimate", adjusted.estimate}, {"lb", adjusted.lb}, {"ub", adjusted.ub}};
    doc["explains_away"] = explained;
    if (verdict.empty()) verdict = explained ? "explained away" : "not explained away";
  }
  if (!verdict.empty()) doc["verdict"] = verdict;
  emit(doc, g.format, g.precision, out);
}

// ---- meta ------------------------------------------------------------------

struct MetaArgs {
  std::string studies;
  std::optional<double> mu, v;
  double q = 0.0;
  double r = 0.25;
  std::string direction = "positive";
  std::optional<double> mu_b, v_b;
  std::string scale = "mean-difference";
};

void cmd_meta(const MetaArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const bool summary = a.mu || a.v;
  if (summary == !a.studies.empty()) throw DomainError("give either --studies or both --mu and --v");
  if (summary && !(a.mu && a.v)) throw DomainError("--mu and --v go together");
  if (a.mu_b.has_value() != a.v_b.has_value()) throw DomainError("--mu-b and --v-b go together");
  const auto direction = parse_meta_direction(a.direction);
  const PqSpec pq{a.q, a.r};

  json doc;
  MetaFit fit;
  if (summary) {
    fit = meta_fit_from_summary(*a.mu, *a.v);
  } else {
    fit = pool(load_studies_csv(a.studies, parse_effect_scale(a.scale)));
    doc["pooled"] = {{"k", fit.k},
                     {"mu_hat", fit.mu_hat},
                     {"se_mu", fit.se_mu},
                     {"v_hat", fit.v_hat},
                     {"q_statistic", fit.q_statistic}};
  }
  const auto bstar = minimal_common_bias(fit, pq, direction);
  doc["q"] = a.q;
  doc["r"] = a.r;
  doc["direction"] = to_string(direction);
  doc["minimal_common_bias"] = bstar.value;
  doc["already_not_meaningful"] = bstar.already_not_meaningful;
  if (a.mu_b) {
    const BiasDistribution bias{*a.mu_b, *a.v_b};
    doc["p_of_q"] = p_of_q(fit, bias, a.q, direction);
    doc["explains_away"] = explains_away_meta(fit, bias, pq, direction);
  }
  emit(doc, g.format, g.precision, out);
}

// ---- contour ---------------------------------------------------------------

struct ContourArgs {
  double dm_min = 0.0, dm_max = 1.0;
  double theta_min = 0.0, theta_max = 1.0;
  int resolution = 21;
  double threshold = 0.0;
};

void cmd_contour(const ContourArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
  const auto grid = contour_grid({a.dm_min, a.dm_max}, {a.theta_min, a.theta_max}, a.resolution, a.threshold);
  if (g.format == "json") {
    json rows = json::array();
    for (const auto& n : grid) {
      rows.push_back({{"delta_m", n.delta_m}, {"theta", n.theta}, {"bias_factor", n.bias_factor},
                      {"explains", n.explains}});
    }
    emit(json{{"threshold", a.threshold}, {"nodes", rows}}, g.format, g.precision, out);
    return;
  }
  out << "delta_m,theta,bias_factor,explains\n";
  for (const auto& n : grid) {
    out << format_number(n.delta_m, g.precision) << ',' << format_number(n.theta, g.precision) << ','
        << format_number(n.bias_factor, g.precision) << ',' << (n.explains ? 1 : 0) << '\n';
  }
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<int> replications;
};

void cmd_simulate(const SimulateArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  ScenarioConfig config = load_scenario(a.config);
  if (g.seed) config.seed = *g.seed;
  if (a.replications) config.replications = *a.replications;
  config.validate();

  const auto start = std::chrono::steady_clock::now();
  const SimMetrics metrics = run_scenario(config, g.workers);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  if (metrics.replications_used < 2) {
    err << "warning: fewer than 2 usable replications; SE is reported as absent\n";
  }
  if (metrics.flagged) {
    err << "warning: " << metrics.failed << " of " << metrics.replications
        << " replications failed to converge (more than 5%)\n";
  }
  // Runtime varies between runs, so it stays off stdout.
  err << "runtime_seconds=" << format_number(elapsed.count(), 4) << '\n';

  if (g.format == "json") {
    emit(metrics_to_json(config, metrics), g.format, g.precision, out);
  } else {
    out << metrics_csv_header(config.kind) << '\n' << metrics_csv_row(config, metrics, g.precision) << '\n';
  }
}

int exit_code_for(const std::exception_ptr& ex, std::ostream& err) {
  try {
    std::rethrow_exception(ex);
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensitivity analysis for unmeasured confounding in clustered data", "clustsens"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--precision", g.precision, "Significant digits for numeric output")->check(CLI::Range(1, 17));
  app.add_option("--seed", g.seed, "Override the scenario seed (simulate)");
  app.add_option("--workers", g.workers, "Worker threads for simulate (0 = all cores)")
      ->check(CLI::NonNegativeNumber);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the confounded random-intercept model to a CSV");
  fit_cmd->add_option("--data", fit.data, "Observation CSV")->required();
  fit_cmd->add_option("--scale", fit.scale, "Outcome scale")->required()->check(CLI::IsMember({"continuous", "binary"}));
  fit_cmd->add_option("--quadrature", fit.quadrature, "Adaptive Gauss-Hermite points (binary)")
      ->check(CLI::PositiveNumber);

  SensitivityArgs sens;
  auto* sens_cmd = app.add_subcommand("sensitivity", "Bias factors for a single study");
  sens_cmd->add_option("--fit", sens.fit, "Fit document from 'clustsens fit'");
  sens_cmd->add_option("--estimate", sens.estimate, "Published effect estimate");
  sens_cmd->add_option("--lb", sens.lb, "Lower confidence limit");
  sens_cmd->add_option("--ub", sens.ub, "Upper confidence limit");
  sens_cmd->add_option("--level", sens.level, "Confidence level")->check(CLI::Range(0.0, 1.0));
  sens_cmd->add_option("--x", sens.x, "Covariate value of the conditional effect");
  sens_cmd->add_option("--scale", sens.scale, "Scale of a published triple")
      ->check(CLI::IsMember({"mean-difference", "log-RR"}));
  sens_cmd->add_option("--theta", sens.theta, "Effect of U on the outcome (repeat per confounder)");
  sens_cmd->add_option("--m1x", sens.m1x, "E(U | A=1, X=x), continuous outcome");
  sens_cmd->add_option("--m0x", sens.m0x, "E(U | A=0, X=x), continuous outcome");
  sens_cmd->add_option("--p1x", sens.p1x, "P(U=1 | A=1, X=x), binary outcome");
  sens_cmd->add_option("--p0x", sens.p0x, "P(U=1 | A=0, X=x), binary outcome");
  sens_cmd->add_option("--mu1x", sens.mu1x, "E(U | A=1, X=x), binary outcome, normal U");
  sens_cmd->add_option("--mu0x", sens.mu0x, "E(U | A=0, X=x), binary outcome, normal U");

  MetaArgs meta;
  auto* meta_cmd = app.add_subcommand("meta", "Minimal common bias for a random-effects meta-analysis");
  meta_cmd->add_option("--studies", meta.studies, "Study CSV (study_id, estimate, std_error)");
  meta_cmd->add_option("--mu", meta.mu, "Pooled mean");
  meta_cmd->add_option("--v", meta.v, "Between-study variance");
  meta_cmd->add_option("--q", meta.q, "Meaningful effect size")->required();
  meta_cmd->add_option("--r", meta.r, "Proportion threshold in (0, 0.5)");
  meta_cmd->add_option("--direction", meta.direction, "Apparent direction of the effects")
      ->check(CLI::IsMember({"positive", "negative"}));
  meta_cmd->add_option("--mu-b", meta.mu_b, "Mean of the bias distribution");
  meta_cmd->add_option("--v-b", meta.v_b, "Variance of the bias distribution");
  meta_cmd->add_option("--scale", meta.scale, "Scale of the study estimates")
      ->check(CLI::IsMember({"mean-difference", "log-RR"}));

  ContourArgs contour;
  auto* contour_cmd = app.add_subcommand("contour", "Bias factor over a (delta_m, theta) grid");
  contour_cmd->add_option("--dm-min", contour.dm_min, "Lower delta_m");
  contour_cmd->add_option("--dm-max", contour.dm_max, "Upper delta_m");
  contour_cmd->add_option("--theta-min", contour.theta_min, "Lower theta");
  contour_cmd->add_option("--theta-max", contour.theta_max, "Upper theta");
  contour_cmd->add_option("--resolution", contour.resolution, "Nodes per axis (>= 2)");
  contour_cmd->add_option("--threshold", contour.threshold, "Minimal bias factor to compare against")->required();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a Monte Carlo scenario");
  sim_cmd->add_option("--config", sim.config, "Scenario JSON")->required();
  sim_cmd->add_option("--replications", sim.replications, "Override the replication count")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*fit_cmd) {
      if (g.format.empty()) g.format = "json";
      cmd_fit(fit, g, out, err);
    } else if (*sens_cmd) {
      if (g.format.empty()) g.format = "json";
      cmd_sensitivity(sens, g, out, err);
    } else if (*meta_cmd) {
      if (g.format.empty()) g.format = "json";
      cmd_meta(meta, g, out, err);
    } else if (*contour_cmd) {
      if (g.format.empty()) g.format = "csv";
      cmd_contour(contour, g, out, err);
    } else if (*sim_cmd) {
      if (g.format.empty()) g.format = "csv";
      cmd_simulate(sim, g, out, err);
    }
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
  return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace clustsens::cli
