#include "clustsens/scenario_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "clustsens/errors.hpp"

namespace clustsens {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw DomainError(where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) throw DomainError("unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
void read_if(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

}  // namespace

ScenarioConfig scenario_from_json(const json& doc) {
  try {
    if (!doc.is_object() || !doc.contains("kind")) throw DomainError("scenario must be an object with a 'kind' key");
    ScenarioConfig c = default_scenario(parse_scenario_kind(doc.at("kind").get<std::string>()));
    const bool meta = c.kind == ScenarioKind::meta;

    std::set<std::string> allowed{"kind",  "I",     "beta",  "theta", "sigma_u2", "nu", "phi",
                                  "level", "seed",  "replications",   "quadrature_points", "mechanism"};
    if (meta) {
      allowed.insert({"K", "mean_J", "J_spread", "theta_variance", "effect_distribution", "q", "q_sd_offset", "r"});
    } else {
      allowed.insert({"J", "icc", "latent_noise_variance"});
    }
    reject_unknown(doc, allowed, "scenario (" + to_string(c.kind) + ")");

    read_if(doc, meta ? "mean_J" : "J", c.clusters);
    read_if(doc, "J_spread", c.cluster_spread);
    read_if(doc, "I", c.repeats);
    read_if(doc, "K", c.studies);
    if (doc.contains("beta")) {
      const auto b = doc.at("beta").get<std::vector<double>>();
      if (b.size() != 4) throw DomainError("beta must list 4 values (beta0, beta1, beta2, beta3)");
      for (int k = 0; k < 4; ++k) c.beta[k] = b[k];
    }
    read_if(doc, "theta", c.theta);
    read_if(doc, "theta_variance", c.theta_variance);
    read_if(doc, "sigma_u2", c.sigma_u2);
    if (doc.contains("nu")) {
      c.nu = doc.at("nu").get<double>();
      c.icc.reset();
    }
    if (doc.contains("icc")) {
      if (doc.contains("nu")) throw DomainError("give either 'nu' or 'icc', not both");
      c.icc = doc.at("icc").get<double>();
    }
    read_if(doc, "phi", c.phi);
    read_if(doc, "latent_noise_variance", c.latent_noise_variance);
    if (doc.contains("effect_distribution")) {
      const auto& e = doc.at("effect_distribution");
      reject_unknown(e, {"mu1", "mu3", "v11", "v33", "v13"}, "effect_distribution");
      read_if(e, "mu1", c.effects.mu1);
      read_if(e, "mu3", c.effects.mu3);
      read_if(e, "v11", c.effects.v11);
      read_if(e, "v33", c.effects.v33);
      read_if(e, "v13", c.effects.v13);
    }
    if (doc.contains("q")) {
      const auto q = doc.at("q").get<std::vector<double>>();
      if (q.size() != 2) throw DomainError("q must list 2 values (x = 0, x = 1)");
      c.q = std::array<double, 2>{q[0], q[1]};
    }
    read_if(doc, "q_sd_offset", c.q_sd_offset);
    read_if(doc, "r", c.r);
    read_if(doc, "level", c.level);
    read_if(doc, "quadrature_points", c.quadrature_points);
    if (doc.contains("mechanism")) {
      const auto& m = doc.at("mechanism");
      reject_unknown(m, {"x_threshold", "x_prob_below", "x_prob_above", "a_threshold", "a_prob_below", "a_prob_above"},
                     "mechanism");
      read_if(m, "x_threshold", c.mechanism.x_threshold);
      read_if(m, "x_prob_below", c.mechanism.x_prob_below);
      read_if(m, "x_prob_above", c.mechanism.x_prob_above);
      read_if(m, "a_threshold", c.mechanism.a_threshold);
      read_if(m, "a_prob_below", c.mechanism.a_prob_below);
      read_if(m, "a_prob_above", c.mechanism.a_prob_above);
    }
    read_if(doc, "seed", c.seed);
    read_if(doc, "replications", c.replications);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DomainError(std::string("scenario: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DomainError("scenario file " + path.string() + " is not valid JSON: " + e.what());
  }
  return scenario_from_json(doc);
}

json scenario_to_json(const ScenarioConfig& c) {
  json doc;
  doc["kind"] = to_string(c.kind);
  const bool meta = c.kind == ScenarioKind::meta;
  doc[meta ? "mean_J" : "J"] = c.clusters;
  doc["I"] = c.repeats;
  doc["beta"] = std::vector<double>(c.beta.begin(), c.beta.end());
  doc["theta"] = c.theta;
  doc["sigma_u2"] = c.sigma_u2;
  if (c.icc && !meta) {
    doc["icc"] = *c.icc;
  } else {
    doc["nu"] = c.nu;
  }
  doc["phi"] = c.phi;
  if (meta) {
    doc["K"] = c.studies;
    doc["J_spread"] = c.cluster_spread;
    doc["theta_variance"] = c.theta_variance;
    doc["effect_distribution"] = {{"mu1", c.effects.mu1},
                                  {"mu3", c.effects.mu3},
                                  {"v11", c.effects.v11},
                                  {"v33", c.effects.v33},
                                  {"v13", c.effects.v13}};
    if (c.q) doc["q"] = {(*c.q)[0], (*c.q)[1]};
    doc["q_sd_offset"] = c.q_sd_offset;
    doc["r"] = c.r;
  } else {
    doc["latent_noise_variance"] = c.latent_noise_variance;
  }
  doc["level"] = c.level;
  doc["quadrature_points"] = c.quadrature_points;
  const auto& m = c.mechanism;
  doc["mechanism"] = {{"x_threshold", m.x_threshold},   {"x_prob_below", m.x_prob_below},
                      {"x_prob_above", m.x_prob_above}, {"a_threshold", m.a_threshold},
                      {"a_prob_below", m.a_prob_below}, {"a_prob_above", m.a_prob_above}};
  doc["seed"] = c.seed;
  doc["replications"] = c.replications;
  return doc;
}

std::string format_number(double value, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, value);
  return buf;
}

std::string metrics_csv_header(ScenarioKind kind) {
  std::string lead;
  switch (kind) {
    case ScenarioKind::single_continuous:
      lead = "J,I,beta1,beta3,theta,sigma_u2";
      break;
    case ScenarioKind::single_binary:
      lead = "theta,icc,sigma_u2";
      break;
    case ScenarioKind::meta:
      lead = "K,mean_J,I";
      break;
  }
  return lead + ",bias_x0,se_x0,cp_x0,bias_x1,se_x1,cp_x1,replications,replications_used,seed";
}

std::string metrics_csv_row(const ScenarioConfig& c, const SimMetrics& m, int precision) {
  auto num = [precision](double v) { return format_number(v, precision); };
  std::ostringstream row;
  switch (c.kind) {
    case ScenarioKind::single_continuous:
      row << c.clusters << ',' << c.repeats << ',' << num(c.beta[1]) << ',' << num(c.beta[3]) << ',' << num(c.theta)
          << ',' << num(c.sigma_u2);
      break;
    case ScenarioKind::single_binary:
      row << num(c.theta) << ',' << num(icc_logistic(c.random_intercept_variance())) << ',' << num(c.sigma_u2);
      break;
    case ScenarioKind::meta:
      row << c.studies << ',' << c.clusters << ',' << c.repeats;
      break;
  }
  for (const auto& x : m.by_x) {
    row << ',' << num(x.bias) << ',' << (x.se ? num(*x.se) : std::string()) << ',' << num(x.cp);
  }
  row << ',' << m.replications << ',' << m.replications_used << ',' << c.seed;
  return row.str();
}

json metrics_to_json(const ScenarioConfig& c, const SimMetrics& m) {
  json doc;
  doc["scenario"] = scenario_to_json(c);
  json rows = json::array();
  for (const auto& x : m.by_x) {
    rows.push_back({{"x", x.x},
                    {"truth", x.truth},
                    {"mean_estimate", x.mean_estimate},
                    {"bias", x.bias},
                    {"se", x.se ? json(*x.se) : json(nullptr)},
                    {"cp", x.cp}});
  }
  doc["by_x"] = rows;
  doc["replications"] = m.replications;
  doc["replications_used"] = m.replications_used;
  doc["failed"] = m.failed;
  doc["flagged"] = m.flagged;
  doc["se_definition"] = "empirical standard deviation of the estimates across replications";
  return doc;
}

}  // namespace clustsens
