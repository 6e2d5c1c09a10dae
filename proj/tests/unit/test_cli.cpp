#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "clustsens/cli.hpp"
#include "clustsens/dataset.hpp"
#include "clustsens/mixed_models.hpp"
#include "clustsens/simulation.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "clustsens");
  std::ostringstream out, err;
  const int code = clustsens::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_file(const std::string& name, const std::string& contents) {
  const auto path = fs::temp_directory_path() / ("clustsens_cli_" + name);
  std::ofstream(path) << contents;
  return path;
}

}  // namespace

TEST_CASE("fit") {
  const auto ds = clustsens::generate(clustsens::default_scenario(clustsens::ScenarioKind::single_continuous), 1);
  const auto path = fs::temp_directory_path() / "clustsens_cli_fit.csv";
  clustsens::write_csv(ds, path);
  const auto r = run({"fit", "--data", path.string(), "--scale", "continuous"});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  const auto lib = clustsens::fit_lmm(ds);
  CHECK(doc["coefficients"].size() == 4);
  CHECK(doc["coefficients"]["intercept"].get<double>() == lib.coefficients[0]);
  CHECK(doc["coefficients"]["treatment"].get<double>() == lib.coefficients[1]);
  CHECK(doc["coefficients"]["covariate_x"].get<double>() == lib.coefficients[2]);
  CHECK(doc["coefficients"]["treatment_x_covariate"].get<double>() == lib.coefficients[3]);
  CHECK(doc["covariance"][5].get<double>() == lib.coef_covariance(1, 1));

  // The fit document feeds the sensitivity command.
  const auto fit_path = temp_file("fit.json", r.out);
  const auto s = run({"sensitivity", "--fit", fit_path.string(), "--x", "1"});
  REQUIRE(s.code == 0);
  CHECK(json::parse(s.out)["confounded_effect"]["estimate"].get<double>() ==
        doctest::Approx(lib.coefficients[1] + lib.coefficients[3]).epsilon(1e-5));

  const auto csv = run({"--format", "csv", "fit", "--data", path.string(), "--scale", "continuous"});
  CHECK(csv.code == 0);
  CHECK(csv.out.rfind("key,value\n", 0) == 0);
  fs::remove(path);
  fs::remove(fit_path);
}

TEST_CASE("fit error exit codes") {
  const auto zeros = temp_file("zeros.csv",
                               "cluster_id,outcome,treatment,covariate_x\n"
                               "a,0,0,0\na,0,1,1\nb,0,1,0\nb,0,0,1\nc,0,1,1\nc,0,0,0\n");
  const auto r = run({"fit", "--data", zeros.string(), "--scale", "binary"});
  CHECK(r.code == 2);
  CHECK(r.out.empty());
  CHECK(r.err.find("separat") != std::string::npos);

  const auto bad_row = temp_file("badrow.csv", "cluster_id,outcome,treatment,covariate_x\na,1,0,0\na,1,1,0\na,1,2,0\n");
  const auto v = run({"fit", "--data", bad_row.string(), "--scale", "continuous"});
  CHECK(v.code == 1);
  CHECK(v.err.find("row 3") != std::string::npos);

  const auto schema = temp_file("schema.csv", "cluster_id,outcome,covariate_x\na,1,0\n");
  CHECK(run({"fit", "--data", schema.string(), "--scale", "continuous"}).code == 1);
  CHECK(run({"fit", "--data", "/nonexistent/file.csv", "--scale", "continuous"}).code == 3);
  CHECK(run({"fit", "--data", zeros.string(), "--scale", "ordinal"}).code == 1);
  for (const auto& p : {zeros, bad_row, schema}) fs::remove(p);
}

TEST_CASE("sensitivity worked examples") {
  auto r = run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23"});
  REQUIRE(r.code == 0);
  auto doc = json::parse(r.out);
  CHECK(doc["minimal_bias_factor"]["value"].get<double>() == 0.75);
  CHECK(doc["minimal_bias_factor"]["direction"] == "positive");

  r = run({"sensitivity", "--estimate", "1", "--lb", "-0.5", "--ub", "2.5"});
  REQUIRE(r.code == 0);
  doc = json::parse(r.out);
  CHECK(doc["minimal_bias_factor"]["value"].get<double>() == 0.0);
  CHECK(doc["verdict"] == "no confounding needed");

  r = run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23", "--theta", "3", "--m1x", "0.25",
           "--m0x", "0"});
  REQUIRE(r.code == 0);
  doc = json::parse(r.out);
  CHECK(doc["explains_away"] == true);
  CHECK(doc["bias_factor"].get<double>() == 0.75);
  CHECK(doc["adjusted_effect"]["lb"].get<double>() == 0.0);

  r = run({"sensitivity", "--estimate", "0.5", "--lb", "0.1", "--ub", "0.9", "--theta", "1", "--theta", "2", "--p1x",
           "0.3", "--p1x", "0.4", "--p0x", "0.2", "--p0x", "0.2", "--scale", "log-RR"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).contains("explains_away"));
}

TEST_CASE("sensitivity errors") {
  CHECK(run({"sensitivity", "--estimate", "5", "--lb", "1", "--ub", "10"}).code == 1);
  CHECK(run({"sensitivity", "--estimate", "5", "--lb", "1"}).code == 1);
  CHECK(run({"sensitivity"}).code == 1);
  CHECK(run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23", "--theta", "3"}).code == 1);
  CHECK(run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23", "--theta", "3", "--m1x", "1",
             "--m0x", "0", "--p1x", "0.1", "--p0x", "0.2"})
            .code == 1);
  CHECK(run({"sensitivity", "--fit", "/nonexistent/fit.json"}).code == 3);
  // Fit and triple scales must agree.
  CHECK(run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23", "--theta", "3", "--p1x", "0.5",
             "--p0x", "0.1"})
            .code == 1);
}

TEST_CASE("meta") {
  auto r = run({"meta", "--mu", "0.2852", "--v", "0.08", "--q", "0.1823", "--r", "0.4"});
  REQUIRE(r.code == 0);
  auto doc = json::parse(r.out);
  CHECK(std::abs(doc["minimal_common_bias"].get<double>() - 0.17) <= 0.005);

  r = run({"meta", "--mu", "0.4", "--v", "0", "--q", "0.4", "--r", "0.3"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["minimal_common_bias"].get<double>() == 0.0);

  CHECK(run({"meta", "--mu", "0.2852", "--v", "0.08", "--q", "0.1823", "--r", "0.6"}).code == 1);
  CHECK(run({"meta", "--mu", "0.2852", "--v", "0.08", "--q", "0.1823", "--r", "0"}).code == 1);

  const auto studies = temp_file("studies.csv",
                                 "study_id,estimate,std_error\n"
                                 "one,1.0,0.31622776601683794\n"
                                 "two,2.0,0.31622776601683794\n");
  r = run({"meta", "--studies", studies.string(), "--q", "1", "--r", "0.25", "--mu-b", "0.1", "--v-b", "0.05"});
  REQUIRE(r.code == 0);
  doc = json::parse(r.out);
  CHECK(doc["pooled"]["mu_hat"].get<double>() == 1.5);
  CHECK(doc["pooled"]["v_hat"].get<double>() == 0.4);
  CHECK(doc.contains("p_of_q"));
  CHECK(run({"meta", "--studies", studies.string(), "--q", "1", "--mu-b", "0.1", "--v-b", "0.5"}).code == 1);
  CHECK(run({"meta", "--studies", "/nonexistent.csv", "--q", "1"}).code == 3);
  fs::remove(studies);
}

TEST_CASE("contour") {
  auto r = run({"contour", "--dm-min", "0", "--dm-max", "0.5", "--theta-min", "0", "--theta-max", "3", "--resolution",
                "3", "--threshold", "0.75"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "delta_m,theta,bias_factor,explains");
  int rows = 0;
  bool found = false;
  while (std::getline(lines, line)) {
    ++rows;
    if (line == "0.25,3,0.75,1") found = true;
  }
  CHECK(rows == 9);
  CHECK(found);
  CHECK(run({"contour", "--resolution", "1", "--threshold", "0.5"}).code == 1);
  const auto j = run({"--format", "json", "contour", "--resolution", "4", "--threshold", "0.5"});
  REQUIRE(j.code == 0);
  CHECK(json::parse(j.out)["nodes"].size() == 16);
}

TEST_CASE("simulate") {
  const auto cfg = temp_file("sim.json",
                             R"({"kind": "single_continuous", "J": 30, "I": 3, "beta": [1, -1, 3, 1],
                                 "theta": 0.5, "sigma_u2": 0.25, "replications": 20, "seed": 11})");
  const auto a = run({"simulate", "--config", cfg.string(), "--workers", "2"});
  const auto b = run({"simulate", "--config", cfg.string(), "--workers", "1"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.rfind("J,I,beta1,beta3,theta,sigma_u2,bias_x0,se_x0,cp_x0,bias_x1,se_x1,cp_x1,replications,"
                    "replications_used,seed\n30,3,-1,1,0.5,0.25,",
                    0) == 0);
  CHECK(a.err.find("runtime_seconds=") != std::string::npos);
  CHECK(a.out.find("runtime") == std::string::npos);
  CHECK(run({"simulate", "--config", cfg.string(), "--seed", "12"}).out != a.out);

  const auto one = run({"simulate", "--config", cfg.string(), "--replications", "1"});
  REQUIRE(one.code == 0);
  CHECK(one.err.find("warning") != std::string::npos);
  const auto row = one.out.substr(one.out.find('\n') + 1);
  CHECK(row.find(",,") != std::string::npos);  // empty SE fields

  const auto j = run({"--format", "json", "simulate", "--config", cfg.string()});
  REQUIRE(j.code == 0);
  CHECK(json::parse(j.out)["replications_used"] == 20);

  const auto unknown = temp_file("unknown.json", R"({"kind": "single_continuous", "sigma_u": 1})");
  CHECK(run({"simulate", "--config", unknown.string()}).code == 1);
  const auto broken = temp_file("broken.json", "{not json");
  CHECK(run({"simulate", "--config", broken.string()}).code == 1);
  const auto negative = temp_file("negative.json", R"({"kind": "meta", "nu": -1})");
  CHECK(run({"simulate", "--config", negative.string()}).code == 1);
  CHECK(run({"simulate", "--config", "/nonexistent/scenario.json"}).code == 3);
  for (const auto& p : {cfg, unknown, broken, negative}) fs::remove(p);
}

TEST_CASE("global behaviour") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("sensitivity") != std::string::npos);

  const auto p3 = run({"--precision", "3", "sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23"});
  CHECK(json::parse(p3.out)["confounded_effect"]["std_error"].get<double>() == 2.42);
  const auto csv = run({"sensitivity", "--estimate", "5.49", "--lb", "0.75", "--ub", "10.23", "--format", "csv"});
  CHECK(csv.out.find("minimal_bias_factor.value,0.75\n") != std::string::npos);

  // Repeated commands give byte-identical stdout.
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"meta", "--mu", "0.2852", "--v", "0.08", "--q", "0.1823", "--r", "0.4"},
           {"contour", "--resolution", "5", "--threshold", "0.2"},
           {"sensitivity", "--estimate", "-2", "--lb", "-3", "--ub", "-1"}}) {
    CHECK(run(args).out == run(args).out);
  }
}
