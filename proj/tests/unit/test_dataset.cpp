#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"

#include "clustsens/dataset.hpp"
#include "clustsens/errors.hpp"
#include "clustsens/simulation.hpp"

using namespace clustsens;

namespace {

ClusteredDataset parse(const std::string& text, OutcomeScale scale = OutcomeScale::continuous) {
  std::istringstream in(text);
  return read_csv(in, scale);
}

}  // namespace

TEST_CASE("small valid file") {
  const auto ds = parse(
      "cluster_id,outcome,treatment,covariate_x\n"
      "a,1.5,1,0\n"
      "a,2.5,0,1\n"
      "b,-1e-3,1,1\n"
      "b,4,0,0\n");
  CHECK(ds.size() == 4);
  CHECK(ds.cluster_count() == 2);
  CHECK(ds.study_count() == 1);
  CHECK(ds.records()[2].outcome == -1e-3);
  CHECK(ds.records()[1].unit_index == 1);
  CHECK(ds.records()[3].unit_index == 1);
  CHECK(ds.cluster_sizes() == std::vector<std::size_t>{2, 2});
}

TEST_CASE("validation errors cite the data row") {
  try {
    parse("cluster_id,outcome,treatment,covariate_x\na,1,0,0\nb,1,1,0\nc,1,2,0\n");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.row() == 3);
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("cluster_id,outcome,treatment,covariate_x\na,0.5,0,0\n", OutcomeScale::binary),
                  ValidationError);
  CHECK_THROWS_AS(parse("cluster_id,outcome,treatment,covariate_x\na,,0,0\n"), ValidationError);
  CHECK_THROWS_AS(parse("cluster_id,outcome,treatment,covariate_x\na,abc,0,0\n"), ValidationError);
  CHECK_THROWS_AS(parse("cluster_id,outcome,treatment,covariate_x\na,1,0\n"), ValidationError);
}

TEST_CASE("missing columns are named") {
  try {
    parse("cluster_id,outcome,covariate_x\na,1,0\n");
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.column() == "treatment");
  }
}

TEST_CASE("optional columns and BOM") {
  const auto ds = parse(
      "\xEF\xBB\xBFstudy_id,cluster_id,treatment,covariate_x,outcome,truth_u\n"
      "s1,a,1,0,1,0.25\n"
      "s2,b,0,1,0,-0.5\n",
      OutcomeScale::binary);
  CHECK(ds.study_count() == 2);
  REQUIRE(ds.records()[1].truth_u);
  CHECK(*ds.records()[1].truth_u == -0.5);
  CHECK(*ds.records()[0].study_id == "s1");
}

TEST_CASE("write_csv then read_csv is the identity") {
  ScenarioConfig c = default_scenario(ScenarioKind::single_continuous);
  const auto ds = generate(c, 3);
  CHECK(ds.size() == 300);
  CHECK(ds.cluster_count() == 100);

  const auto path = std::filesystem::temp_directory_path() / "clustsens_roundtrip.csv";
  write_csv(ds, path);
  const auto back = load_csv(path, OutcomeScale::continuous);
  std::filesystem::remove(path);
  REQUIRE(back.size() == ds.size());
  CHECK(back.cluster_count() == 100);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto &a = ds.records()[i], &b = back.records()[i];
    CHECK(a.cluster_id == b.cluster_id);
    CHECK(a.unit_index == b.unit_index);
    CHECK(a.outcome == b.outcome);
    CHECK(a.treatment == b.treatment);
    CHECK(a.covariate_x == b.covariate_x);
    CHECK(a.truth_u == b.truth_u);
    CHECK(a.study_id == b.study_id);
  }
}

TEST_CASE("cluster counts do not depend on record order") {
  const auto ds = generate(default_scenario(ScenarioKind::single_continuous), 0);
  auto recs = ds.records();
  std::reverse(recs.begin(), recs.end());
  const ClusteredDataset shuffled(recs, OutcomeScale::continuous);
  CHECK(shuffled.cluster_count() == ds.cluster_count());
  std::map<std::string, std::size_t> a, b;
  for (const auto& r : ds.records()) ++a[r.cluster_id];
  for (const auto& r : shuffled.records()) ++b[r.cluster_id];
  CHECK(a == b);
}

TEST_CASE("unreadable paths raise IoError") {
  CHECK_THROWS_AS(load_csv("/nonexistent/dir/file.csv", OutcomeScale::continuous), IoError);
}

TEST_CASE("positivity report") {
  const auto flagged = parse(
      "cluster_id,outcome,treatment,covariate_x\n"
      "a,1,1,0\na,1,0,0\nb,1,0,1\nb,2,0,1\n");
  const auto rep = positivity_report(flagged);
  REQUIRE(rep.size() == 2);
  CHECK(rep[0].covariate_x == 0.0);
  CHECK_FALSE(rep[0].flagged);
  CHECK(rep[1].treated == 0);
  CHECK(rep[1].control == 2);
  CHECK(rep[1].flagged);

  const auto balanced = parse(
      "cluster_id,outcome,treatment,covariate_x\n"
      "a,1,1,0\na,1,0,0\nb,1,0,1\nb,2,1,1\n");
  for (const auto& s : positivity_report(balanced)) CHECK_FALSE(s.flagged);

  for (std::uint64_t r = 0; r < 20; ++r) {
    for (const auto& s : positivity_report(generate(default_scenario(ScenarioKind::single_continuous), r))) {
      CHECK_FALSE(s.flagged);
    }
  }
}
