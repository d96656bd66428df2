#include <string>

#include "doctest.h"
#include "json.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/manifest.hpp"

using namespace phasedeploy;
using Json = nlohmann::ordered_json;

namespace {

std::string cfg(const std::string& name) { return std::string(PHASEDEPLOY_SOURCE_DIR) + "/configs/" + name; }

std::string smoke_text() { return manifest::to_text(manifest::load(cfg("smoke.json"))); }

std::string error_of(const std::string& text) {
  try {
    manifest::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string edited(void (*f)(Json&)) {
  auto j = Json::parse(smoke_text());
  f(j);
  return j.dump();
}

}  // namespace

TEST_CASE("shipped manifests load, validate and round trip") {
  for (const char* name : {"smoke.json", "key_door_golden.json", "line_balance.json", "key_door_pool.json"}) {
    const auto m = manifest::load(cfg(name));
    CHECK_NOTHROW(m.validate());
    const auto text = manifest::to_text(m);
    auto back = manifest::parse(text, m.base_dir);
    CHECK(manifest::to_text(back) == text);
    CHECK(manifest::hash(back) == manifest::hash(m));
    CHECK(manifest::resolve_candidates(m).size() >= 3);
  }
  CHECK(manifest::resolve_candidates(manifest::load(cfg("key_door_pool.json"))).size() >= 10);
}

TEST_CASE("hash follows content") {
  auto a = manifest::load(cfg("smoke.json"));
  auto b = a;
  b.budget += 1;
  CHECK(manifest::hash(a) != manifest::hash(b));
}

TEST_CASE("errors name the field path") {
  CHECK(error_of(edited([](Json& j) { j["bogus"] = 1; })).find("manifest.bogus") != std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["eval"]["evry"] = 1; })).find("manifest.eval.evry") != std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["budget"] = "ten"; })).find("manifest.budget") != std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["test_seeds"] = {11, 30}; })).find("manifest.test_seeds") != std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["seeds"] = {1, 1}; })).find("duplicate") != std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["methods"][1]["t_s"] = 30; })).find("manifest.methods[1].t_s") !=
        std::string::npos);
  CHECK(error_of(edited([](Json& j) { j["methods"][0]["kind"] = "triple"; })).find("unknown kind") !=
        std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
}

TEST_CASE("unknown evidence status lists the vocabulary") {
  const auto msg = error_of(edited([](Json& j) { j["evidence_status"] = "vibes"; }));
  for (const auto& s : manifest::evidence_statuses()) CHECK(msg.find(s) != std::string::npos);
  CHECK(manifest::evidence_statuses().size() == 11);
}

TEST_CASE("unknown candidate ids are rejected at resolve time") {
  auto m = manifest::load(cfg("smoke.json"));
  m.methods[0].reward = "nope";
  try {
    manifest::resolve_candidates(m);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("manifest.methods[0].reward") != std::string::npos);
  }
}

TEST_CASE("schedule_for covers every method kind") {
  auto m = manifest::load(cfg("key_door_golden.json"));
  const auto roster = manifest::resolve_candidates(m);
  const auto direct = manifest::schedule_for(m, m.method("direct"), roster);
  CHECK(direct.stages.size() == 1);
  CHECK(direct.stages[0].reward.id() == "kd_late_oracle");
  const auto wu = manifest::schedule_for(m, m.method("wu25"), roster);
  REQUIRE(wu.stages.size() == 2);
  CHECK(wu.stages[1].start == 25);
  CHECK(wu.stages[0].reward.id() == "kd_early_dense");
  CHECK(!wu.interpolate);
  const auto in = manifest::schedule_for(m, m.method("interp"), roster);
  REQUIRE(in.interpolate);
  CHECK(in.interpolate->first == 15);
  CHECK(in.interpolate->second == 35);

  CHECK_THROWS_AS(manifest::schedule_for(m, m.method("profile"), roster), UsageError);
  deployment::DeploymentPlan plan;
  plan.kind = deployment::PlanKind::kTwoStage;
  plan.first = "kd_early_dense";
  plan.second = "kd_late_oracle";
  plan.t_s = 30;
  const auto prof = manifest::schedule_for(m, m.method("profile"), roster, &plan);
  REQUIRE(prof.stages.size() == 2);
  CHECK(prof.stages[1].start == 30);

  auto scaled = m.method("wu25");
  scaled.scale = "running_norm";
  const auto rn = manifest::schedule_for(m, scaled, roster);
  CHECK(rn.stages[1].reward.transform().mode == rewards::ScaleMode::kRunningNorm);
  scaled.scale = "matched";
  // Sparse success never fires under random play, so nothing to match against.
  CHECK_THROWS_AS(manifest::schedule_for(m, scaled, roster), ConfigError);
  scaled.second = "kd_late_alt";
  const auto mt = manifest::schedule_for(m, scaled, roster);
  CHECK(mt.stages[0].reward.transform().mode == rewards::ScaleMode::kIdentity);
  CHECK(mt.stages[1].reward.transform().mode == rewards::ScaleMode::kMatched);
  CHECK_THROWS_AS(m.method("missing"), ConfigError);
}

TEST_CASE("derived configs") {
  const auto m = manifest::load(cfg("smoke.json"));
  CHECK(m.eval_spec().n_episodes == 8);
  CHECK(m.eval_spec().seed == 7);
  CHECK(m.execution().budget == 30);
  CHECK(m.execution().eval_every == 2);
  CHECK(m.execution().shift_window == 5);
}
