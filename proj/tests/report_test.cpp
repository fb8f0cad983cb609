#include <sstream>

#include <gtest/gtest.h>

#include "servnet/report.hpp"
#include "servnet/sim.hpp"
#include "servnet/suites.hpp"

using namespace servnet;

namespace {

const char* kScenario = R"({
  "name": "rep", "seed": 7, "weight_mode": "UNIT",
  "nodes": [{"id": "alice", "role": "authority"}, {"id": "bob", "authority": "alice"}],
  "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
  "until": 60,
  "expectations": [
    {"name": "two bindings", "count": {"kind": "contract-bound"}, "op": "==", "value": 2},
    {"name": "alice bound once", "count": {"kind": "contract-bound", "actor": "alice"}, "op": "==", "value": 1},
    {"name": "accepted", "count": {"kind": "feedback-outcome", "where": {"status": "ACCEPTED"}}, "op": "==", "value": 2},
    {"name": "bob scored", "snapshot": {"server": "bob", "field": "GR"}, "op": ">=", "value": "1"},
    {"name": "bob present", "snapshot": {"server": "bob", "field": "present"}, "op": "==", "value": "true"},
    {"name": "ghost absent", "snapshot": {"server": "ghost", "field": "present"}, "op": "==", "value": "false"},
    {"name": "wishful", "snapshot": {"server": "bob", "field": "GR"}, "op": ">", "value": "5/2"}
  ]
})";

}  // namespace

TEST(CompareValues, NumericAndTextual) {
    EXPECT_TRUE(compare_values("1.5", "==", "3/2"));
    EXPECT_TRUE(compare_values("2", ">", "1.999"));
    EXPECT_FALSE(compare_values("2", "<", "2"));
    EXPECT_TRUE(compare_values("2", "<=", "2"));
    EXPECT_TRUE(compare_values("alice", "==", "alice"));
    EXPECT_TRUE(compare_values("alice", "!=", "bob"));
    EXPECT_FALSE(compare_values("alice", "<", "bob"));
}

TEST(Report, EvaluatesCountAndSnapshotExpectations) {
    Sim sim(parse_scenario(kScenario));
    sim.run();
    const auto rep = make_report(sim.log());
    ASSERT_EQ(rep.expectations.size(), 7u);
    for (std::size_t i = 0; i + 1 < rep.expectations.size(); ++i) {
        EXPECT_TRUE(rep.expectations[i].passed) << rep.expectations[i].name << " observed " << rep.expectations[i].observed;
    }
    EXPECT_FALSE(rep.expectations.back().passed);
    EXPECT_FALSE(rep.passed());
    EXPECT_EQ(rep.scenario, "rep");
    ASSERT_EQ(rep.snapshot.size(), 2u);
}

TEST(Report, RenderNamesFailures) {
    Sim sim(parse_scenario(kScenario));
    sim.run();
    const std::string text = make_report(sim.log()).render();
    EXPECT_NE(text.find("FAIL wishful: observed 1, wanted > 5/2"), std::string::npos) << text;
    EXPECT_NE(text.find("PASS two bindings"), std::string::npos);
    EXPECT_NE(text.find("verdict: FAIL"), std::string::npos);
    EXPECT_NE(text.find("  bob,1,1.000000,0.000000,1.000000,alice"), std::string::npos);
}

TEST(Report, ReproducibleFromExportedLog) {
    Sim sim(parse_scenario(kScenario));
    sim.run();
    std::istringstream in(sim.log().to_jsonl());
    const EventLog back = EventLog::from_jsonl(in);
    EXPECT_EQ(make_report(back).render(), make_report(sim.log()).render());
}

TEST(AttackSuite, AllScenariosHold) {
    AttackSuite suite;
    const auto& results = suite.run();
    EXPECT_EQ(results.size(), 8u);
    for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << "\n" << r.report.render();
    EXPECT_TRUE(suite.all_passed());
}

TEST(AttackSuite, NonceCacheIsLoadBearing) {
    AttackSuite suite(Mutations{.disable_nonce_cache = true});
    suite.run();
    EXPECT_FALSE(suite.result("replay-messages-1-9").passed);
}

TEST(AttackSuite, TranscriptCheckIsLoadBearing) {
    AttackSuite suite(Mutations{.disable_transcript_check = true});
    suite.run();
    EXPECT_FALSE(suite.result("contract-impersonation").passed);
    EXPECT_FALSE(suite.result("contract-mitm").passed);
    EXPECT_FALSE(suite.result("replay-messages-10-11").passed);
}
