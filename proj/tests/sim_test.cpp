#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "servnet/report.hpp"
#include "servnet/sim.hpp"
#include "servnet/suites.hpp"

using namespace servnet;

namespace {

const char* kTwoNode = R"({
  "name": "two", "seed": 7, "weight_mode": "UNIT",
  "nodes": [{"id": "alice", "role": "authority"}, {"id": "bob", "authority": "alice"}],
  "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
  "until": 60
})";

// Two subtrees plus a joiner that registers at tick 10.
const char* kJoin = R"({
  "name": "join", "seed": 2, "weight_mode": "UNIT",
  "nodes": [{"id": "a1", "role": "authority"}, {"id": "a2", "role": "authority"},
            {"id": "l1", "authority": "a1"}, {"id": "l2", "authority": "a2"},
            {"id": "j", "role": "joiner"}],
  "membership": [{"tick": 10, "action": "join", "node": "j", "authority": "a1"}],
  "until": 40
})";

std::size_t count_where(const EventLog& log, const std::string& kind, const std::string& key,
                        const std::string& value) {
    std::size_t n = 0;
    for (const auto* e : log.of_kind(kind)) n += payload_text(e->payload.value(key, Json())) == value ? 1 : 0;
    return n;
}

const SnapshotRow* row_of(const std::vector<SnapshotRow>& rows, const std::string& id) {
    for (const auto& r : rows) {
        if (r.server == ServerId(id)) return &r;
    }
    return nullptr;
}

}  // namespace

TEST(Sim, HonestTradeBindsAndScoresBothSides) {
    Sim sim(parse_scenario(kTwoNode));
    const auto& log = sim.run();
    EXPECT_EQ(log.count("contract-bound"), 2u);
    EXPECT_EQ(count_where(log, "feedback-outcome", "status", "ACCEPTED"), 2u);
    for (const auto& r : sim.snapshot_reputations()) {
        EXPECT_EQ(r.transactions, 1u) << r.server.str();
        EXPECT_EQ(r.gr, 1) << r.server.str();
    }
    EXPECT_EQ(sim.snapshot_csv(),
              "server,T,POS,NEG,GR,authority\n"
              "alice,1,1.000000,0.000000,1.000000,alice\n"
              "bob,1,1.000000,0.000000,1.000000,alice\n");
}

TEST(Sim, HonestTradeOnSodiumBackend) {
    auto script = parse_scenario(kTwoNode);
    script.backend = "sodium";
    Sim sim(script);
    sim.run();
    EXPECT_EQ(sim.security().name(), "sodium");
    EXPECT_EQ(sim.log().count("contract-bound"), 2u);
    EXPECT_EQ(*sim.reputation(ServerId("bob")), 1);
}

TEST(Sim, WeightedModeUsesScorerReputation) {
    auto script = parse_scenario(kTwoNode);
    script.weight_mode = WeightMode::ReputationWeighted;
    script.nodes[0].initial = ScoreLedger{ServerId("alice"), 2, 3, 0};
    Sim sim(script);
    sim.run();
    // bob is scored by alice (GR 6); alice is scored by bob (GR 0).
    EXPECT_EQ(*sim.reputation(ServerId("bob")), 6);
    EXPECT_EQ(*sim.reputation(ServerId("alice")), 9);
}

TEST(Sim, FreshNodesStartAtZero) {
    auto script = parse_scenario(kTwoNode);
    script.trades.clear();
    Sim sim(script);
    for (const auto& r : sim.snapshot_reputations()) EXPECT_EQ(r.gr, 0);
}

TEST(Sim, SameSeedSameLogDifferentSeedDifferentLog) {
    const auto script = random_scenario(17);
    Sim a(script);
    Sim b(script);
    a.run();
    b.run();
    EXPECT_EQ(a.log().to_jsonl(), b.log().to_jsonl());
    EXPECT_EQ(a.snapshot_csv(), b.snapshot_csv());
    auto other = script;
    other.seed += 1;
    Sim c(other);
    c.run();
    EXPECT_NE(a.log().to_jsonl(), c.log().to_jsonl());
}

TEST(Sim, BuildIsDeterministic) {
    ScenarioScript s;
    s.seed = 42;
    s.initial_authorities = 2;
    for (int i = 0; i < 6; ++i) s.nodes.push_back(NodeSpec{ServerId("s" + std::to_string(i))});
    Sim a(s);
    Sim b(s);
    EXPECT_EQ(a.authorities(), b.authorities());
    ASSERT_EQ(a.authorities().size(), 2u);
    for (const auto& auth : a.authorities()) EXPECT_EQ(*a.directory_of(auth), *b.directory_of(auth));
    EXPECT_TRUE(a.check_directory_convergence().converged);
}

TEST(Sim, EmptyScheduleOnlySetsUpAndElects) {
    auto script = parse_scenario(kTwoNode);
    script.trades.clear();
    script.until = 250;
    Sim sim(script);
    sim.run();
    const std::set<std::string> allowed{"setup", "node-created", "ledger-created", "election", "db-access", "snapshot"};
    for (const auto& [kind, n] : make_report(sim.log()).counts) EXPECT_TRUE(allowed.contains(kind)) << kind;
    EXPECT_EQ(sim.log().count("election"), 2u);
}

TEST(Sim, UndeclaredNodeFailsValidation) {
    ScenarioScript s;
    s.nodes.push_back(NodeSpec{ServerId("a")});
    TradeEntry t;
    t.initiator = ServerId("a");
    t.responder = ServerId("ghost");
    s.trades.push_back(t);
    EXPECT_THROW(Sim{s}, ScenarioError);
}

TEST(Sim, AdversaryCannotBeGivenVictimKey) {
    Sim sim(parse_scenario(kTwoNode));
    AdversaryAction a;
    a.kind = AdversaryKind::Impersonate;
    a.victim = ServerId("alice");
    a.target = ServerId("bob");
    a.holds_key_of = ServerId("alice");
    EXPECT_THROW(sim.inject_adversary(a), ScenarioError);
}

TEST(Sim, ConvergenceLagsUntilFloodArrives) {
    const auto script = parse_scenario(kJoin);
    Sim sim(script);
    sim.run(11);
    ASSERT_EQ(sim.log().count("registration-accepted"), 1u);
    const auto mid = sim.check_directory_convergence();
    EXPECT_FALSE(mid.converged);
    ASSERT_FALSE(mid.diff.empty());
    EXPECT_NE(mid.diff.front().find("j"), std::string::npos);
    sim.run(40);
    EXPECT_TRUE(sim.check_directory_convergence().converged);
    EXPECT_TRUE(sim.registered(ServerId("j")));
    EXPECT_EQ(sim.log().count("registration-complete"), 1u);
    EXPECT_EQ(*sim.reputation(ServerId("j")), 0);
    EXPECT_EQ(sim.directory_of(ServerId("a2"))->authority_of(ServerId("j")), ServerId("a1"));
}

TEST(Sim, ReplayedRegistrationIsRejected) {
    auto script = parse_scenario(kJoin);
    AdversaryAction replay;
    replay.kind = AdversaryKind::Replay;
    replay.at_tick = 20;
    replay.from = ServerId("j");
    replay.to = ServerId("a1");
    replay.message = MsgType::RegIntro;
    script.adversaries.push_back(replay);
    Sim sim(script);
    sim.run();
    EXPECT_EQ(sim.log().count("registration-accepted"), 1u);
    EXPECT_EQ(count_where(sim.log(), "registration-rejected", "reason", "duplicate"), 1u);
    EXPECT_TRUE(sim.check_directory_convergence().converged);
}

TEST(Sim, LeavingLeafReturnsSharesAndDropsOut) {
    auto script = parse_scenario(R"({
      "name": "leave", "seed": 4, "weight_mode": "UNIT",
      "nodes": [{"id": "a1", "role": "authority"}, {"id": "a2", "role": "authority"},
                {"id": "p", "authority": "a1"}, {"id": "q", "authority": "a2"}, {"id": "r", "authority": "a1"}],
      "trades": [{"tick": 5, "initiator": "p", "responder": "q", "share_size": 3, "duration": 200},
                 {"tick": 6, "initiator": "r", "responder": "p", "share_size": 2, "duration": 200}],
      "membership": [{"tick": 60, "action": "leave", "node": "p"},
                     {"tick": 90, "action": "join", "node": "p", "authority": "a2"}],
      "until": 120
    })");
    Sim sim(script);
    sim.run(80);
    EXPECT_EQ(count_where(sim.log(), "share-returned", "size", "3"), 1u);
    EXPECT_EQ(count_where(sim.log(), "share-returned", "size", "2"), 1u);
    EXPECT_EQ(sim.log().count("share-returned"), 2u);
    EXPECT_EQ(sim.log().count("residual-transferred"), 1u);
    EXPECT_EQ(sim.log().count("ledger-reset"), 1u);
    EXPECT_FALSE(sim.reputation(ServerId("p")).has_value());
    EXPECT_FALSE(row_of(sim.snapshot_reputations(), "p"));
    for (const auto& a : sim.authorities()) EXPECT_FALSE(sim.directory_of(a)->contains(ServerId("p")));
    EXPECT_TRUE(sim.check_directory_convergence().converged);

    sim.run(120);
    EXPECT_TRUE(sim.registered(ServerId("p")));
    EXPECT_EQ(*sim.reputation(ServerId("p")), 0);
    EXPECT_EQ(sim.authority_of_record(ServerId("p")), ServerId("a2"));
}

TEST(Sim, LeavingAuthorityHandsOverFirst) {
    auto script = parse_scenario(R"({
      "name": "auth-leave", "seed": 4, "weight_mode": "UNIT",
      "nodes": [{"id": "a1", "role": "authority"}, {"id": "a2", "role": "authority"},
                {"id": "p", "authority": "a1"}, {"id": "q", "authority": "a2"}],
      "trades": [{"tick": 5, "initiator": "p", "responder": "q", "share_size": 3, "duration": 5}],
      "membership": [{"tick": 40, "action": "leave", "node": "a1"}],
      "until": 90
    })");
    Sim sim(script);
    sim.run();
    const auto& ev = sim.log().events();
    auto first = [&](const std::string& kind) {
        for (const auto& e : ev) {
            if (e.kind == kind) return e.seq;
        }
        return std::uint64_t(-1);
    };
    EXPECT_LT(first("election"), first("rotation-committed"));
    EXPECT_LT(first("rotation-committed"), first("node-revoked"));
    EXPECT_EQ(sim.authority_of_record(ServerId("p")), ServerId("p"));
    EXPECT_FALSE(sim.registered(ServerId("a1")));
    EXPECT_TRUE(oracle::check_rotation_lockout(sim.log()).ok);
    EXPECT_TRUE(sim.check_directory_convergence().converged);
}

TEST(Sim, SnapshotKeepsOldAuthorityUntilConfirm) {
    const auto script = rotation_scenario();
    Sim probe(script);
    probe.run();
    const auto commits = probe.log().of_kind("rotation-committed");
    ASSERT_FALSE(commits.empty());
    const Tick commit_tick = commits.front()->tick;
    const std::string old_auth = commits.front()->payload.at("old");
    const std::string new_auth = commits.front()->payload.at("new");

    Sim sim(script);
    sim.run(commit_tick - 1);
    const auto rows = sim.snapshot_reputations();
    EXPECT_EQ(row_of(rows, new_auth)->authority, ServerId(old_auth));
    sim.run(commit_tick);
    EXPECT_EQ(row_of(sim.snapshot_reputations(), new_auth)->authority, ServerId(new_auth));
}

TEST(Sim, RandomRunsReplayAndLockOut) {
    for (std::uint64_t seed = 200; seed < 230; ++seed) {
        Sim sim(random_scenario(seed));
        sim.run();
        const auto replay = oracle::replay_ledgers(sim.log());
        EXPECT_TRUE(replay.ok) << "seed " << seed << ": " << (replay.problems.empty() ? "" : replay.problems.front());
        const auto lockout = oracle::check_rotation_lockout(sim.log());
        EXPECT_TRUE(lockout.ok) << "seed " << seed << ": " << (lockout.problems.empty() ? "" : lockout.problems.front());
        EXPECT_TRUE(sim.check_directory_convergence().converged) << "seed " << seed;
    }
}

TEST(Sim, AccountabilityScenario) {
    const auto script = accountability_scenario();
    Sim sim(script);
    sim.run();
    std::vector<Tick> ticks;
    for (const auto& t : script.trades) ticks.push_back(t.tick);
    const auto r = oracle::check_accountability(sim.log(), "x", {"h1", "h2", "h3", "h4"}, ticks, 20);
    EXPECT_TRUE(r.ok) << (r.problems.empty() ? "" : r.problems.front());
}

TEST(Sim, EventsRoundTripThroughJsonl) {
    Sim sim(parse_scenario(kTwoNode));
    sim.run();
    std::istringstream in(sim.log().to_jsonl());
    const EventLog back = EventLog::from_jsonl(in);
    EXPECT_EQ(back.to_jsonl(), sim.log().to_jsonl());
    EXPECT_EQ(make_report(back).render(), make_report(sim.log()).render());
}
