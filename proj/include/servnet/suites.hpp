// Built-in scenario suites: the attack scenarios with their expected
// outcomes, the fairness table, and generators for the larger property runs.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "servnet/report.hpp"
#include "servnet/reputation.hpp"
#include "servnet/scenario.hpp"
#include "servnet/sim.hpp"

namespace servnet {

struct NamedScenario {
    std::string name;
    std::string claim;
    std::string json;
};

namespace detail {

// Two subtrees: auth1 holds alice (and dave), auth2 holds bob.
inline std::string roster(const std::string& alice_policy = "{}", const std::string& bob_policy = "{}") {
    return R"("seed": 11, "weight_mode": "UNIT", "initial_authorities": 2,
    "nodes": [
      {"id": "auth1", "role": "authority"},
      {"id": "auth2", "role": "authority"},
      {"id": "alice", "authority": "auth1", "policy": )" +
           alice_policy + R"(},
      {"id": "bob", "authority": "auth2", "policy": )" +
           bob_policy + R"(},
      {"id": "dave", "authority": "auth1"}
    ],)";
}

}  // namespace detail

inline std::vector<NamedScenario> attack_scenarios() {
    using detail::roster;
    return {
        {"contract-impersonation", "an impersonator without the victim's key fails at message 10",
         R"({"name": "contract-impersonation", )" + roster() + R"(
    "until": 80,
    "adversaries": [
      {"kind": "IMPERSONATE", "at_tick": 5, "victim": "alice", "target": "bob", "share_size": 4, "duration": 5}
    ],
    "expectations": [
      {"name": "no contract bound under the victim's name", "count": {"kind": "contract-bound", "where": {"as": "alice"}}, "op": "==", "value": 0},
      {"name": "no contract bound with the victim as peer", "count": {"kind": "contract-bound", "where": {"peer": "alice"}}, "op": "==", "value": 0},
      {"name": "target rejects the binding signature", "count": {"kind": "session-aborted", "actor": "bob", "where": {"reason": "forged-binding"}}, "op": "==", "value": 1},
      {"name": "signing with the victim's key is refused", "count": {"kind": "adversary-sign-rejected"}, "op": ">=", "value": 1}
    ]})"},

        {"contract-mitm", "tampering with message 1 is caught by the transcript hashes",
         R"({"name": "contract-mitm", )" + roster() + R"(
    "until": 80,
    "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
    "adversaries": [
      {"kind": "MITM_TAMPER", "at_tick": 0, "from": "alice", "to": "bob", "message": "offer", "field": "share_size", "value": 99}
    ],
    "expectations": [
      {"name": "message 1 was tampered", "count": {"kind": "adversary-tamper"}, "op": "==", "value": 1},
      {"name": "no contract bound", "count": {"kind": "contract-bound"}, "op": "==", "value": 0},
      {"name": "initiator aborts on hash mismatch", "count": {"kind": "session-aborted", "actor": "alice", "where": {"reason": "transcript-mismatch"}}, "op": "==", "value": 1},
      {"name": "responder aborts on hash mismatch", "count": {"kind": "session-aborted", "actor": "bob", "where": {"reason": "transcript-mismatch"}}, "op": "==", "value": 1}
    ]})"},

        {"replay-messages-1-9", "replayed negotiation messages are refused by the nonce caches",
         R"({"name": "replay-messages-1-9", )" + roster() + R"(
    "until": 120,
    "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
    "adversaries": [
      {"kind": "REPLAY", "at_tick": 60, "from": "alice", "to": "bob", "message": "offer"},
      {"kind": "REPLAY", "at_tick": 61, "from": "bob", "to": "auth2", "message": "rep-query"},
      {"kind": "REPLAY", "at_tick": 62, "from": "auth2", "to": "auth1", "message": "rep-relay"},
      {"kind": "REPLAY", "at_tick": 63, "from": "auth1", "to": "bob", "message": "rep-attest"},
      {"kind": "REPLAY", "at_tick": 64, "from": "bob", "to": "alice", "message": "counter"},
      {"kind": "REPLAY", "at_tick": 65, "from": "alice", "to": "bob", "message": "ack"}
    ],
    "expectations": [
      {"name": "all six replays injected", "count": {"kind": "adversary-replay"}, "op": "==", "value": 6},
      {"name": "every replay rejected as stale", "count": {"kind": "message-rejected", "where": {"reason": "stale-or-replay"}}, "op": "==", "value": 6},
      {"name": "no extra session state", "count": {"kind": "session-opened"}, "op": "==", "value": 2},
      {"name": "only the genuine contract bound", "count": {"kind": "contract-bound"}, "op": "==", "value": 2}
    ]})"},

        {"replay-messages-10-11", "old binding messages do not bind a fresh session",
         R"({"name": "replay-messages-10-11", )" + roster() + R"(
    "until": 200,
    "trades": [
      {"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5},
      {"tick": 60, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5},
      {"tick": 120, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}
    ],
    "adversaries": [
      {"kind": "REPLAY", "at_tick": 50, "from": "alice", "to": "bob", "message": "binding", "substitute": true},
      {"kind": "REPLAY", "at_tick": 110, "from": "bob", "to": "alice", "message": "binding", "substitute": true}
    ],
    "expectations": [
      {"name": "both substitutions happened", "count": {"kind": "adversary-replay"}, "op": "==", "value": 2},
      {"name": "replayed message 10 aborts both sides", "count": {"kind": "session-aborted", "where": {"reason": "transcript-mismatch"}}, "op": "==", "value": 3},
      {"name": "initiator never binds on a replayed message 11", "count": {"kind": "contract-bound", "actor": "alice"}, "op": "==", "value": 1}
    ]})"},

        {"feedback-impersonation", "feedback forged in another node's name fails signature checks",
         R"({"name": "feedback-impersonation", )" + roster() + R"(
    "until": 80,
    "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
    "adversaries": [
      {"kind": "FORGE_FEEDBACK", "at_tick": 40, "victim": "alice", "target": "bob", "value": -1}
    ],
    "expectations": [
      {"name": "signing as the victim is refused", "count": {"kind": "adversary-sign-rejected"}, "op": "==", "value": 1},
      {"name": "both forged copies discarded", "count": {"kind": "feedback-copy-invalid"}, "op": "==", "value": 2},
      {"name": "target NEG untouched", "snapshot": {"server": "bob", "field": "NEG"}, "op": "==", "value": 0},
      {"name": "target counted only the genuine feedback", "snapshot": {"server": "bob", "field": "T"}, "op": "==", "value": 1}
    ]})"},

        {"false-scorer", "a giver sending different scores on the two paths is flagged",
         R"({"name": "false-scorer", )" + roster(R"({"honesty": "FALSE_SCORER"})") + R"(
    "until": 80,
    "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
    "expectations": [
      {"name": "outcome flagged", "count": {"kind": "feedback-outcome", "where": {"status": "GIVER_CHEATING_FLAGGED"}}, "op": "==", "value": 1},
      {"name": "cheating scorer logged", "count": {"kind": "scorer-cheating", "where": {"scorer": "alice"}}, "op": "==", "value": 1},
      {"name": "target POS unchanged", "snapshot": {"server": "bob", "field": "POS"}, "op": "==", "value": 0},
      {"name": "target NEG unchanged", "snapshot": {"server": "bob", "field": "NEG"}, "op": "==", "value": 0},
      {"name": "target T still counts the transaction", "snapshot": {"server": "bob", "field": "T"}, "op": "==", "value": 1}
    ]})"},

        {"feedback-dropper", "a receiver dropping its negative feedback is bypassed by the direct copy",
         R"({"name": "feedback-dropper", )" +
             roster("{}", R"({"honesty": "DROP_FEEDBACK", "keeps_shares": false})") + R"(
    "until": 80,
    "trades": [{"tick": 5, "initiator": "alice", "responder": "bob", "share_size": 4, "duration": 5}],
    "expectations": [
      {"name": "receiver dropped the copy", "count": {"kind": "feedback-dropped", "actor": "bob"}, "op": "==", "value": 1},
      {"name": "direct copy recovered", "count": {"kind": "feedback-outcome", "where": {"status": "RECEIVER_DROPPED_RECOVERED"}}, "op": "==", "value": 1},
      {"name": "target NEG updated", "snapshot": {"server": "bob", "field": "NEG"}, "op": "==", "value": 1},
      {"name": "target T updated", "snapshot": {"server": "bob", "field": "T"}, "op": "==", "value": 1}
    ]})"},

        {"fake-authority-notice", "an authority-change notice without the database signature is ignored",
         R"({"name": "fake-authority-notice", )" + roster() + R"(
    "until": 60,
    "adversaries": [{"kind": "FAKE_AUTHORITY_MSG", "at_tick": 10, "victim": "auth1"}],
    "expectations": [
      {"name": "every leaf ignores the notice", "count": {"kind": "authority-notice-ignored", "where": {"reason": "bad database signature"}}, "op": "==", "value": 2},
      {"name": "no leaf accepts it", "count": {"kind": "authority-notice-accepted"}, "op": "==", "value": 0},
      {"name": "alice keeps her authority", "snapshot": {"server": "alice", "field": "authority"}, "op": "==", "value": "auth1"},
      {"name": "dave keeps his authority", "snapshot": {"server": "dave", "field": "authority"}, "op": "==", "value": "auth1"}
    ]})"},
    };
}

struct AttackResult {
    std::string name;
    std::string claim;
    bool passed = false;
    RunReport report;
    std::string events_jsonl;
    std::string snapshot_csv;
};

/// Runs one scenario. The report borrows events from `log_holder`.
inline AttackResult run_named(const NamedScenario& named, const Mutations& mutations,
                              std::vector<std::unique_ptr<Sim>>& keep_alive) {
    ScenarioScript script = parse_scenario(named.json);
    script.mutations.disable_nonce_cache = script.mutations.disable_nonce_cache || mutations.disable_nonce_cache;
    script.mutations.disable_transcript_check =
        script.mutations.disable_transcript_check || mutations.disable_transcript_check;
    auto sim = std::make_unique<Sim>(script);
    sim->run();
    AttackResult r;
    r.name = named.name;
    r.claim = named.claim;
    r.report = make_report(sim->log());
    r.passed = r.report.passed();
    r.events_jsonl = sim->log().to_jsonl();
    r.snapshot_csv = sim->snapshot_csv();
    keep_alive.push_back(std::move(sim));
    return r;
}

class AttackSuite {
public:
    explicit AttackSuite(Mutations mutations = {}) : mutations_(mutations) {}

    const std::vector<AttackResult>& run() {
        results_.clear();
        for (const auto& s : attack_scenarios()) results_.push_back(run_named(s, mutations_, sims_));
        return results_;
    }

    const std::vector<AttackResult>& results() const { return results_; }

    const AttackResult& result(const std::string& name) const {
        for (const auto& r : results_) {
            if (r.name == name) return r;
        }
        throw std::out_of_range("no attack scenario named " + name);
    }

    bool all_passed() const {
        for (const auto& r : results_) {
            if (!r.passed) return false;
        }
        return !results_.empty();
    }

private:
    Mutations mutations_;
    std::vector<std::unique_ptr<Sim>> sims_;
    std::vector<AttackResult> results_;
};

// ------------------------------------------------------------- fairness

/// UNIT-mode ledger of a peer that receives a negative on every m-th
/// transaction and a positive otherwise.
inline ScoreLedger periodic_ledger(std::uint64_t t, std::uint64_t m) {
    ScoreLedger l = new_ledger(ServerId("peer"));
    for (std::uint64_t i = 1; i <= t; ++i) {
        const LocalScore s = (i % m == 0) ? LocalScore::negative() : LocalScore::positive();
        l = apply_feedback(l, s, Rational(0), WeightMode::Unit);
    }
    return l;
}

struct FairnessSample {
    std::uint64_t t = 0;
    Rational simulated;
    Rational closed_form;
    Rational delta;
};

struct FairnessReport {
    std::uint64_t m1 = 2, t2 = 0, m2 = 2, t_max = 0;
    Rational gr2;
    std::vector<std::pair<std::uint64_t, Rational>> peer1;
    std::uint64_t analytic = 0;
    std::uint64_t scan = 0;
    std::vector<FairnessSample> samples;

    bool agree() const { return analytic == scan; }
};

inline FairnessReport fairness_report(std::uint64_t m1, std::uint64_t t2, std::uint64_t m2,
                                      std::optional<std::uint64_t> t_max = std::nullopt) {
    FairnessParams p2{t2, m2};
    check_period(m1);
    check_period(m2);
    FairnessReport r;
    r.m1 = m1;
    r.t2 = t2;
    r.m2 = m2;
    r.gr2 = closed_form_gr(p2);
    r.analytic = fairness_threshold(m1, p2);
    r.scan = fairness_threshold_by_scan(m1, p2);
    r.t_max = t_max ? *t_max : std::max<std::uint64_t>(r.scan + 5, t2);
    const std::uint64_t step = std::max<std::uint64_t>(1, r.t_max / 20);
    for (std::uint64_t t = 0; t <= r.t_max; t += step) r.peer1.emplace_back(t, closed_form_gr(FairnessParams{t, m1}));
    // Sample points on the lattice of whole periods, where one negative
    // lands exactly every m1 transactions.
    const std::uint64_t first = m1;
    const std::uint64_t near = ((r.analytic + m1 - 1) / m1) * m1;
    const std::uint64_t far = std::max(near + m1, (r.t_max / m1) * m1);
    for (std::uint64_t t : {first, near, far}) {
        FairnessSample s;
        s.t = t;
        s.simulated = global_reputation(periodic_ledger(t, m1));
        s.closed_form = closed_form_gr(FairnessParams{t, m1});
        s.delta = s.simulated - s.closed_form;
        r.samples.push_back(s);
    }
    return r;
}

inline std::string render(const FairnessReport& r) {
    std::ostringstream out;
    out << "peer 2: T2=" << r.t2 << " m2=" << r.m2 << " GR2=" << to_decimal(r.gr2) << "\n";
    out << "peer 1: m1=" << r.m1 << "\n\n";
    out << "T1,GR1,GR1>GR2\n";
    for (const auto& [t, gr] : r.peer1) out << t << "," << to_decimal(gr) << "," << (gr > r.gr2 ? "yes" : "no") << "\n";
    out << "\nthreshold (analytic root): " << r.analytic << "\n";
    out << "threshold (linear scan):   " << r.scan << "\n";
    out << "agree: " << (r.agree() ? "yes" : "NO") << "\n\n";
    out << "simulation check (UNIT ledger, negative every " << r.m1 << "th transaction):\n";
    out << "T1,simulated,closed_form,delta\n";
    for (const auto& s : r.samples) {
        out << s.t << "," << to_decimal(s.simulated) << "," << to_decimal(s.closed_form) << "," << to_decimal(s.delta)
            << "\n";
    }
    return out.str();
}

// ----------------------------------------------------- larger scenarios

/// Four honest nodes (with a bootstrap reputation) and one FAIL_CONTRACTS
/// node. The honest nodes accept only peers with GR >= 50.
inline ScenarioScript accountability_scenario(std::uint64_t trades_with_bad = 24) {
    ScenarioScript s;
    s.name = "accountability";
    s.seed = 5;
    s.weight_mode = WeightMode::ReputationWeighted;
    s.initial_authorities = 1;
    s.election_period = 100000;
    const std::vector<std::string> honest{"h1", "h2", "h3", "h4"};
    auto boot = [](const std::string& id) {
        ScoreLedger l = new_ledger(ServerId(id));
        l.transactions = 10;
        l.pos_accum = 10;
        return l;
    };
    s.nodes.push_back(NodeSpec{ServerId("hub"), NodePolicy{Honesty::Honest, Rational(50)}, InitialRole::Authority,
                               std::nullopt, boot("hub")});
    for (const auto& h : honest) {
        s.nodes.push_back(NodeSpec{ServerId(h), NodePolicy{Honesty::Honest, Rational(50)}, InitialRole::Leaf,
                                   ServerId("hub"), boot(h)});
    }
    NodePolicy bad_policy;
    bad_policy.honesty = Honesty::FailContracts;
    s.nodes.push_back(NodeSpec{ServerId("x"), bad_policy, InitialRole::Leaf, ServerId("hub"), boot("x")});
    for (std::uint64_t i = 0; i < trades_with_bad; ++i) {
        const ServerId h(honest[i % honest.size()]);
        const bool x_initiates = (i / honest.size()) % 2 == 0;
        TradeEntry t;
        t.tick = 5 + 30 * i;
        t.initiator = x_initiates ? ServerId("x") : h;
        t.responder = x_initiates ? h : ServerId("x");
        t.params = TradeParams{2, 5};
        s.trades.push_back(t);
    }
    s.until = 5 + 30 * trades_with_bad + 60;
    return s;
}

struct RandomScenarioOptions {
    std::size_t min_nodes = 4;
    std::size_t max_nodes = 8;
    std::size_t trades = 20;
    Tick horizon = 300;
    bool membership = true;
    bool adversarial_policies = true;
    WeightMode weight_mode = WeightMode::ReputationWeighted;
    Tick election_period = 100;
};

/// Seeded random scenario: mixed policies, some bootstrap ledgers (and
/// some nodes left at GR 0), random trades, occasional joins and leaves.
inline ScenarioScript random_scenario(std::uint64_t seed, const RandomScenarioOptions& o = {}) {
    std::mt19937_64 rng(seed * 7919 + 17);
    auto pick = [&](std::uint64_t n) { return rng() % n; };
    ScenarioScript s;
    s.name = "random-" + std::to_string(seed);
    s.seed = seed;
    s.weight_mode = o.weight_mode;
    s.election_period = o.election_period;
    const std::size_t n = o.min_nodes + pick(o.max_nodes - o.min_nodes + 1);
    s.initial_authorities = 1 + pick(std::min<std::size_t>(2, n - 1));
    std::vector<ServerId> ids;
    for (std::size_t i = 0; i < n; ++i) {
        NodeSpec spec;
        spec.id = ServerId("n" + std::to_string(i));
        if (i == 0) spec.role = InitialRole::Authority;
        if (o.adversarial_policies) {
            const auto roll = pick(10);
            if (roll == 0) spec.policy.honesty = Honesty::FailContracts;
            if (roll == 1) spec.policy.honesty = Honesty::FalseScorer;
            if (roll == 2) {
                spec.policy.honesty = Honesty::DropFeedback;
                spec.policy.keeps_shares = pick(2) == 0;
            }
        }
        if (pick(3) != 0) {
            ScoreLedger l = new_ledger(spec.id);
            l.transactions = 1 + pick(12);
            l.pos_accum = Rational(static_cast<long>(pick(20)), static_cast<long>(1 + pick(3)));
            l.neg_accum = Rational(static_cast<long>(pick(5)));
            spec.initial = l;
        }
        ids.push_back(spec.id);
        s.nodes.push_back(spec);
    }
    ServerId joiner("n" + std::to_string(n));
    if (o.membership) {
        NodeSpec j;
        j.id = joiner;
        j.role = InitialRole::Joiner;
        s.nodes.push_back(j);
    }
    for (std::size_t i = 0; i < o.trades; ++i) {
        TradeEntry t;
        t.tick = 1 + pick(o.horizon);
        const auto a = pick(ids.size());
        auto b = pick(ids.size() - 1);
        if (b >= a) ++b;
        t.initiator = ids[a];
        t.responder = ids[b];
        t.params = TradeParams{1 + pick(8), 1 + pick(20)};
        s.trades.push_back(t);
    }
    std::stable_sort(s.trades.begin(), s.trades.end(), [](const auto& x, const auto& y) { return x.tick < y.tick; });
    if (o.membership) {
        MembershipEvent join;
        join.action = MembershipEvent::Action::Join;
        join.tick = 1 + pick(o.horizon / 2);
        join.node = joiner;
        join.authority = ids[0];
        s.membership.push_back(join);
        // The leaver may well be an authority by then.
        MembershipEvent leave;
        leave.action = MembershipEvent::Action::Leave;
        leave.tick = o.horizon / 2 + pick(o.horizon / 2);
        leave.node = ids[1 + pick(ids.size() - 1)];
        s.membership.push_back(leave);
    }
    s.until = o.horizon + 150;
    return s;
}

/// A 500-tick mixed run built so that reputations shift enough to force
/// several authority changes.
inline ScenarioScript rotation_scenario(std::uint64_t seed = 3) {
    RandomScenarioOptions o;
    o.min_nodes = 8;
    o.max_nodes = 8;
    o.trades = 90;
    o.horizon = 420;
    o.adversarial_policies = false;
    o.weight_mode = WeightMode::Unit;
    o.election_period = 100;
    ScenarioScript s = random_scenario(seed, o);
    s.name = "rotation-mixed";
    s.initial_authorities = 2;
    s.until = 500;
    return s;
}

}  // namespace servnet
