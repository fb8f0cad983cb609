// Declarative scenario scripts: the roster, trade schedule, membership
// changes, adversary actions and expectations for one deterministic run.
// The JSON schema is documented in docs/scenario_schema.md.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "servnet/contract.hpp"
#include "servnet/messages.hpp"
#include "servnet/reputation.hpp"

namespace servnet {

enum class Honesty { Honest, FailContracts, DropFeedback, FalseScorer };

inline const char* to_string(Honesty h) {
    switch (h) {
        case Honesty::Honest: return "HONEST";
        case Honesty::FailContracts: return "FAIL_CONTRACTS";
        case Honesty::DropFeedback: return "DROP_FEEDBACK";
        case Honesty::FalseScorer: return "FALSE_SCORER";
    }
    return "?";
}

struct NodePolicy {
    Honesty honesty = Honesty::Honest;
    Rational accept_threshold = 0;
    std::uint64_t capacity = std::numeric_limits<std::uint32_t>::max();
    bool keeps_shares = true;  // FAIL_CONTRACTS implies false
};

enum class InitialRole { Auto, Authority, Leaf, Joiner };

struct NodeSpec {
    ServerId id;
    NodePolicy policy;
    InitialRole role = InitialRole::Auto;
    std::optional<ServerId> authority;  // explicit attachment for leaves
    std::optional<ScoreLedger> initial;  // bootstrap ledger; defaults to fresh
};

struct TradeEntry {
    Tick tick = 0;
    ServerId initiator;
    ServerId responder;
    TradeParams params;
};

struct MembershipEvent {
    enum class Action { Join, Leave } action = Action::Join;
    Tick tick = 0;
    ServerId node;
    std::optional<ServerId> authority;
};

enum class AdversaryKind { Impersonate, MitmTamper, Replay, FakeAuthorityMsg, ForgeFeedback, RogueRotation };

inline const char* to_string(AdversaryKind k) {
    switch (k) {
        case AdversaryKind::Impersonate: return "IMPERSONATE";
        case AdversaryKind::MitmTamper: return "MITM_TAMPER";
        case AdversaryKind::Replay: return "REPLAY";
        case AdversaryKind::FakeAuthorityMsg: return "FAKE_AUTHORITY_MSG";
        case AdversaryKind::ForgeFeedback: return "FORGE_FEEDBACK";
        case AdversaryKind::RogueRotation: return "ROGUE_ROTATION";
    }
    return "?";
}

/// One scripted attack. Which fields matter depends on `kind`:
///  IMPERSONATE       victim, target, params
///  MITM_TAMPER       from, to, message, field, value, count
///  REPLAY            from, to, message, occurrence, substitute
///  FAKE_AUTHORITY_MSG victim (the authority whose leaves are targeted)
///  FORGE_FEEDBACK    victim (claimed scorer), target (scored party), value (score)
///  ROGUE_ROTATION    victim (authority whose subtree is attacked)
struct AdversaryAction {
    AdversaryKind kind = AdversaryKind::Impersonate;
    Tick at_tick = 0;
    ServerId victim;
    ServerId target;
    ServerId from;
    ServerId to;
    std::optional<MsgType> message;
    std::string field;
    std::int64_t value = 0;
    std::uint64_t count = 1;
    std::uint64_t occurrence = 0;
    bool substitute = false;
    TradeParams params;
    std::optional<ServerId> holds_key_of;  // must be empty or the adversary itself
};

struct Expectation {
    enum class Kind { Count, Snapshot } kind = Kind::Count;
    std::string name;
    // Count
    std::string event_kind;
    std::optional<std::string> actor;
    std::map<std::string, std::string> where;
    // Snapshot
    ServerId server;
    std::string field;
    // Both
    std::string op = "==";
    std::string value;
};

struct Mutations {
    bool disable_nonce_cache = false;
    bool disable_transcript_check = false;
};

struct ScenarioScript {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    std::vector<NodeSpec> nodes;
    std::size_t initial_authorities = 1;
    std::vector<TradeEntry> trades;
    std::vector<MembershipEvent> membership;
    std::vector<AdversaryAction> adversaries;
    ServerId adversary{"mallory"};
    Tick election_period = 100;
    Rational authority_factor = Rational(1, 2);
    WeightMode weight_mode = WeightMode::ReputationWeighted;
    Tick feedback_timeout = 10;
    Tick link_delay = 1;
    Tick session_timeout = 40;
    std::optional<Tick> until;
    std::string backend = "model";
    Mutations mutations;
    std::vector<Expectation> expectations;

    const NodeSpec* find(const ServerId& id) const {
        for (const auto& n : nodes) {
            if (n.id == id) return &n;
        }
        return nullptr;
    }

    Tick end_tick() const {
        if (until) return *until;
        Tick last = 0;
        for (const auto& t : trades) last = std::max(last, t.tick + t.params.duration);
        for (const auto& m : membership) last = std::max(last, m.tick);
        for (const auto& a : adversaries) last = std::max(last, a.at_tick);
        return last + 100;
    }
};

class ScenarioError : public std::runtime_error {
public:
    explicit ScenarioError(std::vector<std::string> problems)
        : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid scenario:";
        for (const auto& p : v) out += "\n  " + p;
        return out;
    }
    std::vector<std::string> problems_;
};

/// Structural checks that do not depend on the file format: declared
/// nodes, non-zero trade parameters, sane tick values.
inline std::vector<std::string> validate(const ScenarioScript& s) {
    std::vector<std::string> problems;
    std::set<ServerId> seen;
    std::size_t fixed_authorities = 0;
    std::size_t roster = 0;
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        const auto& n = s.nodes[i];
        const std::string where = "nodes[" + std::to_string(i) + "]";
        if (n.id.empty()) problems.push_back(where + ".id: empty pseudonym");
        if (n.id == s.adversary) problems.push_back(where + ".id: clashes with the adversary pseudonym");
        if (n.id.str() == "db-server") problems.push_back(where + ".id: 'db-server' is reserved");
        if (!seen.insert(n.id).second) problems.push_back(where + ".id: duplicate pseudonym '" + n.id.str() + "'");
        if (n.policy.accept_threshold < 0) problems.push_back(where + ".policy.accept_threshold: must be >= 0");
        if (n.role == InitialRole::Authority) ++fixed_authorities;
        if (n.role != InitialRole::Joiner) ++roster;
        if (n.initial && (n.initial->pos_accum < 0 || n.initial->neg_accum < 0)) {
            problems.push_back(where + ".initial: accumulators must be >= 0");
        }
    }
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        const auto& n = s.nodes[i];
        if (n.authority) {
            const auto* a = s.find(*n.authority);
            if (!a) {
                problems.push_back("nodes[" + std::to_string(i) + "].authority: undeclared node '" + n.authority->str() + "'");
            } else if (a->role != InitialRole::Authority) {
                problems.push_back("nodes[" + std::to_string(i) + "].authority: '" + n.authority->str() +
                                   "' is not declared with role authority");
            }
        }
    }
    if (roster == 0) problems.push_back("nodes: the initial roster is empty");
    if (s.initial_authorities == 0 && fixed_authorities == 0) problems.push_back("initial_authorities: must be >= 1");
    if (std::max(s.initial_authorities, fixed_authorities) > roster) {
        problems.push_back("initial_authorities: more authorities than roster nodes");
    }
    for (std::size_t i = 0; i < s.trades.size(); ++i) {
        const auto& t = s.trades[i];
        const std::string where = "trades[" + std::to_string(i) + "]";
        if (!s.find(t.initiator)) problems.push_back(where + ".initiator: undeclared node '" + t.initiator.str() + "'");
        if (!s.find(t.responder)) problems.push_back(where + ".responder: undeclared node '" + t.responder.str() + "'");
        if (t.initiator == t.responder) problems.push_back(where + ": a node cannot trade with itself");
        if (!t.params.valid()) problems.push_back(where + ": share_size and duration must be > 0");
    }
    for (std::size_t i = 0; i < s.membership.size(); ++i) {
        const auto& m = s.membership[i];
        const std::string where = "membership[" + std::to_string(i) + "]";
        if (!s.find(m.node)) problems.push_back(where + ".node: undeclared node '" + m.node.str() + "'");
        if (m.action == MembershipEvent::Action::Join && (!m.authority || !s.find(*m.authority))) {
            problems.push_back(where + ".authority: join needs a declared authority");
        }
    }
    for (std::size_t i = 0; i < s.adversaries.size(); ++i) {
        const auto& a = s.adversaries[i];
        const std::string where = "adversaries[" + std::to_string(i) + "]";
        auto need = [&](const ServerId& id, const char* field) {
            if (!s.find(id)) problems.push_back(where + "." + field + ": undeclared node '" + id.str() + "'");
        };
        switch (a.kind) {
            case AdversaryKind::Impersonate:
                need(a.victim, "victim");
                need(a.target, "target");
                break;
            case AdversaryKind::MitmTamper:
            case AdversaryKind::Replay:
                need(a.from, "from");
                need(a.to, "to");
                if (!a.message) problems.push_back(where + ".message: required");
                break;
            case AdversaryKind::FakeAuthorityMsg:
            case AdversaryKind::RogueRotation:
                need(a.victim, "victim");
                break;
            case AdversaryKind::ForgeFeedback:
                need(a.victim, "victim");
                need(a.target, "target");
                break;
        }
        if (a.holds_key_of && *a.holds_key_of != s.adversary) {
            problems.push_back(where + ".holds_key_of: the adversary cannot hold the private key of '" +
                               a.holds_key_of->str() + "'");
        }
    }
    if (s.election_period == 0) problems.push_back("election_period: must be > 0");
    if (s.link_delay == 0) problems.push_back("link_delay: must be > 0");
    if (s.authority_factor <= 0 || s.authority_factor > 1) problems.push_back("authority_factor: must be in (0, 1]");
    if (s.backend != "model" && s.backend != "sodium") problems.push_back("backend: must be 'model' or 'sodium'");
    for (std::size_t i = 0; i < s.expectations.size(); ++i) {
        const auto& e = s.expectations[i];
        static const std::set<std::string> ops{"==", "!=", "<", "<=", ">", ">="};
        if (!ops.contains(e.op)) problems.push_back("expectations[" + std::to_string(i) + "].op: unknown operator '" + e.op + "'");
    }
    return problems;
}

namespace scenario_json {

using Json = nlohmann::json;

class Reader {
public:
    std::vector<std::string> problems;

    template <typename T>
    std::optional<T> get(const Json& j, const char* key, const std::string& path, bool required) {
        if (!j.contains(key)) {
            if (required) problems.push_back(path + "." + key + ": required field missing");
            return std::nullopt;
        }
        try {
            return j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            problems.push_back(path + "." + key + ": wrong type");
            return std::nullopt;
        }
    }

    std::optional<Rational> rational(const Json& j, const char* key, const std::string& path) {
        if (!j.contains(key)) return std::nullopt;
        const Json& v = j.at(key);
        try {
            if (v.is_number_integer()) return Rational(v.get<std::int64_t>());
            if (v.is_string()) return parse_rational(v.get<std::string>());
        } catch (const std::invalid_argument&) {
        }
        problems.push_back(path + "." + key + ": expected an integer or a rational string like \"1/2\"");
        return std::nullopt;
    }
};

inline std::string value_text(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
}

inline ScenarioScript from_json(const Json& root) {
    Reader rd;
    ScenarioScript s;
    if (!root.is_object()) throw ScenarioError({"<root>: expected a JSON object"});

    if (auto v = rd.get<std::string>(root, "name", "<root>", false)) s.name = *v;
    if (auto v = rd.get<std::uint64_t>(root, "seed", "<root>", false)) s.seed = *v;
    if (auto v = rd.get<std::uint64_t>(root, "until", "<root>", false)) s.until = *v;
    if (auto v = rd.get<std::size_t>(root, "initial_authorities", "<root>", false)) s.initial_authorities = *v;
    if (auto v = rd.get<std::uint64_t>(root, "election_period", "<root>", false)) s.election_period = *v;
    if (auto v = rd.get<std::uint64_t>(root, "feedback_timeout", "<root>", false)) s.feedback_timeout = *v;
    if (auto v = rd.get<std::uint64_t>(root, "link_delay", "<root>", false)) s.link_delay = *v;
    if (auto v = rd.get<std::uint64_t>(root, "session_timeout", "<root>", false)) s.session_timeout = *v;
    if (auto v = rd.get<std::string>(root, "backend", "<root>", false)) s.backend = *v;
    if (auto v = rd.get<std::string>(root, "adversary", "<root>", false)) s.adversary = ServerId(*v);
    if (auto v = rd.rational(root, "authority_factor", "<root>")) s.authority_factor = *v;
    if (auto v = rd.get<std::string>(root, "weight_mode", "<root>", false)) {
        if (*v == "UNIT") s.weight_mode = WeightMode::Unit;
        else if (*v == "REPUTATION_WEIGHTED") s.weight_mode = WeightMode::ReputationWeighted;
        else rd.problems.push_back("<root>.weight_mode: unknown value '" + *v + "'");
    }
    if (root.contains("mutations")) {
        const Json& m = root.at("mutations");
        if (auto v = rd.get<bool>(m, "disable_nonce_cache", "mutations", false)) s.mutations.disable_nonce_cache = *v;
        if (auto v = rd.get<bool>(m, "disable_transcript_check", "mutations", false)) {
            s.mutations.disable_transcript_check = *v;
        }
    }

    if (!root.contains("nodes") || !root.at("nodes").is_array()) {
        rd.problems.push_back("<root>.nodes: required array missing");
    } else {
        const Json& nodes = root.at("nodes");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Json& n = nodes[i];
            const std::string path = "nodes[" + std::to_string(i) + "]";
            NodeSpec spec;
            if (n.is_string()) {
                spec.id = ServerId(n.get<std::string>());
                s.nodes.push_back(spec);
                continue;
            }
            if (auto v = rd.get<std::string>(n, "id", path, true)) spec.id = ServerId(*v);
            if (auto v = rd.get<std::string>(n, "role", path, false)) {
                if (*v == "auto") spec.role = InitialRole::Auto;
                else if (*v == "authority") spec.role = InitialRole::Authority;
                else if (*v == "leaf") spec.role = InitialRole::Leaf;
                else if (*v == "joiner") spec.role = InitialRole::Joiner;
                else rd.problems.push_back(path + ".role: unknown value '" + *v + "'");
            }
            if (auto v = rd.get<std::string>(n, "authority", path, false)) spec.authority = ServerId(*v);
            if (n.contains("policy")) {
                const Json& p = n.at("policy");
                const std::string pp = path + ".policy";
                if (auto v = rd.get<std::string>(p, "honesty", pp, false)) {
                    if (*v == "HONEST") spec.policy.honesty = Honesty::Honest;
                    else if (*v == "FAIL_CONTRACTS") spec.policy.honesty = Honesty::FailContracts;
                    else if (*v == "DROP_FEEDBACK") spec.policy.honesty = Honesty::DropFeedback;
                    else if (*v == "FALSE_SCORER") spec.policy.honesty = Honesty::FalseScorer;
                    else rd.problems.push_back(pp + ".honesty: unknown value '" + *v + "'");
                }
                if (auto v = rd.rational(p, "accept_threshold", pp)) spec.policy.accept_threshold = *v;
                if (auto v = rd.get<std::uint64_t>(p, "capacity", pp, false)) spec.policy.capacity = *v;
                if (auto v = rd.get<bool>(p, "keeps_shares", pp, false)) spec.policy.keeps_shares = *v;
            }
            if (n.contains("initial")) {
                const Json& l = n.at("initial");
                const std::string lp = path + ".initial";
                ScoreLedger ledger = new_ledger(spec.id);
                if (auto v = rd.get<std::uint64_t>(l, "T", lp, false)) ledger.transactions = *v;
                if (auto v = rd.rational(l, "POS", lp)) ledger.pos_accum = *v;
                if (auto v = rd.rational(l, "NEG", lp)) ledger.neg_accum = *v;
                spec.initial = ledger;
            }
            s.nodes.push_back(spec);
        }
    }

    if (root.contains("trades")) {
        const Json& trades = root.at("trades");
        for (std::size_t i = 0; i < trades.size(); ++i) {
            const Json& t = trades[i];
            const std::string path = "trades[" + std::to_string(i) + "]";
            TradeEntry e;
            if (auto v = rd.get<std::uint64_t>(t, "tick", path, true)) e.tick = *v;
            if (auto v = rd.get<std::string>(t, "initiator", path, true)) e.initiator = ServerId(*v);
            if (auto v = rd.get<std::string>(t, "responder", path, true)) e.responder = ServerId(*v);
            if (auto v = rd.get<std::uint64_t>(t, "share_size", path, false)) e.params.share_size = *v;
            if (auto v = rd.get<std::uint64_t>(t, "duration", path, false)) e.params.duration = *v;
            s.trades.push_back(e);
        }
    }

    if (root.contains("membership")) {
        const Json& ms = root.at("membership");
        for (std::size_t i = 0; i < ms.size(); ++i) {
            const Json& m = ms[i];
            const std::string path = "membership[" + std::to_string(i) + "]";
            MembershipEvent e;
            if (auto v = rd.get<std::uint64_t>(m, "tick", path, true)) e.tick = *v;
            if (auto v = rd.get<std::string>(m, "node", path, true)) e.node = ServerId(*v);
            if (auto v = rd.get<std::string>(m, "authority", path, false)) e.authority = ServerId(*v);
            if (auto v = rd.get<std::string>(m, "action", path, true)) {
                if (*v == "join") e.action = MembershipEvent::Action::Join;
                else if (*v == "leave") e.action = MembershipEvent::Action::Leave;
                else rd.problems.push_back(path + ".action: unknown value '" + *v + "'");
            }
            s.membership.push_back(e);
        }
    }

    if (root.contains("adversaries")) {
        const Json& as = root.at("adversaries");
        for (std::size_t i = 0; i < as.size(); ++i) {
            const Json& a = as[i];
            const std::string path = "adversaries[" + std::to_string(i) + "]";
            AdversaryAction act;
            if (auto v = rd.get<std::string>(a, "kind", path, true)) {
                if (*v == "IMPERSONATE") act.kind = AdversaryKind::Impersonate;
                else if (*v == "MITM_TAMPER") act.kind = AdversaryKind::MitmTamper;
                else if (*v == "REPLAY") act.kind = AdversaryKind::Replay;
                else if (*v == "FAKE_AUTHORITY_MSG") act.kind = AdversaryKind::FakeAuthorityMsg;
                else if (*v == "FORGE_FEEDBACK") act.kind = AdversaryKind::ForgeFeedback;
                else if (*v == "ROGUE_ROTATION") act.kind = AdversaryKind::RogueRotation;
                else rd.problems.push_back(path + ".kind: unknown value '" + *v + "'");
            }
            if (auto v = rd.get<std::uint64_t>(a, "at_tick", path, true)) act.at_tick = *v;
            if (auto v = rd.get<std::string>(a, "victim", path, false)) act.victim = ServerId(*v);
            if (auto v = rd.get<std::string>(a, "target", path, false)) act.target = ServerId(*v);
            if (auto v = rd.get<std::string>(a, "from", path, false)) act.from = ServerId(*v);
            if (auto v = rd.get<std::string>(a, "to", path, false)) act.to = ServerId(*v);
            if (auto v = rd.get<std::string>(a, "message", path, false)) {
                act.message = parse_type_name(*v);
                if (!act.message) rd.problems.push_back(path + ".message: unknown message type '" + *v + "'");
            }
            if (auto v = rd.get<std::string>(a, "field", path, false)) act.field = *v;
            if (auto v = rd.get<std::int64_t>(a, "value", path, false)) act.value = *v;
            if (auto v = rd.get<std::uint64_t>(a, "count", path, false)) act.count = *v;
            if (auto v = rd.get<std::uint64_t>(a, "occurrence", path, false)) act.occurrence = *v;
            if (auto v = rd.get<bool>(a, "substitute", path, false)) act.substitute = *v;
            if (auto v = rd.get<std::uint64_t>(a, "share_size", path, false)) act.params.share_size = *v;
            if (auto v = rd.get<std::uint64_t>(a, "duration", path, false)) act.params.duration = *v;
            if (auto v = rd.get<std::string>(a, "holds_key_of", path, false)) act.holds_key_of = ServerId(*v);
            s.adversaries.push_back(act);
        }
    }

    if (root.contains("expectations")) {
        const Json& es = root.at("expectations");
        for (std::size_t i = 0; i < es.size(); ++i) {
            const Json& e = es[i];
            const std::string path = "expectations[" + std::to_string(i) + "]";
            Expectation x;
            if (auto v = rd.get<std::string>(e, "name", path, false)) x.name = *v;
            if (auto v = rd.get<std::string>(e, "op", path, true)) x.op = *v;
            if (e.contains("value")) x.value = value_text(e.at("value"));
            else rd.problems.push_back(path + ".value: required field missing");
            if (e.contains("count")) {
                const Json& c = e.at("count");
                x.kind = Expectation::Kind::Count;
                if (auto v = rd.get<std::string>(c, "kind", path + ".count", true)) x.event_kind = *v;
                if (auto v = rd.get<std::string>(c, "actor", path + ".count", false)) x.actor = *v;
                if (c.contains("where")) {
                    for (const auto& [k, v] : c.at("where").items()) x.where[k] = value_text(v);
                }
            } else if (e.contains("snapshot")) {
                const Json& c = e.at("snapshot");
                x.kind = Expectation::Kind::Snapshot;
                if (auto v = rd.get<std::string>(c, "server", path + ".snapshot", true)) x.server = ServerId(*v);
                if (auto v = rd.get<std::string>(c, "field", path + ".snapshot", true)) {
                    static const std::set<std::string> fields{"T", "POS", "NEG", "GR", "authority", "present"};
                    if (!fields.contains(*v)) rd.problems.push_back(path + ".snapshot.field: unknown field '" + *v + "'");
                    x.field = *v;
                }
            } else {
                rd.problems.push_back(path + ": needs either 'count' or 'snapshot'");
            }
            if (x.name.empty()) x.name = path;
            s.expectations.push_back(x);
        }
    }

    auto structural = rd.problems.empty() ? validate(s) : std::vector<std::string>{};
    rd.problems.insert(rd.problems.end(), structural.begin(), structural.end());
    if (!rd.problems.empty()) throw ScenarioError(rd.problems);

    std::stable_sort(s.trades.begin(), s.trades.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    std::stable_sort(s.membership.begin(), s.membership.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
    std::stable_sort(s.adversaries.begin(), s.adversaries.end(),
                     [](const auto& a, const auto& b) { return a.at_tick < b.at_tick; });
    return s;
}

}  // namespace scenario_json

/// Parses scenario text. JSON syntax errors carry line/column; schema
/// problems are reported per field path. Both throw ScenarioError.
inline ScenarioScript parse_scenario(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioError({std::string("syntax: ") + e.what()});
    }
    return scenario_json::from_json(root);
}

}  // namespace servnet
