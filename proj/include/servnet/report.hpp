// Run reports. Everything here is computed from an event log alone: the
// expectations travel inside the log's setup record.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "servnet/event_log.hpp"
#include "servnet/reputation.hpp"

namespace servnet {

struct ExpectationResult {
    std::string name;
    bool passed = false;
    std::string observed;
    std::string expected;
    std::string op;
};

struct SnapshotLine {
    std::string server;
    std::map<std::string, std::string> fields;  // T, POS, NEG, GR, authority
};

struct RunReport {
    std::string scenario;
    std::vector<SnapshotLine> snapshot;
    std::map<std::string, std::size_t> counts;
    std::vector<const Event*> flagged;
    std::vector<ExpectationResult> expectations;

    bool passed() const {
        for (const auto& e : expectations) {
            if (!e.passed) return false;
        }
        return true;
    }

    std::string render() const;
};

inline bool is_flagged_kind(const std::string& kind) {
    static const std::set<std::string> kinds{
        "message-rejected",     "session-aborted",        "scorer-cheating",     "receiver-dropped",
        "feedback-copy-invalid", "feedback-dropped",      "authority-notice-ignored", "rotation-rejected",
        "rotation-rolled-back", "rotation-alarm",         "rotation-unresolved", "db-access-denied",
        "registration-rejected", "registration-aborted",  "revocation-unknown",  "adversary-sign-rejected",
        "adversary-tamper",     "adversary-replay",       "rotation-grant-invalid"};
    return kinds.contains(kind);
}

/// Snapshot records of the final block (the last tick that has any).
inline std::vector<SnapshotLine> final_snapshot(const EventLog& log) {
    std::optional<Tick> last;
    for (const auto& e : log.events()) {
        if (e.kind == "snapshot") last = e.tick;
    }
    std::vector<SnapshotLine> out;
    if (!last) return out;
    for (const auto& e : log.events()) {
        if (e.kind != "snapshot" || e.tick != *last) continue;
        SnapshotLine line;
        line.server = e.payload.at("server").get<std::string>();
        for (const char* f : {"T", "POS", "NEG", "GR", "authority"}) {
            const Json& v = e.payload.at(f);
            line.fields[f] = v.is_string() ? v.get<std::string>() : v.dump();
        }
        out.push_back(std::move(line));
    }
    return out;
}

inline bool compare_values(const std::string& observed, const std::string& op, const std::string& expected) {
    std::optional<Rational> a;
    std::optional<Rational> b;
    try {
        a = parse_rational(observed);
        b = parse_rational(expected);
    } catch (const std::invalid_argument&) {
        a.reset();
    }
    if (a && b) {
        if (op == "==") return *a == *b;
        if (op == "!=") return *a != *b;
        if (op == "<") return *a < *b;
        if (op == "<=") return *a <= *b;
        if (op == ">") return *a > *b;
        if (op == ">=") return *a >= *b;
        return false;
    }
    if (op == "==") return observed == expected;
    if (op == "!=") return observed != expected;
    return false;
}

inline std::string payload_text(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
}

inline ExpectationResult evaluate_expectation(const Json& x, const EventLog& log,
                                              const std::vector<SnapshotLine>& snapshot) {
    ExpectationResult r;
    r.name = x.value("name", "");
    r.op = x.value("op", "==");
    r.expected = x.value("value", "");
    if (x.contains("count")) {
        const Json& c = x.at("count");
        const std::string kind = c.at("kind").get<std::string>();
        const std::optional<std::string> actor =
            c.contains("actor") ? std::optional<std::string>(c.at("actor").get<std::string>()) : std::nullopt;
        const Json where = c.value("where", Json::object());
        std::size_t n = 0;
        for (const auto& e : log.events()) {
            if (e.kind != kind || (actor && e.actor != *actor)) continue;
            bool match = true;
            for (const auto& [k, v] : where.items()) {
                if (!e.payload.contains(k) || payload_text(e.payload.at(k)) != v.get<std::string>()) {
                    match = false;
                    break;
                }
            }
            n += match ? 1 : 0;
        }
        r.observed = std::to_string(n);
    } else {
        const Json& s = x.at("snapshot");
        const std::string server = s.at("server").get<std::string>();
        const std::string field = s.at("field").get<std::string>();
        const SnapshotLine* line = nullptr;
        for (const auto& l : snapshot) {
            if (l.server == server) line = &l;
        }
        if (field == "present") {
            r.observed = line ? "true" : "false";
        } else {
            r.observed = line ? line->fields.at(field) : "<absent>";
        }
    }
    r.passed = compare_values(r.observed, r.op, r.expected);
    return r;
}

inline RunReport make_report(const EventLog& log) {
    RunReport rep;
    Json expectations = Json::array();
    for (const auto& e : log.events()) {
        if (e.kind == "setup") {
            rep.scenario = e.payload.value("scenario", "");
            expectations = e.payload.value("expectations", Json::array());
            break;
        }
    }
    rep.snapshot = final_snapshot(log);
    for (const auto& e : log.events()) {
        rep.counts[e.kind] += 1;
        if (is_flagged_kind(e.kind)) rep.flagged.push_back(&e);
    }
    for (const auto& x : expectations) rep.expectations.push_back(evaluate_expectation(x, log, rep.snapshot));
    return rep;
}

inline std::string RunReport::render() const {
    std::ostringstream out;
    out << "scenario: " << scenario << "\n\n";
    out << "snapshot:\n";
    out << "  server,T,POS,NEG,GR,authority\n";
    for (const auto& l : snapshot) {
        out << "  " << l.server << "," << l.fields.at("T") << "," << to_decimal(parse_rational(l.fields.at("POS")))
            << "," << to_decimal(parse_rational(l.fields.at("NEG"))) << ","
            << to_decimal(parse_rational(l.fields.at("GR"))) << "," << l.fields.at("authority") << "\n";
    }
    out << "\nevent counts:\n";
    for (const auto& [kind, n] : counts) out << "  " << kind << ": " << n << "\n";
    out << "\nflagged events (" << flagged.size() << "):\n";
    for (const auto* e : flagged) {
        out << "  t=" << e->tick << " #" << e->seq << " " << e->actor << " " << e->kind << " " << e->payload.dump()
            << "\n";
    }
    out << "\nexpectations:\n";
    if (expectations.empty()) out << "  (none)\n";
    for (const auto& x : expectations) {
        out << "  " << (x.passed ? "PASS " : "FAIL ") << x.name << ": observed " << x.observed << ", wanted " << x.op
            << " " << x.expected << "\n";
    }
    out << "\nverdict: " << (passed() ? "PASS" : "FAIL") << "\n";
    return out.str();
}

}  // namespace servnet
