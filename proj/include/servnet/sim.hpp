// Deterministic discrete-event servnet. Every node is a single-threaded
// actor; all cross-node effects travel as encoded messages through one
// event queue ordered by (tick, phase, sequence).

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "servnet/authority.hpp"
#include "servnet/contract.hpp"
#include "servnet/event_log.hpp"
#include "servnet/feedback.hpp"
#include "servnet/messages.hpp"
#include "servnet/model_security.hpp"
#include "servnet/reputation.hpp"
#include "servnet/scenario.hpp"
#include "servnet/sodium_security.hpp"

namespace servnet {

struct SnapshotRow {
    ServerId server;
    std::uint64_t transactions = 0;
    Rational pos = 0;
    Rational neg = 0;
    Rational gr = 0;
    ServerId authority;

    friend bool operator==(const SnapshotRow&, const SnapshotRow&) = default;
};

inline std::string snapshot_csv(const std::vector<SnapshotRow>& rows) {
    std::string out = "server,T,POS,NEG,GR,authority\n";
    for (const auto& r : rows) {
        out += r.server.str() + "," + std::to_string(r.transactions) + "," + to_decimal(r.pos) + "," +
               to_decimal(r.neg) + "," + to_decimal(r.gr) + "," + r.authority.str() + "\n";
    }
    return out;
}

struct ConvergenceReport {
    bool converged = true;
    std::vector<std::string> diff;
};

inline std::string short_digest(const Bytes& bytes) {
    const Hash h = digest(bytes);
    return to_hex(ByteView(h.data(), 8));
}

class Sim {
public:
    /// build_sim: validates the script, draws the initial authorities and
    /// attaches the initial roster without running registration.
    explicit Sim(ScenarioScript script) : script_(std::move(script)) {
        if (auto problems = validate(script_); !problems.empty()) throw ScenarioError(problems);
        if (script_.backend == "sodium") {
            security_ = std::make_unique<SodiumSecurity>();
        } else {
            security_ = std::make_unique<ModelSecurity>();
        }
        db_ = std::make_unique<DbServer>(*security_, script_.seed);
        build();
    }

    Sim(const Sim&) = delete;
    Sim& operator=(const Sim&) = delete;

    const ScenarioScript& script() const { return script_; }
    const EventLog& log() const { return log_; }
    Tick now() const { return now_; }
    SecurityProvider& security() { return *security_; }
    const DbServer& db() const { return *db_; }

    /// Queues an attack. Scripting possession of another node's private key
    /// is refused.
    void inject_adversary(const AdversaryAction& action) {
        ScenarioScript probe = script_;
        probe.adversaries = {action};
        if (auto problems = validate(probe); !problems.empty()) throw ScenarioError(problems);
        const Tick at = std::max(action.at_tick, now_);
        schedule(at, kAdversary, [this, action] { fire_adversary(action); });
    }

    void schedule_trade(const TradeEntry& t) {
        schedule(std::max(t.tick, now_), kTrade, [this, t] { start_trade(t); });
    }

    void schedule_membership(const MembershipEvent& m) {
        schedule(std::max(m.tick, now_), kMembership, [this, m] {
            if (m.action == MembershipEvent::Action::Join) {
                join(m.node, *m.authority);
            } else {
                revoke_server(m.node);
            }
        });
    }

    /// Processes every queued item with tick <= until, then appends one
    /// snapshot record per live server.
    const EventLog& run(Tick until) {
        while (!queue_.empty() && queue_.top().tick <= until) {
            Item item = queue_.top();
            queue_.pop();
            now_ = item.tick;
            item.fn();
        }
        now_ = std::max(now_, until);
        for (const auto& row : snapshot_reputations()) {
            Json p{{"server", row.server.str()},
                   {"T", row.transactions},
                   {"POS", to_exact(row.pos)},
                   {"NEG", to_exact(row.neg)},
                   {"GR", to_exact(row.gr)},
                   {"GR_decimal", to_decimal(row.gr)},
                   {"authority", row.authority.str()}};
            log_.append(now_, "sim", "snapshot", std::move(p));
        }
        return log_;
    }

    const EventLog& run() { return run(script_.end_tick()); }

    /// Read through the database model; revoked servers are absent.
    std::vector<SnapshotRow> snapshot_reputations() const {
        std::vector<SnapshotRow> rows;
        for (const auto& [node, rec] : db_->records()) {
            rows.push_back(SnapshotRow{node, rec.ledger.transactions, rec.ledger.pos_accum, rec.ledger.neg_accum,
                                       rec.reputation(), rec.authority});
        }
        return rows;
    }

    std::string snapshot_csv() const { return servnet::snapshot_csv(snapshot_reputations()); }

    std::vector<ServerId> authorities() const {
        std::vector<ServerId> out;
        for (const auto& [id, n] : nodes_) {
            if (n.is_authority && n.registered) out.push_back(id);
        }
        return out;
    }

    ConvergenceReport check_directory_convergence() const {
        ConvergenceReport rep;
        const auto auths = authorities();
        if (auths.empty()) return rep;
        const auto& first = nodes_.at(auths.front());
        for (std::size_t i = 1; i < auths.size(); ++i) {
            const auto& other = nodes_.at(auths[i]);
            auto d = directory_diff(first.id.str(), first.directory, other.id.str(), other.directory);
            rep.diff.insert(rep.diff.end(), d.begin(), d.end());
        }
        rep.converged = rep.diff.empty();
        return rep;
    }

    const AuthorityDirectory* directory_of(const ServerId& authority) const {
        auto it = nodes_.find(authority);
        if (it == nodes_.end() || !it->second.is_authority) return nullptr;
        return &it->second.directory;
    }

    std::optional<ServerId> authority_of_record(const ServerId& node) const {
        auto it = nodes_.find(node);
        if (it == nodes_.end() || !it->second.registered) return std::nullopt;
        return it->second.authority_of_record;
    }

    bool registered(const ServerId& node) const {
        auto it = nodes_.find(node);
        return it != nodes_.end() && it->second.registered;
    }

    std::optional<Rational> reputation(const ServerId& node) const {
        auto it = db_->records().find(node);
        if (it == db_->records().end()) return std::nullopt;
        return it->second.reputation();
    }

    std::vector<ContractSession> sessions_of(const ServerId& node) const {
        std::vector<ContractSession> out;
        auto it = nodes_.find(node);
        if (it == nodes_.end()) return out;
        for (const auto& [sid, s] : it->second.sessions) out.push_back(s);
        return out;
    }

    std::uint64_t db_granted(const ServerId& node) const { return db_->granted(node); }
    std::uint64_t db_denied(const ServerId& node) const { return db_->denied(node); }

private:
    enum Phase : int { kDeliver = 0, kTimer = 1, kMembership = 2, kTrade = 3, kElection = 4, kAdversary = 5 };

    struct Item {
        Tick tick;
        int phase;
        std::uint64_t seq;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Item& a, const Item& b) const {
            if (a.tick != b.tick) return a.tick > b.tick;
            if (a.phase != b.phase) return a.phase > b.phase;
            return a.seq > b.seq;
        }
    };

    struct Share {
        ServerId owner;
        ServerId holder;
        std::uint64_t size = 0;
        Tick expiry = 0;
        TransactionId txn;
        bool live = true;
    };

    struct NodeState {
        ServerId id;
        NodePolicy policy;
        KeyPair keys;
        std::unique_ptr<NonceSource> nonces;
        NonceCache seen;
        NonceCache authority_seen;  // replay window for the authority role
        bool registered = false;
        bool is_adversary = false;
        bool is_authority = false;
        bool leaving = false;
        std::optional<std::uint64_t> subtree;
        std::optional<SymmetricKey> db_key;
        std::optional<std::pair<std::uint64_t, SymmetricKey>> incoming_key;
        ServerId authority_of_record;
        AuthorityDirectory directory;
        FeedbackTracker tracker;
        FeedbackGiver giver;
        std::map<std::uint64_t, ContractSession> sessions;
        std::optional<std::pair<ServerId, Nonce>> pending_registration;
        std::set<std::pair<TransactionId, ServerId>> self_feedback_seen;
        std::uint64_t used_capacity = 0;

        NodeState(ServerId node, Tick feedback_timeout, bool nonce_cache)
            : id(node), seen(nonce_cache), authority_seen(nonce_cache), tracker(feedback_timeout), giver(node) {}
    };

    struct TamperRule {
        AdversaryAction action;
        std::uint64_t remaining = 1;
    };

    struct Capture {
        Tick tick;
        ServerId from;
        ServerId to;
        MsgType type;
        Bytes bytes;
    };

    struct Impersonation {
        ServerId victim;
        ServerId target;
        std::uint64_t session = 0;
    };

    // ------------------------------------------------------------ setup

    static std::uint64_t key_seed(std::uint64_t scenario_seed, const ServerId& id) {
        const Hash h = digest("keygen:" + id.str());
        std::uint64_t w = 0;
        for (int i = 0; i < 8; ++i) w = (w << 8) | h[static_cast<std::size_t>(i)];
        return w ^ (scenario_seed * 0x9e3779b97f4a7c15ULL);
    }

    NodeState& make_node(const ServerId& id) {
        auto [it, inserted] =
            nodes_.try_emplace(id, id, script_.feedback_timeout, !script_.mutations.disable_nonce_cache);
        NodeState& n = it->second;
        if (inserted) {
            n.nonces = std::make_unique<NonceSource>(script_.seed, id);
            n.keys = security_->keygen(id, key_seed(script_.seed, id));
        }
        return n;
    }

    void build() {
        Json expectations = Json::array();
        for (const auto& e : script_.expectations) {
            Json x{{"name", e.name}, {"op", e.op}, {"value", e.value}};
            if (e.kind == Expectation::Kind::Count) {
                x["count"] = Json{{"kind", e.event_kind}};
                if (e.actor) x["count"]["actor"] = *e.actor;
                Json where = Json::object();
                for (const auto& [k, v] : e.where) where[k] = v;
                x["count"]["where"] = where;
            } else {
                x["snapshot"] = Json{{"server", e.server.str()}, {"field", e.field}};
            }
            expectations.push_back(x);
        }
        log_.append(0, "sim", "setup",
                    Json{{"scenario", script_.name},
                         {"seed", script_.seed},
                         {"backend", security_->name()},
                         {"weight_mode", to_string(script_.weight_mode)},
                         {"authority_factor", to_exact(script_.authority_factor)},
                         {"election_period", script_.election_period},
                         {"feedback_timeout", script_.feedback_timeout},
                         {"expectations", expectations}});

        std::vector<const NodeSpec*> roster;
        for (const auto& spec : script_.nodes) {
            NodeState& n = make_node(spec.id);
            n.policy = spec.policy;
            if (spec.role != InitialRole::Joiner) roster.push_back(&spec);
        }
        NodeState& adv = make_node(script_.adversary);
        adv.is_adversary = true;

        // Initial authorities: fixed roles first, then a seeded draw among
        // the "auto" nodes until the requested count is reached.
        std::mt19937_64 rng(script_.seed);
        std::vector<ServerId> authorities;
        std::vector<ServerId> candidates;
        for (const auto* spec : roster) {
            if (spec->role == InitialRole::Authority) authorities.push_back(spec->id);
            if (spec->role == InitialRole::Auto) candidates.push_back(spec->id);
        }
        while (authorities.size() < script_.initial_authorities && !candidates.empty()) {
            const auto pick = static_cast<std::size_t>(rng() % candidates.size());
            authorities.push_back(candidates[pick]);
            candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        std::sort(authorities.begin(), authorities.end());

        std::uint64_t subtree = 0;
        for (const auto& a : authorities) {
            NodeState& n = nodes_.at(a);
            n.is_authority = true;
            n.subtree = ++subtree;
            n.db_key = db_->create_subtree(*n.subtree, a);
            n.authority_of_record = a;
        }
        for (const auto* spec : roster) {
            NodeState& n = nodes_.at(spec->id);
            if (!n.is_authority) {
                n.authority_of_record = spec->authority
                                            ? *spec->authority
                                            : authorities[static_cast<std::size_t>(rng() % authorities.size())];
            }
            n.registered = true;
            ScoreLedger ledger = spec->initial ? *spec->initial : new_ledger(spec->id);
            ledger.owner = spec->id;
            db_->records()[spec->id] = DbRecord{spec->id, ledger, n.authority_of_record, {}};
            db_->register_key(spec->id, n.keys.public_key);
        }
        const AuthorityDirectory initial = db_->directory();
        for (const auto& a : authorities) nodes_.at(a).directory = initial;

        for (const auto* spec : roster) {
            const NodeState& n = nodes_.at(spec->id);
            log_.append(0, spec->id.str(), "node-created",
                        Json{{"role", n.is_authority ? "authority" : "leaf"},
                             {"authority", n.authority_of_record.str()},
                             {"honesty", to_string(n.policy.honesty)},
                             {"accept_threshold", to_exact(n.policy.accept_threshold)}});
            const auto& l = db_->records().at(spec->id).ledger;
            log_.append(0, spec->id.str(), "ledger-created",
                        Json{{"node", spec->id.str()},
                             {"T", l.transactions},
                             {"POS", to_exact(l.pos_accum)},
                             {"NEG", to_exact(l.neg_accum)}});
        }

        for (const auto& t : script_.trades) schedule_trade(t);
        for (const auto& m : script_.membership) schedule_membership(m);
        for (const auto& a : script_.adversaries) {
            schedule(a.at_tick, kAdversary, [this, a] { fire_adversary(a); });
        }
        schedule(script_.election_period, kElection, [this] { run_elections(); });
    }

    void schedule(Tick tick, int phase, std::function<void()> fn) {
        queue_.push(Item{tick, phase, next_seq_++, std::move(fn)});
    }

    const Event& emit(const ServerId& actor, std::string kind, Json payload = Json::object()) {
        return log_.append(now_, actor.str(), std::move(kind), std::move(payload));
    }

    // ---------------------------------------------------------- network

    void send(const ServerId& from, const ServerId& to, const ProtocolMessage& msg) {
        send_bytes(from, to, encode(msg), false);
    }

    void send_bytes(const ServerId& from, const ServerId& to, Bytes bytes, bool injected) {
        MsgType type = static_cast<MsgType>(bytes.empty() ? 0 : bytes[0]);
        if (!injected) {
            for (auto& rule : tamper_rules_) {
                const auto& a = rule.action;
                if (rule.remaining == 0 || a.from != from || a.to != to || !a.message || *a.message != type) continue;
                if (a.kind == AdversaryKind::MitmTamper) {
                    if (auto tampered = tamper(bytes, a)) {
                        emit(script_.adversary, "adversary-tamper",
                             Json{{"from", from.str()}, {"to", to.str()}, {"type", type_name(type)},
                                  {"field", a.field}, {"value", a.value}});
                        bytes = std::move(*tampered);
                        --rule.remaining;
                    }
                } else if (a.kind == AdversaryKind::Replay && a.substitute) {
                    if (const Capture* c = find_capture(a)) {
                        emit(script_.adversary, "adversary-replay",
                             Json{{"from", from.str()}, {"to", to.str()}, {"type", type_name(type)},
                                  {"mode", "substitute"}, {"captured_tick", c->tick}});
                        bytes = c->bytes;
                        --rule.remaining;
                    }
                }
            }
        }
        captures_.push_back(Capture{now_, from, to, type, bytes});
        emit(from, "msg-send",
             Json{{"to", to.str()}, {"type", type_name(type)}, {"digest", short_digest(bytes)}, {"injected", injected}});
        schedule(now_ + script_.link_delay, kDeliver,
                 [this, from, to, b = std::move(bytes)] { deliver(from, to, b); });
    }

    std::optional<Bytes> tamper(const Bytes& bytes, const AdversaryAction& a) {
        ProtocolMessage msg;
        try {
            msg = decode(bytes);
        } catch (const DecodeError&) {
            return std::nullopt;
        }
        const auto v = static_cast<std::uint64_t>(a.value);
        bool changed = false;
        if (auto* o = std::get_if<Offer>(&msg)) {
            if (a.field == "share_size") o->share_size = v, changed = true;
            if (a.field == "duration") o->duration = v, changed = true;
        } else if (auto* c = std::get_if<Counter>(&msg)) {
            if (a.field == "share_size") c->share_size = v, changed = true;
            if (a.field == "duration") c->duration = v, changed = true;
        } else if (auto* f = std::get_if<FeedbackMessage>(&msg)) {
            if (a.field == "score") f->body.score = static_cast<int>(a.value), changed = true;
        } else if (auto* r = std::get_if<RepAttest>(&msg)) {
            if (a.field == "reputation") r->reputation = std::to_string(a.value), changed = true;
        }
        if (!changed) return std::nullopt;
        return encode(msg);
    }

    const Capture* find_capture(const AdversaryAction& a) const {
        std::uint64_t seen = 0;
        for (const auto& c : captures_) {
            if (c.from == a.from && c.to == a.to && a.message && c.type == *a.message && c.tick < now_) {
                if (seen++ == a.occurrence) return &c;
            }
        }
        return nullptr;
    }

    void deliver(const ServerId& from, const ServerId& to, const Bytes& bytes) {
        ProtocolMessage msg;
        try {
            msg = decode(bytes);
        } catch (const DecodeError& e) {
            emit(to, "message-rejected", Json{{"from", from.str()}, {"reason", "malformed"}, {"detail", e.what()}});
            return;
        }
        emit(to, "msg-deliver", Json{{"from", from.str()}, {"type", type_name(type_of(msg))}, {"digest", short_digest(bytes)}});
        if (to == DbServer::id()) {
            db_receive(from, msg);
            return;
        }
        if (auto adv = diverted(from, to, msg)) {
            node_receive(nodes_.at(script_.adversary), from, msg, adv);
            return;
        }
        auto it = nodes_.find(to);
        if (it == nodes_.end() || it->second.is_adversary) {
            emit(to, "msg-dropped", Json{{"from", from.str()}, {"reason", "unknown recipient"}});
            return;
        }
        NodeState& n = it->second;
        if (!n.registered && !std::holds_alternative<RegAck>(msg)) {
            emit(to, "msg-dropped", Json{{"from", from.str()}, {"reason", "recipient not registered"}});
            return;
        }
        node_receive(n, from, msg, std::nullopt);
    }

    std::optional<std::uint64_t> diverted(const ServerId& from, const ServerId& to, const ProtocolMessage& msg) {
        for (const auto& imp : impersonations_) {
            if (imp.victim != to) continue;
            const NodeState& adv = nodes_.at(script_.adversary);
            auto sit = adv.sessions.find(imp.session);
            if (sit == adv.sessions.end() || sit->second.terminal()) continue;
            const auto t = type_of(msg);
            const bool from_target = from == imp.target && (t == MsgType::Counter || t == MsgType::Reject ||
                                                            t == MsgType::Binding);
            const auto* attest = std::get_if<RepAttest>(&msg);
            if (from_target || (attest && attest->subject == imp.target)) return imp.session;
        }
        return std::nullopt;
    }

    // --------------------------------------------------- lookup helpers

    const AuthorityDirectory* view_of(const NodeState& n) const {
        if (n.is_adversary) return &public_view_;
        if (n.is_authority) return &n.directory;
        auto it = nodes_.find(n.authority_of_record);
        if (it == nodes_.end() || !it->second.is_authority) return nullptr;
        return &it->second.directory;
    }

    std::optional<PublicKeyId> lookup_key(const NodeState& n, const ServerId& who) const {
        if (who == DbServer::id()) return db_->keys().public_key;
        if (n.is_adversary) return db_->directory().key_of(who);
        const auto* dir = view_of(n);
        return dir ? dir->key_of(who) : std::nullopt;
    }

    std::optional<ServerId> lookup_authority(const NodeState& n, const ServerId& who) const {
        if (n.is_adversary) return db_->directory().authority_of(who);
        const auto* dir = view_of(n);
        return dir ? dir->authority_of(who) : std::nullopt;
    }

    SessionContext context_for(NodeState& n) {
        const ServerId self = n.id;
        return SessionContext{
            *security_,
            n.id,
            n.keys.private_key,
            *n.nonces,
            n.seen,
            [this, self](const ServerId& who) { return lookup_key(nodes_.at(self), who); },
            [this, self](const ServerId& who) { return lookup_authority(nodes_.at(self), who); },
            [this, self](const Rational& gr, const TradeParams& p) {
                const NodeState& me = nodes_.at(self);
                if (me.is_adversary) return true;
                const bool fits = p.share_size <= me.policy.capacity &&
                                  me.used_capacity <= me.policy.capacity - p.share_size;
                return gr >= me.policy.accept_threshold && fits;
            },
            !script_.mutations.disable_transcript_check,
        };
    }

    bool db_access(NodeState& auth, const char* purpose) {
        bool ok = false;
        if (auth.subtree && auth.db_key) {
            const SealedBox token = db_->access_token(auth.id, *auth.db_key);
            ok = db_->access(auth.id, *auth.subtree, token);
        } else {
            ok = false;
        }
        emit(auth.id, ok ? "db-access" : "db-access-denied",
             Json{{"subtree", auth.subtree ? *auth.subtree : 0}, {"purpose", purpose}});
        return ok;
    }

    // ----------------------------------------------------- dispatching

    static std::optional<std::pair<ServerId, Nonce>> nonce_of(const ProtocolMessage& msg) {
        return std::visit(
            [](const auto& m) -> std::optional<std::pair<ServerId, Nonce>> {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Offer>) return std::pair{m.initiator, m.nonce};
                else if constexpr (std::is_same_v<T, Counter>) return std::pair{m.responder, m.nonce};
                else if constexpr (std::is_same_v<T, RepAttest>) return std::pair{m.authority, m.nonce};
                else if constexpr (std::is_same_v<T, Reject>) return std::pair{m.sender, m.ack_nonce};
                else if constexpr (std::is_same_v<T, Ack>) return std::pair{m.sender, m.ack_nonce};
                else if constexpr (std::is_same_v<T, RepQuery>) return std::pair{m.requester, m.nonce};
                else if constexpr (std::is_same_v<T, RepRelay>) return std::pair{m.authority, m.nonce};
                else if constexpr (std::is_same_v<T, RegIntro>) return std::pair{m.node, m.nonce};
                else if constexpr (std::is_same_v<T, AuthorityNotice>) return std::pair{m.db, m.nonce};
                else if constexpr (std::is_same_v<T, RevocationNotice>) return std::pair{m.authority, m.nonce};
                else return std::nullopt;
            },
            msg);
    }

    void reject(const NodeState& n, const ServerId& from, const ProtocolMessage& msg, const std::string& reason) {
        emit(n.id, "message-rejected",
             Json{{"from", from.str()}, {"type", type_name(type_of(msg))}, {"reason", reason}});
    }

    std::optional<std::uint64_t> find_session(const NodeState& n, const ServerId& peer, Role role,
                                              std::initializer_list<SessionState> states) const {
        for (const auto& [sid, s] : n.sessions) {
            if (s.peer != peer || s.role != role) continue;
            if (std::find(states.begin(), states.end(), s.state) != states.end()) return sid;
        }
        return std::nullopt;
    }

    void node_receive(NodeState& n, const ServerId& from, const ProtocolMessage& msg,
                      std::optional<std::uint64_t> forced_session) {
        // Registration has its own duplicate check that must run before the
        // nonce cache so a replayed intro reports as a duplicate.
        if (const auto* intro = std::get_if<RegIntro>(&msg)) {
            on_reg_intro(n, *intro);
            return;
        }
        const bool authority_traffic = std::holds_alternative<RepQuery>(msg) || std::holds_alternative<RepRelay>(msg);
        const NonceCache& cache = authority_traffic ? n.authority_seen : n.seen;
        if (auto nn = nonce_of(msg); nn && cache.seen(nn->first, nn->second)) {
            if (std::holds_alternative<AuthorityNotice>(msg)) {
                emit(n.id, "authority-notice-ignored", Json{{"reason", "stale-or-replay"}});
            } else {
                reject(n, from, msg, "stale-or-replay");
            }
            return;
        }
        std::visit([&](const auto& m) { on_message(n, from, m, forced_session); }, msg);
    }

    template <typename M>
    void on_message(NodeState& n, const ServerId& from, const M& m, std::optional<std::uint64_t> forced) {
        using T = std::decay_t<M>;
        if constexpr (std::is_same_v<T, Offer>) {
            on_offer(n, from, m);
        } else if constexpr (std::is_same_v<T, Counter>) {
            route(n, from, m, m.responder, Role::Initiator, {SessionState::Sent1}, forced);
        } else if constexpr (std::is_same_v<T, Reject>) {
            if (auto sid = forced ? forced : find_session(n, m.sender, Role::Initiator, {SessionState::Sent1})) {
                advance(n, *sid, ProtocolMessage{m});
            } else if (auto sid2 = find_session(n, m.sender, Role::Responder, {SessionState::Sent5})) {
                advance(n, *sid2, ProtocolMessage{m});
            } else {
                reject(n, from, m, "unmatched");
            }
        } else if constexpr (std::is_same_v<T, Ack>) {
            route(n, from, m, m.sender, Role::Responder, {SessionState::Sent5}, forced);
        } else if constexpr (std::is_same_v<T, RepAttest>) {
            std::optional<std::uint64_t> sid = forced;
            if (!sid) sid = find_session(n, m.subject, Role::Initiator, {SessionState::AwaitRep});
            if (!sid) sid = find_session(n, m.subject, Role::Responder, {SessionState::AwaitRep});
            if (sid) advance(n, *sid, ProtocolMessage{m});
            else reject(n, from, m, "unmatched");
        } else if constexpr (std::is_same_v<T, Binding>) {
            std::optional<std::uint64_t> sid = forced;
            if (!sid) sid = find_session(n, m.sender, Role::Responder, {SessionState::AwaitHash});
            if (!sid) sid = find_session(n, m.sender, Role::Initiator, {SessionState::AwaitHash});
            if (sid) advance(n, *sid, ProtocolMessage{m});
            else reject(n, from, m, "unmatched");
        } else if constexpr (std::is_same_v<T, RepQuery>) {
            on_rep_query(n, from, m);
        } else if constexpr (std::is_same_v<T, RepRelay>) {
            on_rep_relay(n, from, m);
        } else if constexpr (std::is_same_v<T, FeedbackMessage>) {
            on_feedback(n, from, m);
        } else if constexpr (std::is_same_v<T, RegAck>) {
            on_reg_ack(n, m);
        } else if constexpr (std::is_same_v<T, RegFlood>) {
            on_reg_flood(n, m);
        } else if constexpr (std::is_same_v<T, RotateGrant>) {
            on_rotate_grant(n, m);
        } else if constexpr (std::is_same_v<T, AuthorityNotice>) {
            on_authority_notice(n, m);
        } else if constexpr (std::is_same_v<T, RevocationNotice>) {
            on_revocation_notice(n, m);
        } else {
            reject(n, from, ProtocolMessage{m}, "unexpected-at-node");
        }
    }

    template <typename M>
    void route(NodeState& n, const ServerId& from, const M& m, const ServerId& peer, Role role,
               std::initializer_list<SessionState> states, std::optional<std::uint64_t> forced) {
        auto sid = forced ? forced : find_session(n, peer, role, states);
        if (!sid) {
            reject(n, from, ProtocolMessage{m}, "unmatched");
            return;
        }
        advance(n, *sid, ProtocolMessage{m});
    }

    // --------------------------------------------------------- contracts

    void start_trade(const TradeEntry& t) {
        auto ii = nodes_.find(t.initiator);
        auto ri = nodes_.find(t.responder);
        if (ii == nodes_.end() || ri == nodes_.end() || !ii->second.registered || !ri->second.registered) {
            emit(t.initiator, "trade-skipped", Json{{"responder", t.responder.str()}, {"reason", "party not registered"}});
            return;
        }
        NodeState& n = ii->second;
        for (const auto& [sid, s] : n.sessions) {
            if (s.peer == t.responder && !s.terminal()) {
                emit(n.id, "trade-skipped", Json{{"responder", t.responder.str()}, {"reason", "session busy"}});
                return;
            }
        }
        const std::uint64_t sid = next_session_++;
        n.sessions.emplace(sid, initiator_session(n.id, now_ + script_.session_timeout));
        emit(n.id, "session-opened", Json{{"peer", t.responder.str()}, {"role", "initiator"}, {"session", sid}});
        advance(n, sid, StartCommand{t.responder, t.params});
    }

    void on_offer(NodeState& n, const ServerId& from, const Offer& offer) {
        for (const auto& [sid, s] : n.sessions) {
            if (s.peer == offer.initiator && !s.terminal()) {
                reject(n, from, offer, "session busy");
                return;
            }
        }
        ContractSession s = responder_session(n.id, now_ + script_.session_timeout);
        SessionContext ctx = context_for(n);
        auto out = contract_advance(s, ProtocolMessage{offer}, ctx);
        if (s.state == SessionState::Aborted) {
            reject(n, from, offer, to_string(s.reason));
            return;
        }
        const std::uint64_t sid = next_session_++;
        emit(n.id, "session-opened",
             Json{{"peer", offer.initiator.str()}, {"role", "responder"}, {"session", sid}});
        n.sessions.emplace(sid, std::move(s));
        for (auto& o : out) send(n.id, o.to, o.msg);
        arm_timeout(n.id, sid);
    }

    void advance(NodeState& n, std::uint64_t sid, const ContractInput& input) {
        ContractSession& s = n.sessions.at(sid);
        const SessionState before = s.state;
        SessionContext ctx = context_for(n);
        // An impersonation session starts out with the victim's key handle,
        // which the security layer refuses at the first signature.
        if (n.is_adversary && s.self != n.id) ctx.signing_key = nodes_.at(s.self).keys.private_key;
        std::vector<Outgoing> out;
        const auto step = [&] {
            const auto* msg = std::get_if<ProtocolMessage>(&input);
            const auto* binding = msg ? std::get_if<Binding>(msg) : nullptr;
            if (binding && s.state == SessionState::AwaitHash) return verify_transcript(s, *binding, ctx);
            return contract_advance(s, input, ctx);
        };
        try {
            out = step();
        } catch (const KeyNotHeld& e) {
            emit(n.id, "adversary-sign-rejected", Json{{"as", s.self.str()}, {"detail", e.what()}});
            if (!n.is_adversary) throw;
            // Without the victim's key the best an impersonator can do is
            // sign with its own.
            ctx.signing_key = n.keys.private_key;
            out = step();
        }
        for (auto& o : out) send(s.self, o.to, o.msg);

        if (s.state == SessionState::Sent9) {
            advance(n, sid, BindCommand{});
            return;
        }
        if (s.terminal() && before != s.state) {
            on_session_end(n, sid);
        } else if (!s.terminal()) {
            s.deadline = now_ + script_.session_timeout;
            arm_timeout(n.id, sid);
        }
    }

    void arm_timeout(const ServerId& node, std::uint64_t sid) {
        const Tick at = now_ + script_.session_timeout;
        schedule(at, kTimer, [this, node, sid] {
            NodeState& n = nodes_.at(node);
            auto it = n.sessions.find(sid);
            if (it == n.sessions.end() || it->second.terminal() || it->second.deadline > now_) return;
            it->second.state = SessionState::Aborted;
            it->second.reason = AbortReason::Timeout;
            on_session_end(n, sid);
        });
    }

    void on_session_end(NodeState& n, std::uint64_t sid) {
        const ContractSession& s = n.sessions.at(sid);
        const auto txn = s.txn_id();
        Json p{{"peer", s.peer.str()},
               {"role", s.role == Role::Initiator ? "initiator" : "responder"},
               {"session", sid},
               {"as", s.self.str()}};
        if (txn) p["txn"] = txn->hex();
        if (s.bound()) {
            emit(n.id, "contract-bound", p);
            on_bound(n, s);
        } else if (is_rejection(s.reason)) {
            p["by"] = s.reason == AbortReason::RejectedLocally ? "self" : "peer";
            if (s.peer_reputation) p["peer_gr"] = to_exact(*s.peer_reputation);
            emit(n.id, "contract-rejected", p);
        } else {
            p["reason"] = to_string(s.reason);
            emit(n.id, "session-aborted", p);
        }
    }

    void on_bound(NodeState& n, const ContractSession& s) {
        if (n.is_adversary) return;
        const TransactionId txn = *s.txn_id();
        n.giver.contract_bound(txn, s.peer);
        auto hit = nodes_.find(s.peer);
        const std::size_t idx = shares_.size();
        shares_.push_back(Share{n.id, s.peer, s.own_params.share_size, now_ + s.own_params.duration, txn, true});
        if (hit != nodes_.end()) hit->second.used_capacity += s.own_params.share_size;
        emit(n.id, "share-stored",
             Json{{"holder", s.peer.str()}, {"size", s.own_params.share_size}, {"expiry", now_ + s.own_params.duration},
                  {"txn", txn.hex()}});
        schedule(now_ + s.own_params.duration, kTimer, [this, idx] { judge_share(idx); });
    }

    void judge_share(std::size_t idx) {
        Share& sh = shares_[idx];
        if (!sh.live) return;
        sh.live = false;
        auto hit = nodes_.find(sh.holder);
        bool retrievable = false;
        if (hit != nodes_.end()) {
            hit->second.used_capacity -= std::min(hit->second.used_capacity, sh.size);
            const auto& pol = hit->second.policy;
            retrievable = hit->second.registered && pol.honesty != Honesty::FailContracts && pol.keeps_shares;
        }
        emit(sh.owner, "share-expired",
             Json{{"holder", sh.holder.str()}, {"txn", sh.txn.hex()}, {"retrievable", retrievable}});
        NodeState& owner = nodes_.at(sh.owner);
        if (!owner.registered || !owner.giver.owes(sh.txn)) return;
        send_feedback(owner, sh.txn, retrievable ? LocalScore::positive() : LocalScore::negative());
    }

    // ---------------------------------------------------------- feedback

    void send_feedback(NodeState& n, const TransactionId& txn, LocalScore score) {
        const auto counterpart = n.giver.counterpart(txn);
        const auto target_auth = counterpart ? lookup_authority(n, *counterpart) : std::nullopt;
        if (!counterpart || !target_auth) {
            emit(n.id, "feedback-undeliverable", Json{{"txn", txn.hex()}});
            return;
        }
        if (n.policy.honesty == Honesty::FalseScorer) {
            n.giver.mark_given(txn);
            auto fake = sign_feedback(*security_, n.id, n.keys.private_key, FeedbackBody{txn, *counterpart, 1, n.id});
            auto real = sign_feedback(*security_, n.id, n.keys.private_key, FeedbackBody{txn, *counterpart, -1, n.id});
            emit(n.id, "feedback-sent",
                 Json{{"txn", txn.hex()}, {"subject", counterpart->str()}, {"score_via_target", 1}, {"score_direct", -1}});
            send(n.id, *counterpart, fake);
            send(n.id, *target_auth, real);
            return;
        }
        auto delivery = n.giver.make_feedback(*security_, n.keys.private_key, txn, score, *target_auth);
        emit(n.id, "feedback-sent",
             Json{{"txn", txn.hex()}, {"subject", counterpart->str()}, {"score_via_target", score.value()},
                  {"score_direct", score.value()}});
        send(n.id, delivery.via_target.to, delivery.via_target.msg);
        send(n.id, delivery.direct.to, delivery.direct.msg);
    }

    void on_feedback(NodeState& n, const ServerId& from, const FeedbackMessage& m) {
        const bool about_me = m.body.subject == n.id;
        const bool my_leaf = n.is_authority && n.directory.authority_of(m.body.subject) == n.id;

        if (about_me) {
            // An authority that is its own authority of record receives both
            // copies from the scorer; the first one is the via-target copy.
            const auto key = std::pair{m.body.txn, m.sender};
            const bool first = n.self_feedback_seen.insert(key).second;
            if (!my_leaf || first) {
                emit(n.id, "feedback-observed",
                     Json{{"txn", m.body.txn.hex()}, {"scorer", m.sender.str()}, {"score", m.body.score}});
                if (n.policy.honesty == Honesty::DropFeedback && m.body.score < 0) {
                    emit(n.id, "feedback-dropped", Json{{"txn", m.body.txn.hex()}, {"scorer", m.sender.str()}});
                    return;
                }
                if (my_leaf) {
                    authority_feedback(n, m, FeedbackPath::ViaTarget);
                } else {
                    send(n.id, n.authority_of_record, m);
                }
                return;
            }
        }
        if (my_leaf) {
            const FeedbackPath path = (from == m.body.subject) ? FeedbackPath::ViaTarget : FeedbackPath::Direct;
            authority_feedback(n, m, path);
            return;
        }
        // Misrouted, typically a copy that reached an authority after it
        // was replaced. Hand it to the subject's authority of record.
        if (auto* rec = db_->find(m.body.subject); rec && rec->authority != n.id) {
            auto it = nodes_.find(rec->authority);
            if (it != nodes_.end() && it->second.is_authority) {
                const FeedbackPath path = (from == m.body.subject) ? FeedbackPath::ViaTarget : FeedbackPath::Direct;
                emit(n.id, "feedback-handover", Json{{"to", rec->authority.str()}, {"txn", m.body.txn.hex()}});
                authority_feedback(it->second, m, path);
                return;
            }
        }
        reject(n, from, m, "misrouted");
    }

    void authority_feedback(NodeState& auth, const FeedbackMessage& m, FeedbackPath path) {
        const auto key = auth.directory.key_of(m.sender);
        const bool valid = key && security_->verify(m.body.encode(), m.sig, *key) &&
                           auth.directory.authority_of(m.body.subject) == auth.id;
        auto arrival = auth.tracker.receive(m, path, valid, now_);
        using K = FeedbackTracker::Arrival::Kind;
        switch (arrival.kind) {
            case K::Invalid:
                emit(auth.id, "feedback-copy-invalid",
                     Json{{"txn", m.body.txn.hex()}, {"claimed_scorer", m.sender.str()},
                          {"subject", m.body.subject.str()}, {"path", to_string(path)}});
                break;
            case K::Waiting: {
                emit(auth.id, "feedback-copy-received",
                     Json{{"txn", m.body.txn.hex()}, {"scorer", m.sender.str()}, {"path", to_string(path)}});
                const Tick at = *auth.tracker.next_deadline();
                const ServerId id = auth.id;
                schedule(std::max(at, now_), kTimer, [this, id] { expire_feedback(id); });
                break;
            }
            case K::Decided:
                apply_outcome(auth, *arrival.outcome);
                break;
            case K::Duplicate:
                emit(auth.id, "feedback-outcome",
                     Json{{"txn", m.body.txn.hex()}, {"scorer", m.sender.str()}, {"subject", m.body.subject.str()},
                          {"status", to_string(FeedbackStatus::DuplicateIgnored)}, {"path", to_string(path)}});
                break;
        }
    }

    void expire_feedback(const ServerId& id) {
        NodeState& auth = nodes_.at(id);
        for (const auto& o : auth.tracker.expire(now_)) apply_outcome(auth, o);
    }

    void apply_outcome(NodeState& auth, const FeedbackOutcome& o) {
        db_access(auth, "feedback");
        DbRecord* target = db_->find(o.subject);
        Json p{{"txn", o.txn.hex()},
               {"scorer", o.scorer.str()},
               {"subject", o.subject.str()},
               {"status", to_string(o.status)}};
        if (!target) {
            p["note"] = "subject no longer registered";
            emit(auth.id, "feedback-outcome", p);
            return;
        }
        Rational weight_basis = 0;
        if (const DbRecord* scorer = db_->find(o.scorer)) {
            auto it = scorer->pre_txn_reputation.find(o.txn);
            weight_basis = it != scorer->pre_txn_reputation.end() ? it->second : scorer->reputation();
        }
        target->pre_txn_reputation.try_emplace(o.txn, target->reputation());
        p["before"] = Json{{"T", target->ledger.transactions},
                           {"POS", to_exact(target->ledger.pos_accum)},
                           {"NEG", to_exact(target->ledger.neg_accum)},
                           {"GR", to_exact(target->reputation())}};
        if (o.applied) {
            target->ledger = apply_feedback(target->ledger, *o.applied, weight_basis, script_.weight_mode);
            p["score"] = o.applied->value();
        } else {
            target->ledger = count_discarded(target->ledger);
        }
        p["scorer_gr"] = to_exact(weight_basis);
        p["weight"] = to_exact(scorer_weight(weight_basis, script_.weight_mode));
        p["T"] = target->ledger.transactions;
        p["POS"] = to_exact(target->ledger.pos_accum);
        p["NEG"] = to_exact(target->ledger.neg_accum);
        p["GR"] = to_exact(target->reputation());
        emit(auth.id, "feedback-outcome", p);
        if (o.status == FeedbackStatus::GiverCheatingFlagged) {
            emit(auth.id, "scorer-cheating", Json{{"scorer", o.scorer.str()}, {"txn", o.txn.hex()}});
        } else if (o.status == FeedbackStatus::ReceiverDroppedRecovered) {
            emit(auth.id, "receiver-dropped", Json{{"receiver", o.subject.str()}, {"txn", o.txn.hex()}});
        }
    }

    // ------------------------------------------------ reputation queries

    void on_rep_query(NodeState& n, const ServerId& from, const RepQuery& q) {
        if (!n.is_authority) return reject(n, from, q, "not-authority");
        if (n.directory.authority_of(q.requester) != n.id) return reject(n, from, q, "requester-not-in-subtree");
        if (!n.authority_seen.check_and_record(q.requester, q.nonce)) return reject(n, from, q, "stale-or-replay");
        const auto subject_auth = n.directory.authority_of(q.subject);
        if (!subject_auth) return reject(n, from, q, "unknown-subject");
        RepRelay relay;
        relay.authority = n.id;
        relay.requester = q.requester;
        relay.subject = q.subject;
        relay.nonce = n.nonces->fresh();
        relay.sig = security_->sign(n.id, relay.signed_body(), n.keys.private_key);
        send(n.id, *subject_auth, relay);
    }

    void on_rep_relay(NodeState& n, const ServerId& from, const RepRelay& r) {
        if (!n.is_authority) return reject(n, from, r, "not-authority");
        if (n.directory.authority_of(r.subject) != n.id) return reject(n, from, r, "subject-not-in-subtree");
        if (n.directory.authority_of(r.requester) != r.authority) return reject(n, from, r, "relay-not-from-requester-authority");
        const auto key = n.directory.key_of(r.authority);
        if (!key || !security_->verify(r.signed_body(), r.sig, *key)) return reject(n, from, r, "bad-signature");
        if (!n.authority_seen.check_and_record(r.authority, r.nonce)) return reject(n, from, r, "stale-or-replay");
        if (!db_access(n, "reputation-query")) return;
        const DbRecord* rec = db_->find(r.subject);
        if (!rec) return reject(n, from, r, "unknown-subject");
        RepAttest a;
        a.authority = n.id;
        a.subject = r.subject;
        a.reputation = to_exact(rec->reputation());
        a.nonce = r.nonce;
        a.sig = security_->sign(n.id, a.signed_body(), n.keys.private_key);
        send(n.id, r.requester, a);
    }

    // ------------------------------------------------------ registration

    void join(const ServerId& node, const ServerId& authority) {
        NodeState& n = make_node(node);
        if (n.registered) {
            emit(node, "registration-skipped", Json{{"reason", "already registered"}});
            return;
        }
        if (const auto* spec = script_.find(node)) n.policy = spec->policy;
        // Re-registration starts from a clean slate.
        n.sessions.clear();
        n.giver = FeedbackGiver(node);
        n.tracker = FeedbackTracker(script_.feedback_timeout);
        n.is_authority = false;
        n.leaving = false;
        n.subtree.reset();
        n.db_key.reset();
        n.directory = {};
        RegIntro intro;
        intro.node = node;
        intro.public_key = n.keys.public_key;
        intro.nonce = n.nonces->fresh();
        intro.sig = security_->sign(node, intro.signed_body(), n.keys.private_key);
        n.pending_registration = std::pair{authority, intro.nonce};
        emit(node, "registration-started", Json{{"authority", authority.str()}});
        send(node, authority, intro);
    }

    void on_reg_intro(NodeState& auth, const RegIntro& intro) {
        auto rejected = [&](const std::string& reason) {
            emit(auth.id, "registration-rejected", Json{{"node", intro.node.str()}, {"reason", reason}});
        };
        if (!auth.is_authority) return rejected("not-authority");
        if (!security_->verify(intro.signed_body(), intro.sig, intro.public_key)) return rejected("bad-signature");
        if (auth.directory.contains(intro.node) || db_->find(intro.node)) return rejected("duplicate");
        if (!auth.authority_seen.check_and_record(intro.node, intro.nonce)) return rejected("stale-or-replay");
        if (!db_access(auth, "registration")) return rejected("db-unavailable");

        db_->records()[intro.node] = DbRecord{intro.node, new_ledger(intro.node), auth.id, {}};
        db_->register_key(intro.node, intro.public_key);
        auth.directory.add(intro.node, auth.id, intro.public_key);
        emit(auth.id, "registration-accepted", Json{{"node", intro.node.str()}});
        emit(auth.id, "ledger-created", Json{{"node", intro.node.str()}, {"T", 0}, {"POS", "0"}, {"NEG", "0"}});

        RegAck ack;
        ack.authority = auth.id;
        ack.box = security_->seal_to(intro.nonce.plus_one().encode(), intro.public_key);
        send(auth.id, intro.node, ack);

        RegFlood flood;
        flood.authority = auth.id;
        flood.intro = encode(ProtocolMessage{intro});
        flood.sig = security_->sign(auth.id, flood.signed_body(), auth.keys.private_key);
        for (const auto& other : authorities()) {
            if (other != auth.id) send(auth.id, other, flood);
        }
    }

    void on_reg_ack(NodeState& n, const RegAck& ack) {
        if (!n.pending_registration || n.pending_registration->first != ack.authority) {
            emit(n.id, "registration-aborted", Json{{"reason", "unexpected ack"}});
            return;
        }
        std::optional<Nonce> got;
        try {
            got = Nonce::decode(security_->open_sealed(n.id, ack.box, n.keys.private_key));
        } catch (const UnsealError&) {
        } catch (const DecodeError&) {
        }
        const Nonce expected = n.pending_registration->second.plus_one();
        if (!got || *got != expected) {
            n.pending_registration.reset();
            emit(n.id, "registration-aborted", Json{{"reason", "bad acknowledgement nonce"}});
            return;
        }
        n.pending_registration.reset();
        n.registered = true;
        n.authority_of_record = ack.authority;
        emit(n.id, "registration-complete", Json{{"authority", ack.authority.str()}});
    }

    void on_reg_flood(NodeState& n, const RegFlood& flood) {
        if (!n.is_authority) return reject(n, flood.authority, flood, "not-authority");
        const auto key = n.directory.key_of(flood.authority);
        if (!key || !security_->verify(flood.signed_body(), flood.sig, *key)) {
            return reject(n, flood.authority, flood, "bad-signature");
        }
        RegIntro intro;
        try {
            intro = std::get<RegIntro>(decode(flood.intro));
        } catch (const std::exception&) {
            return reject(n, flood.authority, flood, "malformed");
        }
        if (!security_->verify(intro.signed_body(), intro.sig, intro.public_key)) {
            return reject(n, flood.authority, flood, "bad-intro-signature");
        }
        n.directory.add(intro.node, flood.authority, intro.public_key);
        emit(n.id, "directory-updated", Json{{"node", intro.node.str()}, {"authority", flood.authority.str()}, {"op", "add"}});
    }

    // -------------------------------------------------------- revocation

    void revoke_server(const ServerId& node) {
        auto it = nodes_.find(node);
        if (it == nodes_.end() || !it->second.registered) {
            emit(node, "revocation-unknown", Json{{"warning", "revoking an unknown server is a no-op"}});
            return;
        }
        NodeState& n = it->second;
        emit(node, "revocation-started", Json{{"authority", n.is_authority ? n.id.str() : n.authority_of_record.str()}});
        if (n.is_authority) {
            std::map<ServerId, Rational> subtree;
            for (const auto& m : db_->members(n.id)) subtree[m] = db_->records().at(m).reputation();
            const auto decision = elect_authority(subtree, n.id, script_.authority_factor);
            if (decision.contender) {
                n.leaving = true;
                emit(n.id, "election",
                     Json{{"subtree", *n.subtree}, {"authority", n.id.str()}, {"contender", decision.contender->str()},
                          {"decision", "CHANGE"}, {"forced", true}});
                start_rotation(n, *decision.contender);
                return;
            }
            // No one left to take over: the subtree is retired.
            db_->retire_subtree(*n.subtree);
            emit(n.id, "subtree-retired", Json{{"subtree", *n.subtree}});
            n.is_authority = false;
            n.authority_of_record = n.id;
        }
        revoke_leaf(n);
    }

    void revoke_leaf(NodeState& n) {
        const ServerId auth_id = n.authority_of_record;
        std::uint64_t residual = 0;
        for (auto& sh : shares_) {
            if (sh.holder == n.id && sh.owner != n.id) {
                if (sh.live) {
                    sh.live = false;
                    emit(n.id, "share-returned", Json{{"owner", sh.owner.str()}, {"size", sh.size}, {"txn", sh.txn.hex()}});
                } else {
                    residual += sh.size;
                }
            }
            if (sh.owner == n.id && sh.live) {
                sh.live = false;
                auto hit = nodes_.find(sh.holder);
                if (hit != nodes_.end()) hit->second.used_capacity -= std::min(hit->second.used_capacity, sh.size);
            }
        }
        emit(n.id, "residual-transferred", Json{{"to", auth_id.str()}, {"bytes", residual}});
        n.used_capacity = 0;
        n.sessions.clear();
        n.registered = false;

        auto ait = nodes_.find(auth_id);
        if (ait != nodes_.end() && ait->second.is_authority && ait->second.id != n.id) db_access(ait->second, "revocation");
        if (DbRecord* rec = db_->find(n.id)) {
            rec->ledger = new_ledger(n.id);
            emit(auth_id, "ledger-reset", Json{{"node", n.id.str()}});
        }
        db_->records().erase(n.id);
        db_->forget_key(n.id);

        NodeState* signer = (ait != nodes_.end() && ait->second.is_authority) ? &ait->second : nullptr;
        if (signer) signer->directory.remove(n.id);
        emit(auth_id, "node-revoked", Json{{"node", n.id.str()}});

        RevocationNotice notice;
        notice.authority = signer ? signer->id : n.id;
        notice.node = n.id;
        notice.nonce = signer ? signer->nonces->fresh() : n.nonces->fresh();
        const NodeState& key_holder = signer ? *signer : n;
        notice.sig = security_->sign(key_holder.id, notice.signed_body(), key_holder.keys.private_key);
        for (const auto& other : authorities()) {
            if (other != notice.authority) send(notice.authority, other, notice);
        }
    }

    void on_revocation_notice(NodeState& n, const RevocationNotice& notice) {
        if (!n.is_authority) return reject(n, notice.authority, notice, "not-authority");
        auto key = n.directory.key_of(notice.authority);
        if (!key) key = db_->directory().key_of(notice.authority);
        if (!key || !security_->verify(notice.signed_body(), notice.sig, *key)) {
            return reject(n, notice.authority, notice, "bad-signature");
        }
        n.seen.check_and_record(notice.authority, notice.nonce);
        n.directory.remove(notice.node);
        emit(n.id, "directory-updated", Json{{"node", notice.node.str()}, {"op", "remove"}});
    }

    // -------------------------------------------------- authority change

    void run_elections() {
        std::vector<std::pair<ServerId, std::uint64_t>> order;
        for (auto sid : db_->subtree_ids()) {
            if (auto a = db_->authority_of_subtree(sid)) order.emplace_back(*a, sid);
        }
        std::sort(order.begin(), order.end());
        for (const auto& [authority, sid] : order) {
            NodeState& cur = nodes_.at(authority);
            if (db_->rotation_pending(sid) || cur.leaving || !cur.is_authority) continue;
            if (!db_access(cur, "election")) continue;
            std::map<ServerId, Rational> subtree;
            for (const auto& m : db_->members(authority)) subtree[m] = db_->records().at(m).reputation();
            const auto d = elect_authority(subtree, authority, script_.authority_factor);
            Json p{{"subtree", sid}, {"authority", authority.str()}, {"authority_gr", to_exact(subtree[authority])},
                   {"decision", d.change ? "CHANGE" : "KEEP"}, {"factor", to_exact(script_.authority_factor)}};
            if (d.contender) {
                p["contender"] = d.contender->str();
                p["contender_gr"] = to_exact(subtree[*d.contender]);
            }
            emit(authority, "election", p);
            if (d.change) start_rotation(cur, *d.to);
        }
        schedule(now_ + script_.election_period, kElection, [this] { run_elections(); });
    }

    void start_rotation(NodeState& old, const ServerId& successor) {
        RotateRequest::Inner inner{successor, old.id, old.nonces->fresh()};
        RotateRequest req;
        req.sender = old.id;
        req.subtree = *old.subtree;
        req.box = security_->seal(inner.encode(), *old.db_key);
        emit(old.id, "rotation-request", Json{{"subtree", req.subtree}, {"new", successor.str()}});
        send(old.id, DbServer::id(), req);
    }

    void db_receive(const ServerId& from, const ProtocolMessage& msg) {
        const ServerId db = DbServer::id();
        if (const auto* req = std::get_if<RotateRequest>(&msg)) {
            auto result = db_->handle_rotate_request(*req);
            if (!result.grant) {
                emit(db, "rotation-rejected", Json{{"sender", from.str()}, {"subtree", req->subtree}, {"reason", result.error}});
                return;
            }
            emit(db, "rotation-grant", Json{{"subtree", req->subtree}, {"new", result.new_authority->str()}});
            send(db, *result.new_authority, *result.grant);
        } else if (const auto* conf = std::get_if<RotateConfirm>(&msg)) {
            auto result = db_->handle_rotate_confirm(*conf);
            if (!result.committed) {
                emit(db, "rotation-rolled-back", Json{{"subtree", conf->subtree}, {"reason", result.error}});
                emit(db, "rotation-alarm", Json{{"subtree", conf->subtree}, {"sender", from.str()}, {"reason", result.error}});
                if (auto old = nodes_.find(result.old_authority); old != nodes_.end() && old->second.leaving) {
                    emit(db, "rotation-unresolved", Json{{"subtree", conf->subtree}});
                }
                return;
            }
            Json members = Json::array();
            for (const auto& m : db_->members(result.new_authority)) members.push_back(m.str());
            emit(db, "rotation-committed",
                 Json{{"subtree", conf->subtree}, {"old", result.old_authority.str()}, {"new", result.new_authority.str()},
                      {"members", members}});
            // New authority first so it is ready before the old one hands
            // over its pending state.
            std::vector<ServerId> recipients{result.new_authority};
            for (const auto& m : db_->members(result.new_authority)) {
                if (m != result.new_authority) recipients.push_back(m);
            }
            for (const auto& a : authorities()) {
                if (std::find(recipients.begin(), recipients.end(), a) == recipients.end()) recipients.push_back(a);
            }
            for (const auto& r : recipients) send(db, r, *result.notice);
        } else {
            emit(db, "message-rejected", Json{{"from", from.str()}, {"type", type_name(type_of(msg))}, {"reason", "unexpected-at-db"}});
        }
    }

    void on_rotate_grant(NodeState& n, const RotateGrant& g) {
        auto fail = [&](const std::string& reason) {
            emit(n.id, "rotation-grant-invalid", Json{{"reason", reason}});
        };
        RotateGrant::Inner inner;
        try {
            inner = RotateGrant::Inner::decode(security_->open_sealed(n.id, g.key_box, n.keys.private_key));
        } catch (const std::exception&) {
            return fail("cannot open key box");
        }
        const auto& db_key = db_->keys().public_key;
        if (inner.new_authority != n.id || !security_->verify(inner.signed_body(), inner.sig, db_key)) {
            return fail("bad database signature");
        }
        if (!security_->verify(g.notice.signed_body(), g.notice.sig, db_key) || g.notice.nonce != inner.nonce) {
            return fail("bad notice");
        }
        const SymmetricKey key = SymmetricKey::decode(inner.key_blob);
        n.incoming_key = std::pair{g.subtree, key};
        RotateConfirm conf;
        conf.sender = n.id;
        conf.subtree = g.subtree;
        conf.box = security_->seal(inner.nonce.plus_one().encode(), key);
        emit(n.id, "rotation-confirm", Json{{"subtree", g.subtree}});
        send(n.id, DbServer::id(), conf);
    }

    void on_authority_notice(NodeState& n, const AuthorityNotice& notice) {
        if (!security_->verify(notice.signed_body(), notice.sig, db_->keys().public_key)) {
            emit(n.id, "authority-notice-ignored",
                 Json{{"reason", "bad database signature"}, {"claimed_new", notice.new_authority.str()},
                      {"claimed_old", notice.old_authority.str()}});
            return;
        }
        n.seen.check_and_record(notice.db, notice.nonce);
        const Json p{{"old", notice.old_authority.str()}, {"new", notice.new_authority.str()}};

        if (n.id == notice.new_authority) {
            if (!n.incoming_key) {
                emit(n.id, "authority-notice-ignored", Json{{"reason", "no key received"}});
                return;
            }
            n.is_authority = true;
            n.subtree = n.incoming_key->first;
            n.db_key = n.incoming_key->second;
            n.incoming_key.reset();
            n.authority_of_record = n.id;
            if (db_access(n, "assume-authority")) n.directory = db_->directory();
            emit(n.id, "authority-assumed", p);
            return;
        }
        if (n.id == notice.old_authority) {
            emit(n.id, "authority-notice-accepted", p);
            // Whatever the old authority still holds can no longer be
            // written back; the database refuses the old key.
            db_access(n, "post-rotation-flush");
            auto pending = n.tracker.drain_pending();
            auto nit = nodes_.find(notice.new_authority);
            for (auto& [copy, path] : pending) {
                if (nit == nodes_.end()) break;
                emit(n.id, "feedback-handover", Json{{"to", notice.new_authority.str()}, {"txn", copy.body.txn.hex()}});
                authority_feedback(nit->second, copy, path);
            }
            n.is_authority = false;
            n.directory = {};
            n.authority_of_record = notice.new_authority;
            if (n.leaving) {
                n.leaving = false;
                revoke_leaf(n);
            }
            return;
        }
        if (n.is_authority) {
            n.directory.reassign(notice.old_authority, notice.new_authority);
            emit(n.id, "directory-updated", Json{{"old", notice.old_authority.str()}, {"new", notice.new_authority.str()}, {"op", "reassign"}});
            return;
        }
        if (n.authority_of_record == notice.old_authority) {
            n.authority_of_record = notice.new_authority;
            emit(n.id, "authority-notice-accepted", p);
            return;
        }
        emit(n.id, "authority-notice-ignored", Json{{"reason", "not my authority"}});
    }

    // --------------------------------------------------------- adversary

    void fire_adversary(const AdversaryAction& a) {
        NodeState& adv = nodes_.at(script_.adversary);
        emit(adv.id, "adversary-action", Json{{"kind", to_string(a.kind)}});
        switch (a.kind) {
            case AdversaryKind::Impersonate: {
                const std::uint64_t sid = next_session_++;
                ContractSession s = initiator_session(a.victim, now_ + script_.session_timeout);
                adv.sessions.emplace(sid, std::move(s));
                impersonations_.push_back(Impersonation{a.victim, a.target, sid});
                emit(adv.id, "session-opened", Json{{"peer", a.target.str()}, {"role", "initiator"}, {"as", a.victim.str()}, {"session", sid}});
                advance(adv, sid, StartCommand{a.target, a.params});
                break;
            }
            case AdversaryKind::MitmTamper:
                tamper_rules_.push_back(TamperRule{a, a.count});
                break;
            case AdversaryKind::Replay:
                if (a.substitute) {
                    tamper_rules_.push_back(TamperRule{a, a.count});
                } else if (const Capture* c = find_capture(a)) {
                    emit(adv.id, "adversary-replay",
                         Json{{"from", c->from.str()}, {"to", c->to.str()}, {"type", type_name(c->type)},
                              {"mode", "inject"}, {"captured_tick", c->tick}});
                    send_bytes(c->from, c->to, c->bytes, true);
                } else {
                    emit(adv.id, "adversary-replay-missed", Json{{"type", a.message ? type_name(*a.message) : "?"}});
                }
                break;
            case AdversaryKind::FakeAuthorityMsg: {
                AuthorityNotice fake;
                fake.db = DbServer::id();
                fake.new_authority = adv.id;
                fake.old_authority = a.victim;
                fake.nonce = adv.nonces->fresh();
                fake.sig = forge(adv, fake.signed_body(), db_->keys().private_key, DbServer::id());
                for (const auto& m : db_->members(a.victim)) {
                    if (m != a.victim) send_bytes(DbServer::id(), m, encode(ProtocolMessage{fake}), true);
                }
                break;
            }
            case AdversaryKind::ForgeFeedback: {
                std::optional<TransactionId> txn;
                for (const auto& c : captures_) {
                    // Offers and counters travel in the clear, so the
                    // transaction id can be read off the wire.
                    if (c.type == MsgType::Counter && ((c.from == a.target && c.to == a.victim) || (c.from == a.victim && c.to == a.target))) {
                        const auto counter = std::get<Counter>(decode(c.bytes));
                        for (const auto& o : captures_) {
                            if (o.type != MsgType::Offer || o.tick > c.tick) continue;
                            const auto offer = std::get<Offer>(decode(o.bytes));
                            if (offer.initiator == counter.initiator && offer.responder == counter.responder) {
                                txn = TransactionId{offer.nonce, counter.nonce};
                            }
                        }
                    }
                }
                if (!txn) {
                    emit(adv.id, "adversary-forge-missed", Json{{"reason", "no observed transaction"}});
                    break;
                }
                FeedbackMessage f;
                f.sender = a.victim;
                f.body = FeedbackBody{*txn, a.target, a.value < 0 ? -1 : 1, a.victim};
                f.sig = forge(adv, f.body.encode(), nodes_.at(a.victim).keys.private_key, a.victim);
                const auto target_auth = db_->directory().authority_of(a.target);
                if (target_auth) send_bytes(a.victim, *target_auth, encode(ProtocolMessage{f}), true);
                send_bytes(a.victim, a.target, encode(ProtocolMessage{f}), true);
                break;
            }
            case AdversaryKind::RogueRotation: {
                const auto sid = db_->subtree_of(a.victim);
                if (!sid) {
                    emit(adv.id, "adversary-forge-missed", Json{{"reason", "victim is not an authority"}});
                    break;
                }
                RotateRequest::Inner inner{adv.id, a.victim, adv.nonces->fresh()};
                RotateRequest req;
                req.sender = a.victim;
                req.subtree = *sid;
                // Without K_DBA the best guess is a key of its own.
                req.box = security_->seal(inner.encode(), security_->symmetric_key(script_.seed ^ 0xbadULL));
                send_bytes(adv.id, DbServer::id(), encode(ProtocolMessage{req}), true);
                break;
            }
        }
    }

    /// Tries the victim's key first (refused by the model), then signs with
    /// the adversary's own key.
    Signature forge(NodeState& adv, const Bytes& body, PrivateKeyHandle victim_key, const ServerId& victim) {
        try {
            return security_->sign(adv.id, body, victim_key);
        } catch (const KeyNotHeld& e) {
            emit(adv.id, "adversary-sign-rejected", Json{{"as", victim.str()}, {"detail", e.what()}});
        }
        return security_->sign(adv.id, body, adv.keys.private_key);
    }

    ScenarioScript script_;
    std::unique_ptr<SecurityProvider> security_;
    std::unique_ptr<DbServer> db_;
    std::map<ServerId, NodeState> nodes_;
    AuthorityDirectory public_view_;
    EventLog log_;
    std::priority_queue<Item, std::vector<Item>, Later> queue_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_session_ = 1;
    Tick now_ = 0;
    std::vector<Share> shares_;
    std::vector<TamperRule> tamper_rules_;
    std::vector<Capture> captures_;
    std::vector<Impersonation> impersonations_;
};

}  // namespace servnet
