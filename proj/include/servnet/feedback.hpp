// Two-path feedback. The giver signs one body and sends it both through the
// scored party and directly to the scored party's authority; the authority
// compares the copies to catch a cheating giver or a dropping receiver.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "servnet/contract.hpp"
#include "servnet/messages.hpp"
#include "servnet/reputation.hpp"
#include "servnet/security.hpp"

namespace servnet {

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FeedbackStatus { Accepted, GiverCheatingFlagged, ReceiverDroppedRecovered, DuplicateIgnored };

inline const char* to_string(FeedbackStatus s) {
    switch (s) {
        case FeedbackStatus::Accepted: return "ACCEPTED";
        case FeedbackStatus::GiverCheatingFlagged: return "GIVER_CHEATING_FLAGGED";
        case FeedbackStatus::ReceiverDroppedRecovered: return "RECEIVER_DROPPED_RECOVERED";
        case FeedbackStatus::DuplicateIgnored: return "DUPLICATE_IGNORED";
    }
    return "?";
}

enum class FeedbackPath { Direct, ViaTarget };

inline const char* to_string(FeedbackPath p) { return p == FeedbackPath::Direct ? "direct" : "via-target"; }

struct FeedbackOutcome {
    FeedbackStatus status = FeedbackStatus::Accepted;
    TransactionId txn;
    ServerId scorer;
    ServerId subject;
    std::optional<LocalScore> applied;  // empty when the score is discarded
};

struct FeedbackDelivery {
    FeedbackMessage message;
    Outgoing via_target;  // scorer -> counterpart (who forwards to its authority)
    Outgoing direct;      // scorer -> counterpart's authority
};

inline FeedbackMessage sign_feedback(SecurityProvider& security, const ServerId& caller, PrivateKeyHandle key,
                                     FeedbackBody body) {
    FeedbackMessage m;
    m.sender = body.sender;
    m.body = std::move(body);
    m.sig = security.sign(caller, m.body.encode(), key);
    return m;
}

/// Tracks which bound transactions a node still owes feedback for.
class FeedbackGiver {
public:
    explicit FeedbackGiver(ServerId self) : self_(std::move(self)) {}

    void contract_bound(const TransactionId& txn, const ServerId& counterpart) { owed_.emplace(txn, counterpart); }

    bool owes(const TransactionId& txn) const { return owed_.contains(txn) && !given_.contains(txn); }

    /// Throws ProtocolError for an unknown txn or a second feedback.
    FeedbackDelivery make_feedback(SecurityProvider& security, PrivateKeyHandle key, const TransactionId& txn,
                                   LocalScore score, const ServerId& counterpart_authority) {
        auto it = owed_.find(txn);
        if (it == owed_.end()) throw ProtocolError("feedback for unknown or unbound transaction " + txn.hex());
        if (given_.contains(txn)) throw ProtocolError("feedback already given for " + txn.hex());
        given_.insert(txn);
        FeedbackMessage m = sign_feedback(security, self_, key, FeedbackBody{txn, it->second, score.value(), self_});
        return FeedbackDelivery{m, Outgoing{it->second, m}, Outgoing{counterpart_authority, m}};
    }

    /// Marks the txn as given without producing a message (used by
    /// scorers that split their copies).
    void mark_given(const TransactionId& txn) { given_.insert(txn); }

    std::optional<ServerId> counterpart(const TransactionId& txn) const {
        auto it = owed_.find(txn);
        if (it == owed_.end()) return std::nullopt;
        return it->second;
    }

private:
    ServerId self_;
    std::map<TransactionId, ServerId> owed_;
    std::set<TransactionId> given_;
};

/// Decides a (txn, scorer) pair from the copies that have arrived. Returns
/// nothing while the authority should keep waiting.
inline std::optional<FeedbackStatus> decide_feedback(const std::optional<FeedbackMessage>& direct,
                                                     const std::optional<FeedbackMessage>& forwarded, bool timed_out) {
    if (direct && forwarded) {
        return encode(ProtocolMessage{*direct}) == encode(ProtocolMessage{*forwarded})
                   ? FeedbackStatus::Accepted
                   : FeedbackStatus::GiverCheatingFlagged;
    }
    if (!timed_out) return std::nullopt;
    if (direct) return FeedbackStatus::ReceiverDroppedRecovered;
    if (forwarded) return FeedbackStatus::Accepted;
    return std::nullopt;
}

/// Authority-side bookkeeping for incoming feedback copies.
class FeedbackTracker {
public:
    explicit FeedbackTracker(Tick timeout = 10) : timeout_(timeout) {}

    struct Arrival {
        enum class Kind { Invalid, Waiting, Decided, Duplicate } kind = Kind::Waiting;
        std::optional<FeedbackOutcome> outcome;
        std::string detail;
    };

    /// `valid` says whether the copy's signature checked out against the
    /// scorer's registered key; invalid copies never count as arrivals.
    Arrival receive(const FeedbackMessage& copy, FeedbackPath path, bool valid, Tick now) {
        if (!valid || copy.sender != copy.body.sender || (copy.body.score != 1 && copy.body.score != -1)) {
            return Arrival{Arrival::Kind::Invalid, std::nullopt, "signature or sender check failed"};
        }
        const Key key{copy.body.txn, copy.sender};
        if (decided_.contains(key)) {
            return Arrival{Arrival::Kind::Duplicate, duplicate(copy), "already decided"};
        }
        auto& p = pending_[key];
        auto& slot = path == FeedbackPath::Direct ? p.direct : p.forwarded;
        if (slot) {
            return Arrival{Arrival::Kind::Duplicate, duplicate(copy), "repeated copy on same path"};
        }
        slot = copy;
        if (!p.deadline) p.deadline = now + timeout_;
        if (auto status = decide_feedback(p.direct, p.forwarded, false)) {
            auto outcome = finish(key, *status);
            return Arrival{Arrival::Kind::Decided, outcome, {}};
        }
        return Arrival{Arrival::Kind::Waiting, std::nullopt, {}};
    }

    /// Resolves every pending pair whose deadline has passed, in key order.
    std::vector<FeedbackOutcome> expire(Tick now) {
        std::vector<Key> due;
        for (const auto& [key, p] : pending_) {
            if (p.deadline && *p.deadline <= now) due.push_back(key);
        }
        std::vector<FeedbackOutcome> out;
        for (const auto& key : due) {
            const auto& p = pending_.at(key);
            if (auto status = decide_feedback(p.direct, p.forwarded, true)) out.push_back(finish(key, *status));
        }
        return out;
    }

    std::optional<Tick> next_deadline() const {
        std::optional<Tick> best;
        for (const auto& [key, p] : pending_) {
            if (p.deadline && (!best || *p.deadline < *best)) best = p.deadline;
        }
        return best;
    }

    /// Hands over undecided copies (used when an authority is replaced).
    std::vector<std::pair<FeedbackMessage, FeedbackPath>> drain_pending() {
        std::vector<std::pair<FeedbackMessage, FeedbackPath>> out;
        for (auto& [key, p] : pending_) {
            if (p.direct) out.emplace_back(*p.direct, FeedbackPath::Direct);
            if (p.forwarded) out.emplace_back(*p.forwarded, FeedbackPath::ViaTarget);
        }
        pending_.clear();
        return out;
    }

    bool has_pending() const { return !pending_.empty(); }

private:
    using Key = std::pair<TransactionId, ServerId>;

    struct Pending {
        std::optional<FeedbackMessage> direct;
        std::optional<FeedbackMessage> forwarded;
        std::optional<Tick> deadline;
    };

    FeedbackOutcome finish(const Key& key, FeedbackStatus status) {
        const Pending p = pending_.at(key);
        pending_.erase(key);
        decided_.insert(key);
        const FeedbackMessage& basis = p.direct ? *p.direct : *p.forwarded;
        FeedbackOutcome o{status, key.first, key.second, basis.body.subject, std::nullopt};
        if (status != FeedbackStatus::GiverCheatingFlagged) o.applied = LocalScore(basis.body.score);
        return o;
    }

    static FeedbackOutcome duplicate(const FeedbackMessage& copy) {
        return FeedbackOutcome{FeedbackStatus::DuplicateIgnored, copy.body.txn, copy.sender, copy.body.subject,
                               std::nullopt};
    }

    Tick timeout_;
    std::map<Key, Pending> pending_;
    std::set<Key> decided_;
};

}  // namespace servnet
