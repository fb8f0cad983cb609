// Contract establishment: one ContractSession per side of a trade
// negotiation. contract_advance drives messages 1-9 (plus the command that
// emits message 10); verify_transcript handles the signed transcript hashes
// of messages 10 and 11.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "servnet/messages.hpp"
#include "servnet/reputation.hpp"
#include "servnet/security.hpp"

namespace servnet {

struct TradeParams {
    std::uint64_t share_size = 1;
    std::uint64_t duration = 1;

    bool valid() const { return share_size > 0 && duration > 0; }
    friend bool operator==(const TradeParams&, const TradeParams&) = default;
};

enum class Role { Initiator, Responder };

enum class SessionState { Idle, Sent1, AwaitRep, Sent5, Sent9, AwaitHash, Done, Aborted };

enum class AbortReason {
    None,
    ProtocolViolation,
    BadAuthorityAttestation,
    StaleOrReplay,
    Timeout,
    TranscriptMismatch,
    ForgedBinding,
    RejectedByPeer,
    RejectedLocally,
};

inline const char* to_string(SessionState s) {
    switch (s) {
        case SessionState::Idle: return "IDLE";
        case SessionState::Sent1: return "SENT_1";
        case SessionState::AwaitRep: return "AWAIT_REP";
        case SessionState::Sent5: return "SENT_5";
        case SessionState::Sent9: return "SENT_9";
        case SessionState::AwaitHash: return "AWAIT_HASH";
        case SessionState::Done: return "DONE";
        case SessionState::Aborted: return "ABORTED";
    }
    return "?";
}

inline const char* to_string(AbortReason r) {
    switch (r) {
        case AbortReason::None: return "none";
        case AbortReason::ProtocolViolation: return "protocol-violation";
        case AbortReason::BadAuthorityAttestation: return "bad-authority-attestation";
        case AbortReason::StaleOrReplay: return "stale-or-replay";
        case AbortReason::Timeout: return "timeout";
        case AbortReason::TranscriptMismatch: return "transcript-mismatch";
        case AbortReason::ForgedBinding: return "forged-binding";
        case AbortReason::RejectedByPeer: return "rejected-by-peer";
        case AbortReason::RejectedLocally: return "rejected-locally";
    }
    return "?";
}

inline bool is_rejection(AbortReason r) {
    return r == AbortReason::RejectedByPeer || r == AbortReason::RejectedLocally;
}

struct Outgoing {
    ServerId to;
    ProtocolMessage msg;
};

struct ContractSession {
    Role role = Role::Initiator;
    SessionState state = SessionState::Idle;
    AbortReason reason = AbortReason::None;
    ServerId self;
    ServerId peer;
    TradeParams own_params;
    TradeParams peer_params;
    Nonce own_nonce;
    std::optional<Nonce> peer_nonce;
    std::optional<Nonce> query_nonce;
    std::optional<Rational> peer_reputation;
    std::vector<Bytes> transcript;  // encodings of messages 1, 5, 9, 10 as seen here
    Tick deadline = 0;

    bool terminal() const { return state == SessionState::Done || state == SessionState::Aborted; }
    bool bound() const { return state == SessionState::Done; }

    /// Set once both nonces are known.
    std::optional<TransactionId> txn_id() const {
        if (!peer_nonce) return std::nullopt;
        return role == Role::Initiator ? TransactionId{own_nonce, *peer_nonce} : TransactionId{*peer_nonce, own_nonce};
    }
};

/// Everything a node needs to advance a session. `caller` is the identity
/// that performs signing; it differs from `self` only for an impersonator.
struct SessionContext {
    SecurityProvider& security;
    ServerId caller;
    PrivateKeyHandle signing_key;
    NonceSource& nonces;
    NonceCache& seen;
    std::function<std::optional<PublicKeyId>(const ServerId&)> public_key_of;
    std::function<std::optional<ServerId>(const ServerId&)> authority_of;
    std::function<bool(const Rational& peer_reputation, const TradeParams& peer_params)> accept;
    bool check_transcript = true;
};

struct StartCommand {
    ServerId peer;
    TradeParams params;
};

/// Asks an initiator in SENT_9 to emit message 10.
struct BindCommand {};

using ContractInput = std::variant<StartCommand, BindCommand, ProtocolMessage>;

/// Canonical bytes hashed for messages 10 and 11.
inline Bytes canonical_transcript(const std::vector<Bytes>& parts) {
    FieldWriter w(0x7f);
    for (const auto& p : parts) w.bytes(p);
    return std::move(w).finish();
}

inline Hash transcript_digest(const std::vector<Bytes>& parts) {
    return digest(canonical_transcript(parts));
}

namespace detail {

inline std::vector<Outgoing> abort_session(ContractSession& s, AbortReason reason) {
    s.state = SessionState::Aborted;
    s.reason = reason;
    return {};
}

inline bool attestation_ok(const ContractSession& s, const RepAttest& m, const SessionContext& ctx) {
    if (m.subject != s.peer) return false;
    const auto expected = ctx.authority_of(s.peer);
    if (!expected || *expected != m.authority) return false;
    const auto key = ctx.public_key_of(m.authority);
    if (!key) return false;
    return ctx.security.verify(m.signed_body(), m.sig, *key);
}

inline std::vector<Outgoing> handle_attestation(ContractSession& s, const RepAttest& m, SessionContext& ctx) {
    if (!attestation_ok(s, m, ctx)) return abort_session(s, AbortReason::BadAuthorityAttestation);
    if (!ctx.seen.check_and_record(m.authority, m.nonce)) return abort_session(s, AbortReason::StaleOrReplay);
    Rational gr;
    try {
        gr = parse_rational(m.reputation);
    } catch (const std::invalid_argument&) {
        return abort_session(s, AbortReason::BadAuthorityAttestation);
    }
    if (gr < 0) return abort_session(s, AbortReason::BadAuthorityAttestation);
    s.peer_reputation = gr;
    const bool ok = ctx.accept(gr, s.peer_params);
    const Nonce ack = s.peer_nonce->plus_one();

    if (s.role == Role::Responder) {
        if (!ok) {
            ProtocolMessage reject = Reject{s.self, ack};
            s.transcript.push_back(encode(reject));
            s.state = SessionState::Aborted;
            s.reason = AbortReason::RejectedLocally;
            return {Outgoing{s.peer, std::move(reject)}};
        }
        ProtocolMessage counter = Counter{s.self, s.own_params.share_size, s.own_params.duration, s.peer, s.own_nonce};
        s.transcript.push_back(encode(counter));
        s.state = SessionState::Sent5;
        return {Outgoing{s.peer, std::move(counter)}};
    }

    if (!ok) {
        ProtocolMessage reject = Reject{s.self, ack};
        s.transcript.push_back(encode(reject));
        s.state = SessionState::Aborted;
        s.reason = AbortReason::RejectedLocally;
        return {Outgoing{s.peer, std::move(reject)}};
    }
    ProtocolMessage ackmsg = Ack{s.self, ack};
    s.transcript.push_back(encode(ackmsg));
    s.state = SessionState::Sent9;
    return {Outgoing{s.peer, std::move(ackmsg)}};
}

inline std::vector<Outgoing> query_authority(ContractSession& s, SessionContext& ctx, const Nonce& nonce) {
    const auto own_authority = ctx.authority_of(s.self);
    if (!own_authority) return abort_session(s, AbortReason::ProtocolViolation);
    s.query_nonce = nonce;
    s.state = SessionState::AwaitRep;
    return {Outgoing{*own_authority, RepQuery{s.self, s.peer, nonce}}};
}

}  // namespace detail

/// Opens a responder session from an incoming message 1.
inline ContractSession responder_session(const ServerId& self, Tick deadline) {
    ContractSession s;
    s.role = Role::Responder;
    s.self = self;
    s.deadline = deadline;
    return s;
}

inline ContractSession initiator_session(const ServerId& self, Tick deadline) {
    ContractSession s;
    s.role = Role::Initiator;
    s.self = self;
    s.deadline = deadline;
    return s;
}

/// Messages 1-9. Any input that is not legal for the current state aborts
/// the session with protocol-violation.
inline std::vector<Outgoing> contract_advance(ContractSession& s, const ContractInput& input, SessionContext& ctx) {
    using detail::abort_session;
    if (s.terminal()) return abort_session(s, s.reason == AbortReason::None ? AbortReason::ProtocolViolation : s.reason);

    if (const auto* start = std::get_if<StartCommand>(&input)) {
        if (s.role != Role::Initiator || s.state != SessionState::Idle || !start->params.valid()) {
            return abort_session(s, AbortReason::ProtocolViolation);
        }
        s.peer = start->peer;
        s.own_params = start->params;
        s.own_nonce = ctx.nonces.fresh();
        ProtocolMessage offer = Offer{s.self, s.own_params.share_size, s.own_params.duration, s.peer, s.own_nonce};
        s.transcript.push_back(encode(offer));
        s.state = SessionState::Sent1;
        return {Outgoing{s.peer, std::move(offer)}};
    }

    if (std::holds_alternative<BindCommand>(input)) {
        if (s.role != Role::Initiator || s.state != SessionState::Sent9) {
            return abort_session(s, AbortReason::ProtocolViolation);
        }
        Binding b;
        b.sender = s.self;
        b.transcript_hash = transcript_digest(s.transcript);
        b.sig = ctx.security.sign(ctx.caller, as_view(b.transcript_hash), ctx.signing_key);
        ProtocolMessage msg = std::move(b);
        s.transcript.push_back(encode(msg));
        s.state = SessionState::AwaitHash;
        return {Outgoing{s.peer, std::move(msg)}};
    }

    const auto& msg = std::get<ProtocolMessage>(input);

    if (s.role == Role::Responder) {
        switch (s.state) {
            case SessionState::Idle: {
                const auto* offer = std::get_if<Offer>(&msg);
                if (!offer || offer->responder != s.self || offer->initiator == s.self) {
                    return abort_session(s, AbortReason::ProtocolViolation);
                }
                s.peer = offer->initiator;
                if (!ctx.seen.check_and_record(s.peer, offer->nonce)) {
                    return abort_session(s, AbortReason::StaleOrReplay);
                }
                TradeParams params{offer->share_size, offer->duration};
                if (!params.valid()) return abort_session(s, AbortReason::ProtocolViolation);
                s.peer_params = params;
                s.own_params = params;  // counter-offer mirrors the request
                s.peer_nonce = offer->nonce;
                s.transcript.push_back(encode(msg));
                s.own_nonce = ctx.nonces.fresh();
                return detail::query_authority(s, ctx, s.own_nonce);
            }
            case SessionState::AwaitRep: {
                const auto* attest = std::get_if<RepAttest>(&msg);
                if (!attest) return abort_session(s, AbortReason::ProtocolViolation);
                return detail::handle_attestation(s, *attest, ctx);
            }
            case SessionState::Sent5: {
                if (const auto* ack = std::get_if<Ack>(&msg)) {
                    if (ack->sender != s.peer) return abort_session(s, AbortReason::ProtocolViolation);
                    if (ack->ack_nonce != s.own_nonce.plus_one() || !ctx.seen.check_and_record(s.peer, ack->ack_nonce)) {
                        return abort_session(s, AbortReason::StaleOrReplay);
                    }
                    s.transcript.push_back(encode(msg));
                    s.state = SessionState::AwaitHash;
                    return {};
                }
                if (const auto* rej = std::get_if<Reject>(&msg)) {
                    if (rej->sender != s.peer) return abort_session(s, AbortReason::ProtocolViolation);
                    if (rej->ack_nonce != s.own_nonce.plus_one() || !ctx.seen.check_and_record(s.peer, rej->ack_nonce)) {
                        return abort_session(s, AbortReason::StaleOrReplay);
                    }
                    s.transcript.push_back(encode(msg));
                    return abort_session(s, AbortReason::RejectedByPeer);
                }
                return abort_session(s, AbortReason::ProtocolViolation);
            }
            default:
                return abort_session(s, AbortReason::ProtocolViolation);
        }
    }

    switch (s.state) {
        case SessionState::Sent1: {
            if (const auto* counter = std::get_if<Counter>(&msg)) {
                if (counter->responder != s.peer || counter->initiator != s.self) {
                    return abort_session(s, AbortReason::ProtocolViolation);
                }
                if (!ctx.seen.check_and_record(s.peer, counter->nonce)) {
                    return abort_session(s, AbortReason::StaleOrReplay);
                }
                TradeParams params{counter->share_size, counter->duration};
                if (!params.valid()) return abort_session(s, AbortReason::ProtocolViolation);
                s.peer_params = params;
                s.peer_nonce = counter->nonce;
                s.transcript.push_back(encode(msg));
                return detail::query_authority(s, ctx, ctx.nonces.fresh());
            }
            if (const auto* rej = std::get_if<Reject>(&msg)) {
                if (rej->sender != s.peer) return abort_session(s, AbortReason::ProtocolViolation);
                if (rej->ack_nonce != s.own_nonce.plus_one() || !ctx.seen.check_and_record(s.peer, rej->ack_nonce)) {
                    return abort_session(s, AbortReason::StaleOrReplay);
                }
                s.transcript.push_back(encode(msg));
                return abort_session(s, AbortReason::RejectedByPeer);
            }
            return abort_session(s, AbortReason::ProtocolViolation);
        }
        case SessionState::AwaitRep: {
            const auto* attest = std::get_if<RepAttest>(&msg);
            if (!attest) return abort_session(s, AbortReason::ProtocolViolation);
            return detail::handle_attestation(s, *attest, ctx);
        }
        default:
            return abort_session(s, AbortReason::ProtocolViolation);
    }
}

/// Messages 10 and 11. A responder in AWAIT_HASH checks message 10 and
/// answers with message 11; an initiator checks message 11. On a transcript
/// mismatch the responder still signs its own view so the initiator reaches
/// the same verdict independently.
inline std::vector<Outgoing> verify_transcript(ContractSession& s, const Binding& incoming, SessionContext& ctx) {
    using detail::abort_session;
    if (s.state != SessionState::AwaitHash || incoming.sender != s.peer) {
        return abort_session(s, AbortReason::ProtocolViolation);
    }

    const Hash local = transcript_digest(s.transcript);
    if (ctx.check_transcript) {
        const auto key = ctx.public_key_of(s.peer);
        if (!key || !ctx.security.verify(as_view(incoming.transcript_hash), incoming.sig, *key)) {
            return abort_session(s, AbortReason::ForgedBinding);
        }
    }
    const bool match = !ctx.check_transcript || incoming.transcript_hash == local;

    if (s.role == Role::Initiator) {
        if (!match) return abort_session(s, AbortReason::TranscriptMismatch);
        s.state = SessionState::Done;
        return {};
    }

    s.transcript.push_back(encode(ProtocolMessage{incoming}));
    Binding reply;
    reply.sender = s.self;
    reply.transcript_hash = transcript_digest(s.transcript);
    reply.sig = ctx.security.sign(ctx.caller, as_view(reply.transcript_hash), ctx.signing_key);
    if (!match) {
        abort_session(s, AbortReason::TranscriptMismatch);
    } else {
        s.state = SessionState::Done;
    }
    return {Outgoing{s.peer, std::move(reply)}};
}

}  // namespace servnet
