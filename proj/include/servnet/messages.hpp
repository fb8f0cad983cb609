// Wire catalog. Every message encodes as a 1-byte type tag followed by
// length-prefixed fields in the order listed in each struct. Signed bodies
// use their own tag (type | 0x80) so a signature over one kind of body can
// never be replayed as another. See docs/wire_format.md.

#pragma once

#include <optional>
#include <string>
#include <variant>

#include "servnet/bytes.hpp"
#include "servnet/ids.hpp"
#include "servnet/reputation.hpp"
#include "servnet/security.hpp"

namespace servnet {

enum class MsgType : std::uint8_t {
    RegIntro = 0x01,
    RegAck = 0x02,
    RegFlood = 0x03,
    Offer = 0x11,
    RepQuery = 0x12,
    RepRelay = 0x13,
    RepAttest = 0x14,
    Reject = 0x15,
    Counter = 0x16,
    Ack = 0x17,
    Binding = 0x18,
    Feedback = 0x21,
    RotateRequest = 0x31,
    RotateGrant = 0x32,
    RotateConfirm = 0x33,
    AuthorityNotice = 0x34,
    RevocationNotice = 0x41,
};

namespace wire {

inline void write_sig(FieldWriter& w, const Signature& s) {
    FieldWriter inner(0x60);
    inner.bytes(s.signer.bytes).bytes(as_view(s.digest_of)).bytes(s.tag);
    w.bytes(inner.view());
}

inline Signature read_sig(FieldReader& r) {
    FieldReader inner(r.bytes());
    if (inner.tag() != 0x60) throw DecodeError("bad signature blob");
    Signature s;
    s.signer.bytes = inner.owned();
    auto d = inner.bytes();
    if (d.size() != 32) throw DecodeError("bad digest width");
    std::copy(d.begin(), d.end(), s.digest_of.begin());
    s.tag = inner.owned();
    inner.expect_done();
    return s;
}

inline void write_box(FieldWriter& w, const SealedBox& b) {
    FieldWriter inner(0x61);
    const std::uint8_t kind = static_cast<std::uint8_t>(b.kind);
    inner.bytes(ByteView(&kind, 1)).bytes(b.key_id).bytes(b.payload);
    w.bytes(inner.view());
}

inline SealedBox read_box(FieldReader& r) {
    FieldReader inner(r.bytes());
    if (inner.tag() != 0x61) throw DecodeError("bad sealed box");
    auto kind = inner.bytes();
    if (kind.size() != 1 || (kind[0] != 1 && kind[0] != 2)) throw DecodeError("bad box kind");
    SealedBox b{static_cast<SealedBox::Kind>(kind[0]), inner.owned(), inner.owned()};
    inner.expect_done();
    return b;
}

inline void write_nonce(FieldWriter& w, const Nonce& n) { w.bytes(n.encode()); }
inline Nonce read_nonce(FieldReader& r) { return Nonce::decode(r.bytes()); }
inline ServerId read_id(FieldReader& r) { return ServerId(r.text()); }

inline std::uint8_t body_tag(MsgType t) { return static_cast<std::uint8_t>(t) | 0x80; }

}  // namespace wire

// Joiner to its chosen authority: identity, public key and a self-signed nonce.
struct RegIntro {
    static constexpr MsgType type = MsgType::RegIntro;
    ServerId node;
    PublicKeyId public_key;
    Nonce nonce;
    Signature sig;

    Bytes signed_body() const {
        return FieldWriter(wire::body_tag(type)).text(node.str()).bytes(public_key.bytes).bytes(nonce.encode()).view();
    }
    void write(FieldWriter& w) const {
        w.text(node.str()).bytes(public_key.bytes);
        wire::write_nonce(w, nonce);
        wire::write_sig(w, sig);
    }
    static RegIntro read(FieldReader& r) {
        RegIntro m;
        m.node = wire::read_id(r);
        m.public_key.bytes = r.owned();
        m.nonce = wire::read_nonce(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

// Authority back to the joiner, nonce+1 sealed to the joiner's key.
struct RegAck {
    static constexpr MsgType type = MsgType::RegAck;
    ServerId authority;
    SealedBox box;

    void write(FieldWriter& w) const {
        w.text(authority.str());
        wire::write_box(w, box);
    }
    static RegAck read(FieldReader& r) {
        RegAck m;
        m.authority = wire::read_id(r);
        m.box = wire::read_box(r);
        return m;
    }
};

// The accepted intro, countersigned and flooded to the other authorities.
struct RegFlood {
    static constexpr MsgType type = MsgType::RegFlood;
    ServerId authority;
    Bytes intro;  // encoded RegIntro
    Signature sig;

    Bytes signed_body() const { return FieldWriter(wire::body_tag(type)).text(authority.str()).bytes(intro).view(); }
    void write(FieldWriter& w) const {
        w.text(authority.str()).bytes(intro);
        wire::write_sig(w, sig);
    }
    static RegFlood read(FieldReader& r) {
        RegFlood m;
        m.authority = wire::read_id(r);
        m.intro = r.owned();
        m.sig = wire::read_sig(r);
        return m;
    }
};

// Opening offer from the initiator.
struct Offer {
    static constexpr MsgType type = MsgType::Offer;
    ServerId initiator;
    std::uint64_t share_size = 0;
    std::uint64_t duration = 0;
    ServerId responder;
    Nonce nonce;

    void write(FieldWriter& w) const {
        w.text(initiator.str()).u64(share_size).u64(duration).text(responder.str());
        wire::write_nonce(w, nonce);
    }
    static Offer read(FieldReader& r) {
        Offer m;
        m.initiator = wire::read_id(r);
        m.share_size = r.u64();
        m.duration = r.u64();
        m.responder = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        return m;
    }
};

// A party asks its own authority about the peer.
struct RepQuery {
    static constexpr MsgType type = MsgType::RepQuery;
    ServerId requester;
    ServerId subject;
    Nonce nonce;

    void write(FieldWriter& w) const {
        w.text(requester.str()).text(subject.str());
        wire::write_nonce(w, nonce);
    }
    static RepQuery read(FieldReader& r) {
        RepQuery m;
        m.requester = wire::read_id(r);
        m.subject = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        return m;
    }
};

// The asking authority forwards the query to the peer's authority.
struct RepRelay {
    static constexpr MsgType type = MsgType::RepRelay;
    ServerId authority;
    ServerId requester;
    ServerId subject;
    Nonce nonce;
    Signature sig;

    Bytes signed_body() const {
        return FieldWriter(wire::body_tag(type))
            .text(requester.str())
            .text(subject.str())
            .bytes(nonce.encode())
            .view();
    }
    void write(FieldWriter& w) const {
        w.text(authority.str()).text(requester.str()).text(subject.str());
        wire::write_nonce(w, nonce);
        wire::write_sig(w, sig);
    }
    static RepRelay read(FieldReader& r) {
        RepRelay m;
        m.authority = wire::read_id(r);
        m.requester = wire::read_id(r);
        m.subject = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

// Signed reputation statement returned to the asking party.
// The relay nonce is echoed inside the signature so a stale attestation
// cannot be replayed into a later query.
struct RepAttest {
    static constexpr MsgType type = MsgType::RepAttest;
    ServerId authority;
    ServerId subject;
    std::string reputation;  // exact rational, "p/q" or integer
    Nonce nonce;
    Signature sig;

    Bytes signed_body() const {
        return FieldWriter(wire::body_tag(type)).text(subject.str()).text(reputation).bytes(nonce.encode()).view();
    }
    void write(FieldWriter& w) const {
        w.text(authority.str()).text(subject.str()).text(reputation);
        wire::write_nonce(w, nonce);
        wire::write_sig(w, sig);
    }
    static RepAttest read(FieldReader& r) {
        RepAttest m;
        m.authority = wire::read_id(r);
        m.subject = wire::read_id(r);
        m.reputation = r.text();
        m.nonce = wire::read_nonce(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

struct Reject {
    static constexpr MsgType type = MsgType::Reject;
    ServerId sender;
    Nonce ack_nonce;

    void write(FieldWriter& w) const {
        w.text(sender.str()).text("Reject");
        wire::write_nonce(w, ack_nonce);
    }
    static Reject read(FieldReader& r) {
        Reject m;
        m.sender = wire::read_id(r);
        if (r.text() != "Reject") throw DecodeError("bad reject marker");
        m.ack_nonce = wire::read_nonce(r);
        return m;
    }
};

// Responder's counter offer.
struct Counter {
    static constexpr MsgType type = MsgType::Counter;
    ServerId responder;
    std::uint64_t share_size = 0;
    std::uint64_t duration = 0;
    ServerId initiator;
    Nonce nonce;

    void write(FieldWriter& w) const {
        w.text(responder.str()).u64(share_size).u64(duration).text(initiator.str());
        wire::write_nonce(w, nonce);
    }
    static Counter read(FieldReader& r) {
        Counter m;
        m.responder = wire::read_id(r);
        m.share_size = r.u64();
        m.duration = r.u64();
        m.initiator = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        return m;
    }
};

struct Ack {
    static constexpr MsgType type = MsgType::Ack;
    ServerId sender;
    Nonce ack_nonce;

    void write(FieldWriter& w) const {
        w.text(sender.str()).text("Ack");
        wire::write_nonce(w, ack_nonce);
    }
    static Ack read(FieldReader& r) {
        Ack m;
        m.sender = wire::read_id(r);
        if (r.text() != "Ack") throw DecodeError("bad ack marker");
        m.ack_nonce = wire::read_nonce(r);
        return m;
    }
};

// Signed hash over the session transcript.
struct Binding {
    static constexpr MsgType type = MsgType::Binding;
    ServerId sender;
    Hash transcript_hash{};
    Signature sig;

    void write(FieldWriter& w) const {
        w.text(sender.str()).bytes(as_view(transcript_hash));
        wire::write_sig(w, sig);
    }
    static Binding read(FieldReader& r) {
        Binding m;
        m.sender = wire::read_id(r);
        auto h = r.bytes();
        if (h.size() != 32) throw DecodeError("bad hash width");
        std::copy(h.begin(), h.end(), m.transcript_hash.begin());
        m.sig = wire::read_sig(r);
        return m;
    }
};

struct FeedbackBody {
    TransactionId txn;
    ServerId subject;  // the party being scored (the subscript of LS)
    int score = 1;
    ServerId sender;

    Bytes encode() const {
        return FieldWriter(wire::body_tag(MsgType::Feedback))
            .bytes(txn.encode())
            .text(subject.str())
            .i64(score)
            .text(sender.str())
            .view();
    }
    friend bool operator==(const FeedbackBody&, const FeedbackBody&) = default;
};

struct FeedbackMessage {
    static constexpr MsgType type = MsgType::Feedback;
    ServerId sender;
    FeedbackBody body;
    Signature sig;

    void write(FieldWriter& w) const {
        w.text(sender.str()).bytes(body.txn.encode()).text(body.subject.str()).i64(body.score).text(body.sender.str());
        wire::write_sig(w, sig);
    }
    static FeedbackMessage read(FieldReader& r) {
        FeedbackMessage m;
        m.sender = wire::read_id(r);
        m.body.txn = TransactionId::decode(r.bytes());
        m.body.subject = wire::read_id(r);
        m.body.score = static_cast<int>(r.i64());
        m.body.sender = wire::read_id(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

// Outgoing authority asks the database to hand its subtree over.
struct RotateRequest {
    static constexpr MsgType type = MsgType::RotateRequest;
    ServerId sender;
    std::uint64_t subtree = 0;
    SealedBox box;

    struct Inner {
        ServerId new_authority;
        ServerId old_authority;
        Nonce nonce;

        Bytes encode() const {
            return FieldWriter(0x71).text(new_authority.str()).text(old_authority.str()).bytes(nonce.encode()).view();
        }
        static Inner decode(ByteView b) {
            FieldReader r(b);
            if (r.tag() != 0x71) throw DecodeError("bad rotation request body");
            Inner i{wire::read_id(r), wire::read_id(r), wire::read_nonce(r)};
            r.expect_done();
            return i;
        }
    };

    void write(FieldWriter& w) const {
        w.text(sender.str()).u64(subtree);
        wire::write_box(w, box);
    }
    static RotateRequest read(FieldReader& r) {
        RotateRequest m;
        m.sender = wire::read_id(r);
        m.subtree = r.u64();
        m.box = wire::read_box(r);
        return m;
    }
};

// Database-signed announcement of a new authority.
struct AuthorityNotice {
    static constexpr MsgType type = MsgType::AuthorityNotice;
    ServerId db;
    ServerId new_authority;
    ServerId old_authority;
    Nonce nonce;
    Signature sig;

    Bytes signed_body() const {
        return FieldWriter(wire::body_tag(type))
            .text(new_authority.str())
            .text(old_authority.str())
            .bytes(nonce.encode())
            .view();
    }
    void write(FieldWriter& w) const {
        w.text(db.str()).text(new_authority.str()).text(old_authority.str());
        wire::write_nonce(w, nonce);
        wire::write_sig(w, sig);
    }
    static AuthorityNotice read(FieldReader& r) {
        AuthorityNotice m;
        m.db = wire::read_id(r);
        m.new_authority = wire::read_id(r);
        m.old_authority = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

// Fresh subtree key sealed to the incoming authority, plus the notice.
struct RotateGrant {
    static constexpr MsgType type = MsgType::RotateGrant;
    ServerId db;
    std::uint64_t subtree = 0;
    SealedBox key_box;
    AuthorityNotice notice;

    struct Inner {
        Bytes key_blob;
        ServerId new_authority;
        Nonce nonce;
        Signature sig;

        Bytes signed_body() const {
            return FieldWriter(0x72).bytes(key_blob).text(new_authority.str()).bytes(nonce.encode()).view();
        }
        Bytes encode() const {
            FieldWriter w(0x73);
            w.bytes(key_blob).text(new_authority.str()).bytes(nonce.encode());
            wire::write_sig(w, sig);
            return std::move(w).finish();
        }
        static Inner decode(ByteView b) {
            FieldReader r(b);
            if (r.tag() != 0x73) throw DecodeError("bad grant body");
            Inner i;
            i.key_blob = r.owned();
            i.new_authority = wire::read_id(r);
            i.nonce = wire::read_nonce(r);
            i.sig = wire::read_sig(r);
            r.expect_done();
            return i;
        }
    };

    void write(FieldWriter& w) const {
        w.text(db.str()).u64(subtree);
        wire::write_box(w, key_box);
        FieldWriter n(static_cast<std::uint8_t>(AuthorityNotice::type));
        notice.write(n);
        w.bytes(n.view());
    }
    static RotateGrant read(FieldReader& r) {
        RotateGrant m;
        m.db = wire::read_id(r);
        m.subtree = r.u64();
        m.key_box = wire::read_box(r);
        FieldReader n(r.bytes());
        if (n.tag() != static_cast<std::uint8_t>(AuthorityNotice::type)) throw DecodeError("bad embedded notice");
        m.notice = AuthorityNotice::read(n);
        n.expect_done();
        return m;
    }
};

struct RotateConfirm {
    static constexpr MsgType type = MsgType::RotateConfirm;
    ServerId sender;
    std::uint64_t subtree = 0;
    SealedBox box;

    void write(FieldWriter& w) const {
        w.text(sender.str()).u64(subtree);
        wire::write_box(w, box);
    }
    static RotateConfirm read(FieldReader& r) {
        RotateConfirm m;
        m.sender = wire::read_id(r);
        m.subtree = r.u64();
        m.box = wire::read_box(r);
        return m;
    }
};

// Sent by the leaving server's authority to every other authority.
struct RevocationNotice {
    static constexpr MsgType type = MsgType::RevocationNotice;
    ServerId authority;
    ServerId node;
    Nonce nonce;
    Signature sig;

    Bytes signed_body() const {
        return FieldWriter(wire::body_tag(type)).text(node.str()).bytes(nonce.encode()).view();
    }
    void write(FieldWriter& w) const {
        w.text(authority.str()).text(node.str());
        wire::write_nonce(w, nonce);
        wire::write_sig(w, sig);
    }
    static RevocationNotice read(FieldReader& r) {
        RevocationNotice m;
        m.authority = wire::read_id(r);
        m.node = wire::read_id(r);
        m.nonce = wire::read_nonce(r);
        m.sig = wire::read_sig(r);
        return m;
    }
};

using ProtocolMessage = std::variant<RegIntro, RegAck, RegFlood, Offer, RepQuery, RepRelay, RepAttest, Reject,
                                     Counter, Ack, Binding, FeedbackMessage, RotateRequest, RotateGrant,
                                     RotateConfirm, AuthorityNotice, RevocationNotice>;

inline Bytes encode(const ProtocolMessage& msg) {
    return std::visit(
        [](const auto& m) {
            FieldWriter w(static_cast<std::uint8_t>(std::decay_t<decltype(m)>::type));
            m.write(w);
            return std::move(w).finish();
        },
        msg);
}

namespace wire {
template <typename T>
ProtocolMessage read_whole(FieldReader& r) {
    T m = T::read(r);
    r.expect_done();
    return m;
}
}  // namespace wire

/// Throws DecodeError on unknown tags, truncation or trailing bytes.
inline ProtocolMessage decode(ByteView data) {
    FieldReader r(data);
    switch (static_cast<MsgType>(r.tag())) {
        case MsgType::RegIntro: return wire::read_whole<RegIntro>(r);
        case MsgType::RegAck: return wire::read_whole<RegAck>(r);
        case MsgType::RegFlood: return wire::read_whole<RegFlood>(r);
        case MsgType::Offer: return wire::read_whole<Offer>(r);
        case MsgType::RepQuery: return wire::read_whole<RepQuery>(r);
        case MsgType::RepRelay: return wire::read_whole<RepRelay>(r);
        case MsgType::RepAttest: return wire::read_whole<RepAttest>(r);
        case MsgType::Reject: return wire::read_whole<Reject>(r);
        case MsgType::Counter: return wire::read_whole<Counter>(r);
        case MsgType::Ack: return wire::read_whole<Ack>(r);
        case MsgType::Binding: return wire::read_whole<Binding>(r);
        case MsgType::Feedback: return wire::read_whole<FeedbackMessage>(r);
        case MsgType::RotateRequest: return wire::read_whole<RotateRequest>(r);
        case MsgType::RotateGrant: return wire::read_whole<RotateGrant>(r);
        case MsgType::RotateConfirm: return wire::read_whole<RotateConfirm>(r);
        case MsgType::AuthorityNotice: return wire::read_whole<AuthorityNotice>(r);
        case MsgType::RevocationNotice: return wire::read_whole<RevocationNotice>(r);
    }
    throw DecodeError("unknown message tag " + std::to_string(r.tag()));
}

inline MsgType type_of(const ProtocolMessage& msg) {
    return std::visit([](const auto& m) { return std::decay_t<decltype(m)>::type; }, msg);
}

inline const char* type_name(MsgType t) {
    switch (t) {
        case MsgType::RegIntro: return "reg-intro";
        case MsgType::RegAck: return "reg-ack";
        case MsgType::RegFlood: return "reg-flood";
        case MsgType::Offer: return "offer";
        case MsgType::RepQuery: return "rep-query";
        case MsgType::RepRelay: return "rep-relay";
        case MsgType::RepAttest: return "rep-attest";
        case MsgType::Reject: return "reject";
        case MsgType::Counter: return "counter";
        case MsgType::Ack: return "ack";
        case MsgType::Binding: return "binding";
        case MsgType::Feedback: return "feedback";
        case MsgType::RotateRequest: return "rotate-request";
        case MsgType::RotateGrant: return "rotate-grant";
        case MsgType::RotateConfirm: return "rotate-confirm";
        case MsgType::AuthorityNotice: return "authority-notice";
        case MsgType::RevocationNotice: return "revocation-notice";
    }
    return "unknown";
}

inline std::optional<MsgType> parse_type_name(const std::string& name) {
    for (auto t : {MsgType::RegIntro, MsgType::RegAck, MsgType::RegFlood, MsgType::Offer, MsgType::RepQuery,
                   MsgType::RepRelay, MsgType::RepAttest, MsgType::Reject, MsgType::Counter, MsgType::Ack,
                   MsgType::Binding, MsgType::Feedback, MsgType::RotateRequest, MsgType::RotateGrant,
                   MsgType::RotateConfirm, MsgType::AuthorityNotice, MsgType::RevocationNotice}) {
        if (name == type_name(t)) return t;
    }
    return std::nullopt;
}

}  // namespace servnet
