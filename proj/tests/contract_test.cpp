#include <deque>
#include <map>

#include <gtest/gtest.h>

#include "servnet/contract.hpp"
#include "servnet/model_security.hpp"

using namespace servnet;

namespace {

// Two parties and a single authority vouching for both, wired together
// without the simulator.
struct Harness {
    ModelSecurity sec;
    const ServerId a{"alice"};
    const ServerId b{"bob"};
    const ServerId auth{"auth"};
    std::map<ServerId, KeyPair> keys;
    std::map<ServerId, std::unique_ptr<NonceSource>> nonces;
    std::map<ServerId, NonceCache> seen;
    std::map<ServerId, Rational> reputation{{ServerId("alice"), 4}, {ServerId("bob"), 4}};
    std::map<ServerId, Rational> threshold{{ServerId("alice"), 0}, {ServerId("bob"), 0}};
    bool check_transcript = true;
    ContractSession sa = initiator_session(ServerId("alice"), 100);
    ContractSession sb = responder_session(ServerId("bob"), 100);
    std::vector<std::pair<ServerId, ProtocolMessage>> wire;
    std::function<void(const ServerId& to, ProtocolMessage& msg)> on_wire;

    Harness() {
        std::uint64_t seed = 1;
        for (const auto& id : {a, b, auth}) {
            keys[id] = sec.keygen(id, seed++);
            nonces[id] = std::make_unique<NonceSource>(9, id);
            seen[id];
        }
    }

    SessionContext ctx(const ServerId& who) {
        return SessionContext{
            sec,
            who,
            keys.at(who).private_key,
            *nonces.at(who),
            seen.at(who),
            [this](const ServerId& x) -> std::optional<PublicKeyId> {
                auto it = keys.find(x);
                if (it == keys.end()) return std::nullopt;
                return it->second.public_key;
            },
            [this](const ServerId&) -> std::optional<ServerId> { return auth; },
            [this, who](const Rational& gr, const TradeParams&) { return gr >= threshold.at(who); },
            check_transcript,
        };
    }

    ContractSession& session_of(const ServerId& who) { return who == a ? sa : sb; }

    void run() {
        std::deque<Outgoing> queue;
        auto push = [&](std::vector<Outgoing> out) {
            for (auto& o : out) queue.push_back(std::move(o));
        };
        auto c = ctx(a);
        push(contract_advance(sa, StartCommand{b, TradeParams{4, 5}}, c));
        while (!queue.empty()) {
            Outgoing o = std::move(queue.front());
            queue.pop_front();
            if (on_wire) on_wire(o.to, o.msg);
            wire.emplace_back(o.to, o.msg);
            if (o.to == auth) {
                const auto& q = std::get<RepQuery>(o.msg);
                RepAttest att{auth, q.subject, to_exact(reputation.at(q.subject)), q.nonce, {}};
                att.sig = sec.sign(auth, att.signed_body(), keys.at(auth).private_key);
                queue.push_back(Outgoing{q.requester, att});
                continue;
            }
            ContractSession& s = session_of(o.to);
            auto cx = ctx(o.to);
            if (const auto* binding = std::get_if<Binding>(&o.msg)) {
                push(verify_transcript(s, *binding, cx));
            } else {
                push(contract_advance(s, o.msg, cx));
            }
            if (o.to == a && sa.state == SessionState::Sent9) {
                auto ca = ctx(a);
                push(contract_advance(sa, BindCommand{}, ca));
            }
        }
    }

    std::vector<MsgType> types() const {
        std::vector<MsgType> out;
        for (const auto& [to, m] : wire) out.push_back(type_of(m));
        return out;
    }
};

}  // namespace

TEST(Contract, HonestRunBindsBothSides) {
    Harness h;
    h.run();
    EXPECT_EQ(h.sa.state, SessionState::Done);
    EXPECT_EQ(h.sb.state, SessionState::Done);
    ASSERT_TRUE(h.sa.txn_id() && h.sb.txn_id());
    EXPECT_EQ(*h.sa.txn_id(), *h.sb.txn_id());
    EXPECT_EQ(h.sa.peer_reputation, Rational(4));
    const std::vector<MsgType> expected{MsgType::Offer,    MsgType::RepQuery,  MsgType::RepAttest, MsgType::Counter,
                                        MsgType::RepQuery, MsgType::RepAttest, MsgType::Ack,       MsgType::Binding,
                                        MsgType::Binding};
    EXPECT_EQ(h.types(), expected);
}

TEST(Contract, TranscriptHoldsMessagesOneFiveNine) {
    Harness h;
    ContractSession* snapshot = nullptr;
    ContractSession copy;
    h.on_wire = [&](const ServerId&, ProtocolMessage& m) {
        if (std::holds_alternative<Binding>(m) && !snapshot) {
            copy = h.sa;
            snapshot = &copy;
        }
    };
    h.run();
    ASSERT_NE(snapshot, nullptr);
    ASSERT_EQ(copy.transcript.size(), 4u);
    EXPECT_EQ(copy.transcript[0][0], static_cast<std::uint8_t>(MsgType::Offer));
    EXPECT_EQ(copy.transcript[1][0], static_cast<std::uint8_t>(MsgType::Counter));
    EXPECT_EQ(copy.transcript[2][0], static_cast<std::uint8_t>(MsgType::Ack));
    EXPECT_EQ(copy.transcript[3][0], static_cast<std::uint8_t>(MsgType::Binding));
}

TEST(Contract, ResponderRejectsLowReputation) {
    Harness h;
    h.threshold[h.b] = 5;
    h.run();
    EXPECT_EQ(h.sb.reason, AbortReason::RejectedLocally);
    EXPECT_EQ(h.sa.reason, AbortReason::RejectedByPeer);
    EXPECT_FALSE(h.sa.bound());
    const auto& last = h.wire.back().second;
    ASSERT_TRUE(std::holds_alternative<Reject>(last));
    EXPECT_EQ(std::get<Reject>(last).ack_nonce, h.sa.own_nonce.plus_one());
}

TEST(Contract, InitiatorRejectsLowReputation) {
    Harness h;
    h.threshold[h.a] = 5;
    h.run();
    EXPECT_EQ(h.sa.reason, AbortReason::RejectedLocally);
    EXPECT_EQ(h.sb.reason, AbortReason::RejectedByPeer);
}

TEST(Contract, TamperedOfferBreaksTranscript) {
    Harness h;
    h.on_wire = [](const ServerId&, ProtocolMessage& m) {
        if (auto* o = std::get_if<Offer>(&m)) o->share_size = 99;
    };
    h.run();
    EXPECT_EQ(h.sa.reason, AbortReason::TranscriptMismatch);
    EXPECT_EQ(h.sb.reason, AbortReason::TranscriptMismatch);
}

TEST(Contract, TamperGoesUnnoticedWithoutTranscriptCheck) {
    Harness h;
    h.check_transcript = false;
    h.on_wire = [](const ServerId&, ProtocolMessage& m) {
        if (auto* o = std::get_if<Offer>(&m)) o->share_size = 99;
    };
    h.run();
    EXPECT_TRUE(h.sa.bound());
    EXPECT_TRUE(h.sb.bound());
}

TEST(Contract, ForgedBindingIsRejected) {
    Harness h;
    const auto mallory = h.sec.keygen(ServerId("mallory"), 77);
    h.on_wire = [&](const ServerId& to, ProtocolMessage& m) {
        if (auto* bnd = std::get_if<Binding>(&m); bnd && to == h.b) {
            bnd->sig = h.sec.sign(ServerId("mallory"), as_view(bnd->transcript_hash), mallory.private_key);
        }
    };
    h.run();
    EXPECT_EQ(h.sb.reason, AbortReason::ForgedBinding);
    EXPECT_FALSE(h.sa.bound());
}

TEST(Contract, ReplayedOfferIsStale) {
    Harness h;
    h.run();
    ASSERT_TRUE(h.sb.bound());
    const auto& offer = h.wire.front().second;
    ContractSession again = responder_session(h.b, 200);
    auto cb = h.ctx(h.b);
    auto out = contract_advance(again, offer, cb);
    EXPECT_TRUE(out.empty());
    EXPECT_EQ(again.reason, AbortReason::StaleOrReplay);
}

TEST(Contract, BadAttestationAborts) {
    Harness h;
    h.on_wire = [&](const ServerId&, ProtocolMessage& m) {
        if (auto* att = std::get_if<RepAttest>(&m)) att->reputation = "1000";
    };
    h.run();
    EXPECT_EQ(h.sb.reason, AbortReason::BadAuthorityAttestation);
}

TEST(Contract, OutOfOrderInputIsProtocolViolation) {
    Harness h;
    auto ca = h.ctx(h.a);
    auto out = contract_advance(h.sa, BindCommand{}, ca);
    EXPECT_TRUE(out.empty());
    EXPECT_EQ(h.sa.reason, AbortReason::ProtocolViolation);

    ContractSession r = responder_session(h.b, 10);
    auto cb = h.ctx(h.b);
    contract_advance(r, Ack{h.a, Nonce{1}}, cb);
    EXPECT_EQ(r.reason, AbortReason::ProtocolViolation);
}

TEST(Contract, ZeroShareOfferIsRefused) {
    Harness h;
    auto ca = h.ctx(h.a);
    contract_advance(h.sa, StartCommand{h.b, TradeParams{0, 5}}, ca);
    EXPECT_EQ(h.sa.reason, AbortReason::ProtocolViolation);
}
