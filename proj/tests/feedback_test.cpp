#include <gtest/gtest.h>

#include "servnet/feedback.hpp"
#include "servnet/model_security.hpp"

using namespace servnet;

namespace {

struct Fixture : ::testing::Test {
    ModelSecurity sec;
    const ServerId a{"alice"};
    const ServerId b{"bob"};
    const ServerId auth_b{"auth-b"};
    KeyPair ka = sec.keygen(a, 1);
    const TransactionId txn{Nonce{1}, Nonce{2}};

    FeedbackMessage signed_score(int score) {
        return sign_feedback(sec, a, ka.private_key, FeedbackBody{txn, b, score, a});
    }
    bool valid(const FeedbackMessage& m) { return sec.verify(m.body.encode(), m.sig, ka.public_key); }
};

}  // namespace

TEST_F(Fixture, GiverSendsIdenticalCopiesOnBothPaths) {
    FeedbackGiver giver(a);
    giver.contract_bound(txn, b);
    EXPECT_TRUE(giver.owes(txn));
    const auto d = giver.make_feedback(sec, ka.private_key, txn, LocalScore::positive(), auth_b);
    EXPECT_EQ(d.via_target.to, b);
    EXPECT_EQ(d.direct.to, auth_b);
    EXPECT_EQ(encode(d.via_target.msg), encode(d.direct.msg));
    EXPECT_TRUE(valid(d.message));
    EXPECT_FALSE(giver.owes(txn));
}

TEST_F(Fixture, GiverRefusesUnknownOrRepeatedFeedback) {
    FeedbackGiver giver(a);
    EXPECT_THROW(giver.make_feedback(sec, ka.private_key, txn, LocalScore::positive(), auth_b), ProtocolError);
    giver.contract_bound(txn, b);
    giver.make_feedback(sec, ka.private_key, txn, LocalScore::positive(), auth_b);
    EXPECT_THROW(giver.make_feedback(sec, ka.private_key, txn, LocalScore::negative(), auth_b), ProtocolError);
}

TEST_F(Fixture, MatchingCopiesAreAccepted) {
    FeedbackTracker t(10);
    const auto m = signed_score(-1);
    auto first = t.receive(m, FeedbackPath::Direct, valid(m), 5);
    EXPECT_EQ(first.kind, FeedbackTracker::Arrival::Kind::Waiting);
    EXPECT_EQ(t.next_deadline(), Tick(15));
    auto second = t.receive(m, FeedbackPath::ViaTarget, valid(m), 6);
    ASSERT_EQ(second.kind, FeedbackTracker::Arrival::Kind::Decided);
    EXPECT_EQ(second.outcome->status, FeedbackStatus::Accepted);
    EXPECT_EQ(second.outcome->applied->value(), -1);
    EXPECT_EQ(second.outcome->subject, b);
}

TEST_F(Fixture, DifferentCopiesFlagTheGiver) {
    FeedbackTracker t(10);
    const auto direct = signed_score(1);
    const auto via = signed_score(-1);
    t.receive(direct, FeedbackPath::Direct, valid(direct), 5);
    auto r = t.receive(via, FeedbackPath::ViaTarget, valid(via), 6);
    ASSERT_TRUE(r.outcome);
    EXPECT_EQ(r.outcome->status, FeedbackStatus::GiverCheatingFlagged);
    EXPECT_FALSE(r.outcome->applied.has_value());
}

TEST_F(Fixture, DroppedForwardIsRecoveredAfterTimeout) {
    FeedbackTracker t(10);
    const auto m = signed_score(-1);
    t.receive(m, FeedbackPath::Direct, valid(m), 5);
    EXPECT_TRUE(t.expire(14).empty());
    const auto out = t.expire(15);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].status, FeedbackStatus::ReceiverDroppedRecovered);
    EXPECT_EQ(out[0].applied->value(), -1);
    EXPECT_FALSE(t.has_pending());
}

TEST_F(Fixture, LoneForwardedCopyIsAcceptedAfterTimeout) {
    FeedbackTracker t(10);
    const auto m = signed_score(1);
    t.receive(m, FeedbackPath::ViaTarget, valid(m), 3);
    const auto out = t.expire(13);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].status, FeedbackStatus::Accepted);
}

TEST_F(Fixture, ScoreAlteredByTargetFailsVerification) {
    FeedbackTracker t(10);
    auto m = signed_score(-1);
    m.body.score = 1;
    auto r = t.receive(m, FeedbackPath::ViaTarget, valid(m), 3);
    EXPECT_EQ(r.kind, FeedbackTracker::Arrival::Kind::Invalid);
    EXPECT_FALSE(t.has_pending());
}

TEST_F(Fixture, SecondFeedbackIsDuplicate) {
    FeedbackTracker t(10);
    const auto m = signed_score(1);
    t.receive(m, FeedbackPath::Direct, true, 1);
    t.receive(m, FeedbackPath::ViaTarget, true, 2);
    auto r = t.receive(m, FeedbackPath::Direct, true, 3);
    EXPECT_EQ(r.kind, FeedbackTracker::Arrival::Kind::Duplicate);
    EXPECT_EQ(r.outcome->status, FeedbackStatus::DuplicateIgnored);

    FeedbackTracker t2(10);
    t2.receive(m, FeedbackPath::Direct, true, 1);
    EXPECT_EQ(t2.receive(m, FeedbackPath::Direct, true, 2).kind, FeedbackTracker::Arrival::Kind::Duplicate);
}

TEST_F(Fixture, DrainHandsOverPendingCopies) {
    FeedbackTracker t(10);
    const auto m = signed_score(1);
    t.receive(m, FeedbackPath::Direct, true, 1);
    const auto drained = t.drain_pending();
    ASSERT_EQ(drained.size(), 1u);
    EXPECT_EQ(drained[0].second, FeedbackPath::Direct);
    EXPECT_FALSE(t.next_deadline().has_value());
}

TEST(DecideFeedback, Table) {
    FeedbackMessage x;
    x.sender = ServerId("a");
    x.body.score = 1;
    FeedbackMessage y = x;
    y.body.score = -1;
    EXPECT_EQ(decide_feedback(x, x, false), FeedbackStatus::Accepted);
    EXPECT_EQ(decide_feedback(x, y, false), FeedbackStatus::GiverCheatingFlagged);
    EXPECT_EQ(decide_feedback(x, std::nullopt, false), std::nullopt);
    EXPECT_EQ(decide_feedback(x, std::nullopt, true), FeedbackStatus::ReceiverDroppedRecovered);
    EXPECT_EQ(decide_feedback(std::nullopt, x, true), FeedbackStatus::Accepted);
    EXPECT_EQ(decide_feedback(std::nullopt, std::nullopt, true), std::nullopt);
}
