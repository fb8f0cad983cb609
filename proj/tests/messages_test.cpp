#include <gtest/gtest.h>

#include "servnet/messages.hpp"
#include "servnet/model_security.hpp"

using namespace servnet;

namespace {

Signature some_sig() {
    Signature s;
    s.signer.bytes = Bytes{1, 2, 3};
    s.digest_of = digest(std::string_view("body"));
    s.tag = Bytes{9, 8, 7, 6};
    return s;
}

SealedBox some_box() { return SealedBox{SealedBox::Kind::ToPublicKey, Bytes{4, 4}, Bytes{5, 6, 7}}; }

std::vector<ProtocolMessage> one_of_each() {
    const ServerId a("alice");
    const ServerId b("bob");
    const ServerId auth("auth1");
    const Nonce n{0x1234};
    AuthorityNotice notice{ServerId("db-server"), b, a, n, some_sig()};
    std::vector<ProtocolMessage> out;
    out.push_back(RegIntro{a, PublicKeyId{Bytes{1, 1}}, n, some_sig()});
    out.push_back(RegAck{auth, some_box()});
    out.push_back(RegFlood{auth, Bytes{0x01, 0x02}, some_sig()});
    out.push_back(Offer{a, 4, 5, b, n});
    out.push_back(RepQuery{b, a, n});
    out.push_back(RepRelay{auth, b, a, n, some_sig()});
    out.push_back(RepAttest{auth, a, "7/3", n, some_sig()});
    out.push_back(Reject{b, n.plus_one()});
    out.push_back(Counter{b, 4, 5, a, Nonce{99}});
    out.push_back(Ack{a, Nonce{100}});
    out.push_back(Binding{a, digest(std::string_view("t")), some_sig()});
    out.push_back(FeedbackMessage{a, FeedbackBody{TransactionId{n, Nonce{99}}, b, -1, a}, some_sig()});
    out.push_back(RotateRequest{a, 3, some_box()});
    out.push_back(RotateGrant{ServerId("db-server"), 3, some_box(), notice});
    out.push_back(RotateConfirm{b, 3, some_box()});
    out.push_back(notice);
    out.push_back(RevocationNotice{auth, a, n, some_sig()});
    return out;
}

}  // namespace

TEST(Wire, EveryMessageRoundTrips) {
    const auto msgs = one_of_each();
    EXPECT_EQ(msgs.size(), std::variant_size_v<ProtocolMessage>);
    for (const auto& m : msgs) {
        const Bytes bytes = encode(m);
        EXPECT_EQ(bytes[0], static_cast<std::uint8_t>(type_of(m)));
        const ProtocolMessage back = decode(bytes);
        EXPECT_EQ(type_of(back), type_of(m));
        EXPECT_EQ(encode(back), bytes) << type_name(type_of(m));
    }
}

TEST(Wire, TruncationAndTrailingBytesAreErrors) {
    for (const auto& m : one_of_each()) {
        Bytes bytes = encode(m);
        Bytes shorter(bytes.begin(), bytes.end() - 1);
        EXPECT_THROW(decode(shorter), DecodeError) << type_name(type_of(m));
        bytes.push_back(0);
        EXPECT_THROW(decode(bytes), DecodeError) << type_name(type_of(m));
    }
    EXPECT_THROW(decode(Bytes{0xee}), DecodeError);
    EXPECT_THROW(decode(Bytes{}), DecodeError);
}

TEST(Wire, FieldsAreLengthPrefixedBigEndian) {
    const Bytes b = encode(Ack{ServerId("a"), Nonce{1}});
    ASSERT_GE(b.size(), 6u);
    EXPECT_EQ(b[0], 0x17);
    EXPECT_EQ(b[1], 0);
    EXPECT_EQ(b[2], 0);
    EXPECT_EQ(b[3], 0);
    EXPECT_EQ(b[4], 1);
    EXPECT_EQ(b[5], 'a');
}

TEST(Wire, TypeNamesRoundTrip) {
    for (const auto& m : one_of_each()) {
        const MsgType t = type_of(m);
        EXPECT_EQ(parse_type_name(type_name(t)), t);
    }
    EXPECT_FALSE(parse_type_name("telegram").has_value());
}

TEST(Wire, FeedbackSignatureCoversScore) {
    ModelSecurity sec;
    const auto kp = sec.keygen(ServerId("alice"), 1);
    FeedbackBody body{TransactionId{Nonce{1}, Nonce{2}}, ServerId("bob"), -1, ServerId("alice")};
    const Signature sig = sec.sign(ServerId("alice"), body.encode(), kp.private_key);
    EXPECT_TRUE(sec.verify(body.encode(), sig, kp.public_key));
    body.score = 1;
    EXPECT_FALSE(sec.verify(body.encode(), sig, kp.public_key));
}

TEST(Wire, TransactionIdIsInitiatorThenResponder) {
    const TransactionId t{Nonce{1}, Nonce{2}};
    const Bytes b = t.encode();
    ASSERT_EQ(b.size(), 32u);
    EXPECT_EQ(b[15], 1);
    EXPECT_EQ(b[31], 2);
    EXPECT_EQ(TransactionId::decode(b), t);
}
