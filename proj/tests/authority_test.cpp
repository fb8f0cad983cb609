#include <gtest/gtest.h>

#include "servnet/authority.hpp"
#include "servnet/model_security.hpp"

using namespace servnet;

namespace {

std::map<ServerId, Rational> subtree(Rational current, Rational contender) {
    return {{ServerId("cur"), current}, {ServerId("con"), contender}, {ServerId("low"), Rational(1)}};
}

struct Db : ::testing::Test {
    ModelSecurity sec;
    DbServer db{sec, 4};
    const ServerId old_auth{"old"};
    const ServerId new_auth{"new"};
    const ServerId leaf{"leaf"};
    KeyPair k_old = sec.keygen(old_auth, 1);
    KeyPair k_new = sec.keygen(new_auth, 2);
    KeyPair k_leaf = sec.keygen(leaf, 3);
    SymmetricKey key = db.create_subtree(1, old_auth);
    NonceSource nonces{4, old_auth};

    void SetUp() override {
        for (const auto& [id, kp] : {std::pair{old_auth, k_old}, std::pair{new_auth, k_new}, std::pair{leaf, k_leaf}}) {
            db.records()[id] = DbRecord{id, new_ledger(id), old_auth, {}};
            db.register_key(id, kp.public_key);
        }
    }

    RotateRequest request(const SymmetricKey& with, const ServerId& sender) {
        RotateRequest::Inner inner{new_auth, old_auth, nonces.fresh()};
        return RotateRequest{sender, 1, sec.seal(inner.encode(), with)};
    }

    RotateConfirm confirm_for(const RotateGrant& g, int nonce_offset = 1) {
        auto inner = RotateGrant::Inner::decode(sec.open_sealed(new_auth, g.key_box, k_new.private_key));
        const SymmetricKey fresh = SymmetricKey::decode(inner.key_blob);
        Nonce n = inner.nonce;
        for (int i = 0; i < nonce_offset; ++i) n = n.plus_one();
        return RotateConfirm{new_auth, 1, sec.seal(n.encode(), fresh)};
    }
};

}  // namespace

TEST(Election, ChangeOnlyWhenContenderBeatsFactorTimesCurrent) {
    const Rational half(1, 2);
    auto d = elect_authority(subtree(18, 10), ServerId("cur"), half);
    EXPECT_TRUE(d.change);
    EXPECT_EQ(d.to, ServerId("con"));
    EXPECT_FALSE(elect_authority(subtree(18, 8), ServerId("cur"), half).change);
    EXPECT_FALSE(elect_authority(subtree(18, 9), ServerId("cur"), half).change);
    EXPECT_FALSE(elect_authority(subtree(7, 7), ServerId("cur"), Rational(1)).change);
}

TEST(Election, TiesGoToSmallestPseudonym) {
    std::map<ServerId, Rational> s{{ServerId("cur"), 1}, {ServerId("zed"), 5}, {ServerId("amy"), 5}};
    EXPECT_EQ(elect_authority(s, ServerId("cur"), Rational(1, 2)).contender, ServerId("amy"));
}

TEST(Election, LoneAuthorityKeeps) {
    std::map<ServerId, Rational> s{{ServerId("cur"), 0}};
    const auto d = elect_authority(s, ServerId("cur"), Rational(1, 2));
    EXPECT_FALSE(d.change);
    EXPECT_FALSE(d.contender.has_value());
}

TEST(Directory, DiffNamesMissingAndConflictingEntries) {
    AuthorityDirectory left;
    AuthorityDirectory right;
    left.add(ServerId("a"), ServerId("x"), PublicKeyId{});
    left.add(ServerId("b"), ServerId("x"), PublicKeyId{});
    right.add(ServerId("a"), ServerId("y"), PublicKeyId{});
    const auto diff = directory_diff("L", left, "R", right);
    ASSERT_EQ(diff.size(), 2u);
    EXPECT_NE(diff[0].find("a: L says x, R says y"), std::string::npos);
    EXPECT_NE(diff[1].find("R is missing b"), std::string::npos);
    right.add(ServerId("b"), ServerId("x"), PublicKeyId{});
    right.reassign(ServerId("y"), ServerId("x"));
    EXPECT_TRUE(directory_diff("L", left, "R", right).empty());
}

TEST_F(Db, HonestRotationLocksOutOldKey) {
    EXPECT_TRUE(db.access(old_auth, 1, db.access_token(old_auth, key)));
    auto res = db.handle_rotate_request(request(key, old_auth));
    ASSERT_TRUE(res.grant) << res.error;
    EXPECT_TRUE(db.rotation_pending(1));
    EXPECT_TRUE(sec.verify(res.grant->notice.signed_body(), res.grant->notice.sig, db.keys().public_key));

    const auto conf = db.handle_rotate_confirm(confirm_for(*res.grant));
    ASSERT_TRUE(conf.committed) << conf.error;
    EXPECT_EQ(db.authority_of_subtree(1), new_auth);
    EXPECT_EQ(db.members(new_auth).size(), 3u);
    EXPECT_FALSE(db.access(old_auth, 1, db.access_token(old_auth, key)));
    EXPECT_EQ(db.denied(old_auth), 1u);

    auto inner = RotateGrant::Inner::decode(sec.open_sealed(new_auth, res.grant->key_box, k_new.private_key));
    const SymmetricKey fresh = SymmetricKey::decode(inner.key_blob);
    EXPECT_TRUE(db.access(new_auth, 1, db.access_token(new_auth, fresh)));
}

TEST_F(Db, RequestWithoutSubtreeKeyIsRefused) {
    const SymmetricKey guess = sec.symmetric_key(12345);
    auto res = db.handle_rotate_request(request(guess, leaf));
    EXPECT_FALSE(res.grant);
    EXPECT_EQ(res.error, "unseal-failed");
    EXPECT_FALSE(db.rotation_pending(1));
}

TEST_F(Db, RequestFromNonAuthorityIsRefused) {
    auto res = db.handle_rotate_request(request(key, leaf));
    EXPECT_EQ(res.error, "not-current-authority");
}

TEST_F(Db, WrongConfirmNonceRollsBack) {
    auto res = db.handle_rotate_request(request(key, old_auth));
    ASSERT_TRUE(res.grant);
    const auto conf = db.handle_rotate_confirm(confirm_for(*res.grant, 2));
    EXPECT_FALSE(conf.committed);
    EXPECT_EQ(conf.error, "wrong-nonce");
    EXPECT_FALSE(db.rotation_pending(1));
    EXPECT_EQ(db.authority_of_subtree(1), old_auth);
    EXPECT_TRUE(db.access(old_auth, 1, db.access_token(old_auth, key)));
}

TEST_F(Db, SecondRequestWhilePendingIsRefused) {
    ASSERT_TRUE(db.handle_rotate_request(request(key, old_auth)).grant);
    EXPECT_EQ(db.handle_rotate_request(request(key, old_auth)).error, "rotation-in-progress");
}

TEST_F(Db, GrantOnlyOpensForNewAuthority) {
    auto res = db.handle_rotate_request(request(key, old_auth));
    ASSERT_TRUE(res.grant);
    EXPECT_ANY_THROW(sec.open_sealed(leaf, res.grant->key_box, k_leaf.private_key));
}
