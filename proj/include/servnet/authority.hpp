// Authority-side state: the node-authority directory, periodic election,
// and the database server that holds every subtree's sealed records and
// runs the key rotation on an authority change.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "servnet/messages.hpp"
#include "servnet/reputation.hpp"
#include "servnet/security.hpp"

namespace servnet {

struct AuthorityDirectory {
    std::map<ServerId, ServerId> node_to_authority;
    std::map<ServerId, PublicKeyId> public_keys;

    bool contains(const ServerId& node) const { return node_to_authority.contains(node); }

    std::optional<ServerId> authority_of(const ServerId& node) const {
        auto it = node_to_authority.find(node);
        if (it == node_to_authority.end()) return std::nullopt;
        return it->second;
    }

    std::optional<PublicKeyId> key_of(const ServerId& node) const {
        auto it = public_keys.find(node);
        if (it == public_keys.end()) return std::nullopt;
        return it->second;
    }

    void add(const ServerId& node, const ServerId& authority, const PublicKeyId& key) {
        node_to_authority[node] = authority;
        public_keys[node] = key;
    }

    void remove(const ServerId& node) {
        node_to_authority.erase(node);
        public_keys.erase(node);
    }

    void reassign(const ServerId& old_authority, const ServerId& new_authority) {
        for (auto& [node, auth] : node_to_authority) {
            if (auth == old_authority) auth = new_authority;
        }
    }

    friend bool operator==(const AuthorityDirectory&, const AuthorityDirectory&) = default;
};

/// Human-readable differences, one line per disagreeing entry.
inline std::vector<std::string> directory_diff(const std::string& left_name, const AuthorityDirectory& left,
                                               const std::string& right_name, const AuthorityDirectory& right) {
    std::vector<std::string> out;
    for (const auto& [node, auth] : left.node_to_authority) {
        auto it = right.node_to_authority.find(node);
        if (it == right.node_to_authority.end()) {
            out.push_back(right_name + " is missing " + node.str() + " (" + left_name + " maps it to " + auth.str() + ")");
        } else if (it->second != auth) {
            out.push_back(node.str() + ": " + left_name + " says " + auth.str() + ", " + right_name + " says " +
                          it->second.str());
        }
    }
    for (const auto& [node, auth] : right.node_to_authority) {
        if (!left.node_to_authority.contains(node)) {
            out.push_back(left_name + " is missing " + node.str() + " (" + right_name + " maps it to " + auth.str() + ")");
        }
    }
    return out;
}

struct ElectionDecision {
    bool change = false;
    std::optional<ServerId> contender;
    std::optional<ServerId> to;
};

/// The contender is the highest-GR member other than the current authority
/// (ties go to the lexicographically smallest pseudonym). It takes over iff
/// its GR is strictly greater than factor * GR(current).
inline ElectionDecision elect_authority(const std::map<ServerId, Rational>& subtree, const ServerId& current,
                                        const Rational& factor) {
    ElectionDecision d;
    const Rational* best = nullptr;
    for (const auto& [node, gr] : subtree) {
        if (node == current) continue;
        if (!best || gr > *best) {
            best = &gr;
            d.contender = node;
        }
    }
    if (!best) return d;
    auto it = subtree.find(current);
    const Rational current_gr = it == subtree.end() ? Rational(0) : it->second;
    if (*best > factor * current_gr) {
        d.change = true;
        d.to = d.contender;
    }
    return d;
}

struct DbRecord {
    ServerId node;
    ScoreLedger ledger;
    ServerId authority;
    std::map<TransactionId, Rational> pre_txn_reputation;

    Rational reputation() const { return global_reputation(ledger); }
};

/// The trusted database server. Access by an authority is granted only if
/// its request token opens under the subtree's current key.
class DbServer {
public:
    static ServerId id() { return ServerId("db-server"); }

    DbServer(SecurityProvider& security, std::uint64_t seed)
        : security_(&security), seed_(seed), nonces_(seed, id()) {
        keys_ = security.keygen(id(), seed ^ 0xdb5e7e7ULL);
    }

    const KeyPair& keys() const { return keys_; }

    SymmetricKey create_subtree(std::uint64_t subtree, const ServerId& authority) {
        SymmetricKey k = next_key();
        subtrees_[subtree] = Subtree{authority, k, std::nullopt};
        return k;
    }

    void retire_subtree(std::uint64_t subtree) { subtrees_.erase(subtree); }

    std::optional<ServerId> authority_of_subtree(std::uint64_t subtree) const {
        auto it = subtrees_.find(subtree);
        if (it == subtrees_.end()) return std::nullopt;
        return it->second.authority;
    }

    std::optional<std::uint64_t> subtree_of(const ServerId& authority) const {
        for (const auto& [id, st] : subtrees_) {
            if (st.authority == authority) return id;
        }
        return std::nullopt;
    }

    bool rotation_pending(std::uint64_t subtree) const {
        auto it = subtrees_.find(subtree);
        return it != subtrees_.end() && it->second.pending.has_value();
    }

    std::vector<std::uint64_t> subtree_ids() const {
        std::vector<std::uint64_t> out;
        for (const auto& [id, st] : subtrees_) out.push_back(id);
        return out;
    }

    /// Request token an authority presents with every access.
    SealedBox access_token(const ServerId& caller, const SymmetricKey& key) {
        return security_->seal(FieldWriter(0x74).text(caller.str()).u64(++token_counter_).view(), key);
    }

    /// True iff the token opens under the current key of `subtree`.
    bool access(const ServerId& caller, std::uint64_t subtree, const SealedBox& token) {
        auto it = subtrees_.find(subtree);
        bool ok = false;
        if (it != subtrees_.end()) {
            try {
                const Bytes plain = security_->open(token, it->second.key);
                FieldReader r(plain);
                ok = r.tag() == 0x74 && r.text() == caller.str();
            } catch (const UnsealError&) {
                ok = false;
            } catch (const DecodeError&) {
                ok = false;
            }
        }
        (ok ? granted_ : denied_)[caller] += 1;
        return ok;
    }

    std::uint64_t granted(const ServerId& caller) const {
        auto it = granted_.find(caller);
        return it == granted_.end() ? 0 : it->second;
    }
    std::uint64_t denied(const ServerId& caller) const {
        auto it = denied_.find(caller);
        return it == denied_.end() ? 0 : it->second;
    }

    // Records. The simulator gates these behind access().
    std::map<ServerId, DbRecord>& records() { return records_; }
    const std::map<ServerId, DbRecord>& records() const { return records_; }

    DbRecord* find(const ServerId& node) {
        auto it = records_.find(node);
        return it == records_.end() ? nullptr : &it->second;
    }

    std::vector<ServerId> members(const ServerId& authority) const {
        std::vector<ServerId> out;
        for (const auto& [node, rec] : records_) {
            if (rec.authority == authority) out.push_back(node);
        }
        return out;
    }

    struct RequestResult {
        std::optional<RotateGrant> grant;
        std::optional<ServerId> new_authority;
        std::string error;
    };

    /// Authority change message 1 -> message 2.
    RequestResult handle_rotate_request(const RotateRequest& req) {
        auto it = subtrees_.find(req.subtree);
        if (it == subtrees_.end()) return {std::nullopt, std::nullopt, "unknown subtree"};
        Subtree& st = it->second;
        RotateRequest::Inner inner;
        try {
            inner = RotateRequest::Inner::decode(security_->open(req.box, st.key));
        } catch (const UnsealError&) {
            return {std::nullopt, std::nullopt, "unseal-failed"};
        } catch (const DecodeError&) {
            return {std::nullopt, std::nullopt, "malformed"};
        }
        if (inner.old_authority != st.authority || req.sender != st.authority) {
            return {std::nullopt, std::nullopt, "not-current-authority"};
        }
        if (st.pending) return {std::nullopt, std::nullopt, "rotation-in-progress"};
        auto rec = records_.find(inner.new_authority);
        if (rec == records_.end()) return {std::nullopt, std::nullopt, "unknown-new-authority"};
        if (!public_keys_.contains(inner.new_authority)) return {std::nullopt, std::nullopt, "unknown-new-authority"};

        const SymmetricKey fresh = next_key();
        const Nonce n_db = nonces_.fresh();
        RotateGrant::Inner g;
        g.key_blob = fresh.encode();
        g.new_authority = inner.new_authority;
        g.nonce = n_db;
        g.sig = security_->sign(id(), g.signed_body(), keys_.private_key);

        AuthorityNotice notice;
        notice.db = id();
        notice.new_authority = inner.new_authority;
        notice.old_authority = st.authority;
        notice.nonce = n_db;
        notice.sig = security_->sign(id(), notice.signed_body(), keys_.private_key);

        RotateGrant grant;
        grant.db = id();
        grant.subtree = req.subtree;
        grant.key_box = security_->seal_to(g.encode(), public_keys_.at(inner.new_authority));
        grant.notice = notice;
        st.pending = Pending{inner.new_authority, fresh, n_db, notice};
        return {grant, inner.new_authority, {}};
    }

    struct ConfirmResult {
        bool committed = false;
        std::string error;
        ServerId old_authority;
        ServerId new_authority;
        std::optional<AuthorityNotice> notice;
    };

    /// Authority change message 3. Commits the rotation: the old key stops
    /// opening anything and the records move to the new authority.
    ConfirmResult handle_rotate_confirm(const RotateConfirm& conf) {
        auto it = subtrees_.find(conf.subtree);
        if (it == subtrees_.end() || !it->second.pending) return {false, "no-pending-rotation", {}, {}, std::nullopt};
        Subtree& st = it->second;
        const Pending p = *st.pending;
        ConfirmResult out{false, {}, st.authority, p.new_authority, std::nullopt};
        if (conf.sender != p.new_authority) {
            out.error = "wrong-sender";
            return out;
        }
        std::optional<Nonce> got;
        try {
            got = Nonce::decode(security_->open(conf.box, p.key));
        } catch (const UnsealError&) {
        } catch (const DecodeError&) {
        }
        if (!got || *got != p.nonce.plus_one()) {
            st.pending.reset();
            out.error = got ? "wrong-nonce" : "unseal-failed";
            return out;
        }
        st.authority = p.new_authority;
        st.key = p.key;
        st.pending.reset();
        for (auto& [node, rec] : records_) {
            if (rec.authority == out.old_authority) rec.authority = p.new_authority;
        }
        out.committed = true;
        out.notice = p.notice;
        return out;
    }

    void abandon_rotation(std::uint64_t subtree) {
        auto it = subtrees_.find(subtree);
        if (it != subtrees_.end()) it->second.pending.reset();
    }

    void register_key(const ServerId& node, const PublicKeyId& key) { public_keys_[node] = key; }
    void forget_key(const ServerId& node) { public_keys_.erase(node); }

    /// Node-authority table as recorded in the database.
    AuthorityDirectory directory() const {
        AuthorityDirectory d;
        for (const auto& [node, rec] : records_) {
            auto k = public_keys_.find(node);
            if (k != public_keys_.end()) d.add(node, rec.authority, k->second);
        }
        return d;
    }

private:
    struct Pending {
        ServerId new_authority;
        SymmetricKey key;
        Nonce nonce;
        AuthorityNotice notice;
    };
    struct Subtree {
        ServerId authority;
        SymmetricKey key;
        std::optional<Pending> pending;
    };

    SymmetricKey next_key() { return security_->symmetric_key(seed_ * 1000003ULL + (++key_counter_)); }

    SecurityProvider* security_;
    std::uint64_t seed_;
    NonceSource nonces_;
    KeyPair keys_;
    std::uint64_t key_counter_ = 0;
    std::uint64_t token_counter_ = 0;
    std::map<std::uint64_t, Subtree> subtrees_;
    std::map<ServerId, DbRecord> records_;
    std::map<ServerId, PublicKeyId> public_keys_;
    std::map<ServerId, std::uint64_t> granted_;
    std::map<ServerId, std::uint64_t> denied_;
};

}  // namespace servnet
