// Registry-enforced security model. Key possession is tracked explicitly,
// so a node that tries to use someone else's private key gets KeyNotHeld
// instead of a signature. Tags and keystreams are SHA-256 based; nothing
// here is meant to resist real cryptanalysis.

#pragma once

#include <map>
#include <set>
#include <utility>
#include <vector>

#include "servnet/security.hpp"

namespace servnet {

class ModelSecurity final : public SecurityProvider {
public:
    std::string name() const override { return "model"; }

    KeyPair keygen(const ServerId& owner, std::uint64_t seed) override {
        const Hash secret = digest(seed_bytes("model-signing-key", seed));
        Bytes pk_input = to_bytes("model-public:");
        append(pk_input, as_view(secret));
        const Hash pk_hash = digest(pk_input);
        PublicKeyId pk{Bytes(pk_hash.begin(), pk_hash.end())};

        if (auto it = by_public_.find(pk); it != by_public_.end()) {
            const auto& entry = keys_[it->second];
            if (entry.owner != owner) throw KeyNotHeld("key seed already owned by " + entry.owner.str());
            return KeyPair{pk, PrivateKeyHandle{it->second}, owner};
        }
        const std::uint64_t handle = keys_.size();
        keys_.push_back(Entry{owner, pk, secret});
        by_public_.emplace(pk, handle);
        return KeyPair{pk, PrivateKeyHandle{handle}, owner};
    }

    Signature sign(const ServerId& caller, ByteView message, PrivateKeyHandle key) override {
        if (key.id >= keys_.size()) throw KeyNotHeld("unknown key handle");
        const auto& entry = keys_[key.id];
        if (entry.owner != caller) throw KeyNotHeld("key not held by " + caller.str());
        Signature sig{entry.public_key, digest(message), {}};
        sig.tag = tag_for(entry.secret, sig.digest_of);
        issued_.emplace(entry.public_key, sig.digest_of);
        return sig;
    }

    bool verify(ByteView message, const Signature& sig, const PublicKeyId& key) const override {
        if (sig.signer != key) return false;
        if (sig.digest_of != digest(message)) return false;
        auto it = by_public_.find(key);
        if (it == by_public_.end()) return false;
        if (sig.tag != tag_for(keys_[it->second].secret, sig.digest_of)) return false;
        if (!issued_.contains({key, sig.digest_of})) ++unissued_;
        return true;
    }

    SymmetricKey symmetric_key(std::uint64_t seed) const override {
        const Hash secret = digest(seed_bytes("model-symmetric-key", seed));
        Bytes id_input = to_bytes("model-key-id:");
        append(id_input, as_view(secret));
        const Hash id = digest(id_input);
        return SymmetricKey{Bytes(id.begin(), id.begin() + 16), Bytes(secret.begin(), secret.end())};
    }

    SealedBox seal(ByteView message, const SymmetricKey& key) const override {
        return SealedBox{SealedBox::Kind::Symmetric, key.id, encrypt(key.secret, message)};
    }

    Bytes open(const SealedBox& box, const SymmetricKey& key) const override {
        if (box.kind != SealedBox::Kind::Symmetric || box.key_id != key.id) throw UnsealError();
        Bytes plain = decrypt(key.secret, box.payload);
        return plain;
    }

    SealedBox seal_to(ByteView message, const PublicKeyId& recipient) const override {
        auto it = by_public_.find(recipient);
        if (it == by_public_.end()) throw UnsealError();
        return SealedBox{SealedBox::Kind::ToPublicKey, recipient.bytes, encrypt(box_secret(keys_[it->second].secret), message)};
    }

    Bytes open_sealed(const ServerId& caller, const SealedBox& box, PrivateKeyHandle key) const override {
        if (key.id >= keys_.size()) throw KeyNotHeld("unknown key handle");
        const auto& entry = keys_[key.id];
        if (entry.owner != caller) throw KeyNotHeld("key not held by " + caller.str());
        if (box.kind != SealedBox::Kind::ToPublicKey || box.key_id != entry.public_key.bytes) throw UnsealError();
        return decrypt(box_secret(entry.secret), box.payload);
    }

    std::uint64_t unissued_verifications() const override { return unissued_; }

private:
    struct Entry {
        ServerId owner;
        PublicKeyId public_key;
        Hash secret;
    };

    template <typename Secret>
    static Bytes keyed(std::string_view label, const Secret& secret, ByteView data) {
        Bytes input = to_bytes(label);
        input.insert(input.end(), secret.begin(), secret.end());
        append(input, data);
        const Hash h = digest(input);
        return Bytes(h.begin(), h.end());
    }

    static Bytes tag_for(const Hash& secret, const Hash& d) { return keyed("model-sig:", secret, as_view(d)); }

    static Bytes box_secret(const Hash& secret) {
        Bytes s = keyed("model-box:", secret, {});
        return s;
    }

    // payload = (message XOR keystream) || 32-byte integrity tag
    template <typename Secret>
    static Bytes encrypt(const Secret& secret, ByteView message) {
        Bytes out(message.begin(), message.end());
        xor_stream(secret, out);
        append(out, keyed("model-seal-tag:", secret, message));
        return out;
    }

    template <typename Secret>
    static Bytes decrypt(const Secret& secret, const Bytes& payload) {
        if (payload.size() < 32) throw UnsealError();
        Bytes plain(payload.begin(), payload.end() - 32);
        xor_stream(secret, plain);
        const Bytes expected = keyed("model-seal-tag:", secret, plain);
        if (!std::equal(expected.begin(), expected.end(), payload.end() - 32)) throw UnsealError();
        return plain;
    }

    template <typename Secret>
    static void xor_stream(const Secret& secret, Bytes& data) {
        std::uint64_t counter = 0;
        for (std::size_t off = 0; off < data.size(); off += 32, ++counter) {
            const Bytes block = keyed("model-stream:", secret, seed_bytes("", counter));
            for (std::size_t i = 0; i < 32 && off + i < data.size(); ++i) data[off + i] ^= block[i];
        }
    }

    std::vector<Entry> keys_;
    std::map<PublicKeyId, std::uint64_t> by_public_;
    std::set<std::pair<PublicKeyId, Hash>> issued_;
    mutable std::uint64_t unissued_ = 0;
};

}  // namespace servnet
