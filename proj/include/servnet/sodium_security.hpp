// libsodium-backed provider: Ed25519 signatures over the SHA-256 digest,
// XSalsa20-Poly1305 secretbox for symmetric sealing, and X25519 boxes for
// sealing to a public key. Nonces are derived from the key and message so
// runs stay reproducible.

#pragma once

#include <vector>

#include "servnet/security.hpp"

namespace servnet {

class SodiumSecurity final : public SecurityProvider {
public:
    SodiumSecurity() { ensure_sodium(); }

    std::string name() const override { return "sodium"; }

    KeyPair keygen(const ServerId& owner, std::uint64_t seed) override {
        const Hash seed_hash = digest(seed_bytes("sodium-signing-seed", seed));
        Entry e{owner, Bytes(crypto_sign_PUBLICKEYBYTES), Bytes(crypto_sign_SECRETKEYBYTES)};
        crypto_sign_seed_keypair(e.pk.data(), e.sk.data(), seed_hash.data());
        for (std::size_t i = 0; i < keys_.size(); ++i) {
            if (keys_[i].pk == e.pk) {
                if (keys_[i].owner != owner) throw KeyNotHeld("key seed already owned by " + keys_[i].owner.str());
                return KeyPair{PublicKeyId{e.pk}, PrivateKeyHandle{i}, owner};
            }
        }
        keys_.push_back(e);
        return KeyPair{PublicKeyId{e.pk}, PrivateKeyHandle{keys_.size() - 1}, owner};
    }

    Signature sign(const ServerId& caller, ByteView message, PrivateKeyHandle key) override {
        const Entry& e = held(caller, key);
        Signature sig{PublicKeyId{e.pk}, digest(message), Bytes(crypto_sign_BYTES)};
        crypto_sign_detached(sig.tag.data(), nullptr, sig.digest_of.data(), sig.digest_of.size(), e.sk.data());
        return sig;
    }

    bool verify(ByteView message, const Signature& sig, const PublicKeyId& key) const override {
        if (sig.signer != key || key.bytes.size() != crypto_sign_PUBLICKEYBYTES) return false;
        if (sig.tag.size() != crypto_sign_BYTES) return false;
        if (sig.digest_of != digest(message)) return false;
        return crypto_sign_verify_detached(sig.tag.data(), sig.digest_of.data(), sig.digest_of.size(),
                                           key.bytes.data()) == 0;
    }

    SymmetricKey symmetric_key(std::uint64_t seed) const override {
        const Hash secret = digest(seed_bytes("sodium-symmetric-key", seed));
        Bytes id_input = to_bytes("sodium-key-id:");
        append(id_input, as_view(secret));
        const Hash id = digest(id_input);
        return SymmetricKey{Bytes(id.begin(), id.begin() + 16), Bytes(secret.begin(), secret.end())};
    }

    SealedBox seal(ByteView message, const SymmetricKey& key) const override {
        Bytes nonce_input = key.secret;
        append(nonce_input, message);
        const Hash nh = digest(nonce_input);
        Bytes payload(nh.begin(), nh.begin() + crypto_secretbox_NONCEBYTES);
        Bytes cipher(message.size() + crypto_secretbox_MACBYTES);
        crypto_secretbox_easy(cipher.data(), message.data(), message.size(), payload.data(), key.secret.data());
        append(payload, cipher);
        return SealedBox{SealedBox::Kind::Symmetric, key.id, std::move(payload)};
    }

    Bytes open(const SealedBox& box, const SymmetricKey& key) const override {
        if (box.kind != SealedBox::Kind::Symmetric || key.secret.size() != crypto_secretbox_KEYBYTES) {
            throw UnsealError();
        }
        constexpr std::size_t header = crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES;
        if (box.payload.size() < header) throw UnsealError();
        Bytes plain(box.payload.size() - header);
        const auto* nonce = box.payload.data();
        const auto* cipher = nonce + crypto_secretbox_NONCEBYTES;
        if (crypto_secretbox_open_easy(plain.data(), cipher, box.payload.size() - crypto_secretbox_NONCEBYTES, nonce,
                                       key.secret.data()) != 0) {
            throw UnsealError();
        }
        if (box.key_id != key.id) ++mismatched_;
        return plain;
    }

    SealedBox seal_to(ByteView message, const PublicKeyId& recipient) const override {
        if (recipient.bytes.size() != crypto_sign_PUBLICKEYBYTES) throw UnsealError();
        std::uint8_t curve_pk[crypto_box_PUBLICKEYBYTES];
        if (crypto_sign_ed25519_pk_to_curve25519(curve_pk, recipient.bytes.data()) != 0) throw UnsealError();

        Bytes eph_seed_input = recipient.bytes;
        append(eph_seed_input, message);
        const Hash eph_seed = digest(eph_seed_input);
        std::uint8_t eph_pk[crypto_box_PUBLICKEYBYTES];
        std::uint8_t eph_sk[crypto_box_SECRETKEYBYTES];
        crypto_box_seed_keypair(eph_pk, eph_sk, eph_seed.data());

        Bytes payload(eph_pk, eph_pk + crypto_box_PUBLICKEYBYTES);
        const Hash nonce = box_nonce(payload, recipient.bytes);
        Bytes cipher(message.size() + crypto_box_MACBYTES);
        if (crypto_box_easy(cipher.data(), message.data(), message.size(), nonce.data(), curve_pk, eph_sk) != 0) {
            throw std::runtime_error("crypto_box_easy failed");
        }
        sodium_memzero(eph_sk, sizeof eph_sk);
        append(payload, cipher);
        return SealedBox{SealedBox::Kind::ToPublicKey, recipient.bytes, std::move(payload)};
    }

    Bytes open_sealed(const ServerId& caller, const SealedBox& box, PrivateKeyHandle key) const override {
        const Entry& e = held(caller, key);
        if (box.kind != SealedBox::Kind::ToPublicKey || box.key_id != e.pk) throw UnsealError();
        constexpr std::size_t header = crypto_box_PUBLICKEYBYTES + crypto_box_MACBYTES;
        if (box.payload.size() < header) throw UnsealError();
        std::uint8_t curve_sk[crypto_box_SECRETKEYBYTES];
        if (crypto_sign_ed25519_sk_to_curve25519(curve_sk, e.sk.data()) != 0) throw UnsealError();
        const Bytes eph_pk(box.payload.begin(), box.payload.begin() + crypto_box_PUBLICKEYBYTES);
        const Hash nonce = box_nonce(eph_pk, e.pk);
        Bytes plain(box.payload.size() - header);
        const int rc = crypto_box_open_easy(plain.data(), box.payload.data() + crypto_box_PUBLICKEYBYTES,
                                            box.payload.size() - crypto_box_PUBLICKEYBYTES, nonce.data(),
                                            eph_pk.data(), curve_sk);
        sodium_memzero(curve_sk, sizeof curve_sk);
        if (rc != 0) throw UnsealError();
        return plain;
    }

    std::uint64_t mismatched_opens() const override { return mismatched_; }

private:
    struct Entry {
        ServerId owner;
        Bytes pk;
        Bytes sk;
    };

    const Entry& held(const ServerId& caller, PrivateKeyHandle key) const {
        if (key.id >= keys_.size()) throw KeyNotHeld("unknown key handle");
        const Entry& e = keys_[key.id];
        if (e.owner != caller) throw KeyNotHeld("key not held by " + caller.str());
        return e;
    }

    static Hash box_nonce(const Bytes& eph_pk, const Bytes& recipient) {
        Bytes input = eph_pk;
        append(input, recipient);
        return digest(input);
    }

    std::vector<Entry> keys_;
    mutable std::uint64_t mismatched_ = 0;
};

}  // namespace servnet
