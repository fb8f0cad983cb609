// Cryptographic envelope vocabulary shared by the protocol: digests,
// signatures, sealed boxes, nonces. Backends implement SecurityProvider.

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <mutex>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <sodium.h>

#include "servnet/bytes.hpp"
#include "servnet/ids.hpp"

namespace servnet {

using Hash = std::array<std::uint8_t, 32>;

inline void ensure_sodium() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
    });
}

/// SHA-256.
inline Hash digest(ByteView message) {
    ensure_sodium();
    Hash out{};
    crypto_hash_sha256(out.data(), message.data(), message.size());
    return out;
}

inline Hash digest(std::string_view text) {
    return digest(ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline ByteView as_view(const Hash& h) { return ByteView(h.data(), h.size()); }

class KeyNotHeld : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsealError : public std::runtime_error {
public:
    UnsealError() : std::runtime_error("unsealing failed") {}
};

struct PublicKeyId {
    Bytes bytes;

    std::string hex() const { return to_hex(bytes); }
    friend auto operator<=>(const PublicKeyId&, const PublicKeyId&) = default;
    friend bool operator==(const PublicKeyId&, const PublicKeyId&) = default;
};

struct PrivateKeyHandle {
    std::uint64_t id = 0;
    friend bool operator==(const PrivateKeyHandle&, const PrivateKeyHandle&) = default;
};

struct KeyPair {
    PublicKeyId public_key;
    PrivateKeyHandle private_key;
    ServerId owner;
};

struct Signature {
    PublicKeyId signer;
    Hash digest_of{};
    Bytes tag;

    friend bool operator==(const Signature&, const Signature&) = default;
};

/// Symmetric keys are plain values: holding the bytes is holding the key.
struct SymmetricKey {
    Bytes id;
    Bytes secret;

    friend bool operator==(const SymmetricKey&, const SymmetricKey&) = default;

    Bytes encode() const { return FieldWriter(0x70).bytes(id).bytes(secret).view(); }
    static SymmetricKey decode(ByteView data) {
        FieldReader r(data);
        if (r.tag() != 0x70) throw DecodeError("not a symmetric key blob");
        SymmetricKey k{r.owned(), r.owned()};
        r.expect_done();
        return k;
    }
};

struct SealedBox {
    enum class Kind : std::uint8_t { Symmetric = 1, ToPublicKey = 2 };
    Kind kind = Kind::Symmetric;
    Bytes key_id;
    Bytes payload;

    friend bool operator==(const SealedBox&, const SealedBox&) = default;
};

/// 128-bit nonce.
struct Nonce {
    unsigned __int128 value = 0;

    Nonce plus_one() const { return Nonce{value + 1}; }

    Bytes encode() const {
        Bytes out(16);
        for (int i = 0; i < 16; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value >> (120 - 8 * i));
        return out;
    }
    static Nonce decode(ByteView b) {
        if (b.size() != 16) throw DecodeError("nonce must be 16 bytes");
        Nonce n;
        for (auto byte : b) n.value = (n.value << 8) | byte;
        return n;
    }
    std::string hex() const { return to_hex(encode()); }

    friend auto operator<=>(const Nonce&, const Nonce&) = default;
    friend bool operator==(const Nonce&, const Nonce&) = default;
};

/// Initiator nonce followed by responder nonce.
struct TransactionId {
    Nonce initiator;
    Nonce responder;

    Bytes encode() const {
        Bytes out = initiator.encode();
        append(out, responder.encode());
        return out;
    }
    static TransactionId decode(ByteView b) {
        if (b.size() != 32) throw DecodeError("transaction id must be 32 bytes");
        return TransactionId{Nonce::decode(b.subspan(0, 16)), Nonce::decode(b.subspan(16, 16))};
    }
    std::string hex() const { return to_hex(encode()); }

    friend auto operator<=>(const TransactionId&, const TransactionId&) = default;
    friend bool operator==(const TransactionId&, const TransactionId&) = default;
};

class SecurityProvider {
public:
    virtual ~SecurityProvider() = default;

    virtual std::string name() const = 0;

    /// Deterministic for a given seed. The owner is the only node allowed
    /// to use the private half.
    virtual KeyPair keygen(const ServerId& owner, std::uint64_t seed) = 0;

    /// Throws KeyNotHeld when `caller` does not own `key`.
    virtual Signature sign(const ServerId& caller, ByteView message, PrivateKeyHandle key) = 0;

    virtual bool verify(ByteView message, const Signature& sig, const PublicKeyId& key) const = 0;

    virtual SymmetricKey symmetric_key(std::uint64_t seed) const = 0;

    virtual SealedBox seal(ByteView message, const SymmetricKey& key) const = 0;

    /// Throws UnsealError on a key mismatch or corrupted payload.
    virtual Bytes open(const SealedBox& box, const SymmetricKey& key) const = 0;

    virtual SealedBox seal_to(ByteView message, const PublicKeyId& recipient) const = 0;

    /// Throws KeyNotHeld if `caller` does not own `key`, UnsealError if the
    /// box was not addressed to it.
    virtual Bytes open_sealed(const ServerId& caller, const SealedBox& box, PrivateKeyHandle key) const = 0;

    /// Verifications that succeeded for a signature nobody issued. Always 0
    /// unless the backend is broken.
    virtual std::uint64_t unissued_verifications() const { return 0; }

    /// Successful opens with a key other than the sealing key.
    virtual std::uint64_t mismatched_opens() const { return 0; }
};

/// Per-node nonce stream drawn from the scenario seed. Never repeats.
class NonceSource {
public:
    NonceSource(std::uint64_t scenario_seed, const ServerId& node) {
        const Hash h = digest("nonce-stream:" + node.str());
        std::uint64_t node_word = 0;
        for (int i = 0; i < 8; ++i) node_word = (node_word << 8) | h[static_cast<std::size_t>(i)];
        std::seed_seq seq{static_cast<std::uint32_t>(scenario_seed), static_cast<std::uint32_t>(scenario_seed >> 32),
                          static_cast<std::uint32_t>(node_word), static_cast<std::uint32_t>(node_word >> 32)};
        rng_.seed(seq);
    }

    Nonce fresh() {
        for (;;) {
            Nonce n{(static_cast<unsigned __int128>(rng_()) << 64) | rng_()};
            if (emitted_.insert(n).second) return n;
        }
    }

private:
    std::mt19937_64 rng_;
    std::set<Nonce> emitted_;
};

/// Seen-nonce set per peer, kept for the whole run.
class NonceCache {
public:
    explicit NonceCache(bool enabled = true) : enabled_(enabled) {}

    /// False when `nonce` was already recorded for `peer`.
    bool check_and_record(const ServerId& peer, const Nonce& nonce) {
        if (!enabled_) return true;
        return seen_[peer].insert(nonce).second;
    }

    bool seen(const ServerId& peer, const Nonce& nonce) const {
        auto it = seen_.find(peer);
        return it != seen_.end() && it->second.contains(nonce);
    }

    bool enabled() const { return enabled_; }

private:
    bool enabled_;
    std::unordered_map<ServerId, std::set<Nonce>> seen_;
};

inline Bytes seed_bytes(std::string_view label, std::uint64_t seed) {
    Bytes out = to_bytes(label);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(seed >> (8 * i)));
    return out;
}

}  // namespace servnet
