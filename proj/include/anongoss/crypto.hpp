#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>

#include "anongoss/bytes.hpp"
#include "anongoss/detail/sha256.hpp"
#include "anongoss/errors.hpp"
#include "anongoss/rng.hpp"

// Simulation-faithful envelope model. Public-key envelopes are backed by a
// run-scoped registry: the wire form of an envelope is an opaque random
// handle plus size-class padding, and the plaintext is reachable only through
// open() with the matching SecretKey. This preserves the information-flow
// semantics the experiments measure (who can read what, which bytes look
// alike on the wire, what message sizes reveal) without real ciphers.
// Symmetric encryption, signatures and match tags use a real keyed digest so
// they behave like their hardened counterparts under tampering.

namespace anongoss {

// Public key doubling as the peer's logical identity.
struct PeerId {
    std::array<std::uint8_t, 32> v{};

    auto operator<=>(const PeerId&) const = default;

    std::span<const std::uint8_t> bytes() const { return v; }
    std::string short_hex() const { return to_hex(std::span(v).first(6)); }
};

struct SymKey {
    std::array<std::uint8_t, 32> v{};
    auto operator<=>(const SymKey&) const = default;
};

// Deterministic recognizability digest of (key, plaintext).
struct MatchTag {
    std::array<std::uint8_t, 32> v{};
    auto operator<=>(const MatchTag&) const = default;
    std::string hex() const { return to_hex(v); }
};

struct SecretKey {
    PeerId owner;
    std::array<std::uint8_t, 32> material{};
};

struct KeyPair {
    PeerId public_id;
    SecretKey secret;
};

using EnvId = std::array<std::uint8_t, 16>;

// Handle to a registry-backed ciphertext. `klass` is the padded payload size
// the envelope presents on the wire; wire size is 48 + klass for every
// envelope of the same class regardless of actual content.
struct SealedEnvelope {
    EnvId id{};
    PeerId recipient;
    std::uint32_t klass = 0;

    std::size_t wire_size() const { return 16 + 32 + klass; }
};

struct SymCiphertext {
    Bytes data;  // nonce(16) || ct || mac(32)
    auto operator<=>(const SymCiphertext&) const = default;
};

struct Signature {
    PeerId signer;
    std::array<std::uint8_t, 32> sig{};
    auto operator<=>(const Signature&) const = default;
};

inline constexpr std::size_t kMinSizeClass = 64;

// Smallest power of two >= max(n, kMinSizeClass).
inline std::uint32_t size_class(std::size_t n) {
    std::size_t c = kMinSizeClass;
    while (c < n) c <<= 1;
    return static_cast<std::uint32_t>(c);
}

// One instance per simulation run. Never shared between runs.
class CryptoModel {
public:
    KeyPair keygen(SeededRng& rng) {
        PeerId pub;
        do {
            rng.fill(pub.v);
        } while (keys_.count(pub) != 0);
        SecretKey sk;
        sk.owner = pub;
        rng.fill(sk.material);
        keys_.emplace(pub, sk.material);
        return KeyPair{pub, sk};
    }

    bool is_registered(const PeerId& id) const { return keys_.count(id) != 0; }
    std::size_t key_count() const { return keys_.size(); }

    SealedEnvelope seal(const PeerId& recipient, std::span<const std::uint8_t> plaintext,
                        SeededRng& rng, std::uint32_t pad_class = 0) {
        if (keys_.count(recipient) == 0) throw UnknownRecipient();
        std::uint32_t klass = size_class(plaintext.size());
        if (pad_class != 0) {
            if (pad_class < klass) throw InvariantError("seal: payload exceeds requested size class");
            klass = pad_class;
        }
        SealedEnvelope env;
        do {
            rng.fill(env.id);
        } while (envelopes_.count(env.id) != 0);
        env.recipient = recipient;
        env.klass = klass;
        envelopes_.emplace(env.id, EnvRecord{recipient, Bytes(plaintext.begin(), plaintext.end())});
        return env;
    }

    Bytes open(const SealedEnvelope& env, const SecretKey& secret) const {
        auto it = envelopes_.find(env.id);
        if (it == envelopes_.end()) throw Malformed("unknown envelope");
        const EnvRecord& rec = it->second;
        if (rec.recipient != secret.owner || !secret_matches(secret)) throw WrongKey();
        return rec.plaintext;
    }

    std::optional<Bytes> try_open(const SealedEnvelope& env, const SecretKey& secret) const {
        auto it = envelopes_.find(env.id);
        if (it == envelopes_.end()) return std::nullopt;
        if (it->second.recipient != secret.owner || !secret_matches(secret)) return std::nullopt;
        return it->second.plaintext;
    }

    // Wire form: id(16) || recipient(32) || filler(klass). Filler is a
    // pseudo-random expansion of the envelope id, so equal handles expand to
    // equal bytes and distinct handles never collide.
    Bytes wire_bytes(const SealedEnvelope& env) const {
        ByteWriter w;
        w.arr(env.id);
        w.arr(env.recipient.v);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x = (x << 8) | env.id[i];
        std::uint64_t y = 0;
        for (int i = 8; i < 16; ++i) y = (y << 8) | env.id[i];
        x ^= y * 0x9e3779b97f4a7c15ull;
        Bytes filler(env.klass);
        std::size_t i = 0;
        while (i < filler.size()) {
            std::uint64_t v = detail::splitmix64(x);
            for (int b = 0; b < 8 && i < filler.size(); ++b, ++i) {
                filler[i] = static_cast<std::uint8_t>(v >> (8 * b));
            }
        }
        w.raw(filler);
        return w.take();
    }

    static SealedEnvelope envelope_from_wire(ByteReader& r) {
        SealedEnvelope env;
        env.id = r.arr<16>();
        env.recipient.v = r.arr<32>();
        auto rest = r.remaining();
        env.klass = static_cast<std::uint32_t>(rest);
        r.raw(rest);
        return env;
    }

    SymKey gen_sym_key(SeededRng& rng) {
        SymKey k;
        rng.fill(k.v);
        return k;
    }

    SymCiphertext sym_seal(const SymKey& key, std::span<const std::uint8_t> plaintext,
                           SeededRng& rng) const {
        SymCiphertext ct;
        ct.data.resize(16);
        rng.fill(ct.data);
        Bytes stream = keystream(key, std::span(ct.data).first(16), plaintext.size());
        for (std::size_t i = 0; i < plaintext.size(); ++i) {
            ct.data.push_back(plaintext[i] ^ stream[i]);
        }
        auto mac = sym_mac(key, ct.data);
        ct.data.insert(ct.data.end(), mac.begin(), mac.end());
        return ct;
    }

    Bytes sym_open(const SymCiphertext& ct, const SymKey& key) const {
        if (ct.data.size() < 48) throw Malformed("short ciphertext");
        std::span<const std::uint8_t> nonce(ct.data.data(), 16);
        std::size_t body_len = ct.data.size() - 48;
        std::span<const std::uint8_t> body(ct.data.data() + 16, body_len);
        std::span<const std::uint8_t> mac(ct.data.data() + 16 + body_len, 32);
        auto expect = sym_mac(key, std::span(ct.data.data(), 16 + body_len));
        if (!std::equal(mac.begin(), mac.end(), expect.begin())) throw WrongKey();
        Bytes stream = keystream(key, nonce, body_len);
        Bytes out(body_len);
        for (std::size_t i = 0; i < body_len; ++i) out[i] = body[i] ^ stream[i];
        return out;
    }

    MatchTag match_tag(const SymKey& key, std::span<const std::uint8_t> plaintext) {
        detail::Sha256 h;
        std::uint8_t dom = 0x54;
        h.update(&dom, 1);
        h.update(key.v.data(), key.v.size());
        std::uint64_t n = plaintext.size();
        h.update(&n, 8);
        h.update(plaintext);
        MatchTag tag{h.finish()};
        // Registry check: distinct (key, plaintext) pairs must never share a
        // tag within a run.
        auto [it, inserted] = tags_.try_emplace(tag, TagEntry{key, Bytes(plaintext.begin(), plaintext.end())});
        if (!inserted) {
            const TagEntry& e = it->second;
            if (e.key != key || e.msg.size() != plaintext.size() ||
                !std::equal(e.msg.begin(), e.msg.end(), plaintext.begin())) {
                throw InvariantError("match tag collision");
            }
        }
        return tag;
    }

    std::size_t tag_registry_size() const { return tags_.size(); }

    Signature sign(const SecretKey& secret, std::span<const std::uint8_t> msg) const {
        if (!secret_matches(secret)) throw WrongKey();
        detail::Sha256 h;
        std::uint8_t dom = 0x53;
        h.update(&dom, 1);
        h.update(secret.material.data(), secret.material.size());
        h.update(msg);
        return Signature{secret.owner, h.finish()};
    }

    bool verify(const PeerId& signer, std::span<const std::uint8_t> msg,
                const Signature& sig) const {
        if (sig.signer != signer) return false;
        auto it = keys_.find(signer);
        if (it == keys_.end()) return false;
        detail::Sha256 h;
        std::uint8_t dom = 0x53;
        h.update(&dom, 1);
        h.update(it->second.data(), it->second.size());
        h.update(msg);
        return h.finish() == sig.sig;
    }

private:
    struct EnvRecord {
        PeerId recipient;
        Bytes plaintext;
    };
    struct TagEntry {
        SymKey key;
        Bytes msg;
    };

    bool secret_matches(const SecretKey& secret) const {
        auto it = keys_.find(secret.owner);
        return it != keys_.end() && it->second == secret.material;
    }

    Bytes keystream(const SymKey& key, std::span<const std::uint8_t> nonce, std::size_t n) const {
        Bytes out;
        out.reserve(n + 32);
        std::uint64_t ctr = 0;
        while (out.size() < n) {
            detail::Sha256 h;
            std::uint8_t dom = 0x4b;
            h.update(&dom, 1);
            h.update(key.v.data(), key.v.size());
            h.update(nonce);
            h.update(&ctr, 8);
            auto block = h.finish();
            out.insert(out.end(), block.begin(), block.end());
            ++ctr;
        }
        out.resize(n);
        return out;
    }

    detail::Sha256::Digest sym_mac(const SymKey& key, std::span<const std::uint8_t> data) const {
        detail::Sha256 h;
        std::uint8_t dom = 0x4d;
        h.update(&dom, 1);
        h.update(key.v.data(), key.v.size());
        h.update(data);
        return h.finish();
    }

    std::map<PeerId, std::array<std::uint8_t, 32>> keys_;
    std::map<EnvId, EnvRecord> envelopes_;
    std::map<MatchTag, TagEntry> tags_;
};

}  // namespace anongoss
