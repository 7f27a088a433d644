#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "anongoss/bytes.hpp"
#include "anongoss/errors.hpp"
#include "anongoss/sim.hpp"
#include "anongoss/wire.hpp"

// Layered delegation routes. The origin nests one envelope per relay,
// innermost for the delegate; each relay peels one layer and learns only the
// token for its own hop, the upstream token for replies and the next hop.
// Every layer is sealed into the same size class, so neither route length nor
// a relay's position in the route is inferable from wire sizes.

namespace anongoss {

struct RouteTag {
    std::array<std::uint8_t, 16> v{};
    auto operator<=>(const RouteTag&) const = default;
    std::string hex() const { return to_hex(v); }
};

// All onion layers share one padded payload class.
inline constexpr std::uint32_t kOnionSizeClass = 1024;

enum class ReplyMode : std::uint8_t { Naive = 0, PerHopReenc = 1 };

struct OnionParams {
    int k_min = 5;
    int k_max = 20;
    Tick route_ttl_ticks = 1'000'000;
    ReplyMode reply_mode = ReplyMode::PerHopReenc;
};

// Ordered relay chain plus the delegate; k = relays.size().
struct RoutePlan {
    std::vector<PeerId> relays;
    PeerId delegate;

    std::size_t k() const { return relays.size(); }
};

// Relay-side knowledge about one relayed route: nothing beyond the two
// adjacent hops and the pairing tokens.
struct RouteHopState {
    RouteTag route_tag;
    PeerId upstream;
    RouteTag upstream_tag;
    std::optional<PeerId> downstream;  // nullopt = terminal hop
    Tick created_at = 0;
};

struct PeeledLayer {
    RouteTag tag;
    RouteTag reply_tag;
    bool terminal = false;
    PeerId next;           // valid when !terminal
    SealedEnvelope inner;  // valid when !terminal
    Bytes payload;         // valid when terminal
};

struct BuiltOnion {
    SealedEnvelope entry_env;
    RouteTag origin_tag;                // pairs the final reply to the origin
    std::vector<RouteTag> relay_tags;   // one per relay, in route order
    RouteTag terminal_tag;
};

struct ForwardAction {
    enum class Kind : std::uint8_t { Forward, DeliverLocal, Drop } kind = Kind::Drop;
    PeerId next;
    SealedEnvelope inner;
    Bytes payload;
    RouteTag tag;
};

class OnionRouter {
public:
    OnionRouter(Simulation& sim, OnionParams params = {}) : sim_(sim), params_(params) {
        if (params_.k_min < 1 || params_.k_max < params_.k_min) {
            throw InvalidSpec("onion route length range");
        }
    }

    const OnionParams& params() const { return params_; }
    void set_reply_mode(ReplyMode m) { params_.reply_mode = m; }

    // Delegate and k ~ U{k_min..k_max} relays drawn without replacement.
    RoutePlan plan_route(const std::vector<PeerId>& phi) {
        if (phi.size() < static_cast<std::size_t>(params_.k_max) + 1) throw PhiTooSmall();
        int k = static_cast<int>(sim_.rng().uniform_int(params_.k_min, params_.k_max));
        auto picks = sim_.rng().sample_indices(phi.size(), static_cast<std::size_t>(k) + 1);
        RoutePlan plan;
        plan.delegate = phi[picks[0]];
        plan.relays.reserve(static_cast<std::size_t>(k));
        for (int i = 1; i <= k; ++i) plan.relays.push_back(phi[picks[static_cast<std::size_t>(i)]]);
        return plan;
    }

    // Fresh relays toward a fixed delegate (delegation retries, pull probes).
    RoutePlan plan_route_to(const std::vector<PeerId>& phi, const PeerId& delegate) {
        std::vector<PeerId> pool;
        pool.reserve(phi.size());
        for (const auto& p : phi) {
            if (p != delegate) pool.push_back(p);
        }
        if (pool.size() < static_cast<std::size_t>(params_.k_max)) throw PhiTooSmall();
        int k = static_cast<int>(sim_.rng().uniform_int(params_.k_min, params_.k_max));
        auto picks = sim_.rng().sample_indices(pool.size(), static_cast<std::size_t>(k));
        RoutePlan plan;
        plan.delegate = delegate;
        for (auto i : picks) plan.relays.push_back(pool[i]);
        return plan;
    }

    // Innermost layer for the delegate, then one per relay from the last
    // toward the first. Every layer is sealed into kOnionSizeClass.
    BuiltOnion build_onion(const RoutePlan& plan, std::span<const std::uint8_t> payload) {
        if (plan.relays.empty()) throw InvalidSpec("route needs at least one relay");
        BuiltOnion out;
        sim_.rng().fill(out.origin_tag.v);
        sim_.rng().fill(out.terminal_tag.v);
        out.relay_tags.resize(plan.k());
        for (auto& t : out.relay_tags) sim_.rng().fill(t.v);

        const std::size_t k = plan.k();
        ByteWriter term;
        term.arr(out.terminal_tag.v);
        term.arr(out.relay_tags[k - 1].v);
        term.u8(1);
        term.blob(payload);
        SealedEnvelope env = seal_layer(plan.delegate, term.data());

        for (std::size_t i = k; i-- > 0;) {
            ByteWriter layer;
            layer.arr(out.relay_tags[i].v);
            layer.arr(i > 0 ? out.relay_tags[i - 1].v : out.origin_tag.v);
            layer.u8(0);
            const PeerId& next = (i + 1 < k) ? plan.relays[i + 1] : plan.delegate;
            layer.arr(next.v);
            layer.arr(env.id);
            layer.arr(env.recipient.v);
            layer.u32(env.klass);
            env = seal_layer(plan.relays[i], layer.data());
        }
        out.entry_env = env;
        return out;
    }

    // Builds, registers the origin-side reply terminal and ships the onion
    // to the first relay. `handle` pairs the eventual reply to caller state.
    BuiltOnion send_onion(NodeIx origin, const RoutePlan& plan,
                          std::span<const std::uint8_t> payload, std::uint64_t handle) {
        ensure_size();
        BuiltOnion built = build_onion(plan, payload);
        reply_terminals_[origin][built.origin_tag] = handle;
        ByteWriter w;
        w.u8(frame_byte(FrameType::Onion));
        w.raw(sim_.crypto().wire_bytes(built.entry_env));
        sim_.send(origin, plan.relays[0], w.take());
        return built;
    }

    // Peel without side effects; relays use peel_and_forward.
    PeeledLayer peel(NodeIx node, const SealedEnvelope& env) const {
        auto pt = sim_.crypto().try_open(env, sim_.secret_of(node));
        if (!pt) throw WrongKey();
        return parse_layer(*pt);
    }

    ForwardAction peel_and_forward(NodeIx node, const SealedEnvelope& env, const PeerId& from) {
        ensure_size();
        ForwardAction act;
        auto pt = sim_.crypto().try_open(env, sim_.secret_of(node));
        if (!pt) {
            sim_.bump("onion_wrongkey_drops");
            return act;
        }
        PeeledLayer layer;
        try {
            layer = parse_layer(*pt);
        } catch (const Malformed&) {
            sim_.bump("onion_malformed_drops");
            return act;
        }
        RouteHopState st;
        st.route_tag = layer.tag;
        st.upstream = from;
        st.upstream_tag = layer.reply_tag;
        st.downstream = layer.terminal ? std::nullopt : std::optional<PeerId>(layer.next);
        st.created_at = sim_.now();
        auto [it, inserted] = routes_[node].emplace(layer.tag, st);
        if (!inserted) throw InvariantError("route tag reuse at one relay");

        act.tag = layer.tag;
        if (layer.terminal) {
            act.kind = ForwardAction::Kind::DeliverLocal;
            act.payload = std::move(layer.payload);
        } else {
            act.kind = ForwardAction::Kind::Forward;
            act.next = layer.next;
            act.inner = layer.inner;
        }
        return act;
    }

    void handle_onion_frame(NodeIx at, const PeerId& from, ByteReader& r) {
        SealedEnvelope env = CryptoModel::envelope_from_wire(r);
        if (on_onion_received) on_onion_received(at, from);
        ForwardAction act = peel_and_forward(at, env, from);
        switch (act.kind) {
            case ForwardAction::Kind::Forward: {
                ByteWriter w;
                w.u8(frame_byte(FrameType::Onion));
                w.raw(sim_.crypto().wire_bytes(act.inner));
                sim_.send(at, act.next, w.take());
                break;
            }
            case ForwardAction::Kind::DeliverLocal:
                if (on_terminal_payload) on_terminal_payload(at, act.payload, act.tag, from);
                break;
            case ForwardAction::Kind::Drop:
                break;
        }
    }

    // Relay a reply one hop toward the route origin. In PerHopReenc mode the
    // blob is sealed to the upstream node's public key before sending; in
    // Naive mode the same bytes traverse every hop.
    void reply_upstream(NodeIx node, const RouteTag& tag, std::span<const std::uint8_t> blob,
                        ReplyMode mode) {
        ensure_size();
        auto it = routes_[node].find(tag);
        if (it == routes_[node].end()) throw UnknownRoute();
        const RouteHopState& st = it->second;
        if (!sim_.is_live(st.upstream)) throw UpstreamGone();
        ByteWriter w;
        w.u8(frame_byte(FrameType::Reply));
        w.arr(st.upstream_tag.v);
        if (mode == ReplyMode::PerHopReenc) {
            SealedEnvelope env = sim_.crypto().seal(st.upstream, blob, sim_.rng());
            w.blob(sim_.crypto().wire_bytes(env));
        } else {
            w.blob(blob);
        }
        sim_.send(node, st.upstream, w.take());
    }

    void handle_reply_frame(NodeIx at, const PeerId& /*from*/, ByteReader& r) {
        ensure_size();
        RouteTag tag;
        tag.v = r.arr<16>();
        Bytes body = r.blob();

        auto unwrap = [&](const Bytes& b) -> std::optional<Bytes> {
            if (params_.reply_mode == ReplyMode::Naive) return b;
            ByteReader er(b);
            SealedEnvelope env = CryptoModel::envelope_from_wire(er);
            auto pt = sim_.crypto().try_open(env, sim_.secret_of(at));
            if (!pt) {
                sim_.bump("reply_wrongkey_drops");
                return std::nullopt;
            }
            return *pt;
        };

        auto term = reply_terminals_[at].find(tag);
        if (term != reply_terminals_[at].end()) {
            auto blob = unwrap(body);
            if (blob && on_reply_at_origin) on_reply_at_origin(at, term->second, *blob);
            return;
        }
        if (routes_[at].count(tag) != 0) {
            auto blob = unwrap(body);
            if (!blob) return;
            try {
                reply_upstream(at, tag, *blob, params_.reply_mode);
            } catch (const UpstreamGone&) {
                sim_.bump("reply_upstream_gone");
            }
            return;
        }
        sim_.bump("reply_unknown_route");
    }

    // Removes relay state older than ttl; returns how many were dropped.
    std::size_t expire_routes(NodeIx node, Tick now, Tick ttl) {
        ensure_size();
        if (ttl <= 0) throw InvalidSpec("route ttl must be positive");
        auto& table = routes_[node];
        std::size_t removed = 0;
        for (auto it = table.begin(); it != table.end();) {
            if (now - it->second.created_at > ttl) {
                it = table.erase(it);
                ++removed;
            } else {
                ++it;
            }
        }
        return removed;
    }

    void on_node_departed(NodeIx node) {
        ensure_size();
        routes_[node].clear();
        reply_terminals_[node].clear();
    }

    const std::map<RouteTag, RouteHopState>& routes(NodeIx node) {
        ensure_size();
        return routes_[node];
    }

    std::function<void(NodeIx node, const Bytes& payload, const RouteTag& tag, const PeerId& upstream)>
        on_terminal_payload;
    std::function<void(NodeIx node, std::uint64_t handle, const Bytes& blob)> on_reply_at_origin;
    std::function<void(NodeIx node, const PeerId& from)> on_onion_received;

private:
    void ensure_size() {
        if (routes_.size() < sim_.node_count()) routes_.resize(sim_.node_count());
        if (reply_terminals_.size() < sim_.node_count()) reply_terminals_.resize(sim_.node_count());
    }

    SealedEnvelope seal_layer(const PeerId& to, std::span<const std::uint8_t> plaintext) {
        if (size_class(plaintext.size()) > kOnionSizeClass) {
            throw InvariantError("onion payload exceeds the layer size class");
        }
        return sim_.crypto().seal(to, plaintext, sim_.rng(), kOnionSizeClass);
    }

    static PeeledLayer parse_layer(std::span<const std::uint8_t> pt) {
        ByteReader r(pt);
        PeeledLayer layer;
        layer.tag.v = r.arr<16>();
        layer.reply_tag.v = r.arr<16>();
        layer.terminal = r.u8() != 0;
        if (layer.terminal) {
            layer.payload = r.blob();
        } else {
            layer.next.v = r.arr<32>();
            layer.inner.id = r.arr<16>();
            layer.inner.recipient.v = r.arr<32>();
            layer.inner.klass = r.u32();
        }
        return layer;
    }

    Simulation& sim_;
    OnionParams params_;
    std::vector<std::map<RouteTag, RouteHopState>> routes_;
    std::vector<std::map<RouteTag, std::uint64_t>> reply_terminals_;
};

}  // namespace anongoss
