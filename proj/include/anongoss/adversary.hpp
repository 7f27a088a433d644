#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "anongoss/delegation.hpp"
#include "anongoss/onion.hpp"
#include "anongoss/result_return.hpp"
#include "anongoss/sim.hpp"

// Threat harness. Adversaries are honest-but-curious: they follow the
// protocol and pool what their members stored plus what the public trace
// shows. Knowledge enters only through node state accessors and the link
// trace; plaintexts stay behind the crypto API.

namespace anongoss {

struct CollusionSet {
    std::set<PeerId> members;
};

struct AnonymityReport {
    std::uint64_t route_handle = 0;
    std::set<PeerId> candidates;  // possible origins, adversary's view
    double degree = 1.0;          // normalized posterior entropy in [0,1]
    bool fully_deanonymized = false;
};

struct SnifferReport {
    bool chain_found = false;
    std::size_t max_chain_hops = 0;  // transmissions linked by equal bytes
    PeerId terminal_guess;
    bool identified = false;
    double degree = 1.0;
};

// Degree as normalized entropy of a uniform posterior over the candidates.
inline double anonymity_degree(std::size_t candidates, std::size_t n_honest) {
    if (candidates <= 1) return 0.0;
    if (n_honest <= 1) return 0.0;
    double d = std::log2(static_cast<double>(candidates)) /
               std::log2(static_cast<double>(n_honest));
    return d > 1.0 ? 1.0 : d;
}

class Adversary {
public:
    Adversary(Simulation& sim, OnionRouter& onion, DelegationService& delegation,
              ResultReturnService& result_return)
        : sim_(sim), onion_(onion), delegation_(delegation), result_return_(result_return) {}

    // Colluding relays pool their per-hop states for the target route and
    // stitch contiguous chains by matching adjacency. Size classes hide k,
    // so the chain pins the origin exactly when every relay on the route
    // colludes: then the head's upstream cannot be yet another relay.
    AnonymityReport analyze_collusion(const CollusionSet& cs, const PendingDelegation& route) {
        AnonymityReport rep;
        rep.route_handle = route.handle;
        const std::size_t k = route.relays.size();

        std::set<PeerId> observed_downstream;
        std::size_t colluding_relays = 0;
        PeerId head_upstream;
        bool have_head = false;
        for (std::size_t i = 0; i < k; ++i) {
            if (cs.members.count(route.relays[i]) == 0) continue;
            ++colluding_relays;
            auto ix = sim_.index_of(route.relays[i]);
            if (!ix) throw UnknownRoute();
            const auto& table = onion_.routes(*ix);
            auto st = table.find(route.relay_tags[i]);
            if (st == table.end()) throw UnknownRoute();
            if (st->second.downstream) observed_downstream.insert(*st->second.downstream);
            if (i == 0) {
                head_upstream = st->second.upstream;
                have_head = true;
            }
        }

        rep.fully_deanonymized = (colluding_relays == k);
        std::size_t n_honest = 0;
        for (NodeIx n = 0; n < sim_.node_count(); ++n) {
            if (cs.members.count(sim_.peer_id(n)) == 0) ++n_honest;
        }
        if (rep.fully_deanonymized && have_head) {
            rep.candidates = {head_upstream};
            rep.degree = 0.0;
            return rep;
        }
        for (NodeIx n = 0; n < sim_.node_count(); ++n) {
            const PeerId& id = sim_.peer_id(n);
            if (cs.members.count(id) != 0) continue;
            if (observed_downstream.count(id) != 0) continue;
            rep.candidates.insert(id);
        }
        rep.degree = anonymity_degree(rep.candidates.size(), n_honest);
        return rep;
    }

    // Everything the delegate alone can rule out about one task's origin:
    // itself and the immediate upstream of the delegation route and of every
    // probe route that asked for the task (with k >= 1 those upstreams are
    // relays, never the origin).
    AnonymityReport delegate_view(const PendingDelegation& route) {
        AnonymityReport rep;
        rep.route_handle = route.handle;
        auto ix = sim_.index_of(route.delegate);
        if (!ix) throw UnknownTask();
        const auto& table = onion_.routes(*ix);

        std::set<PeerId> excluded;
        excluded.insert(route.delegate);
        auto tag_upstream = [&](const RouteTag& tag) {
            auto st = table.find(tag);
            if (st != table.end()) excluded.insert(st->second.upstream);
        };
        tag_upstream(route.terminal_tag);
        if (const auto* probes = result_return_.probes_seen(*ix, route.tag)) {
            for (const auto& t : *probes) tag_upstream(t);
        }

        for (NodeIx n = 0; n < sim_.node_count(); ++n) {
            const PeerId& id = sim_.peer_id(n);
            if (excluded.count(id) == 0) rep.candidates.insert(id);
        }
        rep.degree = anonymity_degree(rep.candidates.size(), sim_.node_count() - 1);
        rep.fully_deanonymized = rep.candidates.size() == 1;
        return rep;
    }

    // -- passive sniffer -------------------------------------------------------

    // Reply frames carry a hop-local routing tag plus an opaque body; the
    // sniffer links transmissions whose bodies are byte-identical and walks
    // the chain to its terminal receiver.
    struct ReplySighting {
        Bytes body;
        PeerId from;
        PeerId to;
        Tick at;
    };

    static std::vector<ReplySighting> reply_sightings(const std::vector<LinkTransmission>& trace,
                                                      Tick from_tick, Tick to_tick) {
        std::vector<ReplySighting> out;
        for (const auto& t : trace) {
            if (t.kind != frame_byte(FrameType::Reply) || t.at < from_tick || t.at > to_tick) {
                continue;
            }
            if (t.wire.empty()) throw MissingData("sniffer needs wire recording");
            ByteReader r(t.wire);
            r.u8();
            r.arr<16>();
            out.push_back(ReplySighting{r.blob(), t.from, t.to, t.at});
        }
        return out;
    }

    // Longest byte-equality chain and its terminal within a trace window.
    SnifferReport sniff_reply_window(Tick from_tick, Tick to_tick, SeededRng& guess_rng) {
        SnifferReport rep;
        auto sightings = reply_sightings(sim_.trace(), from_tick, to_tick);
        std::map<Bytes, std::vector<const ReplySighting*>> groups;
        for (const auto& s : sightings) groups[s.body].push_back(&s);

        for (auto& [body, group] : groups) {
            if (group.size() <= rep.max_chain_hops) continue;
            // Walk the chain in time order and confirm path continuity.
            bool continuous = true;
            for (std::size_t i = 1; i < group.size(); ++i) {
                if (group[i]->from != group[i - 1]->to) continuous = false;
            }
            if (!continuous) continue;
            rep.max_chain_hops = group.size();
            rep.terminal_guess = group.back()->to;
            rep.chain_found = group.size() >= 2;
        }
        if (!rep.chain_found) {
            // No linkable evidence: uniform guess over the population.
            NodeIx g = static_cast<NodeIx>(guess_rng.uniform_u64(sim_.node_count()));
            rep.terminal_guess = sim_.peer_id(g);
            rep.degree = 1.0;
        } else {
            rep.degree = 0.0;
        }
        return rep;
    }

    // Count of distinct reply bodies seen on two or more links (should be
    // zero under per-hop re-encryption).
    std::size_t multi_hop_equal_bodies(Tick from_tick, Tick to_tick) {
        auto sightings = reply_sightings(sim_.trace(), from_tick, to_tick);
        std::map<Bytes, std::size_t> counts;
        for (const auto& s : sightings) counts[s.body]++;
        std::size_t chains = 0;
        for (const auto& [body, c] : counts) {
            if (c >= 2) ++chains;
        }
        return chains;
    }

    // -- state hygiene scans --------------------------------------------------

    // Byte-level grep of the delegate's stored task record for the origin's
    // identity. The record must contain zero origin bytes.
    bool task_state_clean(const PendingDelegation& route) {
        auto dix = sim_.index_of(route.delegate);
        if (!dix) return false;
        const auto* idxs = delegation_.task_indices_by_tag(*dix, route.tag);
        if (idxs == nullptr || idxs->empty()) return false;
        const PeerId& origin = sim_.peer_id(route.origin);
        for (std::size_t i : *idxs) {
            const DelegatedTask& task = delegation_.tasks(*dix)[i];
            ByteWriter w;
            w.raw(serialize_profile(task.profile));
            w.arr(task.reply_key.v);
            w.arr(task.tag.v);
            w.arr(task.route_tag.v);
            for (double v : task.result) w.f64(v);
            if (contains_bytes(w.data(), origin.v)) return false;
        }
        return true;
    }

    // Every relay on the route stored exactly its two adjacent hops, and the
    // delegate's terminal state points at the last relay. This also pins the
    // hygiene bound: the origin id occurs in route state only as the first
    // relay's upstream neighbor.
    bool knowledge_bound_ok(const PendingDelegation& route) {
        const std::size_t k = route.relays.size();
        for (std::size_t i = 0; i < k; ++i) {
            auto ix = sim_.index_of(route.relays[i]);
            if (!ix) return false;
            const auto& table = onion_.routes(*ix);
            auto st = table.find(route.relay_tags[i]);
            if (st == table.end()) return false;
            const PeerId expect_up = i == 0 ? sim_.peer_id(route.origin) : route.relays[i - 1];
            const PeerId expect_down = i + 1 < k ? route.relays[i + 1] : route.delegate;
            if (st->second.upstream != expect_up) return false;
            if (!st->second.downstream || *st->second.downstream != expect_down) return false;
        }
        auto dix = sim_.index_of(route.delegate);
        if (!dix) return false;
        const auto& dtable = onion_.routes(*dix);
        auto dst = dtable.find(route.terminal_tag);
        if (dst == dtable.end()) return false;
        if (dst->second.upstream != route.relays[k - 1]) return false;
        return !dst->second.downstream.has_value();
    }

private:
    Simulation& sim_;
    OnionRouter& onion_;
    DelegationService& delegation_;
    ResultReturnService& result_return_;
};

// Closed-form oracle for full deanonymization by i.i.d. colluders with
// k ~ U{k_min..k_max}: mean over k of f^k.
inline double collusion_oracle(double f, int k_min, int k_max) {
    double sum = 0;
    for (int k = k_min; k <= k_max; ++k) sum += std::pow(f, k);
    return sum / static_cast<double>(k_max - k_min + 1);
}

}  // namespace anongoss
