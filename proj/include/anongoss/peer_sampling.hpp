#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include "anongoss/bytes.hpp"
#include "anongoss/errors.hpp"
#include "anongoss/sim.hpp"
#include "anongoss/wire.hpp"

// Gossip-based peer sampling: push-pull view shuffles with the oldest view
// entry, merge keeping freshest ages, truncate to capacity. Samples are drawn
// from the accumulated peer history rather than the live view, so a draw
// causes no traffic and an observer of any single shuffle cannot enumerate a
// node's sample base.

namespace anongoss {

struct ViewEntry {
    PeerId peer;
    std::uint32_t age = 0;
};

struct SampleSet {
    std::vector<PeerId> peers;
    Tick drawn_at = 0;
};

struct PeerSamplingParams {
    std::size_t view_capacity = 20;
    std::size_t shuffle_size = 10;
    std::size_t bootstrap_degree = 5;
};

class PeerSampling {
public:
    PeerSampling(Simulation& sim, PeerSamplingParams params = {}) : sim_(sim), params_(params) {}

    // Out-of-band bootstrap: every node learns `bootstrap_degree` random
    // peers. Joining nodes get the same treatment via bootstrap_node().
    void bootstrap_all() {
        ensure_size();
        for (NodeIx n = 0; n < sim_.node_count(); ++n) bootstrap_node(n);
    }

    void bootstrap_node(NodeIx n) {
        ensure_size();
        std::size_t others = sim_.node_count() - 1;
        std::size_t want = std::min(params_.bootstrap_degree, others);
        if (want == 0) return;
        std::vector<PeerId> pool;
        pool.reserve(others);
        for (NodeIx m = 0; m < sim_.node_count(); ++m) {
            if (m != n && sim_.is_live(m)) pool.push_back(sim_.peer_id(m));
        }
        want = std::min(want, pool.size());
        auto picks = sim_.rng().sample_indices(pool.size(), want);
        st_[n].view.clear();
        for (auto i : picks) seed_view(n, pool[i]);
    }

    // Test/setup hook: inject a single known peer.
    void seed_view(NodeIx n, const PeerId& peer) {
        ensure_size();
        if (peer == sim_.peer_id(n)) return;
        auto& view = st_[n].view;
        for (const auto& e : view) {
            if (e.peer == peer) return;
        }
        view.push_back(ViewEntry{peer, 0});
        st_[n].history.try_emplace(peer, sim_.now());
    }

    // One active shuffle: age the view, pick the oldest entry as partner,
    // push a half-view and pull the partner's in return. The partner's spent
    // entry is consumed; its fresh self-entry in the reply replaces it, which
    // keeps the in-degree distribution balanced.
    void gossip_round(NodeIx n) {
        ensure_size();
        if (!sim_.is_live(n)) return;
        auto& view = st_[n].view;
        if (view.empty()) {
            sim_.bump("sampling_empty_view_rounds");
            return;
        }
        for (auto& e : view) ++e.age;

        std::size_t oldest = 0;
        for (std::size_t i = 1; i < view.size(); ++i) {
            if (view[i].age > view[oldest].age) oldest = i;
        }
        PeerId partner = view[oldest].peer;
        if (!sim_.is_live(partner)) {
            // PartnerDown: drop the entry, skip the round.
            view.erase(view.begin() + static_cast<std::ptrdiff_t>(oldest));
            sim_.bump("sampling_partner_down");
            return;
        }
        view.erase(view.begin() + static_cast<std::ptrdiff_t>(oldest));
        std::vector<PeerId> sent;
        Bytes frame = make_shuffle_frame(FrameType::ShuffleReq, n, partner, sent);
        st_[n].pending_sent = std::move(sent);
        sim_.send(n, partner, std::move(frame));
    }

    void handle_frame(NodeIx at, const PeerId& from, FrameType type, ByteReader& r) {
        ensure_size();
        std::vector<ViewEntry> incoming = parse_entries(r);
        if (type == FrameType::ShuffleReq) {
            std::vector<PeerId> sent;
            Bytes reply = make_shuffle_frame(FrameType::ShuffleRep, at, from, sent);
            sim_.send(at, from, std::move(reply));
            merge(at, from, incoming, sent);
        } else {
            merge(at, from, incoming, st_[at].pending_sent);
            st_[at].pending_sent.clear();
        }
    }

    // n distinct peers drawn uniformly from the accumulated history. No
    // traffic is generated by a draw.
    SampleSet sample(NodeIx n, std::size_t count) {
        ensure_size();
        SampleSet out;
        out.drawn_at = sim_.now();
        if (count == 0) return out;
        const auto& hist = st_[n].history;
        if (hist.size() < count) throw InsufficientHistory();
        std::vector<PeerId> keys;
        keys.reserve(hist.size());
        for (const auto& [peer, first_seen] : hist) keys.push_back(peer);
        auto picks = sim_.rng().sample_indices(keys.size(), count);
        out.peers.reserve(count);
        for (auto i : picks) out.peers.push_back(keys[i]);
        return out;
    }

    std::size_t history_size(NodeIx n) {
        ensure_size();
        return st_[n].history.size();
    }

    const std::vector<ViewEntry>& view(NodeIx n) {
        ensure_size();
        return st_[n].view;
    }

    const PeerSamplingParams& params() const { return params_; }

    bool view_invariants_hold(NodeIx n) {
        ensure_size();
        const auto& view = st_[n].view;
        if (view.size() > params_.view_capacity) return false;
        std::vector<PeerId> seen;
        for (const auto& e : view) {
            if (e.peer == sim_.peer_id(n)) return false;
            if (std::find(seen.begin(), seen.end(), e.peer) != seen.end()) return false;
            seen.push_back(e.peer);
        }
        return true;
    }

private:
    struct NodeState {
        std::vector<ViewEntry> view;
        std::map<PeerId, Tick> history;     // peer -> first seen
        std::vector<PeerId> pending_sent;   // half-view shipped in the open shuffle
    };

    void ensure_size() {
        if (st_.size() < sim_.node_count()) st_.resize(sim_.node_count());
    }

    Bytes make_shuffle_frame(FrameType type, NodeIx n, const PeerId& exclude,
                             std::vector<PeerId>& sent_out) {
        ByteWriter w;
        w.u8(frame_byte(type));
        // Own fresh entry plus a random half-view, partner excluded.
        std::vector<std::size_t> candidates;
        const auto& view = st_[n].view;
        for (std::size_t i = 0; i < view.size(); ++i) {
            if (view[i].peer != exclude) candidates.push_back(i);
        }
        std::size_t extra = std::min(params_.shuffle_size - 1, candidates.size());
        auto picks = sim_.rng().sample_indices(candidates.size(), extra);
        w.u16(static_cast<std::uint16_t>(1 + extra));
        w.arr(sim_.peer_id(n).v);
        w.u32(0);
        for (auto p : picks) {
            const auto& e = view[candidates[p]];
            w.arr(e.peer.v);
            w.u32(e.age);
            sent_out.push_back(e.peer);
        }
        return w.take();
    }

    static std::vector<ViewEntry> parse_entries(ByteReader& r) {
        std::uint16_t count = r.u16();
        std::vector<ViewEntry> out;
        out.reserve(count);
        for (std::uint16_t i = 0; i < count; ++i) {
            ViewEntry e;
            e.peer.v = r.arr<32>();
            e.age = r.u32();
            out.push_back(e);
        }
        return out;
    }

    // Insert received entries: duplicates keep the freshest age, new peers
    // fill free slots first, then replace the entries shipped out in this
    // shuffle, then (as a last resort) the oldest entry if it is staler than
    // the incoming one.
    void merge(NodeIx n, const PeerId& sender, const std::vector<ViewEntry>& incoming,
               const std::vector<PeerId>& sent) {
        auto& state = st_[n];
        state.history.try_emplace(sender, sim_.now());
        std::vector<PeerId> replaceable = sent;
        auto take_victim_slot = [&]() -> ViewEntry* {
            while (!replaceable.empty()) {
                PeerId victim = replaceable.back();
                replaceable.pop_back();
                for (auto& mine : state.view) {
                    if (mine.peer == victim) return &mine;
                }
            }
            return nullptr;
        };
        for (const auto& in : incoming) {
            if (in.peer == sim_.peer_id(n)) continue;
            state.history.try_emplace(in.peer, sim_.now());
            bool found = false;
            for (auto& mine : state.view) {
                if (mine.peer == in.peer) {
                    mine.age = std::min(mine.age, in.age);
                    found = true;
                    break;
                }
            }
            if (found) {
                // Strict swap accounting: a duplicate still spends one of the
                // shipped copies, so references do not multiply in transit.
                if (ViewEntry* slot = take_victim_slot()) {
                    auto off = slot - state.view.data();
                    state.view.erase(state.view.begin() + off);
                }
                continue;
            }
            if (state.view.size() < params_.view_capacity) {
                state.view.push_back(in);
                continue;
            }
            if (ViewEntry* slot = take_victim_slot()) {
                *slot = in;
                continue;
            }
            std::size_t oldest = 0;
            for (std::size_t i = 1; i < state.view.size(); ++i) {
                if (state.view[i].age > state.view[oldest].age) oldest = i;
            }
            if (state.view[oldest].age > in.age) state.view[oldest] = in;
        }
    }

    Simulation& sim_;
    PeerSamplingParams params_;
    std::vector<NodeState> st_;
};

}  // namespace anongoss
