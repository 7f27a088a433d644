#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "anongoss/delegation.hpp"
#include "anongoss/peer_sampling.hpp"
#include "anongoss/sim.hpp"
#include "anongoss/wire.hpp"

// Phase II is a black box behind AggregatorPlugin. The reference plugin is
// uniform push-pull averaging over the delegates' task estimates: each round
// a delegate pairs one of its task slots with a random peer's slot and both
// move to the pairwise mean. Slots are locked while an exchange is in
// flight, so the global estimate mass is conserved exactly.

namespace anongoss {

struct AggregateResult {
    std::vector<double> values;
    std::uint32_t rounds_used = 0;
};

class AggregationService;

class AggregatorPlugin {
public:
    virtual ~AggregatorPlugin() = default;
    virtual const char* name() const = 0;
    virtual void on_task(AggregationService& svc, NodeIx node, std::size_t task_index) = 0;
    virtual void on_gossip_round(AggregationService& svc, NodeIx node) = 0;
    virtual std::optional<AggregateResult> poll_result(AggregationService& svc, NodeIx node,
                                                       std::size_t task_index) = 0;
    virtual void handle_frame(AggregationService&, NodeIx, const PeerId&, FrameType, ByteReader&) {}
    virtual void on_timer(AggregationService&, NodeIx, std::uint64_t) {}
};

class AggregationService {
public:
    static constexpr std::uint64_t kTimerNs = 4;

    AggregationService(Simulation& sim, PeerSampling& sampling, DelegationService& delegation)
        : sim_(sim), sampling_(sampling), delegation_(delegation) {}

    void register_plugin(std::unique_ptr<AggregatorPlugin> plugin) {
        if (plugin_) throw AlreadyRegistered();
        plugin_ = std::move(plugin);
    }

    bool has_plugin() const { return plugin_ != nullptr; }
    AggregatorPlugin* plugin() { return plugin_.get(); }

    void on_task(NodeIx node, std::size_t task_index) {
        if (plugin_) plugin_->on_task(*this, node, task_index);
    }

    void on_gossip_round(NodeIx node) {
        if (plugin_) plugin_->on_gossip_round(*this, node);
    }

    // pending is encoded as nullopt.
    std::optional<AggregateResult> poll_result(NodeIx node, std::size_t task_index) {
        if (task_index >= delegation_.tasks(node).size()) throw UnknownTask();
        if (!plugin_) return std::nullopt;
        return plugin_->poll_result(*this, node, task_index);
    }

    void handle_frame(NodeIx at, const PeerId& from, FrameType type, ByteReader& r) {
        if (plugin_) plugin_->handle_frame(*this, at, from, type, r);
    }

    void on_timer(NodeIx node, std::uint64_t token) {
        if (plugin_) plugin_->on_timer(*this, node, token);
    }

    Simulation& sim() { return sim_; }
    PeerSampling& sampling() { return sampling_; }
    DelegationService& delegation() { return delegation_; }

private:
    Simulation& sim_;
    PeerSampling& sampling_;
    DelegationService& delegation_;
    std::unique_ptr<AggregatorPlugin> plugin_;
};

// pi' = pi: returns each task's profile untouched. Useful end-to-end because
// the expected result is known exactly.
class IdentityAggregator final : public AggregatorPlugin {
public:
    const char* name() const override { return "identity"; }
    void on_task(AggregationService&, NodeIx, std::size_t) override {}
    void on_gossip_round(AggregationService&, NodeIx) override {}
    std::optional<AggregateResult> poll_result(AggregationService& svc, NodeIx node,
                                               std::size_t task_index) override {
        const auto& task = svc.delegation().tasks(node)[task_index];
        return AggregateResult{task.profile.values, 0};
    }
};

struct AveragingParams {
    double epsilon = 1e-8;
    std::uint32_t window_rounds = 5;
    Tick exchange_timeout = 50;
};

class AveragingAggregator final : public AggregatorPlugin {
public:
    explicit AveragingAggregator(AveragingParams params = {}) : params_(params) {}

    const char* name() const override { return "average"; }

    void on_task(AggregationService& svc, NodeIx node, std::size_t task_index) override {
        ensure_size(svc);
        auto& slots = st_[node].slots;
        if (slots.size() != task_index) throw InvariantError("task slots out of sync");
        Slot s;
        s.estimate = svc.delegation().tasks(node)[task_index].profile.values;
        slots.push_back(std::move(s));
    }

    void on_gossip_round(AggregationService& svc, NodeIx node) override {
        ensure_size(svc);
        auto& me = st_[node];
        if (me.slots.empty()) return;
        for (auto& s : me.slots) ++s.rounds;

        if (svc.sampling().history_size(node) < 1) return;
        auto peers = svc.sampling().sample(node, 1);
        const PeerId& partner = peers.peers[0];

        std::vector<std::size_t> unlocked;
        for (std::size_t i = 0; i < me.slots.size(); ++i) {
            if (!me.slots[i].locked) unlocked.push_back(i);
        }
        if (unlocked.empty()) return;
        std::size_t slot_ix = unlocked[svc.sim().rng().uniform_u64(unlocked.size())];
        Slot& slot = me.slots[slot_ix];

        std::uint64_t xid = me.next_xid++;
        slot.locked = true;
        me.open.emplace(xid, slot_ix);

        ByteWriter w;
        w.u8(frame_byte(FrameType::AggReq));
        w.u64(xid);
        w.u16(static_cast<std::uint16_t>(slot.estimate.size()));
        for (double v : slot.estimate) w.f64(v);
        svc.sim().send(node, partner, w.take());
        svc.sim().schedule_timer(node, (kTimerNs_ << 56) | (xid & kMask_),
                                 svc.sim().now() + params_.exchange_timeout);
    }

    void handle_frame(AggregationService& svc, NodeIx at, const PeerId& from, FrameType type,
                      ByteReader& r) override {
        ensure_size(svc);
        if (type == FrameType::AggReq) {
            std::uint64_t xid = r.u64();
            std::uint16_t dim = r.u16();
            std::vector<double> theirs(dim);
            for (auto& v : theirs) v = r.f64();

            auto& me = st_[at];
            std::vector<std::size_t> eligible;
            for (std::size_t i = 0; i < me.slots.size(); ++i) {
                if (!me.slots[i].locked && me.slots[i].estimate.size() == theirs.size()) {
                    eligible.push_back(i);
                }
            }
            ByteWriter w;
            w.u8(frame_byte(FrameType::AggRep));
            w.u64(xid);
            if (eligible.empty()) {
                w.u8(0);
                svc.sim().send(at, from, w.take());
                svc.sim().bump("agg_declined");
                return;
            }
            std::size_t ix = eligible[svc.sim().rng().uniform_u64(eligible.size())];
            Slot& slot = me.slots[ix];
            std::vector<double> mean(theirs.size());
            for (std::size_t i = 0; i < mean.size(); ++i) {
                mean[i] = (slot.estimate[i] + theirs[i]) / 2.0;
            }
            apply(slot, mean);
            w.u8(1);
            w.u16(static_cast<std::uint16_t>(mean.size()));
            for (double v : mean) w.f64(v);
            svc.sim().send(at, from, w.take());
            svc.sim().bump("agg_exchanges");
        } else if (type == FrameType::AggRep) {
            std::uint64_t xid = r.u64();
            auto& me = st_[at];
            auto it = me.open.find(xid);
            if (it == me.open.end()) return;  // timed out earlier
            Slot& slot = me.slots[it->second];
            me.open.erase(it);
            slot.locked = false;
            if (r.u8() == 0) return;
            std::uint16_t dim = r.u16();
            std::vector<double> mean(dim);
            for (auto& v : mean) v = r.f64();
            apply(slot, mean);
        }
    }

    void on_timer(AggregationService& svc, NodeIx node, std::uint64_t token) override {
        ensure_size(svc);
        auto& me = st_[node];
        std::uint64_t xid = token & kMask_;
        auto it = me.open.find(xid);
        if (it == me.open.end()) return;
        me.slots[it->second].locked = false;  // partner lost; estimate untouched
        me.open.erase(it);
        svc.sim().bump("agg_exchange_timeouts");
    }

    std::optional<AggregateResult> poll_result(AggregationService& svc, NodeIx node,
                                               std::size_t task_index) override {
        ensure_size(svc);
        if (task_index >= st_[node].slots.size()) return std::nullopt;
        const Slot& slot = st_[node].slots[task_index];
        bool converged;
        if (std::isinf(params_.epsilon)) {
            converged = slot.rounds >= 1;
        } else {
            converged = slot.streak >= params_.window_rounds;
        }
        if (!converged) return std::nullopt;
        return AggregateResult{slot.estimate, slot.rounds};
    }

    // Sum over every task estimate in the system; conserved across exchanges.
    double estimate_mass(AggregationService& svc) {
        ensure_size(svc);
        double sum = 0;
        for (const auto& node : st_) {
            for (const auto& s : node.slots) {
                for (double v : s.estimate) sum += v;
            }
        }
        return sum;
    }

    const std::vector<double>* estimate(NodeIx node, std::size_t task_index) const {
        if (node >= st_.size() || task_index >= st_[node].slots.size()) return nullptr;
        return &st_[node].slots[task_index].estimate;
    }

private:
    static constexpr std::uint64_t kTimerNs_ = AggregationService::kTimerNs;
    static constexpr std::uint64_t kMask_ = (1ull << 56) - 1;

    struct Slot {
        std::vector<double> estimate;
        bool locked = false;
        std::uint32_t rounds = 0;
        std::uint32_t streak = 0;
    };
    struct NodeAgg {
        std::vector<Slot> slots;
        std::map<std::uint64_t, std::size_t> open;  // xid -> slot
        std::uint64_t next_xid = 1;
    };

    void apply(Slot& slot, const std::vector<double>& mean) {
        double delta = 0, scale = 1.0;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            delta = std::max(delta, std::abs(mean[i] - slot.estimate[i]));
            scale = std::max(scale, std::abs(slot.estimate[i]));
        }
        slot.estimate = mean;
        if (delta <= params_.epsilon * scale) {
            ++slot.streak;
        } else {
            slot.streak = 0;
        }
    }

    void ensure_size(AggregationService& svc) {
        if (st_.size() < svc.sim().node_count()) st_.resize(svc.sim().node_count());
    }

    AveragingParams params_;
    std::vector<NodeAgg> st_;
};

}  // namespace anongoss
