#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "anongoss/bytes.hpp"
#include "anongoss/errors.hpp"
#include "anongoss/onion.hpp"
#include "anongoss/peer_sampling.hpp"
#include "anongoss/sim.hpp"

// Phase I: the origin packages (profile, reply key), picks a delegate from a
// fresh sample and ships the package over a fresh onion route. The package
// carries no originator identity; the delegate files it as an anonymous task.

namespace anongoss {

struct Profile {
    std::vector<double> values;
    bool operator==(const Profile&) const = default;
};

inline Bytes serialize_profile(const Profile& p) {
    ByteWriter w;
    w.u16(static_cast<std::uint16_t>(p.values.size()));
    for (double v : p.values) w.f64(v);
    return w.take();
}

inline Profile parse_profile(ByteReader& r) {
    Profile p;
    std::uint16_t dim = r.u16();
    p.values.reserve(dim);
    for (std::uint16_t i = 0; i < dim; ++i) p.values.push_back(r.f64());
    return p;
}

enum class PayloadKind : std::uint8_t { Delegation = 1, Probe = 2 };

struct DelegationMsg {
    Profile profile;
    SymKey reply_key;
};

inline Bytes serialize_delegation_msg(const DelegationMsg& m) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(PayloadKind::Delegation));
    w.raw(serialize_profile(m.profile));
    w.arr(m.reply_key.v);
    return w.take();
}

// Delegate-side record of one accepted task. Never contains an origin
// identity; the match tag of (reply_key, profile) is its only handle.
struct DelegatedTask {
    Profile profile;
    SymKey reply_key;
    MatchTag tag;
    RouteTag route_tag;
    Tick received_at = 0;
    bool aggregated = false;
    std::vector<double> result;
    std::uint32_t rounds_used = 0;
};

// Origin-side record: everything the origin knows about one delegation,
// including the exact route of the latest attempt. Doubles as the ground
// truth the adversary harness scores against.
struct PendingDelegation {
    std::uint64_t handle = 0;
    NodeIx origin = 0;
    Profile profile;
    SymKey kappa;
    MatchTag tag;
    PeerId delegate;
    std::vector<PeerId> relays;
    RouteTag origin_tag;
    std::vector<RouteTag> relay_tags;
    RouteTag terminal_tag;
    Tick sent_at = 0;
    std::uint32_t attempts = 0;  // resends so far
    bool completed = false;
    bool gave_up = false;
    std::vector<double> result;
    Tick result_at = 0;
};

enum class RetryAction : std::uint8_t { Wait, RebuildAndResend, GiveUp };

struct DelegationParams {
    std::size_t phi_size = 50;
    Tick retry_ticks = 2000;
    std::uint32_t max_retries = 3;
};

class DelegationService {
public:
    static constexpr std::uint64_t kTimerNs = 1;

    DelegationService(Simulation& sim, PeerSampling& sampling, OnionRouter& onion,
                      DelegationParams params = {})
        : sim_(sim), sampling_(sampling), onion_(onion), params_(params) {}

    const DelegationParams& params() const { return params_; }

    // Fresh reply key, fresh sample, fresh route; the first hop gets the
    // onion, the origin keeps everything needed to recognize the answer.
    std::uint64_t delegate_task(NodeIx origin, const Profile& profile) {
        ensure_size();
        if (sampling_.history_size(origin) < params_.phi_size) throw PhiTooSmall();
        auto phi = sampling_.sample(origin, params_.phi_size);
        RoutePlan plan = onion_.plan_route(phi.peers);

        PendingDelegation p;
        p.handle = next_handle_++;
        p.origin = origin;
        p.profile = profile;
        p.kappa = sim_.crypto().gen_sym_key(sim_.rng());
        p.tag = sim_.crypto().match_tag(p.kappa, serialize_profile(profile));
        p.delegate = plan.delegate;
        send_attempt(p, plan);
        auto handle = p.handle;
        pending_[origin].emplace(handle, std::move(p));
        if (params_.max_retries > 0) {
            sim_.schedule_timer(origin, make_token(handle), sim_.now() + params_.retry_ticks);
        }
        sim_.bump("delegations_started");
        return handle;
    }

    RetryAction retry_policy(const PendingDelegation& p, Tick now) const {
        if (p.completed || p.gave_up) return RetryAction::Wait;
        if (now < p.sent_at + params_.retry_ticks) return RetryAction::Wait;
        if (p.attempts < params_.max_retries) return RetryAction::RebuildAndResend;
        return RetryAction::GiveUp;
    }

    void on_retry_timer(NodeIx origin, std::uint64_t token) {
        ensure_size();
        std::uint64_t handle = token & kTokenMask;
        auto it = pending_[origin].find(handle);
        if (it == pending_[origin].end()) return;
        PendingDelegation& p = it->second;
        switch (retry_policy(p, sim_.now())) {
            case RetryAction::Wait:
                break;
            case RetryAction::RebuildAndResend: {
                auto phi = sampling_.sample(origin, params_.phi_size);
                RoutePlan plan = onion_.plan_route_to(phi.peers, p.delegate);
                ++p.attempts;
                send_attempt(p, plan);
                sim_.bump("delegation_retries");
                sim_.schedule_timer(origin, make_token(handle), sim_.now() + params_.retry_ticks);
                break;
            }
            case RetryAction::GiveUp:
                p.gave_up = true;
                sim_.bump("delegations_given_up");
                break;
        }
    }

    // Terminal onion payloads land here: either a delegation package or a
    // probe for result_return (forwarded through on_probe).
    void handle_terminal_payload(NodeIx node, const Bytes& payload, const RouteTag& route_tag) {
        ensure_size();
        try {
            ByteReader r(payload);
            auto kind = static_cast<PayloadKind>(r.u8());
            if (kind == PayloadKind::Delegation) {
                DelegatedTask task;
                task.profile = parse_profile(r);
                task.reply_key.v = r.arr<32>();
                task.tag = sim_.crypto().match_tag(task.reply_key, serialize_profile(task.profile));
                task.route_tag = route_tag;
                task.received_at = sim_.now();
                std::size_t idx = tasks_[node].size();
                tasks_[node].push_back(std::move(task));
                by_tag_[node][tasks_[node][idx].tag].push_back(idx);
                sim_.bump("tasks_received");
                if (on_task) on_task(node, idx);
            } else if (kind == PayloadKind::Probe) {
                MatchTag ref;
                ref.v = r.arr<32>();
                if (on_probe) on_probe(node, ref, route_tag);
            } else {
                throw Malformed("payload kind");
            }
        } catch (const Malformed&) {
            sim_.bump("delegation_malformed_drops");
        }
    }

    void mark_completed(NodeIx origin, std::uint64_t handle, std::vector<double> result) {
        ensure_size();
        auto it = pending_[origin].find(handle);
        if (it == pending_[origin].end()) throw UnknownTask();
        if (it->second.completed) return;
        it->second.completed = true;
        it->second.result = std::move(result);
        it->second.result_at = sim_.now();
        sim_.bump("results_received");
    }

    // -- accessors ----------------------------------------------------------

    std::map<std::uint64_t, PendingDelegation>& pending(NodeIx origin) {
        ensure_size();
        return pending_[origin];
    }

    const PendingDelegation& pending_of(NodeIx origin, std::uint64_t handle) {
        ensure_size();
        auto it = pending_[origin].find(handle);
        if (it == pending_[origin].end()) throw UnknownTask();
        return it->second;
    }

    std::vector<DelegatedTask>& tasks(NodeIx node) {
        ensure_size();
        return tasks_[node];
    }

    const std::vector<std::size_t>* task_indices_by_tag(NodeIx node, const MatchTag& tag) {
        ensure_size();
        auto it = by_tag_[node].find(tag);
        if (it == by_tag_[node].end()) return nullptr;
        return &it->second;
    }

    void on_node_departed(NodeIx node) {
        ensure_size();
        tasks_[node].clear();
        by_tag_[node].clear();
    }

    std::function<void(NodeIx node, std::size_t task_index)> on_task;
    std::function<void(NodeIx node, const MatchTag& task_ref, const RouteTag& route_tag)> on_probe;

private:
    static constexpr std::uint64_t kTokenMask = (1ull << 56) - 1;

    static std::uint64_t make_token(std::uint64_t handle) {
        return (kTimerNs << 56) | (handle & kTokenMask);
    }

    void ensure_size() {
        if (pending_.size() < sim_.node_count()) pending_.resize(sim_.node_count());
        if (tasks_.size() < sim_.node_count()) tasks_.resize(sim_.node_count());
        if (by_tag_.size() < sim_.node_count()) by_tag_.resize(sim_.node_count());
    }

    void send_attempt(PendingDelegation& p, const RoutePlan& plan) {
        DelegationMsg msg{p.profile, p.kappa};
        BuiltOnion built = onion_.send_onion(p.origin, plan, serialize_delegation_msg(msg), p.handle);
        p.relays = plan.relays;
        p.origin_tag = built.origin_tag;
        p.relay_tags = built.relay_tags;
        p.terminal_tag = built.terminal_tag;
        p.sent_at = sim_.now();
    }

    Simulation& sim_;
    PeerSampling& sampling_;
    OnionRouter& onion_;
    DelegationParams params_;
    std::uint64_t next_handle_ = 1;
    std::vector<std::map<std::uint64_t, PendingDelegation>> pending_;
    std::vector<std::vector<DelegatedTask>> tasks_;
    std::vector<std::map<MatchTag, std::vector<std::size_t>>> by_tag_;
};

}  // namespace anongoss
