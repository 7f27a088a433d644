#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "anongoss/bytes.hpp"
#include "anongoss/crypto.hpp"
#include "anongoss/errors.hpp"
#include "anongoss/rng.hpp"

// Deterministic discrete-event simulator. Time is integer ticks; events
// execute in (tick, sequence) order, so identical (config, seed) reproduces
// the exact event trace. The trace of delivered frames is the only thing a
// passive sniffer may observe.

namespace anongoss {

using Tick = std::int64_t;
using NodeIx = std::uint32_t;

struct SimParams {
    Tick latency_min = 1;
    Tick latency_max = 10;
    double loss_rate = 0.0;  // independent loss; off by default
    bool record_wire = false;
};

struct ChurnSpec {
    double leave_rate = 0.0;  // per live node per tick
    double join_rate = 0.0;   // per departed node per tick
    struct Scripted {
        Tick at;
        NodeIx node;
        bool join;
    };
    std::vector<Scripted> scripted;
};

// One record per delivered frame. `wire` is kept only when wire recording is
// on; size and leading type byte are always kept.
struct LinkTransmission {
    PeerId from;
    PeerId to;
    Tick at = 0;
    std::uint8_t kind = 0;
    std::uint32_t size = 0;
    Bytes wire;
};

struct SimStats {
    Tick now = 0;
    std::uint64_t sends = 0;
    std::uint64_t deliveries = 0;
    std::uint64_t drops_dead = 0;
    std::uint64_t drops_loss = 0;
    std::vector<std::uint64_t> node_sent;
    std::vector<std::uint64_t> node_recv;
    std::map<std::string, std::uint64_t> counters;

    std::uint64_t drops() const { return drops_dead + drops_loss; }

    std::string canonical_string() const {
        std::ostringstream os;
        os << "now=" << now << " sends=" << sends << " deliveries=" << deliveries
           << " drops_dead=" << drops_dead << " drops_loss=" << drops_loss;
        for (const auto& [k, v] : counters) os << ' ' << k << '=' << v;
        os << " sent=[";
        for (auto v : node_sent) os << v << ',';
        os << "] recv=[";
        for (auto v : node_recv) os << v << ',';
        os << ']';
        return os.str();
    }
};

class Simulation {
public:
    enum class EventKind : std::uint8_t { Deliver, GossipRound, Churn, TimerFire };

    struct Event {
        Tick at = 0;
        std::uint64_t seq = 0;
        EventKind kind = EventKind::Deliver;
        NodeIx node = 0;    // subject (rounds, timers, churn)
        PeerId from;        // Deliver only
        PeerId to_id;       // Deliver only; resolved at delivery time
        Bytes payload;      // Deliver only
        std::uint64_t token = 0;  // TimerFire only
        bool join = false;        // Churn only
    };

    using FrameHandler = std::function<void(NodeIx at_node, const PeerId& from, std::span<const std::uint8_t> frame)>;
    using RoundHandler = std::function<void(NodeIx node)>;
    using TimerHandler = std::function<void(NodeIx node, std::uint64_t token)>;
    using ChurnHandler = std::function<void(NodeIx node, bool join)>;

    Simulation(SimParams params, std::uint64_t seed) : params_(params), rng_(seed) {}

    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    // -- topology ----------------------------------------------------------

    NodeIx add_node() {
        KeyPair kp = crypto_.keygen(rng_);
        NodeIx ix = static_cast<NodeIx>(nodes_.size());
        nodes_.push_back(Node{kp, true});
        index_.emplace(kp.public_id, ix);
        stats_.node_sent.push_back(0);
        stats_.node_recv.push_back(0);
        if (churn_armed_ && churn_.leave_rate > 0.0) schedule_leave_draw(ix);
        return ix;
    }

    std::size_t node_count() const { return nodes_.size(); }

    std::size_t live_count() const {
        std::size_t n = 0;
        for (const auto& nd : nodes_) n += nd.live ? 1 : 0;
        return n;
    }

    const PeerId& peer_id(NodeIx ix) const { return nodes_.at(ix).keys.public_id; }
    const SecretKey& secret_of(NodeIx ix) const { return nodes_.at(ix).keys.secret; }

    std::optional<NodeIx> index_of(const PeerId& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool is_live(NodeIx ix) const { return ix < nodes_.size() && nodes_[ix].live; }
    bool is_live(const PeerId& id) const {
        auto ix = index_of(id);
        return ix && nodes_[*ix].live;
    }

    // -- scheduling --------------------------------------------------------

    Tick now() const { return now_; }

    void schedule_gossip_round(NodeIx node, Tick at) {
        push_event(make_event(at, EventKind::GossipRound, node));
    }

    void schedule_timer(NodeIx node, std::uint64_t token, Tick at) {
        Event e = make_event(at, EventKind::TimerFire, node);
        e.token = token;
        push_event(std::move(e));
    }

    void schedule_churn(NodeIx node, bool join, Tick at) {
        Event e = make_event(at, EventKind::Churn, node);
        e.join = join;
        push_event(std::move(e));
    }

    // Joins/leaves per spec: scripted entries are scheduled now, rate-based
    // transitions are drawn per node as geometric waiting times.
    void churn_schedule(const ChurnSpec& spec) {
        if (spec.leave_rate < 0.0 || spec.join_rate < 0.0) {
            throw InvalidSpec("churn rates must be >= 0");
        }
        churn_ = spec;
        churn_armed_ = true;
        for (const auto& s : spec.scripted) {
            if (s.node >= nodes_.size()) throw InvalidSpec("scripted churn for unknown node");
            schedule_churn(s.node, s.join, s.at);
        }
        if (churn_.leave_rate > 0.0) {
            for (NodeIx ix = 0; ix < nodes_.size(); ++ix) {
                if (nodes_[ix].live) schedule_leave_draw(ix);
            }
        }
    }

    // -- messaging ---------------------------------------------------------

    void send(NodeIx from, const PeerId& to, Bytes frame) {
        if (!is_live(from)) return;  // departed nodes cannot transmit
        ++stats_.sends;
        ++stats_.node_sent[from];
        Tick lat = params_.latency_min == params_.latency_max
                       ? params_.latency_min
                       : rng_.uniform_int(params_.latency_min, params_.latency_max);
        if (lat < 1) lat = 1;
        Event e = make_event(now_ + lat, EventKind::Deliver, 0);
        e.from = nodes_[from].keys.public_id;
        e.payload = std::move(frame);
        e.to_id = to;
        push_event(std::move(e));
    }

    // -- execution ---------------------------------------------------------

    const SimStats& run_until(Tick t) {
        if (t < now_) throw PastEvent();
        while (!queue_.empty() && queue_.front().at <= t) {
            Event e = pop_event();
            now_ = e.at;
            dispatch(e);
        }
        now_ = t;
        stats_.now = now_;
        return stats_;
    }

    const SimStats& run_for(Tick dt) { return run_until(now_ + dt); }

    // Runs until the event queue holds nothing deliverable before `limit`.
    // Timer/round events still fire; used by tests to reach quiescence.
    bool queue_empty() const { return queue_.empty(); }

    // -- observability -----------------------------------------------------

    const SimStats& stats() const { return stats_; }
    const std::vector<LinkTransmission>& trace() const { return trace_; }
    void clear_trace() { trace_.clear(); }
    void set_record_wire(bool on) { params_.record_wire = on; }
    bool record_wire() const { return params_.record_wire; }

    void bump(const std::string& counter, std::uint64_t by = 1) { stats_.counters[counter] += by; }
    std::uint64_t counter(const std::string& name) const {
        auto it = stats_.counters.find(name);
        return it == stats_.counters.end() ? 0 : it->second;
    }

    CryptoModel& crypto() { return crypto_; }
    const CryptoModel& crypto() const { return crypto_; }
    SeededRng& rng() { return rng_; }

    // -- handlers (wired by the protocol stack) -----------------------------

    FrameHandler on_frame;
    RoundHandler on_gossip_round;
    TimerHandler on_timer;
    ChurnHandler on_churn;

private:
    struct Node {
        KeyPair keys;
        bool live = true;
    };

    struct EventCmp {
        bool operator()(const Event& a, const Event& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.seq > b.seq;
        }
    };

    Event make_event(Tick at, EventKind kind, NodeIx node) {
        if (at < now_) throw PastEvent();
        Event e;
        e.at = at;
        e.seq = next_seq_++;
        e.kind = kind;
        e.node = node;
        return e;
    }

    void push_event(Event e) {
        queue_.push_back(std::move(e));
        std::push_heap(queue_.begin(), queue_.end(), EventCmp{});
    }

    Event pop_event() {
        std::pop_heap(queue_.begin(), queue_.end(), EventCmp{});
        Event e = std::move(queue_.back());
        queue_.pop_back();
        return e;
    }

    void schedule_leave_draw(NodeIx ix) {
        Tick dt = rng_.geometric_ticks(churn_.leave_rate);
        schedule_churn(ix, false, now_ + dt);
    }

    void schedule_join_draw(NodeIx ix) {
        Tick dt = rng_.geometric_ticks(churn_.join_rate);
        schedule_churn(ix, true, now_ + dt);
    }

    void dispatch(Event& e) {
        switch (e.kind) {
            case EventKind::Deliver: {
                auto ix = index_of(e.to_id);
                if (!ix || !nodes_[*ix].live) {
                    ++stats_.drops_dead;
                    return;
                }
                if (params_.loss_rate > 0.0 && rng_.bernoulli(params_.loss_rate)) {
                    ++stats_.drops_loss;
                    return;
                }
                LinkTransmission t;
                t.from = e.from;
                t.to = e.to_id;
                t.at = e.at;
                t.size = static_cast<std::uint32_t>(e.payload.size());
                t.kind = e.payload.empty() ? 0 : e.payload[0];
                if (params_.record_wire) t.wire = e.payload;
                trace_.push_back(std::move(t));
                ++stats_.deliveries;
                ++stats_.node_recv[*ix];
                if (on_frame) on_frame(*ix, e.from, e.payload);
                break;
            }
            case EventKind::GossipRound:
                if (nodes_[e.node].live && on_gossip_round) on_gossip_round(e.node);
                break;
            case EventKind::TimerFire:
                if (nodes_[e.node].live && on_timer) on_timer(e.node, e.token);
                break;
            case EventKind::Churn: {
                Node& nd = nodes_[e.node];
                if (nd.live == e.join) return;  // stale transition
                nd.live = e.join;
                if (churn_armed_) {
                    if (e.join && churn_.leave_rate > 0.0) schedule_leave_draw(e.node);
                    if (!e.join && churn_.join_rate > 0.0) schedule_join_draw(e.node);
                }
                if (on_churn) on_churn(e.node, e.join);
                break;
            }
        }
    }

    SimParams params_;
    SeededRng rng_;
    CryptoModel crypto_;
    std::vector<Node> nodes_;
    std::map<PeerId, NodeIx> index_;
    std::vector<Event> queue_;
    std::vector<LinkTransmission> trace_;
    SimStats stats_;
    Tick now_ = 0;
    std::uint64_t next_seq_ = 0;
    ChurnSpec churn_;
    bool churn_armed_ = false;
};

}  // namespace anongoss
