#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "anongoss/aggregation.hpp"
#include "anongoss/delegation.hpp"
#include "anongoss/onion.hpp"
#include "anongoss/peer_sampling.hpp"
#include "anongoss/sim.hpp"

// Phase III: returning pi' to an origin the delegate cannot name. Pull mode
// probes the delegate over a fresh onion route per attempt and carries the
// signed, kappa-encrypted result back upstream. Push mode floods a signed
// (ciphertext, delegate, match tag) tuple; every node forwards once under
// the same deterministic rule, the origin included, and recognizes its own
// result privately via the match tag.

namespace anongoss {

enum class ReturnMode : std::uint8_t { PullNaive, PullReenc, PushFull, PushWindow };

inline ReplyMode reply_mode_for(ReturnMode m) {
    return m == ReturnMode::PullNaive ? ReplyMode::Naive : ReplyMode::PerHopReenc;
}

enum class FloodScope : std::uint8_t { Full, OnionWindow };

struct FloodMessage {
    SymCiphertext result_ct;
    PeerId delegate;
    MatchTag tag;
    Signature sig;
};

inline Bytes flood_sign_input(const FloodMessage& fm) {
    ByteWriter w;
    w.blob(fm.result_ct.data);
    w.arr(fm.tag.v);
    return w.take();
}

inline Bytes serialize_flood(const FloodMessage& fm) {
    ByteWriter w;
    w.u8(frame_byte(FrameType::Flood));
    w.blob(fm.result_ct.data);
    w.arr(fm.delegate.v);
    w.arr(fm.tag.v);
    w.arr(fm.sig.signer.v);
    w.arr(fm.sig.sig);
    return w.take();
}

inline FloodMessage parse_flood(ByteReader& r) {
    FloodMessage fm;
    fm.result_ct.data = r.blob();
    fm.delegate.v = r.arr<32>();
    fm.tag.v = r.arr<32>();
    fm.sig.signer.v = r.arr<32>();
    fm.sig.sig = r.arr<32>();
    return fm;
}

enum class ReplyKind : std::uint8_t { Result = 1, Pending = 2 };

struct ReceivedResult {
    std::vector<double> values;
    Tick at = 0;
    bool via_flood = false;
    PeerId delegate;
};

// Per-node observable flood behavior, recorded for the trace comparator.
// rule_neighbors snapshots the forwarding rule's input (the node's flood
// neighbor set at forward time, before excluding the sender), so a checker
// can recompute what any conforming node must have sent.
struct FloodNodeTrace {
    Tick first_recv = -1;
    PeerId from;
    Tick forwarded_at = -1;
    std::vector<PeerId> rule_neighbors;
    std::vector<PeerId> targets;
    std::size_t suppressed = 0;
    bool matched = false;   // private state, not externally visible
    bool initiator = false;
};

struct ProbeRouteRecord {
    NodeIx origin = 0;
    std::uint64_t handle = 0;
    PeerId delegate;
    std::vector<PeerId> relays;
    Tick sent_at = 0;
};

struct ResultReturnParams {
    ReturnMode mode = ReturnMode::PullReenc;
    Tick window_ticks = 300;
    Tick probe_backoff_ticks = 50;
    Tick probe_timeout_ticks = 600;
    Tick flood_forward_delay = 1;
};

class ResultReturnService {
public:
    static constexpr std::uint64_t kReprobeNs = 2;
    static constexpr std::uint64_t kFloodNs = 3;

    ResultReturnService(Simulation& sim, PeerSampling& sampling, OnionRouter& onion,
                        DelegationService& delegation, AggregationService& aggregation,
                        ResultReturnParams params = {})
        : sim_(sim),
          sampling_(sampling),
          onion_(onion),
          delegation_(delegation),
          aggregation_(aggregation),
          params_(params) {}

    const ResultReturnParams& params() const { return params_; }
    void set_mode(ReturnMode m) { params_.mode = m; }

    // -- pull ---------------------------------------------------------------

    // Probe over a new onion route; replies come back through the onion
    // reply path. Re-probes use a fresh route each time.
    void pull_result(NodeIx origin, std::uint64_t handle) {
        ensure_size();
        const PendingDelegation& p = delegation_.pending_of(origin, handle);
        if (p.completed) return;
        std::vector<PeerId> phi;
        try {
            phi = sampling_.sample(origin, delegation_.params().phi_size).peers;
        } catch (const InsufficientHistory&) {
            throw PhiTooSmall();
        }
        RoutePlan plan = onion_.plan_route_to(phi, p.delegate);
        ByteWriter payload;
        payload.u8(static_cast<std::uint8_t>(PayloadKind::Probe));
        payload.arr(p.tag.v);
        onion_.send_onion(origin, plan, payload.data(), handle);
        probe_routes_.push_back(ProbeRouteRecord{origin, handle, p.delegate, plan.relays, sim_.now()});
        next_probe_[origin][handle] = sim_.now() + params_.probe_timeout_ticks;
        sim_.schedule_timer(origin, (kReprobeNs << 56) | handle, next_probe_[origin][handle]);
        sim_.bump("probes_sent");
    }

    void on_probe(NodeIx node, const MatchTag& task_ref, const RouteTag& route_tag) {
        ensure_size();
        const auto* idxs = delegation_.task_indices_by_tag(node, task_ref);
        if (idxs == nullptr || idxs->empty()) {
            sim_.bump("probe_unknown_task");
            return;
        }
        probe_log_[node][task_ref].push_back(route_tag);
        const DelegatedTask& task = delegation_.tasks(node)[idxs->front()];
        ByteWriter blob;
        if (task.aggregated) {
            Profile res{task.result};
            SymCiphertext ct = sim_.crypto().sym_seal(task.reply_key, serialize_profile(res), sim_.rng());
            blob.u8(static_cast<std::uint8_t>(ReplyKind::Result));
            blob.blob(ct.data);
            Signature sig = sim_.crypto().sign(sim_.secret_of(node), reply_sign_input(ReplyKind::Result, ct.data));
            blob.arr(sig.signer.v);
            blob.arr(sig.sig);
        } else {
            // Signed so a relay cannot forge "not ready".
            blob.u8(static_cast<std::uint8_t>(ReplyKind::Pending));
            blob.arr(task.tag.v);
            Signature sig = sim_.crypto().sign(sim_.secret_of(node),
                                               reply_sign_input(ReplyKind::Pending, task.tag.v));
            blob.arr(sig.signer.v);
            blob.arr(sig.sig);
        }
        try {
            onion_.reply_upstream(node, route_tag, blob.data(), reply_mode_for(params_.mode));
        } catch (const UpstreamGone&) {
            sim_.bump("reply_upstream_gone");
        } catch (const UnknownRoute&) {
            sim_.bump("reply_unknown_route");
        }
    }

    void on_reply_at_origin(NodeIx origin, std::uint64_t handle, const Bytes& blob) {
        ensure_size();
        auto& pending = delegation_.pending(origin);
        auto it = pending.find(handle);
        if (it == pending.end()) return;
        PendingDelegation& p = it->second;
        try {
            ByteReader r(blob);
            auto kind = static_cast<ReplyKind>(r.u8());
            if (kind == ReplyKind::Result) {
                SymCiphertext ct;
                ct.data = r.blob();
                Signature sig;
                sig.signer.v = r.arr<32>();
                sig.sig = r.arr<32>();
                if (!sim_.crypto().verify(p.delegate, reply_sign_input(kind, ct.data), sig)) {
                    sim_.bump("reply_bad_signature");
                    return;
                }
                Bytes plain;
                try {
                    plain = sim_.crypto().sym_open(ct, p.kappa);
                } catch (const WrongKey&) {
                    sim_.bump("reply_wrong_sym_key");
                    return;
                }
                ByteReader vr(plain);
                Profile res = parse_profile(vr);
                if (p.completed) return;
                results_[origin][handle] = ReceivedResult{res.values, sim_.now(), false, p.delegate};
                delegation_.mark_completed(origin, handle, res.values);
                sim_.bump("pull_results_received");
            } else if (kind == ReplyKind::Pending) {
                MatchTag tag;
                tag.v = r.arr<32>();
                Signature sig;
                sig.signer.v = r.arr<32>();
                sig.sig = r.arr<32>();
                if (!sim_.crypto().verify(p.delegate, reply_sign_input(kind, tag.v), sig)) {
                    sim_.bump("reply_bad_signature");
                    return;
                }
                if (p.completed) return;
                sim_.bump("pending_replies");
                next_probe_[origin][handle] = sim_.now() + params_.probe_backoff_ticks;
                sim_.schedule_timer(origin, (kReprobeNs << 56) | handle, next_probe_[origin][handle]);
            } else {
                throw Malformed("reply kind");
            }
        } catch (const Malformed&) {
            sim_.bump("reply_malformed");
        }
    }

    void on_reprobe_timer(NodeIx origin, std::uint64_t token) {
        ensure_size();
        std::uint64_t handle = token & ((1ull << 56) - 1);
        auto& pending = delegation_.pending(origin);
        auto it = pending.find(handle);
        if (it == pending.end() || it->second.completed || it->second.gave_up) return;
        auto np = next_probe_[origin].find(handle);
        if (np == next_probe_[origin].end() || sim_.now() < np->second) return;  // superseded
        pull_result(origin, handle);
    }

    // -- push (blind flood) ---------------------------------------------------

    void push_result(NodeIx delegate, std::size_t task_index) {
        ensure_size();
        DelegatedTask& task = delegation_.tasks(delegate).at(task_index);
        if (!task.aggregated) throw InvariantError("push_result before aggregation");
        FloodMessage fm;
        Profile res{task.result};
        fm.result_ct = sim_.crypto().sym_seal(task.reply_key, serialize_profile(res), sim_.rng());
        fm.delegate = sim_.peer_id(delegate);
        fm.tag = task.tag;
        fm.sig = sim_.crypto().sign(sim_.secret_of(delegate), flood_sign_input(fm));

        flood_seen_[delegate].insert(fm.tag);
        auto& tr = trace_slot(fm.tag, delegate);
        tr.first_recv = sim_.now();
        tr.initiator = true;
        // The initiator follows the same forwarding rule, with no sender to
        // exclude.
        forward_now(delegate, fm, std::nullopt, tr);
        sim_.bump("floods_started");
    }

    void handle_flood_frame(NodeIx at, const PeerId& from, ByteReader& r) {
        ensure_size();
        FloodMessage fm;
        try {
            fm = parse_flood(r);
        } catch (const Malformed&) {
            sim_.bump("flood_malformed");
            return;
        }
        if (!sim_.crypto().verify(fm.delegate, flood_sign_input(fm), fm.sig)) {
            sim_.bump("flood_bad_signature");
            return;  // never forwarded
        }
        auto& seen = flood_seen_[at];
        if (seen.count(fm.tag) != 0) {
            trace_slot(fm.tag, at).suppressed++;
            sim_.bump("flood_duplicates");
            return;
        }
        seen.insert(fm.tag);
        auto& tr = trace_slot(fm.tag, at);
        tr.first_recv = sim_.now();
        tr.from = from;
        tr.matched = try_match(at, fm);

        std::uint64_t id = next_fwd_id_++;
        pending_fwd_[at].emplace(id, PendingForward{fm, from});
        sim_.schedule_timer(at, (kFloodNs << 56) | id, sim_.now() + params_.flood_forward_delay);
        sim_.bump("flood_accepted");
    }

    void on_flood_timer(NodeIx node, std::uint64_t token) {
        ensure_size();
        std::uint64_t id = token & ((1ull << 56) - 1);
        auto it = pending_fwd_[node].find(id);
        if (it == pending_fwd_[node].end()) return;
        PendingForward pf = std::move(it->second);
        pending_fwd_[node].erase(it);
        forward_now(node, pf.fm, pf.exclude, trace_slot(pf.fm.tag, node));
    }

    // Who a node floods to under the given scope: the current sampling view,
    // or exactly the upstream senders of onion packets received within the
    // window (now - T, now].
    std::vector<PeerId> flood_neighbors(NodeIx node, Tick now, FloodScope scope) {
        ensure_size();
        std::vector<PeerId> out;
        if (scope == FloodScope::Full) {
            for (const auto& e : sampling_.view(node)) out.push_back(e.peer);
        } else {
            for (const auto& [peer, at] : onion_recv_from_[node]) {
                if (now - at < params_.window_ticks) out.push_back(peer);
            }
        }
        return out;
    }

    FloodScope scope() const {
        return params_.mode == ReturnMode::PushWindow ? FloodScope::OnionWindow : FloodScope::Full;
    }

    // True iff this node holds (kappa, pi) with match_tag(kappa, pi) == fm.tag.
    // A match records the receipt privately; forwarding is unaffected.
    bool try_match(NodeIx node, const FloodMessage& fm) {
        ensure_size();
        for (auto& [handle, p] : delegation_.pending(node)) {
            if (p.tag != fm.tag) continue;
            Bytes plain;
            try {
                plain = sim_.crypto().sym_open(fm.result_ct, p.kappa);
            } catch (const WrongKey&) {
                sim_.bump("flood_wrong_sym_key");
                return false;
            }
            ByteReader vr(plain);
            Profile res = parse_profile(vr);
            if (!p.completed) {
                results_[node][handle] = ReceivedResult{res.values, sim_.now(), true, fm.delegate};
                delegation_.mark_completed(node, handle, res.values);
                sim_.bump("flood_matches");
            }
            return true;
        }
        return false;
    }

    // Poll pending tasks against the aggregator; freshly aggregated tasks
    // are pushed immediately in push modes.
    void poll_tasks(NodeIx node) {
        ensure_size();
        auto& tasks = delegation_.tasks(node);
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].aggregated) continue;
            auto res = aggregation_.poll_result(node, i);
            if (!res) continue;
            tasks[i].aggregated = true;
            tasks[i].result = res->values;
            tasks[i].rounds_used = res->rounds_used;
            sim_.bump("tasks_aggregated");
            if (params_.mode == ReturnMode::PushFull || params_.mode == ReturnMode::PushWindow) {
                push_result(node, i);
            }
        }
    }

    void note_onion_received(NodeIx node, const PeerId& from) {
        ensure_size();
        onion_recv_from_[node][from] = sim_.now();
    }

    void on_node_departed(NodeIx node) {
        ensure_size();
        pending_fwd_[node].clear();
        onion_recv_from_[node].clear();
        next_probe_[node].clear();
    }

    // -- observability --------------------------------------------------------

    const std::map<std::uint64_t, ReceivedResult>& results(NodeIx origin) {
        ensure_size();
        return results_[origin];
    }

    const std::vector<FloodNodeTrace>* flood_trace(const MatchTag& tag) const {
        auto it = flood_traces_.find(tag);
        return it == flood_traces_.end() ? nullptr : &it->second;
    }

    const std::vector<ProbeRouteRecord>& probe_routes() const { return probe_routes_; }

    const std::map<PeerId, Tick>& onion_receipts(NodeIx node) {
        ensure_size();
        return onion_recv_from_[node];
    }

    // Probe routes the delegate answered for a task, by its recognizability
    // tag. This is delegate-local knowledge (it knows which probes asked for
    // which task).
    const std::vector<RouteTag>* probes_seen(NodeIx node, const MatchTag& tag) {
        ensure_size();
        auto it = probe_log_[node].find(tag);
        return it == probe_log_[node].end() ? nullptr : &it->second;
    }

private:
    struct PendingForward {
        FloodMessage fm;
        std::optional<PeerId> exclude;
    };

    static Bytes reply_sign_input(ReplyKind kind, std::span<const std::uint8_t> body) {
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(kind));
        w.raw(body);
        return w.take();
    }

    void forward_now(NodeIx node, const FloodMessage& fm, std::optional<PeerId> exclude,
                     FloodNodeTrace& tr) {
        std::vector<PeerId> targets = flood_neighbors(node, sim_.now(), scope());
        tr.rule_neighbors = targets;
        if (exclude) {
            std::erase(targets, *exclude);
        }
        tr.forwarded_at = sim_.now();
        tr.targets = targets;
        Bytes frame = serialize_flood(fm);
        for (const auto& to : targets) {
            sim_.send(node, to, frame);
            sim_.bump("flood_transmissions");
        }
    }

    FloodNodeTrace& trace_slot(const MatchTag& tag, NodeIx node) {
        auto& vec = flood_traces_[tag];
        if (vec.size() < sim_.node_count()) vec.resize(sim_.node_count());
        return vec[node];
    }

    void ensure_size() {
        std::size_t n = sim_.node_count();
        if (flood_seen_.size() < n) flood_seen_.resize(n);
        if (pending_fwd_.size() < n) pending_fwd_.resize(n);
        if (onion_recv_from_.size() < n) onion_recv_from_.resize(n);
        if (results_.size() < n) results_.resize(n);
        if (next_probe_.size() < n) next_probe_.resize(n);
        if (probe_log_.size() < n) probe_log_.resize(n);
    }

    Simulation& sim_;
    PeerSampling& sampling_;
    OnionRouter& onion_;
    DelegationService& delegation_;
    AggregationService& aggregation_;
    ResultReturnParams params_;

    std::vector<std::set<MatchTag>> flood_seen_;
    std::vector<std::map<std::uint64_t, PendingForward>> pending_fwd_;
    std::vector<std::map<PeerId, Tick>> onion_recv_from_;
    std::vector<std::map<std::uint64_t, ReceivedResult>> results_;
    std::vector<std::map<std::uint64_t, Tick>> next_probe_;
    std::vector<std::map<MatchTag, std::vector<RouteTag>>> probe_log_;
    std::map<MatchTag, std::vector<FloodNodeTrace>> flood_traces_;
    std::vector<ProbeRouteRecord> probe_routes_;
    std::uint64_t next_fwd_id_ = 1;
};

}  // namespace anongoss
