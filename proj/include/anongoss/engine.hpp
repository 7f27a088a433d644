#pragma once

#include <memory>
#include <vector>

#include "anongoss/aggregation.hpp"
#include "anongoss/delegation.hpp"
#include "anongoss/onion.hpp"
#include "anongoss/peer_sampling.hpp"
#include "anongoss/result_return.hpp"
#include "anongoss/sim.hpp"

// Assembles one simulated deployment: simulator, sampling, onion routing,
// the three protocol phases and the shared gossip round that drives sampling
// and aggregation together (the gossiping overheads amortize onto one round
// timer).

namespace anongoss {

enum class AggregatorKind : std::uint8_t { None, Identity, Average };

struct EngineParams {
    int n_nodes = 50;
    std::uint64_t seed = 1;
    SimParams sim;
    ChurnSpec churn;
    PeerSamplingParams sampling;
    OnionParams onion;
    DelegationParams delegation;
    ResultReturnParams result_return;
    AggregatorKind aggregator = AggregatorKind::Average;
    AveragingParams averaging;
    Tick round_interval = 10;
    int warmup_rounds = 50;
    std::size_t profile_dim = 1;
    bool auto_rounds = true;  // self-rescheduling gossip rounds
};

class Engine {
    EngineParams params_;  // declared first: services below are built from it

public:
    explicit Engine(const EngineParams& params)
        : params_(params),
          sim(params.sim, params.seed),
          sampling(sim, params.sampling),
          onion(sim, params.onion),
          delegation(sim, sampling, onion, params.delegation),
          aggregation(sim, sampling, delegation),
          result_return(sim, sampling, onion, delegation, aggregation, params.result_return) {
        onion.set_reply_mode(reply_mode_for(params_.result_return.mode));
        switch (params_.aggregator) {
            case AggregatorKind::None:
                break;
            case AggregatorKind::Identity:
                aggregation.register_plugin(std::make_unique<IdentityAggregator>());
                break;
            case AggregatorKind::Average: {
                auto avg = std::make_unique<AveragingAggregator>(params_.averaging);
                averaging_ = avg.get();
                aggregation.register_plugin(std::move(avg));
                break;
            }
        }
        wire();

        for (int i = 0; i < params_.n_nodes; ++i) sim.add_node();
        profiles_.resize(static_cast<std::size_t>(params_.n_nodes));
        for (auto& p : profiles_) {
            p.values.resize(params_.profile_dim);
            for (auto& v : p.values) v = sim.rng().uniform_double() * 100.0;
        }
        sim.churn_schedule(params_.churn);
        sampling.bootstrap_all();
        if (params_.auto_rounds) {
            for (NodeIx n = 0; n < sim.node_count(); ++n) {
                sim.schedule_gossip_round(
                    n, 1 + static_cast<Tick>(sim.rng().uniform_u64(
                           static_cast<std::uint64_t>(params_.round_interval))));
            }
        }
    }

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    void warmup() {
        sim.run_for(params_.warmup_rounds * params_.round_interval + 2 * params_.round_interval);
    }

    std::uint64_t delegate_from(NodeIx origin) {
        return delegation.delegate_task(origin, profiles_[origin]);
    }

    const Profile& profile_of(NodeIx n) const { return profiles_[n]; }
    void set_profile(NodeIx n, Profile p) { profiles_[n] = std::move(p); }

    const EngineParams& params() const { return params_; }
    AveragingAggregator* averaging() { return averaging_; }

    EngineParams params_;
    Simulation sim;
    PeerSampling sampling;
    OnionRouter onion;
    DelegationService delegation;
    AggregationService aggregation;
    ResultReturnService result_return;

private:
    void wire() {
        sim.on_frame = [this](NodeIx at, const PeerId& from, std::span<const std::uint8_t> frame) {
            try {
                ByteReader r(frame);
                auto type = static_cast<FrameType>(r.u8());
                switch (type) {
                    case FrameType::ShuffleReq:
                    case FrameType::ShuffleRep:
                        sampling.handle_frame(at, from, type, r);
                        break;
                    case FrameType::Onion:
                        onion.handle_onion_frame(at, from, r);
                        break;
                    case FrameType::Reply:
                        onion.handle_reply_frame(at, from, r);
                        break;
                    case FrameType::Flood:
                        result_return.handle_flood_frame(at, from, r);
                        break;
                    case FrameType::AggReq:
                    case FrameType::AggRep:
                        aggregation.handle_frame(at, from, type, r);
                        break;
                    default:
                        throw Malformed("frame type");
                }
            } catch (const Malformed&) {
                sim.bump("malformed_frames");
            }
        };

        sim.on_gossip_round = [this](NodeIx n) {
            sampling.gossip_round(n);
            aggregation.on_gossip_round(n);
            result_return.poll_tasks(n);
            onion.expire_routes(n, sim.now(), params_.onion.route_ttl_ticks);
            if (params_.auto_rounds) {
                sim.schedule_gossip_round(n, sim.now() + params_.round_interval);
            }
        };

        sim.on_timer = [this](NodeIx n, std::uint64_t token) {
            switch (token >> 56) {
                case DelegationService::kTimerNs:
                    delegation.on_retry_timer(n, token);
                    break;
                case ResultReturnService::kReprobeNs:
                    result_return.on_reprobe_timer(n, token);
                    break;
                case ResultReturnService::kFloodNs:
                    result_return.on_flood_timer(n, token);
                    break;
                case AggregationService::kTimerNs:
                    aggregation.on_timer(n, token);
                    break;
                default:
                    break;
            }
        };

        sim.on_churn = [this](NodeIx n, bool join) {
            if (join) {
                sampling.bootstrap_node(n);
                if (params_.auto_rounds) {
                    sim.schedule_gossip_round(
                        n, sim.now() + 1 +
                               static_cast<Tick>(sim.rng().uniform_u64(
                                   static_cast<std::uint64_t>(params_.round_interval))));
                }
            } else {
                onion.on_node_departed(n);
                delegation.on_node_departed(n);
                result_return.on_node_departed(n);
            }
        };

        onion.on_terminal_payload = [this](NodeIx node, const Bytes& payload, const RouteTag& tag,
                                           const PeerId&) {
            delegation.handle_terminal_payload(node, payload, tag);
        };
        onion.on_reply_at_origin = [this](NodeIx node, std::uint64_t handle, const Bytes& blob) {
            result_return.on_reply_at_origin(node, handle, blob);
        };
        onion.on_onion_received = [this](NodeIx node, const PeerId& from) {
            result_return.note_onion_received(node, from);
        };
        delegation.on_task = [this](NodeIx node, std::size_t idx) { aggregation.on_task(node, idx); };
        delegation.on_probe = [this](NodeIx node, const MatchTag& ref, const RouteTag& tag) {
            result_return.on_probe(node, ref, tag);
        };
    }

    std::vector<Profile> profiles_;
    AveragingAggregator* averaging_ = nullptr;
};

}  // namespace anongoss
