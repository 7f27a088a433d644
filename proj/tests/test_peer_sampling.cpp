#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <queue>
#include <set>

#include "anongoss/peer_sampling.hpp"

using namespace anongoss;

namespace {

struct Net {
    Simulation sim;
    PeerSampling sampling;

    Net(int n_nodes, std::uint64_t seed, PeerSamplingParams p = {})
        : sim(SimParams{}, seed), sampling(sim, p) {
        for (int i = 0; i < n_nodes; ++i) sim.add_node();
        sim.on_frame = [this](NodeIx at, const PeerId& from, std::span<const std::uint8_t> frame) {
            ByteReader r(frame);
            auto type = static_cast<FrameType>(r.u8());
            sampling.handle_frame(at, from, type, r);
        };
        sim.on_gossip_round = [this](NodeIx n) { sampling.gossip_round(n); };
    }

    // Runs `rounds` synchronized rounds, one per node, staggered within the
    // round interval for determinism.
    void run_rounds(int rounds, Tick interval = 10) {
        Tick start = sim.now();
        for (int r = 0; r < rounds; ++r) {
            for (NodeIx n = 0; n < sim.node_count(); ++n) {
                sim.schedule_gossip_round(n, start + r * interval + (n % interval));
            }
        }
        sim.run_until(start + rounds * interval + 30);
    }
};

bool union_graph_connected(Net& net) {
    std::size_t n = net.sim.node_count();
    std::vector<std::vector<std::size_t>> adj(n);
    std::map<PeerId, std::size_t> ix;
    for (NodeIx i = 0; i < n; ++i) ix[net.sim.peer_id(i)] = i;
    for (NodeIx i = 0; i < n; ++i) {
        for (const auto& e : net.sampling.view(i)) {
            std::size_t j = ix.at(e.peer);
            adj[i].push_back(j);
            adj[j].push_back(i);
        }
    }
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t visited = 1;
    while (!q.empty()) {
        auto u = q.front();
        q.pop();
        for (auto v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++visited;
                q.push(v);
            }
        }
    }
    return visited == n;
}

}  // namespace

TEST_CASE("two-node system: after one round each view contains the other") {
    Net net(2, 11);
    // Asymmetric bootstrap: only node 0 knows node 1.
    net.sampling.seed_view(0, net.sim.peer_id(1));
    REQUIRE(net.sampling.view(1).empty());

    net.sim.schedule_gossip_round(0, 1);
    net.sim.run_until(50);

    REQUIRE(net.sampling.view(0).size() == 1);
    REQUIRE(net.sampling.view(1).size() == 1);
    CHECK(net.sampling.view(0)[0].peer == net.sim.peer_id(1));
    CHECK(net.sampling.view(1)[0].peer == net.sim.peer_id(0));
}

TEST_CASE("view invariants hold after every round and capacity is enforced") {
    PeerSamplingParams p;
    p.view_capacity = 8;
    p.shuffle_size = 4;
    p.bootstrap_degree = 4;
    Net net(30, 21, p);
    net.sampling.bootstrap_all();

    for (int r = 0; r < 40; ++r) {
        net.run_rounds(1);
        for (NodeIx n = 0; n < net.sim.node_count(); ++n) {
            REQUIRE(net.sampling.view_invariants_hold(n));
        }
    }
    // Views saturate near capacity in a 30-node system and never exceed it.
    std::size_t at_cap = 0;
    for (NodeIx n = 0; n < net.sim.node_count(); ++n) {
        std::size_t sz = net.sampling.view(n).size();
        REQUIRE(sz <= p.view_capacity);
        CHECK(sz + 2 >= p.view_capacity);
        if (sz == p.view_capacity) ++at_cap;
    }
    CHECK(at_cap >= net.sim.node_count() / 2);
}

TEST_CASE("union view graph stays weakly connected without churn") {
    Net net(40, 31);
    net.sampling.bootstrap_all();
    for (int r = 0; r < 30; ++r) {
        net.run_rounds(1);
        REQUIRE(union_graph_connected(net));
    }
}

TEST_CASE("in-degree distribution balances after warmup") {
    // Per-node in-degree averaged over the 50 warmup rounds; a single
    // snapshot fluctuates at the Poisson(c) limit, the averaged value is the
    // stable balance measure.
    Net net(100, 41);
    net.sampling.bootstrap_all();

    std::map<PeerId, double> avg;
    for (NodeIx n = 0; n < net.sim.node_count(); ++n) avg[net.sim.peer_id(n)] = 0;
    const int rounds = 50;
    for (int r = 0; r < rounds; ++r) {
        net.run_rounds(1);
        for (NodeIx n = 0; n < net.sim.node_count(); ++n) {
            for (const auto& e : net.sampling.view(n)) avg[e.peer] += 1.0;
        }
    }
    double mx = 0, mn = 1e18;
    for (auto& [id, d] : avg) {
        d /= rounds;
        mx = std::max(mx, d);
        mn = std::min(mn, d);
    }
    INFO("mean in-degree max " << mx << " min " << mn);
    REQUIRE(mn > 0);
    CHECK(mx / mn < 3.0);
}

TEST_CASE("history grows toward the whole population and never exceeds N-1") {
    Net net(100, 51);
    net.sampling.bootstrap_all();
    CHECK(net.sampling.history_size(0) == net.sampling.params().bootstrap_degree);

    net.run_rounds(50);
    std::size_t h = net.sampling.history_size(0);
    CHECK(h > 90);
    CHECK(h <= 99);
}

TEST_CASE("sample draws uniformly from history without generating traffic") {
    Net net(100, 61);
    net.sampling.bootstrap_all();
    net.run_rounds(50);
    REQUIRE(net.sampling.history_size(0) == 99);

    // No traffic at draw time.
    std::size_t trace_before = net.sim.trace().size();
    auto probe = net.sampling.sample(0, 10);
    CHECK(net.sim.trace().size() == trace_before);
    CHECK(probe.peers.size() == 10);

    // Empty draw and whole-history draw.
    CHECK(net.sampling.sample(0, 0).peers.empty());
    CHECK(net.sampling.sample(0, 99).peers.size() == 99);
    CHECK_THROWS_AS(net.sampling.sample(0, 100), InsufficientHistory);

    // Total variation distance of 10^4 single-peer draws from uniform.
    std::map<PeerId, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto s = net.sampling.sample(0, 1);
        counts[s.peers[0]]++;
    }
    CHECK(counts.count(net.sim.peer_id(0)) == 0);  // never self
    double tv = 0.0;
    const double uniform = 1.0 / 99.0;
    for (NodeIx n = 1; n < net.sim.node_count(); ++n) {
        double p = static_cast<double>(counts[net.sim.peer_id(n)]) / draws;
        tv += std::abs(p - uniform);
    }
    tv /= 2.0;
    INFO("tv distance " << tv);
    CHECK(tv < 0.1);

    // Samples of distinct sizes contain no duplicates.
    auto s = net.sampling.sample(0, 50);
    std::set<PeerId> uniq(s.peers.begin(), s.peers.end());
    CHECK(uniq.size() == s.peers.size());
}

TEST_CASE("partner-down rounds drop the stale entry and skip") {
    Net net(3, 71);
    net.sampling.seed_view(0, net.sim.peer_id(1));
    net.sampling.seed_view(0, net.sim.peer_id(2));

    net.sim.schedule_churn(1, false, 1);
    net.sim.run_until(2);

    // Make node 1's entry the oldest by aging it through a merge-free round.
    // Round picks the oldest entry; both start at age 0, so the first is
    // index order. Run rounds until the dead peer's entry is purged.
    for (int r = 0; r < 4; ++r) {
        net.sim.schedule_gossip_round(0, net.sim.now() + 1);
        net.sim.run_until(net.sim.now() + 20);
    }
    for (const auto& e : net.sampling.view(0)) CHECK(e.peer != net.sim.peer_id(1));
    CHECK(net.sim.counter("sampling_partner_down") >= 1);
}
