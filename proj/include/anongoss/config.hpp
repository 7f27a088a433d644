#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "anongoss/engine.hpp"
#include "anongoss/errors.hpp"

// Scenario configuration: flat `key = value` lines with dotted section
// names, `#` comments. Unknown keys are rejected so sweep typos fail loudly.

namespace anongoss {

class Config {
public:
    static Config from_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            }
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(s.substr(eq + 1));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing required key: " + key);
        return it->second;
    }

    std::int64_t get_i64(const std::string& key, std::int64_t dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        return parse_i64(key, it->second);
    }

    double get_f64(const std::string& key, double dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        const std::string& v = it->second;
        if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw ConfigError("bad number for " + key + ": " + v);
            return d;
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("bad number for " + key + ": " + v);
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        if (it->second == "true" || it->second == "1" || it->second == "on") return true;
        if (it->second == "false" || it->second == "0" || it->second == "off") return false;
        throw ConfigError("bad boolean for " + key + ": " + it->second);
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    static std::int64_t parse_i64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            long long n = std::stoll(v, &pos);
            if (pos != v.size()) throw ConfigError("bad integer for " + key + ": " + v);
            return n;
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("bad integer for " + key + ": " + v);
        }
    }

    static std::string strip(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> kv_;
};

// Everything one simulation cell needs, assembled and validated.
struct ScenarioConfig {
    EngineParams engine;
    Tick sim_ticks = 0;  // 0 = derive from the workload
    int delegations = 20;
    Tick delegation_interval = 40;
    Tick pull_delay = 300;
    double colluder_fraction = 0.0;
    bool sniffer = false;
    Tick metrics_interval = 100;
    std::string return_mode_name = "pull_reenc";

    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            "sim.n_nodes", "sim.ticks", "sim.seed", "sim.latency_min", "sim.latency_max",
            "sim.loss_rate",
            "churn.leave_rate", "churn.join_rate",
            "sampling.view_capacity", "sampling.shuffle_size", "sampling.bootstrap_degree",
            "sampling.round_interval_ticks", "sampling.warmup_rounds",
            "onion.k_min", "onion.k_max", "onion.route_ttl_ticks", "onion.reply_mode",
            "delegation.phi_size", "delegation.retry_ticks", "delegation.max_retries",
            "aggregator.kind", "aggregator.epsilon", "aggregator.window_rounds",
            "return.mode", "return.window_ticks", "return.probe_backoff_ticks",
            "return.probe_timeout_ticks",
            "adversary.colluder_fraction", "adversary.sniffer",
            "workload.delegations", "workload.delegation_interval_ticks",
            "workload.pull_delay_ticks",
            "profile.dim", "metrics.interval_ticks",
        };
        return keys;
    }

    static ScenarioConfig from(const Config& cfg) {
        for (const auto& [key, value] : cfg.entries()) {
            if (known_keys().count(key) == 0) throw ConfigError("unknown key: " + key);
        }
        ScenarioConfig sc;
        EngineParams& e = sc.engine;

        e.n_nodes = static_cast<int>(cfg.get_i64("sim.n_nodes", 50));
        if (e.n_nodes < 2) throw ConfigError("sim.n_nodes must be at least 2");
        cfg.require("sim.seed");
        e.seed = static_cast<std::uint64_t>(cfg.get_i64("sim.seed", 0));
        e.sim.latency_min = cfg.get_i64("sim.latency_min", 1);
        e.sim.latency_max = cfg.get_i64("sim.latency_max", 10);
        if (e.sim.latency_max < e.sim.latency_min) throw ConfigError("sim.latency_max < min");
        e.sim.loss_rate = cfg.get_f64("sim.loss_rate", 0.0);
        if (e.sim.loss_rate < 0.0 || e.sim.loss_rate >= 1.0) {
            throw ConfigError("sim.loss_rate must be in [0, 1)");
        }
        e.churn.leave_rate = cfg.get_f64("churn.leave_rate", 0.0);
        e.churn.join_rate = cfg.get_f64("churn.join_rate", 0.0);
        if (e.churn.leave_rate < 0.0 || e.churn.join_rate < 0.0) {
            throw ConfigError("churn rates must be >= 0");
        }

        e.sampling.view_capacity = static_cast<std::size_t>(cfg.get_i64("sampling.view_capacity", 20));
        e.sampling.shuffle_size = static_cast<std::size_t>(cfg.get_i64("sampling.shuffle_size", 10));
        e.sampling.bootstrap_degree =
            static_cast<std::size_t>(cfg.get_i64("sampling.bootstrap_degree", 5));
        e.round_interval = cfg.get_i64("sampling.round_interval_ticks", 10);
        e.warmup_rounds = static_cast<int>(cfg.get_i64("sampling.warmup_rounds", 50));

        e.onion.k_min = static_cast<int>(cfg.get_i64("onion.k_min", 5));
        e.onion.k_max = static_cast<int>(cfg.get_i64("onion.k_max", 20));
        if (e.onion.k_min < 1 || e.onion.k_max < e.onion.k_min) {
            throw ConfigError("onion.k_min/k_max range invalid");
        }
        e.onion.route_ttl_ticks = cfg.get_i64("onion.route_ttl_ticks", 1'000'000);
        std::string rm = cfg.get_str("onion.reply_mode", "perhop_reenc");
        if (rm == "naive") {
            e.onion.reply_mode = ReplyMode::Naive;
        } else if (rm == "perhop_reenc") {
            e.onion.reply_mode = ReplyMode::PerHopReenc;
        } else {
            throw ConfigError("onion.reply_mode must be naive or perhop_reenc");
        }

        e.delegation.phi_size = static_cast<std::size_t>(cfg.get_i64("delegation.phi_size", 50));
        e.delegation.retry_ticks = cfg.get_i64("delegation.retry_ticks", 2000);
        e.delegation.max_retries =
            static_cast<std::uint32_t>(cfg.get_i64("delegation.max_retries", 3));
        if (e.delegation.phi_size < static_cast<std::size_t>(e.onion.k_max) + 1) {
            throw ConfigError("delegation.phi_size must be at least onion.k_max + 1");
        }
        if (e.delegation.phi_size > static_cast<std::size_t>(e.n_nodes) - 1) {
            throw ConfigError("delegation.phi_size must be at most sim.n_nodes - 1");
        }

        std::string agg = cfg.get_str("aggregator.kind", "average");
        if (agg == "average") {
            e.aggregator = AggregatorKind::Average;
        } else if (agg == "identity") {
            e.aggregator = AggregatorKind::Identity;
        } else if (agg == "none") {
            e.aggregator = AggregatorKind::None;
        } else {
            throw ConfigError("aggregator.kind must be average, identity or none");
        }
        e.averaging.epsilon = cfg.get_f64("aggregator.epsilon", 1e-8);
        e.averaging.window_rounds =
            static_cast<std::uint32_t>(cfg.get_i64("aggregator.window_rounds", 5));

        sc.return_mode_name = cfg.get_str("return.mode", "pull_reenc");
        if (sc.return_mode_name == "pull_naive") {
            e.result_return.mode = ReturnMode::PullNaive;
        } else if (sc.return_mode_name == "pull_reenc") {
            e.result_return.mode = ReturnMode::PullReenc;
        } else if (sc.return_mode_name == "push_full") {
            e.result_return.mode = ReturnMode::PushFull;
        } else if (sc.return_mode_name == "push_window") {
            e.result_return.mode = ReturnMode::PushWindow;
        } else {
            throw ConfigError("return.mode must be pull_naive, pull_reenc, push_full or push_window");
        }
        e.result_return.window_ticks = cfg.get_i64("return.window_ticks", 1000);
        e.result_return.probe_backoff_ticks = cfg.get_i64("return.probe_backoff_ticks", 50);
        e.result_return.probe_timeout_ticks = cfg.get_i64("return.probe_timeout_ticks", 600);

        sc.colluder_fraction = cfg.get_f64("adversary.colluder_fraction", 0.0);
        if (sc.colluder_fraction < 0.0 || sc.colluder_fraction > 1.0) {
            throw ConfigError("adversary.colluder_fraction must be in [0, 1]");
        }
        sc.sniffer = cfg.get_bool("adversary.sniffer", false);
        e.sim.record_wire = sc.sniffer;

        sc.delegations = static_cast<int>(cfg.get_i64("workload.delegations", 20));
        sc.delegation_interval = cfg.get_i64("workload.delegation_interval_ticks", 40);
        sc.pull_delay = cfg.get_i64("workload.pull_delay_ticks", 300);
        sc.metrics_interval = cfg.get_i64("metrics.interval_ticks", 100);
        e.profile_dim = static_cast<std::size_t>(cfg.get_i64("profile.dim", 1));

        sc.sim_ticks = cfg.get_i64("sim.ticks", 0);
        return sc;
    }
};

}  // namespace anongoss
