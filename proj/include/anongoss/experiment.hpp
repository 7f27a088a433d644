#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "anongoss/adversary.hpp"
#include "anongoss/config.hpp"
#include "anongoss/engine.hpp"

// Scenario runner: executes one configured simulation (or a sweep of them)
// and emits summary.csv, events.jsonl and reports.jsonl. Output bytes are a
// pure function of (config, seed).

namespace anongoss {

using ordered_json = nlohmann::ordered_json;

inline std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct ReportRow {
    std::uint64_t route = 0;
    double f = 0.0;
    std::size_t k = 0;
    double degree = 1.0;
    bool deanonymized = false;
};

struct ScenarioResult {
    std::string scenario_id;
    std::vector<std::pair<std::string, std::string>> summary;  // ordered columns
    std::vector<ordered_json> events;
    std::vector<ReportRow> reports;
};

inline ScenarioResult run_scenario(const ScenarioConfig& sc, const std::string& scenario_id) {
    ScenarioResult out;
    out.scenario_id = scenario_id;

    Engine eng(sc.engine);
    const Tick warmup_end =
        sc.engine.warmup_rounds * sc.engine.round_interval + 2 * sc.engine.round_interval;
    const bool pulls = sc.engine.result_return.mode == ReturnMode::PullNaive ||
                       sc.engine.result_return.mode == ReturnMode::PullReenc;

    // Timeline: delegations at fixed intervals, pulls after a fixed delay,
    // metric samples on a fixed grid.
    struct Action {
        Tick at;
        int kind;  // 0 sample, 1 delegate, 2 pull
        int index;
    };
    std::vector<Action> timeline;
    for (int i = 0; i < sc.delegations; ++i) {
        Tick t = warmup_end + i * sc.delegation_interval;
        timeline.push_back({t, 1, i});
        if (pulls) timeline.push_back({t + sc.pull_delay, 2, i});
    }
    Tick auto_end = warmup_end + sc.delegations * sc.delegation_interval + sc.pull_delay +
                    4 * sc.engine.result_return.probe_timeout_ticks + 2000;
    Tick end = sc.sim_ticks > 0 ? sc.sim_ticks : auto_end;
    for (Tick t = 0; t <= end; t += sc.metrics_interval) timeline.push_back({t, 0, 0});
    std::stable_sort(timeline.begin(), timeline.end(),
                     [](const Action& a, const Action& b) { return a.at < b.at; });

    std::vector<std::pair<NodeIx, std::uint64_t>> handles;  // origin, handle
    std::vector<Tick> pull_issued(static_cast<std::size_t>(sc.delegations), -1);

    auto emit = [&](const std::string& name, Tick at, double value) {
        ordered_json j;
        j["scenario"] = scenario_id;
        j["name"] = name;
        j["time"] = at;
        j["value"] = value;
        out.events.push_back(std::move(j));
    };

    for (const Action& a : timeline) {
        if (a.at > end) break;
        eng.sim.run_until(a.at);
        switch (a.kind) {
            case 0: {
                const SimStats& st = eng.sim.stats();
                emit("live_nodes", a.at, static_cast<double>(eng.sim.live_count()));
                emit("sends", a.at, static_cast<double>(st.sends));
                emit("deliveries", a.at, static_cast<double>(st.deliveries));
                emit("drops", a.at, static_cast<double>(st.drops()));
                break;
            }
            case 1: {
                NodeIx origin = static_cast<NodeIx>(a.index % sc.engine.n_nodes);
                if (!eng.sim.is_live(origin)) break;  // departed; workload skips it
                try {
                    std::uint64_t h = eng.delegate_from(origin);
                    handles.emplace_back(origin, h);
                    emit("delegation_sent", a.at, static_cast<double>(h));
                } catch (const PhiTooSmall&) {
                    eng.sim.bump("workload_phi_too_small");
                }
                break;
            }
            case 2: {
                if (static_cast<std::size_t>(a.index) >= handles.size()) break;
                auto [origin, h] = handles[static_cast<std::size_t>(a.index)];
                if (!eng.sim.is_live(origin)) break;
                if (eng.delegation.pending_of(origin, h).gave_up) break;
                try {
                    eng.result_return.pull_result(origin, h);
                    pull_issued[static_cast<std::size_t>(a.index)] = a.at;
                } catch (const PhiTooSmall&) {
                    eng.sim.bump("workload_phi_too_small");
                }
                break;
            }
        }
    }
    eng.sim.run_until(end);

    // -- post-hoc analysis --------------------------------------------------

    Adversary adv(eng.sim, eng.onion, eng.delegation, eng.result_return);
    SeededRng analysis_rng(sc.engine.seed ^ 0x5eed5eed5eed5eedull);

    std::size_t completed = 0, tasks_landed = 0;
    double route_len_sum = 0, degree_sum = 0, degree_min = 1.0;
    std::size_t deanon = 0;
    std::size_t sniffed = 0, sniffer_hits = 0;

    for (std::size_t i = 0; i < handles.size(); ++i) {
        auto [origin, h] = handles[i];
        const PendingDelegation& p = eng.delegation.pending_of(origin, h);
        if (p.completed) ++completed;
        auto dix = eng.sim.index_of(p.delegate);
        if (dix && eng.delegation.task_indices_by_tag(*dix, p.tag) != nullptr) ++tasks_landed;
        route_len_sum += static_cast<double>(p.relays.size());

        ReportRow row;
        row.route = p.handle;
        row.f = sc.colluder_fraction;
        row.k = p.relays.size();
        CollusionSet cs;
        for (NodeIx n = 0; n < eng.sim.node_count(); ++n) {
            if (n != origin && analysis_rng.bernoulli(sc.colluder_fraction)) {
                cs.members.insert(eng.sim.peer_id(n));
            }
        }
        try {
            AnonymityReport rep = adv.analyze_collusion(cs, p);
            row.degree = rep.degree;
            row.deanonymized = rep.fully_deanonymized;
        } catch (const UnknownRoute&) {
            // route never completed in the trace (churn); report as unknown
            row.degree = 1.0;
        }
        degree_sum += row.degree;
        degree_min = std::min(degree_min, row.degree);
        if (row.deanonymized) ++deanon;
        out.reports.push_back(row);

        if (sc.sniffer && pulls && pull_issued[i] >= 0) {
            ++sniffed;
            Tick w_end = p.completed ? p.result_at : end;
            auto rep = adv.sniff_reply_window(pull_issued[i], w_end, analysis_rng);
            if (rep.terminal_guess == eng.sim.peer_id(origin)) ++sniffer_hits;
        }
    }

    const SimStats& st = eng.sim.stats();
    double n_routes = handles.empty() ? 1.0 : static_cast<double>(handles.size());

    auto col = [&](const std::string& k, const std::string& v) { out.summary.emplace_back(k, v); };
    col("scenario", scenario_id);
    col("seed", std::to_string(sc.engine.seed));
    col("n_nodes", std::to_string(sc.engine.n_nodes));
    col("return_mode", sc.return_mode_name);
    col("colluder_fraction", fmt_num(sc.colluder_fraction));
    col("delegations", std::to_string(handles.size()));
    col("tasks_delivered", std::to_string(tasks_landed));
    col("results_completed", std::to_string(completed));
    col("delivery_rate", fmt_num(static_cast<double>(tasks_landed) / n_routes));
    col("result_rate", fmt_num(static_cast<double>(completed) / n_routes));
    col("mean_route_length", fmt_num(route_len_sum / n_routes));
    col("messages_total", std::to_string(st.deliveries));
    col("messages_per_delegation", fmt_num(static_cast<double>(st.deliveries) / n_routes));
    col("flood_transmissions", std::to_string(eng.sim.counter("flood_transmissions")));
    col("mean_degree", fmt_num(handles.empty() ? 1.0 : degree_sum / n_routes));
    col("min_degree", fmt_num(degree_min));
    col("deanon_rate", fmt_num(static_cast<double>(deanon) / n_routes));
    if (sc.sniffer) {
        col("sniffer_pulls", std::to_string(sniffed));
        col("sniffer_identification_rate",
            fmt_num(sniffed == 0 ? 0.0 : static_cast<double>(sniffer_hits) / sniffed));
    }
    emit("final_deliveries", end, static_cast<double>(st.deliveries));
    emit("final_results", end, static_cast<double>(completed));
    return out;
}

// -- sweeps and files ---------------------------------------------------------

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

inline SweepAxis parse_sweep(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep must look like key=v1,v2,...");
    SweepAxis axis;
    axis.key = text.substr(0, eq);
    std::string rest = text.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        if (comma == std::string::npos) comma = rest.size();
        std::string v = rest.substr(pos, comma - pos);
        if (v.empty()) throw ConfigError("empty sweep value for " + axis.key);
        axis.values.push_back(v);
        pos = comma + 1;
    }
    if (axis.values.empty()) throw ConfigError("sweep needs at least one value");
    return axis;
}

inline std::vector<Config> expand_sweeps(const Config& base, const std::vector<SweepAxis>& axes,
                                         std::vector<std::string>& labels) {
    std::vector<Config> cells{base};
    std::vector<std::string> cell_labels{""};
    for (const auto& axis : axes) {
        std::vector<Config> next;
        std::vector<std::string> next_labels;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            for (const auto& v : axis.values) {
                Config cfg = cells[c];
                cfg.set(axis.key, v);
                next.push_back(cfg);
                std::string label = cell_labels[c];
                if (!label.empty()) label += " ";
                label += axis.key + "=" + v;
                next_labels.push_back(label);
            }
        }
        cells = std::move(next);
        cell_labels = std::move(next_labels);
    }
    labels = std::move(cell_labels);
    return cells;
}

inline void write_outputs(const std::string& out_dir, const std::vector<ScenarioResult>& results) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::ofstream csv(fs::path(out_dir) / "summary.csv", std::ios::binary);
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (i == 0) {
            for (std::size_t c = 0; c < results[i].summary.size(); ++c) {
                if (c) csv << ',';
                csv << results[i].summary[c].first;
            }
            csv << '\n';
        }
        for (std::size_t c = 0; c < results[i].summary.size(); ++c) {
            if (c) csv << ',';
            csv << results[i].summary[c].second;
        }
        csv << '\n';
    }
    csv.close();

    std::ofstream events(fs::path(out_dir) / "events.jsonl", std::ios::binary);
    for (const auto& r : results) {
        for (const auto& e : r.events) events << e.dump() << '\n';
    }
    events.close();

    std::ofstream reports(fs::path(out_dir) / "reports.jsonl", std::ios::binary);
    for (const auto& r : results) {
        for (const auto& row : r.reports) {
            ordered_json j;
            j["scenario"] = r.scenario_id;
            j["route"] = row.route;
            j["f"] = row.f;
            j["k"] = row.k;
            j["degree"] = row.degree;
            j["deanonymized"] = row.deanonymized;
            reports << j.dump() << '\n';
        }
    }
    reports.close();
}

// Runs a config (with optional sweep axes) and writes the three output files.
inline int run_config(const Config& base, const std::string& out_dir,
                      const std::vector<SweepAxis>& axes) {
    std::vector<std::string> labels;
    std::vector<Config> cells = expand_sweeps(base, axes, labels);
    std::vector<ScenarioResult> results;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        ScenarioConfig sc = ScenarioConfig::from(cells[i]);
        char id[32];
        std::snprintf(id, sizeof id, "s%03zu", i);
        std::string scenario_id = labels[i].empty() ? id : std::string(id) + " " + labels[i];
        results.push_back(run_scenario(sc, scenario_id));
    }
    write_outputs(out_dir, results);
    return 0;
}

// Human-readable digest of a produced out_dir.
inline std::string report_text(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::path csv_path = fs::path(out_dir) / "summary.csv";
    std::ifstream csv(csv_path);
    if (!csv) throw MissingData("no summary.csv in " + out_dir);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            row.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw MissingData("summary.csv has no scenarios");

    std::ostringstream os;
    const auto& header = rows[0];
    for (std::size_t r = 1; r < rows.size(); ++r) {
        os << "scenario " << rows[r][0] << "\n";
        for (std::size_t c = 1; c < header.size() && c < rows[r].size(); ++c) {
            os << "  " << header[c] << ": " << rows[r][c] << "\n";
        }
    }
    return os.str();
}

}  // namespace anongoss
