// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 ok, 1 usage, 2 config, 3 data,
// 4 divergence, 5 I/O.

#pragma once

#include <cstdio>
#include <optional>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedkemf/checkpoint.hpp"
#include "fedkemf/config.hpp"
#include "fedkemf/data.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/experiment.hpp"
#include "fedkemf/metrics.hpp"

namespace fedkemf {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitDivergence = 4,
    kExitIo = 5,
};

namespace detail {

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline ExperimentConfig load_config(const std::string& path) {
    auto cfg = parse_config(path);
    apply_env_overrides(cfg);
    return cfg;
}

inline int cmd_run(const std::string& config_path, std::size_t jobs, std::ostream& out) {
    const auto cfg = load_config(config_path);
    const auto result = run_experiment(cfg, jobs);
    const auto& last = result.records.back();
    out << "rounds: " << last.round << '\n'
        << "global_test_acc: " << fixed(last.global_test_accuracy, 4) << '\n'
        << "mean_client_val_acc: " << fixed(last.mean_client_val_accuracy, 4) << '\n'
        << "cumulative_bytes: " << last.cumulative_bytes << '\n'
        << "metrics: " << (cfg.out_dir / "metrics.csv").string() << '\n';
    return kExitOk;
}

inline int cmd_partition(const std::string& config_path, std::ostream& out) {
    const auto cfg = load_config(config_path);
    const auto data = build_data(cfg);
    const auto partition = make_partition(cfg, data);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
    write_json(cfg.out_dir / "partition.json", to_json(partition));

    const auto& labels = data.train.labels;
    const auto classes = data.train.num_classes;
    nlohmann::json report;
    report["dataset_size"] = data.train.size();
    report["clients"] = nlohmann::json::array();
    for (const auto& shard : partition.client_indices) {
        report["clients"].push_back(label_histogram(labels, classes, shard));
    }
    report["server"] = label_histogram(labels, classes, data.holdout.server);
    report["test"] = label_histogram(labels, classes, data.holdout.test);
    report["entropy"] = mean_label_entropy(partition, labels, classes);
    out << report.dump() << '\n';
    return kExitOk;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& config_path, std::ostream& out) {
    const auto cfg = load_config(config_path);
    const auto net = read_checkpoint(checkpoint_path);
    const auto data = build_data(cfg);
    if (net.arch().input_dim != data.train.dim() || net.arch().num_classes != data.train.num_classes) {
        throw InvalidInput("checkpoint arch " + net.arch().to_string() + " does not fit the configured dataset");
    }
    const auto ev = evaluate(net, data.test);
    out << "test_accuracy: " << fixed(ev.accuracy, 4) << '\n' << "test_loss: " << fixed(ev.mean_loss, 6) << '\n';
    return kExitOk;
}

inline int cmd_cost(std::uint64_t rounds, double payload_mb, std::uint64_t clients, std::optional<double> baseline_gb,
                    std::ostream& out) {
    if (!(payload_mb > 0.0)) throw InvalidInput("--payload-mb must be positive");
    const double bytes = communication_cost(rounds, payload_mb * kBytesPerMiB, clients);
    out << "communication cost: " << fixed(to_gib(bytes), 2) << " GB (" << fixed(to_mib(bytes), 2) << " MB)\n";
    if (baseline_gb) {
        out << "speed up: " << fixed(speedup(*baseline_gb * kBytesPerGiB, bytes), 2) << "x\n";
    }
    return kExitOk;
}

}  // namespace detail

/// Entry point shared by the fedkemf binary and the tests.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated knowledge-extraction simulator", "fedkemf"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint_path;
    std::size_t jobs = 1;
    auto* run = app.add_subcommand("run", "Run a full experiment");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--jobs", jobs, "Parallel client updates per round")->check(CLI::PositiveNumber);

    auto* partition = app.add_subcommand("partition", "Write the partition map and print label histograms");
    partition->add_option("config", config_path, "Config file")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a knowledge checkpoint on the test split");
    eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval->add_option("config", config_path, "Config file")->required();

    std::uint64_t rounds = 0;
    double payload_mb = 0.0;
    std::uint64_t clients = 0;
    std::optional<double> baseline_gb;
    auto* cost = app.add_subcommand("cost", "Communication cost of a run: rounds x payload x sampled clients");
    cost->add_option("--rounds", rounds, "Communication rounds")->required();
    cost->add_option("--payload-mb", payload_mb, "Per-client round payload in MB")->required();
    cost->add_option("--clients", clients, "Sampled clients per round")->required();
    cost->add_option("--baseline-gb", baseline_gb, "Baseline total in GB, for the speed-up ratio");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << e.what() << '\n' << app.help();
        return kExitUsage;
    }

    try {
        if (*run) return detail::cmd_run(config_path, jobs, out);
        if (*partition) return detail::cmd_partition(config_path, out);
        if (*eval) return detail::cmd_eval(checkpoint_path, config_path, out);
        if (*cost) return detail::cmd_cost(rounds, payload_mb, clients, baseline_gb, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const DistillationError& e) {
        err << "divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const Error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace fedkemf
