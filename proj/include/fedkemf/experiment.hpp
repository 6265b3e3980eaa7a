// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedkemf/checkpoint.hpp"
#include "fedkemf/client.hpp"
#include "fedkemf/config.hpp"
#include "fedkemf/data.hpp"
#include "fedkemf/metrics.hpp"
#include "fedkemf/server.hpp"

namespace fedkemf {

// Stream tags for derive_seed.
inline constexpr std::uint64_t kSeedHoldout = 0x484f4c44;
inline constexpr std::uint64_t kSeedClient = 0x434c4e54;
inline constexpr std::uint64_t kSeedLocalInit = 0x4c4f4341;
inline constexpr std::uint64_t kSeedValSplit = 0x56414c53;
inline constexpr std::uint64_t kSeedKnowledgeInit = 0x4b4e4f57;

struct ExperimentData {
    Dataset train;
    /// Either rows held out of `train` or a separate test file.
    Batch test;
    HoldoutSplit holdout;
    bool test_from_train = true;
};

inline ExperimentData build_data(const ExperimentConfig& cfg) {
    ExperimentData out;
    const auto& dc = cfg.dataset;
    if (dc.kind == DatasetKind::synth) {
        out.train = synth_blobs(dc.num_classes, dc.per_class, dc.dim, dc.spread, dc.seed);
    } else {
        out.train = load_idx(dc.images, dc.labels);
    }
    out.train.validate();
    const std::uint64_t split_seed = derive_seed(cfg.experiment_seed, {kSeedHoldout});
    if (dc.kind == DatasetKind::idx && !dc.test_images.empty()) {
        const Dataset test = load_idx(dc.test_images, dc.test_labels);
        if (test.dim() != out.train.dim() || test.num_classes > out.train.num_classes) {
            throw InvalidInput("test dataset does not match the training dataset's shape");
        }
        out.test = make_batch(test);
        out.test_from_train = false;
        out.holdout = holdout_split(out.train.size(), 0.0, dc.server_fraction, split_seed);
    } else {
        out.holdout = holdout_split(out.train.size(), dc.test_fraction, dc.server_fraction, split_seed);
        if (out.holdout.test.empty()) throw ConfigError("dataset.test_fraction", "test split is empty");
        out.test = make_batch(out.train, out.holdout.test);
    }
    return out;
}

inline ArchSpec full_arch(const HiddenLayout& hidden, const Dataset& data) {
    return ArchSpec(data.dim(), hidden, data.num_classes);
}

inline PartitionMap make_partition(const ExperimentConfig& cfg, const ExperimentData& data) {
    if (cfg.num_clients == 1) {
        return PartitionMap{{data.holdout.pool}, cfg.alpha, cfg.experiment_seed};
    }
    return dirichlet_partition(data.train.labels, data.train.num_classes, data.holdout.pool, cfg.num_clients,
                               cfg.alpha, cfg.min_per_client, cfg.experiment_seed);
}

inline std::vector<ClientState> make_clients(const ExperimentConfig& cfg, const ExperimentData& data,
                                             const PartitionMap& partition) {
    std::vector<ClientState> clients;
    clients.reserve(cfg.num_clients);
    for (std::size_t id = 0; id < cfg.num_clients; ++id) {
        const auto& hidden = cfg.mode == Mode::fedavg ? cfg.knowledge_arch : cfg.client_archs[cfg.arch_index(id)];
        auto split = split_train_val(partition.client_indices[id], data.train.labels, data.train.num_classes,
                                     derive_seed(cfg.experiment_seed, {kSeedValSplit, id}));
        ClientState c;
        c.client_id = static_cast<std::int64_t>(id);
        c.local_model = init_network(full_arch(hidden, data.train), derive_seed(cfg.experiment_seed, {kSeedLocalInit, id}));
        c.train_indices = std::move(split.train);
        c.val_indices = std::move(split.val);
        c.epochs = cfg.local_epochs;
        c.batch_size = cfg.batch_size;
        c.lr = cfg.lr;
        c.rng_seed = derive_seed(cfg.experiment_seed, {kSeedClient, id});
        clients.push_back(std::move(c));
    }
    return clients;
}

inline ServerState make_server(const ExperimentConfig& cfg, const ExperimentData& data) {
    ServerState s;
    s.global_knowledge =
        init_network(full_arch(cfg.knowledge_arch, data.train), derive_seed(cfg.experiment_seed, {kSeedKnowledgeInit}));
    s.distill_indices = data.holdout.server;
    s.distill_epochs = cfg.distill_epochs;
    s.distill_lr = cfg.distill_lr;
    s.distill_batch_size = cfg.distill_batch_size;
    s.strategy = cfg.strategy;
    s.init = cfg.server_init;
    s.seed = cfg.experiment_seed;
    return s;
}

struct ExperimentResult {
    std::vector<RoundRecord> records;
    Network final_knowledge;
    ArchSpec knowledge_arch;
    PartitionMap partition;
    WireLedger ledger;
    std::vector<ClientState> clients;
};

/// Called after every round (including round 0) with the server state.
using RoundObserver = std::function<void(const ServerState&, const RoundRecord&)>;

/// Runs the whole experiment in memory.
inline ExperimentResult simulate(const ExperimentConfig& cfg, std::size_t jobs = 1,
                                 const RoundObserver& observer = {}) {
    const ExperimentData data = build_data(cfg);
    ExperimentResult result;
    result.partition = make_partition(cfg, data);
    result.clients = make_clients(cfg, data, result.partition);
    ServerState server = make_server(cfg, data);
    result.knowledge_arch = server.global_knowledge.arch();

    RoundOptions options;
    options.mode = cfg.mode;
    options.sample_ratio = cfg.sample_ratio;
    options.experiment_seed = cfg.experiment_seed;
    options.jobs = jobs;
    options.cost = cfg.cost;
    options.record_wall_time = cfg.record_wall_time;

    result.records.push_back(initial_record(server, result.clients, data.train, data.test, cfg.mode));
    if (observer) observer(server, result.records.back());
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        result.records.push_back(run_round(server, result.clients, data.train, data.test, options, result.ledger));
        if (observer) observer(server, result.records.back());
    }
    result.final_knowledge = server.global_knowledge;
    return result;
}

inline std::filesystem::path round_checkpoint_path(const std::filesystem::path& out_dir, std::uint64_t round) {
    return out_dir / ("round_" + std::to_string(round) + ".fkmf");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

/// Runs the experiment and writes metrics.csv, metrics.json, partition.json and
/// round_<r>.fkmf checkpoints under cfg.out_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
    auto result = simulate(cfg, jobs, [&](const ServerState& server, const RoundRecord& rec) {
        write_checkpoint(server.global_knowledge, round_checkpoint_path(cfg.out_dir, rec.round));
    });
    write_json(cfg.out_dir / "partition.json", to_json(result.partition));
    emit_metrics(result.records, cfg.out_dir / "metrics.csv", cfg.target_accuracy);
    return result;
}

}  // namespace fedkemf
