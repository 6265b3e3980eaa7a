// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value experiment configuration. Blank lines and lines starting with
// '#' are ignored; every other line must be `key = value` with a known key.

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedkemf/data.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/metrics.hpp"
#include "fedkemf/server.hpp"

namespace fedkemf {

enum class DatasetKind { synth, idx };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::synth;
    // synth
    std::size_t num_classes = 4;
    std::size_t per_class = 500;
    std::size_t dim = 16;
    double spread = 1.0;
    std::uint64_t seed = 1;
    // idx
    std::filesystem::path images;
    std::filesystem::path labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
    // Held out of the client pool. test_fraction is ignored when test files are given.
    double test_fraction = 0.2;
    double server_fraction = 0.1;
};

/// Hidden widths only; input_dim and num_classes come from the dataset.
using HiddenLayout = std::vector<std::size_t>;

struct ExperimentConfig {
    DatasetConfig dataset;
    std::size_t num_clients = 0;
    double sample_ratio = 0.0;
    std::size_t rounds = 0;
    double alpha = 0.0;
    std::size_t min_per_client = kDefaultMinPerClient;
    std::size_t local_epochs = 5;
    std::size_t batch_size = 0;
    double lr = 0.0;
    HiddenLayout knowledge_arch;
    std::vector<HiddenLayout> client_archs;
    /// Empty means round-robin over client_archs; otherwise one arch index per client.
    std::vector<std::size_t> client_assignment;
    EnsembleStrategy strategy = EnsembleStrategy::max_logits;
    ServerInit server_init = ServerInit::avg_members;
    std::size_t distill_epochs = 3;
    double distill_lr = 0.05;
    std::size_t distill_batch_size = 32;
    Mode mode = Mode::fedkemf;
    std::uint64_t experiment_seed = 0;
    std::filesystem::path out_dir;
    std::optional<double> target_accuracy;
    CostModel cost;
    bool record_wall_time = false;

    /// Arch index used by client `id`.
    std::size_t arch_index(std::size_t id) const {
        return client_assignment.empty() ? id % client_archs.size() : client_assignment.at(id);
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || text.empty()) {
        throw ConfigError(key, "cannot parse '" + text + "' as a number");
    }
    return value;
}

// "none" or "" is a network without hidden layers.
inline HiddenLayout parse_hidden(const std::string& key, const std::string& text) {
    HiddenLayout out;
    if (text.empty() || text == "none") return out;
    for (const auto& w : split(text, ',')) {
        const auto v = parse_number<std::size_t>(key, w);
        if (v == 0) throw ConfigError(key, "hidden widths must be positive");
        out.push_back(v);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key, "expected true or false");
}

}  // namespace detail

/// Parses the contents of a config file.
inline ExperimentConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(t, "line " + std::to_string(lineno) + " is not key=value");
        }
        auto key = detail::trim(std::string_view(t).substr(0, eq));
        auto value = detail::trim(std::string_view(t).substr(eq + 1));
        if (kv.count(key)) throw ConfigError(key, "given more than once");
        kv.emplace(std::move(key), std::move(value));
    }

    ExperimentConfig cfg;
    std::map<std::string, bool> used;
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        used[key] = true;
        return it->second;
    };
    auto required = [&](const std::string& key) -> std::string {
        auto v = take(key);
        if (!v) throw ConfigError(key, "required key missing");
        return *v;
    };
    auto num = [&]<typename T>(const std::string& key, T& field, bool is_required) {
        auto v = is_required ? std::optional<std::string>(required(key)) : take(key);
        if (v) field = detail::parse_number<T>(key, *v);
    };

    // dataset
    const auto kind = required("dataset.kind");
    if (kind == "synth") {
        cfg.dataset.kind = DatasetKind::synth;
        num("dataset.num_classes", cfg.dataset.num_classes, true);
        num("dataset.per_class", cfg.dataset.per_class, true);
        num("dataset.dim", cfg.dataset.dim, true);
        num("dataset.spread", cfg.dataset.spread, false);
        num("dataset.seed", cfg.dataset.seed, false);
    } else if (kind == "idx") {
        cfg.dataset.kind = DatasetKind::idx;
        cfg.dataset.images = required("dataset.images");
        cfg.dataset.labels = required("dataset.labels");
        if (auto v = take("dataset.test_images")) cfg.dataset.test_images = *v;
        if (auto v = take("dataset.test_labels")) cfg.dataset.test_labels = *v;
        if (cfg.dataset.test_images.empty() != cfg.dataset.test_labels.empty()) {
            throw ConfigError("dataset.test_images", "test images and labels must be given together");
        }
    } else {
        throw ConfigError("dataset.kind", "expected synth or idx, got '" + kind + "'");
    }
    num("dataset.test_fraction", cfg.dataset.test_fraction, false);
    num("dataset.server_fraction", cfg.dataset.server_fraction, false);

    num("num_clients", cfg.num_clients, true);
    num("sample_ratio", cfg.sample_ratio, true);
    num("rounds", cfg.rounds, true);
    num("alpha", cfg.alpha, true);
    num("min_per_client", cfg.min_per_client, false);
    num("local_epochs", cfg.local_epochs, false);
    num("batch_size", cfg.batch_size, true);
    num("lr", cfg.lr, true);
    cfg.knowledge_arch = detail::parse_hidden("knowledge_arch", required("knowledge_arch"));
    if (auto v = take("client_archs")) {
        for (const auto& a : detail::split(*v, ';')) cfg.client_archs.push_back(detail::parse_hidden("client_archs", a));
    } else {
        cfg.client_archs.push_back(cfg.knowledge_arch);
    }
    if (auto v = take("client_assignment"); v && *v != "round_robin") {
        for (const auto& i : detail::split(*v, ',')) {
            cfg.client_assignment.push_back(detail::parse_number<std::size_t>("client_assignment", i));
        }
    }
    if (auto v = take("strategy")) {
        if (*v == "max_logits") cfg.strategy = EnsembleStrategy::max_logits;
        else if (*v == "avg_logits") cfg.strategy = EnsembleStrategy::avg_logits;
        else if (*v == "majority_vote") cfg.strategy = EnsembleStrategy::majority_vote;
        else throw ConfigError("strategy", "expected max_logits, avg_logits or majority_vote");
    }
    if (auto v = take("server.init")) {
        if (*v == "avg_members") cfg.server_init = ServerInit::avg_members;
        else if (*v == "warm_start") cfg.server_init = ServerInit::warm_start;
        else throw ConfigError("server.init", "expected avg_members or warm_start");
    }
    num("distill_epochs", cfg.distill_epochs, false);
    num("distill_lr", cfg.distill_lr, false);
    num("distill_batch_size", cfg.distill_batch_size, false);
    if (auto v = take("mode")) {
        if (*v == "fedkemf") cfg.mode = Mode::fedkemf;
        else if (*v == "fedavg") cfg.mode = Mode::fedavg;
        else throw ConfigError("mode", "expected fedkemf or fedavg");
    }
    num("experiment_seed", cfg.experiment_seed, true);
    cfg.out_dir = required("out_dir");
    if (auto v = take("target_accuracy")) cfg.target_accuracy = detail::parse_number<double>("target_accuracy", *v);
    if (auto v = take("cost.payload_bytes")) {
        cfg.cost.payload_bytes_override = detail::parse_number<std::uint64_t>("cost.payload_bytes", *v);
        if (*cfg.cost.payload_bytes_override == 0) throw ConfigError("cost.payload_bytes", "must be positive");
    }
    if (auto v = take("cost.directions")) {
        if (*v == "upload_only") cfg.cost.directions = DirectionCounting::upload_only;
        else if (*v == "up_and_down") cfg.cost.directions = DirectionCounting::up_and_down;
        else throw ConfigError("cost.directions", "expected upload_only or up_and_down");
    }
    if (auto v = take("record_wall_time")) cfg.record_wall_time = detail::parse_bool("record_wall_time", *v);

    for (const auto& [key, value] : kv) {
        if (!used.count(key)) throw ConfigError(key, "unknown key");
    }

    // constraints
    if (cfg.rounds < 1) throw ConfigError("rounds", "must be at least 1");
    if (!(cfg.sample_ratio > 0.0) || cfg.sample_ratio > 1.0) throw ConfigError("sample_ratio", "must be in (0, 1]");
    if (cfg.num_clients < 1) throw ConfigError("num_clients", "must be at least 1");
    if (!(cfg.alpha > 0.0)) throw ConfigError("alpha", "must be positive");
    if (cfg.batch_size < 1) throw ConfigError("batch_size", "must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("lr", "must be positive");
    if (!(cfg.distill_lr > 0.0)) throw ConfigError("distill_lr", "must be positive");
    if (cfg.distill_batch_size < 1) throw ConfigError("distill_batch_size", "must be positive");
    if (cfg.dataset.kind == DatasetKind::synth && !(cfg.dataset.spread > 0.0)) {
        throw ConfigError("dataset.spread", "must be positive");
    }
    if (cfg.dataset.test_fraction < 0.0 || cfg.dataset.server_fraction < 0.0 ||
        cfg.dataset.test_fraction + cfg.dataset.server_fraction >= 1.0) {
        throw ConfigError("dataset.server_fraction", "hold-out fractions must be non-negative and sum below 1");
    }
    if (cfg.mode == Mode::fedkemf && cfg.dataset.server_fraction <= 0.0) {
        throw ConfigError("dataset.server_fraction", "fedkemf needs a server distillation split");
    }
    if (!cfg.client_assignment.empty()) {
        if (cfg.client_assignment.size() != cfg.num_clients) {
            throw ConfigError("client_assignment", "needs exactly one arch index per client");
        }
        for (auto i : cfg.client_assignment) {
            if (i >= cfg.client_archs.size()) throw ConfigError("client_assignment", "arch index out of range");
        }
    }
    if (cfg.mode == Mode::fedavg) {
        for (const auto& a : cfg.client_archs) {
            if (a != cfg.knowledge_arch) {
                throw ConfigError("client_archs", "fedavg requires every client arch to equal knowledge_arch");
            }
        }
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// FEDKEMF_SEED, when set, replaces experiment_seed.
inline void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* seed = std::getenv("FEDKEMF_SEED"); seed != nullptr && *seed != '\0') {
        cfg.experiment_seed = detail::parse_number<std::uint64_t>("FEDKEMF_SEED", seed);
    }
}

}  // namespace fedkemf
