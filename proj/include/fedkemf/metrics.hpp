// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Communication-cost accounting and per-round metrics output.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedkemf/checkpoint.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/nn.hpp"

namespace fedkemf {

inline constexpr double kBytesPerMiB = 1024.0 * 1024.0;
inline constexpr double kBytesPerGiB = 1024.0 * 1024.0 * 1024.0;

// Per-client round payloads of the reference architectures, in MiB.
inline constexpr double kResNet20PayloadMiB = 2.1;
inline constexpr double kResNet32PayloadMiB = 3.2;
inline constexpr double kVgg11PayloadMiB = 42.0;

/// rounds * payload * sampled clients.
inline std::uint64_t communication_cost(std::uint64_t rounds, std::uint64_t payload_bytes,
                                        std::uint64_t sampled_clients) noexcept {
    return rounds * payload_bytes * sampled_clients;
}

inline double communication_cost(std::uint64_t rounds, double payload_bytes, std::uint64_t sampled_clients) noexcept {
    return static_cast<double>(rounds) * payload_bytes * static_cast<double>(sampled_clients);
}

inline double to_mib(double bytes) noexcept { return bytes / kBytesPerMiB; }
inline double to_gib(double bytes) noexcept { return bytes / kBytesPerGiB; }

inline double speedup(double baseline_bytes, double method_bytes) {
    if (!(method_bytes > 0.0)) throw InvalidInput("speedup: method cost must be positive");
    return baseline_bytes / method_bytes;
}

enum class DirectionCounting { upload_only, up_and_down };

struct CostModel {
    /// When unset, each transfer costs the serialized checkpoint size of the network sent.
    std::optional<std::uint64_t> payload_bytes_override;
    DirectionCounting directions = DirectionCounting::upload_only;

    std::uint64_t payload_bytes(const ArchSpec& arch) const noexcept {
        return payload_bytes_override.value_or(checkpoint_size(arch));
    }

    std::uint64_t round_bytes(std::uint64_t sampled_clients, const ArchSpec& arch) const noexcept {
        const std::uint64_t per_client = payload_bytes(arch) * (directions == DirectionCounting::up_and_down ? 2 : 1);
        return communication_cost(1, per_client, sampled_clients);
    }
};

enum class WireDirection { download, upload };

struct WireTransfer {
    std::uint64_t round = 0;
    std::int64_t client_id = 0;
    WireDirection direction = WireDirection::download;
    ArchSpec arch;
    std::uint64_t bytes = 0;
};

/// Records every network that crosses the client/server boundary.
class WireLedger {
public:
    void record(std::uint64_t round, std::int64_t client_id, WireDirection direction, const Network& net) {
        transfers_.push_back({round, client_id, direction, net.arch(), serialize_checkpoint(net).size()});
    }

    const std::vector<WireTransfer>& transfers() const noexcept { return transfers_; }

    bool only_arch(const ArchSpec& arch) const {
        return std::all_of(transfers_.begin(), transfers_.end(), [&](const WireTransfer& t) { return t.arch == arch; });
    }

    /// Bytes counted under `model`, summed over all recorded transfers.
    std::uint64_t counted_bytes(const CostModel& model) const {
        std::uint64_t total = 0;
        for (const auto& t : transfers_) {
            if (t.direction == WireDirection::download && model.directions == DirectionCounting::upload_only) continue;
            total += model.payload_bytes_override.value_or(t.bytes);
        }
        return total;
    }

private:
    std::vector<WireTransfer> transfers_;
};

struct RoundRecord {
    std::uint64_t round = 0;
    std::uint64_t sampled_clients = 0;
    double global_test_accuracy = 0.0;
    double mean_client_val_accuracy = 0.0;
    double mean_train_loss = 0.0;
    double distill_loss = 0.0;
    std::uint64_t cumulative_bytes = 0;
    double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "round,sampled_clients,global_test_acc,mean_client_val_acc,mean_train_loss,distill_loss,cumulative_bytes,"
    "wall_seconds";

/// Round of the first record whose global accuracy reaches `target`.
inline std::optional<std::uint64_t> rounds_to_target(std::span<const RoundRecord> records, double target) {
    for (const auto& r : records) {
        if (r.global_test_accuracy >= target) return r.round;
    }
    return std::nullopt;
}

inline nlohmann::json metrics_summary(std::span<const RoundRecord> records, std::optional<double> target) {
    nlohmann::json j;
    if (records.empty()) {
        j["final_acc"] = nullptr;
        j["best_acc"] = nullptr;
        j["rounds_to_target"] = nullptr;
        j["total_bytes"] = nullptr;
        return j;
    }
    double best = records.front().global_test_accuracy;
    for (const auto& r : records) best = std::max(best, r.global_test_accuracy);
    j["final_acc"] = records.back().global_test_accuracy;
    j["best_acc"] = best;
    std::optional<std::uint64_t> hit;
    if (target) hit = rounds_to_target(records, *target);
    j["rounds_to_target"] = hit ? nlohmann::json(*hit) : nlohmann::json(nullptr);
    j["total_bytes"] = records.back().cumulative_bytes;
    return j;
}

namespace detail {
inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}
}  // namespace detail

inline std::string metrics_csv(std::span<const RoundRecord> records) {
    std::string out = kMetricsCsvHeader;
    out += '\n';
    for (const auto& r : records) {
        out += std::to_string(r.round) + ',' + std::to_string(r.sampled_clients) + ',' +
               detail::format_real(r.global_test_accuracy) + ',' + detail::format_real(r.mean_client_val_accuracy) +
               ',' + detail::format_real(r.mean_train_loss) + ',' + detail::format_real(r.distill_loss) + ',' +
               std::to_string(r.cumulative_bytes) + ',' + detail::format_real(r.wall_seconds) + '\n';
    }
    return out;
}

/// Path of the JSON summary written next to a metrics CSV.
inline std::filesystem::path summary_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    return p.replace_extension(".json");
}

/// Writes the CSV at `csv_path` and the summary JSON beside it.
inline void emit_metrics(std::span<const RoundRecord> records, const std::filesystem::path& csv_path,
                         std::optional<double> target = std::nullopt) {
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].round <= records[i - 1].round) throw InvalidInput("emit_metrics: records not round-ordered");
    }
    {
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
        csv << metrics_csv(records);
        if (!csv) throw IoError("failed writing " + csv_path.string());
    }
    const auto json_path = summary_path(csv_path);
    std::ofstream js(json_path, std::ios::binary | std::ios::trunc);
    if (!js) throw IoError("cannot open " + json_path.string() + " for writing");
    js << metrics_summary(records, target).dump(2) << '\n';
    if (!js) throw IoError("failed writing " + json_path.string());
}

}  // namespace fedkemf
