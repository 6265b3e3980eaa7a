// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Server side of a round: client sampling, ensembling of the returned knowledge
// networks, distillation of the ensemble into the global knowledge network, and
// the FedAvg parameter-averaging baseline.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>

#include "fedkemf/client.hpp"
#include "fedkemf/data.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/metrics.hpp"
#include "fedkemf/nn.hpp"
#include "fedkemf/random.hpp"

namespace fedkemf {

enum class EnsembleStrategy { max_logits, avg_logits, majority_vote };
enum class ServerInit { avg_members, warm_start };
enum class Mode { fedkemf, fedavg };

inline std::string_view to_string(EnsembleStrategy s) noexcept {
    switch (s) {
        case EnsembleStrategy::max_logits: return "max_logits";
        case EnsembleStrategy::avg_logits: return "avg_logits";
        case EnsembleStrategy::majority_vote: return "majority_vote";
    }
    return "?";
}

struct ServerState {
    Network global_knowledge;
    IndexList distill_indices;
    std::size_t distill_epochs = 3;
    double distill_lr = 0.05;
    std::size_t distill_batch_size = 32;
    EnsembleStrategy strategy = EnsembleStrategy::max_logits;
    ServerInit init = ServerInit::avg_members;
    std::uint64_t round = 0;
    std::uint64_t seed = 0;
    std::uint64_t cumulative_bytes = 0;
};

/// max(1, round(ratio * num_clients)) distinct ids drawn uniformly, returned sorted.
inline IndexList sample_clients(std::size_t num_clients, double sample_ratio, std::uint64_t round,
                                std::uint64_t experiment_seed) {
    if (!(sample_ratio > 0.0) || sample_ratio > 1.0) throw InvalidInput("sample_clients: ratio must be in (0, 1]");
    if (num_clients == 0) throw InvalidInput("sample_clients: no clients");
    const auto want = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(sample_ratio * static_cast<double>(num_clients))), 1, num_clients);
    IndexList ids(num_clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(derive_seed(experiment_seed, {0x53414d50ULL, round}));
    for (std::size_t i = 0; i < want; ++i) {
        boost::random::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(want);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace detail {
inline void check_members(std::span<const LogitsBatch> members) {
    if (members.empty()) throw InvalidInput("ensemble: no members");
    for (const auto& m : members) {
        if (!m.same_shape(members.front())) throw InvalidInput("ensemble: member shapes differ");
    }
}
}  // namespace detail

/// Combines member logits row by row. For majority_vote each row holds the
/// fraction of members whose argmax picked each class.
inline Matrix ensemble_logits(std::span<const LogitsBatch> members, EnsembleStrategy strategy) {
    detail::check_members(members);
    const auto rows = members.front().rows();
    const auto cols = members.front().cols();
    Matrix out(rows, cols);
    switch (strategy) {
        case EnsembleStrategy::max_logits:
            out = members.front();
            for (const auto& m : members.subspan(1)) {
                for (std::size_t i = 0; i < out.values().size(); ++i) {
                    out.values()[i] = std::max(out.values()[i], m.values()[i]);
                }
            }
            break;
        case EnsembleStrategy::avg_logits:
            for (const auto& m : members) {
                for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += m.values()[i];
            }
            for (auto& v : out.values()) v /= static_cast<double>(members.size());
            break;
        case EnsembleStrategy::majority_vote: {
            const double w = 1.0 / static_cast<double>(members.size());
            for (const auto& m : members) {
                for (std::size_t r = 0; r < rows; ++r) out(r, argmax(m.row(r))) += w;
            }
            break;
        }
    }
    return out;
}

/// Teacher distribution the student is distilled towards.
inline Matrix teacher_distribution(std::span<const LogitsBatch> members, EnsembleStrategy strategy) {
    auto combined = ensemble_logits(members, strategy);
    if (strategy == EnsembleStrategy::majority_vote) return combined;
    return softmax_rows(combined);
}

namespace detail {
inline void check_same_arch(std::span<const Network> members) {
    if (members.empty()) throw InvalidInput("aggregate: no members");
    for (const auto& m : members) {
        if (!(m.arch() == members.front().arch())) throw InvalidInput("aggregate: member architectures differ");
    }
}
}  // namespace detail

/// Parameter-wise weighted mean, weights normalized to sum to one.
inline Network fedavg_aggregate(std::span<const Network> members, std::span<const double> weights) {
    detail::check_same_arch(members);
    if (weights.size() != members.size()) throw InvalidInput("fedavg_aggregate: one weight per member required");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("fedavg_aggregate: weights must be non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw InvalidInput("fedavg_aggregate: weights sum to zero");
    std::vector<double> params(members.front().params().size(), 0.0);
    for (std::size_t k = 0; k < members.size(); ++k) {
        const double w = weights[k] / total;
        if (w == 0.0) continue;
        const auto p = members[k].params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i] += w * p[i];
    }
    return Network(members.front().arch(), std::move(params));
}

inline Network average_init(std::span<const Network> members) {
    detail::check_same_arch(members);
    if (members.size() == 1) return members.front();
    const std::vector<double> equal(members.size(), 1.0);
    return fedavg_aggregate(members, equal);
}

struct DistillResult {
    Network student;
    /// KL(teacher || student) over the whole distillation split: before training, then after each epoch.
    std::vector<double> epoch_losses;

    double final_loss() const { return epoch_losses.back(); }
};

/// Distills the ensemble of `members` into a student on the server's split.
/// Labels of the split are never read.
inline DistillResult distill(const ServerState& server, std::span<const Network> members, const Dataset& data) {
    if (members.empty()) throw InvalidInput("distill: no members");
    if (server.distill_indices.empty()) throw InvalidInput("distill: empty distillation split");

    Network student = server.init == ServerInit::avg_members ? average_init(members) : server.global_knowledge;
    if (!(student.arch() == members.front().arch())) throw InvalidInput("distill: student and members differ in arch");

    const Batch split = make_batch(data, server.distill_indices);
    std::vector<LogitsBatch> member_logits;
    member_logits.reserve(members.size());
    for (const auto& m : members) member_logits.push_back(forward(m, split.features));
    const Matrix teacher = teacher_distribution(member_logits, server.strategy);

    auto split_loss = [&] {
        const double loss = kl_divergence_from_probs(teacher, forward(student, split.features));
        if (!std::isfinite(loss)) throw DistillationError(server.round);
        return loss;
    };

    DistillResult result{student, {}};
    result.epoch_losses.push_back(split_loss());
    IndexList positions(split.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < server.distill_epochs; ++epoch) {
        const auto seed = derive_seed(server.seed, {0x44495354ULL, server.round, epoch});
        for (const auto& b : batch_indices(positions, server.distill_batch_size, seed)) {
            Matrix x(b.size(), split.features.cols());
            Matrix p(b.size(), teacher.cols());
            for (std::size_t r = 0; r < b.size(); ++r) {
                std::copy_n(split.features.row(b[r]).begin(), x.cols(), x.row(r).begin());
                std::copy_n(teacher.row(b[r]).begin(), p.cols(), p.row(r).begin());
            }
            try {
                sgd_step(student, kl_gradient(student, x, p), server.distill_lr);
            } catch (const InvalidInput&) {
                throw DistillationError(server.round);
            }
        }
        result.epoch_losses.push_back(split_loss());
    }
    result.student = std::move(student);
    return result;
}

// ---------------------------------------------------------------------------
// Round driver

struct RoundOptions {
    Mode mode = Mode::fedkemf;
    double sample_ratio = 1.0;
    std::uint64_t experiment_seed = 0;
    std::size_t jobs = 1;
    CostModel cost;
    bool record_wall_time = false;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The exception of the
// lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) run(i);
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace detail

/// Mean validation accuracy over all clients of the model each client deploys:
/// its own local model (fedkemf) or the global model (fedavg).
inline double mean_client_val_accuracy(const ServerState& server, std::span<const ClientState> clients,
                                       const Dataset& data, Mode mode) {
    if (clients.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& c : clients) {
        const Network& deployed = mode == Mode::fedkemf ? c.local_model : server.global_knowledge;
        sum += evaluate(deployed, make_batch(data, c.eval_indices())).accuracy;
    }
    return sum / static_cast<double>(clients.size());
}

/// Metrics of the untrained system, reported as round 0.
inline RoundRecord initial_record(const ServerState& server, std::span<const ClientState> clients,
                                  const Dataset& data, const Batch& test, Mode mode) {
    RoundRecord rec;
    rec.round = server.round;
    rec.global_test_accuracy = evaluate(server.global_knowledge, test).accuracy;
    rec.mean_client_val_accuracy = mean_client_val_accuracy(server, clients, data, mode);
    rec.cumulative_bytes = server.cumulative_bytes;
    return rec;
}

/// Executes one communication round and advances server.round.
inline RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients, const Dataset& data,
                             const Batch& test, const RoundOptions& options, WireLedger& ledger) {
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t round = server.round + 1;
    const IndexList sampled = sample_clients(clients.size(), options.sample_ratio, round, options.experiment_seed);
    const std::size_t first_transfer = ledger.transfers().size();

    for (auto id : sampled) ledger.record(round, clients[id].client_id, WireDirection::download, server.global_knowledge);

    std::vector<ClientResult> results(sampled.size());
    const Network& broadcast = server.global_knowledge;
    detail::parallel_for(sampled.size(), options.jobs, [&](std::size_t i) {
        auto& client = clients[sampled[i]];
        results[i] = options.mode == Mode::fedkemf ? client_update(client, broadcast, data, round)
                                                   : fedavg_client_update(client, broadcast, data, round);
    });

    std::vector<Network> members;
    members.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        ledger.record(round, clients[sampled[i]].client_id, WireDirection::upload, results[i].knowledge);
        members.push_back(results[i].knowledge);
    }

    RoundRecord rec;
    rec.round = round;
    rec.sampled_clients = sampled.size();
    server.round = round;
    if (options.mode == Mode::fedkemf) {
        auto fused = distill(server, members, data);
        rec.distill_loss = fused.final_loss();
        server.global_knowledge = std::move(fused.student);
    } else {
        std::vector<double> weights;
        for (auto id : sampled) weights.push_back(static_cast<double>(clients[id].train_indices.size()));
        server.global_knowledge = fedavg_aggregate(members, weights);
    }

    for (std::size_t i = first_transfer; i < ledger.transfers().size(); ++i) {
        const auto& t = ledger.transfers()[i];
        if (t.direction == WireDirection::download && options.cost.directions == DirectionCounting::upload_only) {
            continue;
        }
        server.cumulative_bytes += options.cost.payload_bytes_override.value_or(t.bytes);
    }

    double loss_sum = 0.0;
    for (const auto& r : results) loss_sum += r.local_train_loss;
    rec.mean_train_loss = loss_sum / static_cast<double>(results.size());
    rec.global_test_accuracy = evaluate(server.global_knowledge, test).accuracy;
    rec.mean_client_val_accuracy = mean_client_val_accuracy(server, clients, data, options.mode);
    rec.cumulative_bytes = server.cumulative_bytes;
    if (options.record_wall_time) {
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    return rec;
}

}  // namespace fedkemf
