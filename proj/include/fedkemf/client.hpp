// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Edge-client local update: deep mutual learning between the client's private
// local model and its copy of the shared knowledge network.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedkemf/data.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/nn.hpp"
#include "fedkemf/random.hpp"

namespace fedkemf {

struct ClientState {
    std::int64_t client_id = 0;
    Network local_model;
    IndexList train_indices;
    IndexList val_indices;
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double lr = 0.05;
    std::uint64_t rng_seed = 0;

    void validate(const ArchSpec& knowledge_arch) const {
        if (local_model.arch().num_classes != knowledge_arch.num_classes) {
            throw InvalidInput("client " + std::to_string(client_id) +
                               ": local model and knowledge network disagree on num_classes");
        }
        if (local_model.arch().input_dim != knowledge_arch.input_dim) {
            throw InvalidInput("client " + std::to_string(client_id) + ": input_dim mismatch");
        }
        if (train_indices.empty()) throw InvalidInput("client " + std::to_string(client_id) + ": empty shard");
        if (batch_size == 0) throw InvalidInput("client: batch_size must be positive");
        if (!(lr > 0.0)) throw InvalidInput("client: lr must be positive");
        for (auto i : val_indices) {
            if (std::binary_search(train_indices.begin(), train_indices.end(), i)) {
                throw InvalidInput("client " + std::to_string(client_id) + ": train and val overlap");
            }
        }
    }

    /// Validation indices, or the training shard when the validation split is empty.
    std::span<const std::size_t> eval_indices() const noexcept {
        return val_indices.empty() ? std::span<const std::size_t>(train_indices)
                                   : std::span<const std::size_t>(val_indices);
    }
};

/// Seed for one client's shuffle in a given round and epoch.
inline std::uint64_t epoch_seed(std::uint64_t client_seed, std::uint64_t round, std::uint64_t epoch) noexcept {
    return derive_seed(client_seed, {round, epoch});
}

/// Shuffles `indices` under `seed` and chops them into batches; the last batch may be short.
inline std::vector<IndexList> batch_indices(std::span<const std::size_t> indices, std::size_t batch_size,
                                            std::uint64_t seed) {
    if (indices.empty()) throw InvalidInput("batch_iterator: no indices");
    if (batch_size == 0) throw InvalidInput("batch_iterator: batch_size must be positive");
    IndexList order(indices.begin(), indices.end());
    Rng rng(seed);
    shuffle(std::span<std::size_t>(order), rng);
    std::vector<IndexList> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

inline std::vector<Batch> batch_iterator(const Dataset& data, std::span<const std::size_t> indices,
                                         std::size_t batch_size, std::uint64_t seed) {
    std::vector<Batch> out;
    for (const auto& b : batch_indices(indices, batch_size, seed)) out.push_back(make_batch(data, b));
    return out;
}

struct ClientResult {
    Network knowledge;
    double local_train_loss = 0.0;
    double local_val_accuracy = 0.0;
};

/// One round of mutual learning. The local model in `state` is updated in place
/// and persists; a trained copy of `knowledge_net` is returned.
///
/// Per batch: the local model steps on CE + KL(knowledge || local) with the
/// knowledge network's pre-step outputs as target, then the knowledge network
/// steps on CE + KL(local || knowledge) against the just-updated local model.
inline ClientResult client_update(ClientState& state, const Network& knowledge_net, const Dataset& data,
                                  std::uint64_t round) {
    state.validate(knowledge_net.arch());
    Network knowledge = knowledge_net;
    Network& local = state.local_model;

    for (std::size_t epoch = 0; epoch < state.epochs; ++epoch) {
        const auto batches = batch_indices(state.train_indices, state.batch_size, epoch_seed(state.rng_seed, round, epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Batch batch = make_batch(data, batches[b]);
            try {
                const auto local_logits = forward(local, batch.features);
                const auto knowledge_logits = forward(knowledge, batch.features);
                const Matrix knowledge_probs = softmax_rows(knowledge_logits);
                const double local_loss = cross_entropy(local_logits, batch.labels) +
                                          kl_divergence_from_probs(knowledge_probs, local_logits);
                if (!std::isfinite(local_loss)) throw DivergenceError(state.client_id, epoch, b);
                sgd_step(local, loss_gradient(local, batch, &knowledge_probs), state.lr);

                const Matrix local_probs = softmax_rows(forward(local, batch.features));
                const double knowledge_loss = cross_entropy(knowledge_logits, batch.labels) +
                                              kl_divergence_from_probs(local_probs, knowledge_logits);
                if (!std::isfinite(knowledge_loss)) throw DivergenceError(state.client_id, epoch, b);
                sgd_step(knowledge, loss_gradient(knowledge, batch, &local_probs), state.lr);
            } catch (const InvalidInput&) {
                // Non-finite logits or gradients surface here as rejected input.
                throw DivergenceError(state.client_id, epoch, b);
            }
        }
    }

    ClientResult result{std::move(knowledge), 0.0, 0.0};
    result.local_train_loss = evaluate(local, make_batch(data, state.train_indices)).mean_loss;
    result.local_val_accuracy = evaluate(local, make_batch(data, state.eval_indices())).accuracy;
    return result;
}

/// Plain cross-entropy SGD over the client's shard, with the same batch order
/// client_update would use. Used by the FedAvg baseline and as a no-distillation
/// reference.
inline void train_cross_entropy(Network& net, const ClientState& state, const Dataset& data, std::uint64_t round) {
    for (std::size_t epoch = 0; epoch < state.epochs; ++epoch) {
        const auto batches = batch_indices(state.train_indices, state.batch_size, epoch_seed(state.rng_seed, round, epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Batch batch = make_batch(data, batches[b]);
            try {
                const double loss = cross_entropy(forward(net, batch.features), batch.labels);
                if (!std::isfinite(loss)) throw DivergenceError(state.client_id, epoch, b);
                sgd_step(net, loss_gradient(net, batch), state.lr);
            } catch (const InvalidInput&) {
                throw DivergenceError(state.client_id, epoch, b);
            }
        }
    }
}

/// FedAvg client: trains a copy of the broadcast model with cross-entropy only.
inline ClientResult fedavg_client_update(const ClientState& state, const Network& global, const Dataset& data,
                                         std::uint64_t round) {
    state.validate(global.arch());
    Network model = global;
    train_cross_entropy(model, state, data, round);
    ClientResult result{std::move(model), 0.0, 0.0};
    result.local_train_loss = evaluate(result.knowledge, make_batch(data, state.train_indices)).mean_loss;
    result.local_val_accuracy = evaluate(result.knowledge, make_batch(data, state.eval_indices())).accuracy;
    return result;
}

}  // namespace fedkemf
