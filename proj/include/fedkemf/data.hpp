// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <json.hpp>

#include "fedkemf/error.hpp"
#include "fedkemf/nn.hpp"
#include "fedkemf/random.hpp"
#include "fedkemf/tensor.hpp"

namespace fedkemf {

using IndexList = std::vector<std::size_t>;

struct Dataset {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.cols(); }

    /// Throws InvalidInput unless every class in [0, num_classes) is present.
    void validate() const {
        if (features.rows() != labels.size()) throw InvalidInput("dataset: feature/label count mismatch");
        if (num_classes < 2) throw InvalidInput("dataset: need at least two classes");
        if (labels.size() < num_classes) throw InvalidInput("dataset: fewer rows than classes");
        std::vector<bool> seen(num_classes, false);
        for (auto y : labels) {
            if (y >= num_classes) throw InvalidInput("dataset: label out of range");
            seen[y] = true;
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
            throw InvalidInput("dataset: some class has no examples");
        }
    }
};

/// Gathers the given rows into a Batch.
inline Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
    Batch batch{Matrix(indices.size(), data.dim()), {}};
    batch.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = indices[r];
        if (i >= data.size()) throw InvalidInput("make_batch: index out of range");
        const auto src = data.features.row(i);
        std::copy(src.begin(), src.end(), batch.features.row(r).begin());
        batch.labels.push_back(data.labels[i]);
    }
    return batch;
}

inline Batch make_batch(const Dataset& data) {
    return Batch{data.features, data.labels};
}

// ---------------------------------------------------------------------------
// IDX files (big-endian headers, MNIST convention)

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadErrorCode::unreadable, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; the class count is
/// the largest label plus one.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    if (img.size() < 16) throw LoadError(LoadErrorCode::truncated, "idx images: truncated header");
    if (detail::be32(img, 0) != kIdxImagesMagic) throw LoadError(LoadErrorCode::bad_magic, "idx images: bad magic");
    if (lab.size() < 8) throw LoadError(LoadErrorCode::truncated, "idx labels: truncated header");
    if (detail::be32(lab, 0) != kIdxLabelsMagic) throw LoadError(LoadErrorCode::bad_magic, "idx labels: bad magic");

    const std::size_t count = detail::be32(img, 4);
    const std::size_t rows = detail::be32(img, 8);
    const std::size_t cols = detail::be32(img, 12);
    const std::size_t label_count = detail::be32(lab, 4);
    if (count != label_count) {
        throw LoadError(LoadErrorCode::count_mismatch, "idx: " + std::to_string(count) + " images but " +
                                                           std::to_string(label_count) + " labels");
    }
    const std::size_t dim = rows * cols;
    if (img.size() - 16 < count * dim) throw LoadError(LoadErrorCode::truncated, "idx images: truncated payload");
    if (lab.size() - 8 < count) throw LoadError(LoadErrorCode::truncated, "idx labels: truncated payload");

    Dataset ds;
    ds.name = images_path.filename().string();
    ds.features = Matrix(count, dim);
    auto feats = ds.features.values();
    for (std::size_t i = 0; i < count * dim; ++i) feats[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.labels.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

/// Writes a dataset as IDX with features quantized to bytes (round(x * 255)).
inline void write_idx(const Dataset& data, std::size_t rows, std::size_t cols,
                      const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    if (rows * cols != data.dim()) throw InvalidInput("write_idx: rows*cols must equal the feature width");
    std::vector<std::uint8_t> img;
    img.reserve(16 + data.size() * data.dim());
    detail::append_be32(img, kIdxImagesMagic);
    detail::append_be32(img, static_cast<std::uint32_t>(data.size()));
    detail::append_be32(img, static_cast<std::uint32_t>(rows));
    detail::append_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : data.features.values()) {
        img.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)));
    }
    std::vector<std::uint8_t> lab;
    detail::append_be32(lab, kIdxLabelsMagic);
    detail::append_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (auto y : data.labels) {
        if (y > 255) throw InvalidInput("write_idx: label does not fit in a byte");
        lab.push_back(static_cast<std::uint8_t>(y));
    }
    detail::write_file(images_path, img);
    detail::write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs

/// Center of class k: a signed axis direction at radius 2*sqrt(2)*spread, with
/// rings further out (step 4*spread) once all 2*dim directions are used. Any
/// two centers are at least 4*spread apart.
inline std::vector<double> blob_center(std::size_t k, std::size_t dim, double spread) {
    const double base = 2.0 * std::sqrt(2.0) * spread;
    const std::size_t ring = k / (2 * dim);
    const std::size_t slot = k % (2 * dim);
    std::vector<double> c(dim, 0.0);
    c[slot % dim] = (slot < dim ? 1.0 : -1.0) * (base + 4.0 * spread * static_cast<double>(ring));
    return c;
}

inline Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                           std::uint64_t seed) {
    if (num_classes < 2 || per_class == 0 || dim == 0) throw InvalidInput("synth_blobs: counts must be positive");
    if (!(spread > 0.0)) throw InvalidInput("synth_blobs: spread must be positive");
    Rng rng(seed);
    boost::random::normal_distribution<double> noise(0.0, spread);
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = num_classes;
    ds.features = Matrix(num_classes * per_class, dim);
    ds.labels.reserve(num_classes * per_class);
    std::size_t r = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const auto center = blob_center(k, dim, spread);
        for (std::size_t i = 0; i < per_class; ++i, ++r) {
            auto row = ds.features.row(r);
            for (std::size_t d = 0; d < dim; ++d) row[d] = center[d] + noise(rng);
            ds.labels.push_back(k);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Dirichlet label-skew partitioning

struct PartitionMap {
    std::vector<IndexList> client_indices;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    std::size_t num_clients() const noexcept { return client_indices.size(); }
};

inline constexpr std::size_t kDefaultMinPerClient = 10;
inline constexpr std::size_t kMaxPartitionAttempts = 100;

/// Splits `pool` (indices into `labels`) across clients: for every class, draws
/// Dirichlet(alpha) proportions and cuts that class's shuffled indices by their
/// cumulative sums. Redraws with seed + attempt until every client holds at
/// least min_per_client samples.
inline PartitionMap dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_classes,
                                        std::span<const std::size_t> pool, std::size_t num_clients, double alpha,
                                        std::size_t min_per_client, std::uint64_t seed) {
    if (num_clients < 2) throw InvalidInput("dirichlet_partition: need at least two clients");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("dirichlet_partition: alpha must be positive");

    std::vector<IndexList> by_class(num_classes);
    for (auto i : pool) {
        if (i >= labels.size() || labels[i] >= num_classes) throw InvalidInput("dirichlet_partition: bad index");
        by_class[labels[i]].push_back(i);
    }
    for (auto& members : by_class) std::sort(members.begin(), members.end());

    for (std::size_t attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
        Rng rng(seed + attempt);
        boost::random::gamma_distribution<double> gamma(alpha, 1.0);
        std::vector<IndexList> clients(num_clients);
        for (std::size_t k = 0; k < num_classes; ++k) {
            IndexList members = by_class[k];
            shuffle(std::span<std::size_t>(members), rng);
            std::vector<double> p(num_clients);
            double total = 0.0;
            while (!(total > 0.0)) {
                total = 0.0;
                for (auto& v : p) {
                    v = gamma(rng);
                    total += v;
                }
            }
            const double n = static_cast<double>(members.size());
            double cumulative = 0.0;
            std::size_t begin = 0;
            for (std::size_t j = 0; j < num_clients; ++j) {
                cumulative += p[j] / total;
                const std::size_t end = j + 1 == num_clients
                                            ? members.size()
                                            : std::min(members.size(), static_cast<std::size_t>(cumulative * n));
                for (std::size_t i = begin; i < std::max(begin, end); ++i) clients[j].push_back(members[i]);
                begin = std::max(begin, end);
            }
        }
        const bool ok = std::all_of(clients.begin(), clients.end(),
                                    [&](const IndexList& c) { return c.size() >= min_per_client; });
        if (ok) {
            for (auto& c : clients) std::sort(c.begin(), c.end());
            return PartitionMap{std::move(clients), alpha, seed};
        }
    }
    throw InfeasiblePartition("dirichlet_partition: could not give every client " + std::to_string(min_per_client) +
                              " samples after " + std::to_string(kMaxPartitionAttempts) + " attempts");
}

inline PartitionMap dirichlet_partition(const Dataset& data, std::size_t num_clients, double alpha,
                                        std::size_t min_per_client, std::uint64_t seed) {
    IndexList all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return dirichlet_partition(data.labels, data.num_classes, all, num_clients, alpha, min_per_client, seed);
}

inline std::vector<std::size_t> label_histogram(std::span<const std::size_t> labels, std::size_t num_classes,
                                                std::span<const std::size_t> indices) {
    std::vector<std::size_t> hist(num_classes, 0);
    for (auto i : indices) ++hist[labels[i]];
    return hist;
}

/// Mean over clients of the Shannon entropy (nats) of each client's label distribution.
inline double mean_label_entropy(const PartitionMap& map, std::span<const std::size_t> labels,
                                 std::size_t num_classes) {
    if (map.client_indices.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& client : map.client_indices) {
        if (client.empty()) continue;
        const auto hist = label_histogram(labels, num_classes, client);
        double h = 0.0;
        for (auto count : hist) {
            if (count == 0) continue;
            const double p = static_cast<double>(count) / static_cast<double>(client.size());
            h -= p * std::log(p);
        }
        sum += h;
    }
    return sum / static_cast<double>(map.client_indices.size());
}

inline nlohmann::json to_json(const PartitionMap& map) {
    return nlohmann::json{{"alpha", map.alpha}, {"seed", map.seed}, {"clients", map.client_indices}};
}

inline PartitionMap partition_from_json(const nlohmann::json& j) {
    PartitionMap map;
    map.alpha = j.at("alpha").get<double>();
    map.seed = j.at("seed").get<std::uint64_t>();
    map.client_indices = j.at("clients").get<std::vector<IndexList>>();
    return map;
}

// ---------------------------------------------------------------------------
// Hold-out splits

struct TrainValSplit {
    IndexList train;
    IndexList val;
};

/// Class-stratified 90/10 local split: each class contributes floor(n_k / 10)
/// shuffled samples to validation, so every validation class also appears in
/// training. Shards of two or more samples always get at least one validation
/// sample, taken from their largest class.
inline TrainValSplit split_train_val(std::span<const std::size_t> shard, std::span<const std::size_t> labels,
                                     std::size_t num_classes, std::uint64_t seed) {
    std::vector<IndexList> by_class(num_classes);
    for (auto i : shard) by_class.at(labels[i]).push_back(i);
    Rng rng(seed);
    TrainValSplit out;
    std::size_t largest = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto& members = by_class[k];
        std::sort(members.begin(), members.end());
        shuffle(std::span<std::size_t>(members), rng);
        if (members.size() > by_class[largest].size()) largest = k;
    }
    const bool force_one = shard.size() >= 2 && std::all_of(by_class.begin(), by_class.end(), [](const IndexList& m) {
                               return m.size() < 10;
                           });
    for (std::size_t k = 0; k < num_classes; ++k) {
        const auto& members = by_class[k];
        const std::size_t n_val = (force_one && k == largest) ? 1 : members.size() / 10;
        out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.train.begin(), out.train.end());
    return out;
}

struct HoldoutSplit {
    IndexList test;
    IndexList server;
    IndexList pool;
};

/// Reserves disjoint test and server (distillation) index sets; the remainder
/// is the pool that gets partitioned across clients.
inline HoldoutSplit holdout_split(std::size_t size, double test_fraction, double server_fraction,
                                  std::uint64_t seed) {
    if (test_fraction < 0.0 || server_fraction < 0.0 || test_fraction + server_fraction >= 1.0) {
        throw InvalidInput("holdout_split: fractions must be non-negative and sum below 1");
    }
    IndexList order(size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(std::span<std::size_t>(order), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(size)));
    const auto n_server = static_cast<std::size_t>(std::llround(server_fraction * static_cast<double>(size)));
    HoldoutSplit out;
    out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.server.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                      order.begin() + static_cast<std::ptrdiff_t>(n_test + n_server));
    out.pool.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_server), order.end());
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.server.begin(), out.server.end());
    std::sort(out.pool.begin(), out.pool.end());
    return out;
}

}  // namespace fedkemf
