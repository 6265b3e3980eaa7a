// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary network checkpoints, little-endian:
//
//   "FKMF" | u16 version=1 | u32 input_dim | u32 hidden_count | u32 hidden[...]
//   | u32 num_classes | f64 params[parameter_count]

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedkemf/error.hpp"
#include "fedkemf/nn.hpp"

namespace fedkemf {

inline constexpr char kCheckpointMagic[4] = {'F', 'K', 'M', 'F'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Serialized size in bytes of a network with this architecture.
inline std::size_t checkpoint_size(const ArchSpec& arch) noexcept {
    return 4 + 2 + 4 + 4 + 4 * arch.hidden_dims.size() + 4 + 8 * parameter_count(arch);
}

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    const auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class LeReader {
public:
    explicit LeReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
        if (pos_ + sizeof(T) > bytes_.size()) {
            throw LoadError(LoadErrorCode::truncated, "checkpoint: truncated");
        }
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
    const auto& arch = net.arch();
    std::vector<std::uint8_t> out;
    out.reserve(checkpoint_size(arch));
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_le(out, kCheckpointVersion);
    detail::put_le(out, static_cast<std::uint32_t>(arch.input_dim));
    detail::put_le(out, static_cast<std::uint32_t>(arch.hidden_dims.size()));
    for (auto h : arch.hidden_dims) detail::put_le(out, static_cast<std::uint32_t>(h));
    detail::put_le(out, static_cast<std::uint32_t>(arch.num_classes));
    for (double v : net.params()) detail::put_le(out, v);
    return out;
}

inline Network deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw LoadError(LoadErrorCode::bad_magic, "checkpoint: bad magic");
    }
    detail::LeReader in(bytes.subspan(4));
    const auto version = in.get<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw LoadError(LoadErrorCode::bad_magic, "checkpoint: unsupported version " + std::to_string(version));
    }
    ArchSpec arch;
    arch.input_dim = in.get<std::uint32_t>();
    const auto hidden = in.get<std::uint32_t>();
    if (static_cast<std::size_t>(hidden) * 4 > in.remaining()) {
        throw LoadError(LoadErrorCode::truncated, "checkpoint: truncated");
    }
    for (std::uint32_t i = 0; i < hidden; ++i) arch.hidden_dims.push_back(in.get<std::uint32_t>());
    arch.num_classes = in.get<std::uint32_t>();
    arch.validate();
    const std::size_t n = parameter_count(arch);
    if (in.remaining() != n * 8) {
        throw LoadError(LoadErrorCode::truncated, "checkpoint: expected " + std::to_string(n * 8) +
                                                      " parameter bytes, found " + std::to_string(in.remaining()));
    }
    std::vector<double> params(n);
    for (auto& v : params) v = in.get<double>();
    return Network(std::move(arch), std::move(params));
}

inline void write_checkpoint(const Network& net, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline Network read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadErrorCode::unreadable, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace fedkemf
