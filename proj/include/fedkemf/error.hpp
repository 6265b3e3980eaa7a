// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedkemf {

/// Base of every error raised by the simulator.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller handed an operation arguments that violate its contract.
class InvalidInput : public Error {
public:
    using Error::Error;
};

enum class LoadErrorCode { bad_magic, truncated, count_mismatch, unreadable };

class LoadError : public Error {
public:
    LoadError(LoadErrorCode code, const std::string& what) : Error(what), code_(code) {}
    LoadErrorCode code() const noexcept { return code_; }

private:
    LoadErrorCode code_;
};

class InfeasiblePartition : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or parameters during a client's local training.
class DivergenceError : public Error {
public:
    DivergenceError(std::int64_t client_id, std::size_t epoch, std::size_t batch)
        : Error("training diverged: client " + std::to_string(client_id) + ", epoch " +
                std::to_string(epoch) + ", batch " + std::to_string(batch)),
          client_id_(client_id),
          epoch_(epoch),
          batch_(batch) {}

    std::int64_t client_id() const noexcept { return client_id_; }
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::int64_t client_id_;
    std::size_t epoch_;
    std::size_t batch_;
};

/// Non-finite loss during server-side distillation.
class DistillationError : public Error {
public:
    explicit DistillationError(std::uint64_t round)
        : Error("distillation diverged in round " + std::to_string(round)), round_(round) {}
    std::uint64_t round() const noexcept { return round_; }

private:
    std::uint64_t round_;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error("config key '" + key + "': " + message), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fedkemf
