// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feed-forward ReLU networks over a flat parameter vector, with the
// cross-entropy and KL losses used for mutual learning and distillation and
// their hand-derived gradients.
//
// Parameter layout (canonical order): for each layer, the weight matrix
// (fan_out x fan_in, row-major) followed by its bias vector.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedkemf/error.hpp"
#include "fedkemf/random.hpp"
#include "fedkemf/tensor.hpp"

namespace fedkemf {

inline constexpr double kLogFloor = 1e-12;

enum class Activation { relu };

struct ArchSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    Activation activation = Activation::relu;

    ArchSpec() = default;
    ArchSpec(std::size_t input, std::vector<std::size_t> hidden, std::size_t classes)
        : input_dim(input), hidden_dims(std::move(hidden)), num_classes(classes) {
        validate();
    }

    void validate() const {
        if (input_dim == 0) throw InvalidInput("arch: input_dim must be positive");
        if (num_classes < 2) throw InvalidInput("arch: num_classes must be at least 2");
        for (auto h : hidden_dims) {
            if (h == 0) throw InvalidInput("arch: hidden widths must be positive");
        }
    }

    std::size_t layer_count() const noexcept { return hidden_dims.size() + 1; }

    std::size_t fan_in(std::size_t layer) const noexcept {
        return layer == 0 ? input_dim : hidden_dims[layer - 1];
    }
    std::size_t fan_out(std::size_t layer) const noexcept {
        return layer == hidden_dims.size() ? num_classes : hidden_dims[layer];
    }

    /// Offset of layer `layer`'s weight block in the flat parameter vector.
    std::size_t weight_offset(std::size_t layer) const noexcept {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layer; ++l) off += (fan_in(l) + 1) * fan_out(l);
        return off;
    }

    std::string to_string() const {
        std::string s = std::to_string(input_dim);
        for (auto h : hidden_dims) s += "-" + std::to_string(h);
        return s + "-" + std::to_string(num_classes);
    }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

inline std::size_t parameter_count(const ArchSpec& arch) noexcept {
    return arch.weight_offset(arch.layer_count());
}

class Network {
public:
    Network() = default;
    Network(ArchSpec arch, std::vector<double> params) : arch_(std::move(arch)), params_(std::move(params)) {
        arch_.validate();
        if (params_.size() != parameter_count(arch_)) {
            throw InvalidInput("network: parameter vector length " + std::to_string(params_.size()) +
                               " does not match arch " + arch_.to_string());
        }
    }

    const ArchSpec& arch() const noexcept { return arch_; }
    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }

    friend bool operator==(const Network&, const Network&) = default;

private:
    ArchSpec arch_;
    std::vector<double> params_;
};

struct Batch {
    Matrix features;
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline Network init_network(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    std::vector<double> params(parameter_count(arch), 0.0);
    for (std::size_t l = 0; l < arch.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(arch.fan_in(l)));
        const std::size_t off = arch.weight_offset(l);
        const std::size_t n = arch.fan_in(l) * arch.fan_out(l);
        for (std::size_t i = 0; i < n; ++i) {
            params[off + i] = -bound + 2.0 * bound * uniform01(rng);
        }
    }
    return Network(arch, std::move(params));
}

namespace detail {

// Per-layer inputs and hidden pre-activations from one forward pass.
struct ForwardTrace {
    std::vector<Matrix> inputs;           // inputs[l] feeds layer l
    std::vector<Matrix> preactivations;   // hidden layers only
    Matrix logits;
};

inline Matrix affine(const Network& net, std::size_t layer, const Matrix& in) {
    const auto& arch = net.arch();
    const std::size_t fi = arch.fan_in(layer);
    const std::size_t fo = arch.fan_out(layer);
    const auto p = net.params();
    const double* w = p.data() + arch.weight_offset(layer);
    const double* b = w + fi * fo;
    Matrix out(in.rows(), fo);
    for (std::size_t r = 0; r < in.rows(); ++r) {
        const auto x = in.row(r);
        auto y = out.row(r);
        for (std::size_t o = 0; o < fo; ++o) {
            const double* wr = w + o * fi;
            double acc = b[o];
            for (std::size_t i = 0; i < fi; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }
    return out;
}

inline ForwardTrace forward_trace(const Network& net, const Matrix& features) {
    const auto& arch = net.arch();
    if (features.cols() != arch.input_dim) {
        throw InvalidInput("forward: feature width " + std::to_string(features.cols()) +
                           " does not match input_dim " + std::to_string(arch.input_dim));
    }
    ForwardTrace trace;
    trace.inputs.push_back(features);
    for (std::size_t l = 0; l + 1 < arch.layer_count(); ++l) {
        Matrix z = affine(net, l, trace.inputs.back());
        Matrix a = z;
        for (auto& v : a.values()) v = std::max(v, 0.0);
        trace.preactivations.push_back(std::move(z));
        trace.inputs.push_back(std::move(a));
    }
    trace.logits = affine(net, arch.layer_count() - 1, trace.inputs.back());
    return trace;
}

// Backpropagates dL/dlogits through the network.
inline std::vector<double> backward(const Network& net, const ForwardTrace& trace, Matrix delta) {
    const auto& arch = net.arch();
    const auto p = net.params();
    std::vector<double> grad(p.size(), 0.0);
    for (std::size_t l = arch.layer_count(); l-- > 0;) {
        const std::size_t fi = arch.fan_in(l);
        const std::size_t fo = arch.fan_out(l);
        const std::size_t off = arch.weight_offset(l);
        double* gw = grad.data() + off;
        double* gb = gw + fi * fo;
        const Matrix& in = trace.inputs[l];
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const auto d = delta.row(r);
            const auto x = in.row(r);
            for (std::size_t o = 0; o < fo; ++o) {
                if (d[o] == 0.0) continue;
                double* gwr = gw + o * fi;
                for (std::size_t i = 0; i < fi; ++i) gwr[i] += d[o] * x[i];
                gb[o] += d[o];
            }
        }
        if (l == 0) break;
        const double* w = p.data() + off;
        const Matrix& z = trace.preactivations[l - 1];
        Matrix prev(delta.rows(), fi);
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const auto d = delta.row(r);
            auto out = prev.row(r);
            for (std::size_t o = 0; o < fo; ++o) {
                const double* wr = w + o * fi;
                for (std::size_t i = 0; i < fi; ++i) out[i] += d[o] * wr[i];
            }
            const auto zr = z.row(r);
            for (std::size_t i = 0; i < fi; ++i) {
                if (zr[i] <= 0.0) out[i] = 0.0;
            }
        }
        delta = std::move(prev);
    }
    return grad;
}

inline void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
    if (labels.size() != rows) {
        throw InvalidInput("label count " + std::to_string(labels.size()) + " does not match batch rows " +
                           std::to_string(rows));
    }
    for (auto y : labels) {
        if (y >= classes) {
            throw InvalidInput("label " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                               " classes");
        }
    }
}

}  // namespace detail

inline LogitsBatch forward(const Network& net, const Matrix& features) {
    return detail::forward_trace(net, features).logits;
}

/// Numerically stable softmax of one logit vector.
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidInput("softmax: empty input");
    for (double v : logits) {
        if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

inline Matrix softmax_rows(const LogitsBatch& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto p = softmax(logits.row(r));
        std::copy(p.begin(), p.end(), out.row(r).begin());
    }
    return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

/// Mean over the batch of -log softmax(logits)[label].
inline double cross_entropy(const LogitsBatch& logits, std::span<const std::size_t> labels) {
    detail::check_labels(labels, logits.rows(), logits.cols());
    if (logits.rows() == 0) throw InvalidInput("cross_entropy: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto q = softmax(logits.row(r));
        total += -std::log(std::max(q[labels[r]], kLogFloor));
    }
    return total / static_cast<double>(logits.rows());
}

/// Mean over rows of KL(p || softmax(student)) for a given teacher distribution p.
/// Zero-probability teacher entries contribute nothing.
inline double kl_divergence_from_probs(const Matrix& teacher_probs, const LogitsBatch& student_logits) {
    if (!teacher_probs.same_shape(student_logits)) {
        throw InvalidInput("kl_divergence: teacher and student shapes differ");
    }
    if (student_logits.rows() == 0) throw InvalidInput("kl_divergence: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < student_logits.rows(); ++r) {
        const auto p = teacher_probs.row(r);
        const auto q = softmax(student_logits.row(r));
        double row = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) {
            if (p[c] <= 0.0) continue;
            row += p[c] * (std::log(std::max(p[c], kLogFloor)) - std::log(std::max(q[c], kLogFloor)));
        }
        total += row;
    }
    // Rounding can leave a tiny negative value when p == q.
    return std::max(total / static_cast<double>(student_logits.rows()), 0.0);
}

/// Mean over rows of KL(softmax(teacher) || softmax(student)).
inline double kl_divergence(const LogitsBatch& teacher_logits, const LogitsBatch& student_logits) {
    if (!teacher_logits.same_shape(student_logits)) {
        throw InvalidInput("kl_divergence: teacher and student shapes differ");
    }
    return kl_divergence_from_probs(softmax_rows(teacher_logits), student_logits);
}

/// Gradient of cross_entropy(+ KL(teacher_probs || student) when given) w.r.t. the
/// parameters. The teacher is a constant target.
inline std::vector<double> loss_gradient(const Network& net, const Batch& batch,
                                         const Matrix* teacher_probs = nullptr) {
    const std::size_t n = batch.features.rows();
    const std::size_t c = net.arch().num_classes;
    detail::check_labels(batch.labels, n, c);
    if (n == 0) throw InvalidInput("loss_gradient: empty batch");
    if (teacher_probs != nullptr && (teacher_probs->rows() != n || teacher_probs->cols() != c)) {
        throw InvalidInput("loss_gradient: teacher distribution shape mismatch");
    }
    auto trace = detail::forward_trace(net, batch.features);
    Matrix delta(n, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto q = softmax(trace.logits.row(r));
        auto d = delta.row(r);
        for (std::size_t k = 0; k < c; ++k) {
            double g = q[k] - (k == batch.labels[r] ? 1.0 : 0.0);
            if (teacher_probs != nullptr) g += q[k] - (*teacher_probs)(r, k);
            d[k] = g * inv_n;
        }
    }
    return detail::backward(net, trace, std::move(delta));
}

/// Gradient of the mean KL(teacher_probs || student) alone (label-free distillation).
inline std::vector<double> kl_gradient(const Network& net, const Matrix& features, const Matrix& teacher_probs) {
    const std::size_t n = features.rows();
    const std::size_t c = net.arch().num_classes;
    if (n == 0) throw InvalidInput("kl_gradient: empty batch");
    if (teacher_probs.rows() != n || teacher_probs.cols() != c) {
        throw InvalidInput("kl_gradient: teacher distribution shape mismatch");
    }
    auto trace = detail::forward_trace(net, features);
    Matrix delta(n, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto q = softmax(trace.logits.row(r));
        for (std::size_t k = 0; k < c; ++k) delta(r, k) = (q[k] - teacher_probs(r, k)) * inv_n;
    }
    return detail::backward(net, trace, std::move(delta));
}

/// params <- params - lr * grad. Leaves the network untouched if the step would
/// produce non-finite values.
inline void sgd_step(Network& net, std::span<const double> grad, double lr) {
    auto p = net.params();
    if (grad.size() != p.size()) throw InvalidInput("sgd_step: gradient length mismatch");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("sgd_step: learning rate must be positive");
    for (double g : grad) {
        if (!std::isfinite(g)) throw InvalidInput("sgd_step: non-finite gradient entry");
    }
    std::vector<double> next(p.begin(), p.end());
    for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] -= lr * grad[i];
        if (!std::isfinite(next[i])) throw InvalidInput("sgd_step: update produced a non-finite parameter");
    }
    std::copy(next.begin(), next.end(), p.begin());
}

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

inline Evaluation evaluate(const Network& net, const Batch& data) {
    if (data.size() == 0) throw InvalidInput("evaluate: empty dataset");
    const auto logits = forward(net, data.features);
    detail::check_labels(data.labels, logits.rows(), logits.cols());
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (argmax(logits.row(r)) == data.labels[r]) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(data.size()), cross_entropy(logits, data.labels)};
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace fedkemf
