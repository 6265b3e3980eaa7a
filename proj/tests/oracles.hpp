// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference computations. Nothing here calls into the library's
// forward/backward code, so the checks stay independent of it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedkemf::oracle {

struct Layout {
    std::size_t input_dim;
    std::vector<std::size_t> hidden;
    std::size_t classes;
};

/// Logits computed with long double arithmetic straight from the flat parameter vector.
inline std::vector<std::vector<long double>> reference_logits(const Layout& layout, const std::vector<double>& params,
                                                              const std::vector<std::vector<double>>& rows) {
    std::vector<std::size_t> widths{layout.input_dim};
    widths.insert(widths.end(), layout.hidden.begin(), layout.hidden.end());
    widths.push_back(layout.classes);
    std::vector<std::vector<long double>> out;
    for (const auto& x : rows) {
        std::vector<long double> a(x.begin(), x.end());
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const std::size_t fi = widths[l], fo = widths[l + 1];
            std::vector<long double> z(fo);
            for (std::size_t o = 0; o < fo; ++o) {
                long double acc = params[off + fi * fo + o];
                for (std::size_t i = 0; i < fi; ++i) acc += params[off + o * fi + i] * a[i];
                z[o] = acc;
            }
            off += (fi + 1) * fo;
            if (l + 2 < widths.size()) {
                for (auto& v : z) v = std::max(v, 0.0L);
            }
            a = std::move(z);
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline std::vector<long double> reference_softmax(const std::vector<long double>& z) {
    long double m = *std::max_element(z.begin(), z.end());
    long double s = 0;
    std::vector<long double> p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
    for (auto& v : p) v /= s;
    return p;
}

/// Mean CE plus, when `teacher` is non-empty, mean KL(teacher || student).
inline long double reference_loss(const Layout& layout, const std::vector<double>& params,
                                  const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels,
                                  const std::vector<std::vector<double>>& teacher) {
    const auto logits = reference_logits(layout, params, rows);
    long double total = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto q = reference_softmax(logits[r]);
        total -= std::log(q[labels[r]]);
        if (!teacher.empty()) {
            for (std::size_t c = 0; c < q.size(); ++c) {
                if (teacher[r][c] > 0) total += teacher[r][c] * (std::log((long double)teacher[r][c]) - std::log(q[c]));
            }
        }
    }
    return total / rows.size();
}

/// Central differences of `f` at `params` with step eps.
template <typename F>
std::vector<double> central_differences(F&& f, std::vector<double> params, double eps) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const long double up = f(params);
        params[i] = saved - eps;
        const long double down = f(params);
        params[i] = saved;
        grad[i] = static_cast<double>((up - down) / (2.0L * eps));
    }
    return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

/// Element-wise maximum by exhaustive scan over members.
inline std::vector<std::vector<double>> brute_force_max(const std::vector<std::vector<std::vector<double>>>& members) {
    auto out = members.front();
    for (std::size_t r = 0; r < out.size(); ++r) {
        for (std::size_t c = 0; c < out[r].size(); ++c) {
            double best = -INFINITY;
            for (const auto& m : members) best = m[r][c] > best ? m[r][c] : best;
            out[r][c] = best;
        }
    }
    return out;
}

}  // namespace fedkemf::oracle
