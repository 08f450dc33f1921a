#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "proxmmr/autodiff.hpp"
#include "proxmmr/tensor.hpp"

namespace proxmmr::testing {

/// Relative error ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

using GraphBuilder = std::function<ad::NodeId(ad::Tape&, const std::vector<ad::NodeId>&)>;

/// Worst relative error between tape gradients and central differences over
/// every parameter tensor. `build` must record a 1x1 root from the given leaves.
inline double gradient_check(std::vector<Tensor> params, const GraphBuilder& build,
                             double step = 1e-5) {
    auto evaluate = [&](const std::vector<Tensor>& values) {
        ad::Tape tape;
        std::vector<ad::NodeId> ids;
        for (const auto& v : values) ids.push_back(tape.parameter(v));
        return tape.value(build(tape, ids))[0];
    };
    ad::Tape tape;
    std::vector<ad::NodeId> ids;
    for (const auto& v : params) ids.push_back(tape.parameter(v));
    const auto grads = tape.backward(build(tape, ids));

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor numeric(params[p].rows(), params[p].cols());
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double saved = params[p][i];
            params[p][i] = saved + step;
            const double up = evaluate(params);
            params[p][i] = saved - step;
            const double down = evaluate(params);
            params[p][i] = saved;
            numeric[i] = (up - down) / (2.0 * step);
        }
        worst = std::max(worst, relative_error(grads[p], numeric));
    }
    return worst;
}

}  // namespace proxmmr::testing
