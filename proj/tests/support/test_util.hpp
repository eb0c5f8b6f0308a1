// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <random>
#include <vector>

#include "mtml/autodiff.hpp"
#include "mtml/tensor.hpp"

namespace mtml::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(ad::numel(shape));
    for (auto& v : values) v = dist(rng);
    return ad::Tensor(std::move(shape), std::move(values));
}

inline std::vector<double> values_of(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline bool bit_identical(const ad::NamedTensors& a, const ad::NamedTensors& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.entries()[i];
        const auto& y = b.entries()[i];
        if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
        if (std::memcmp(x.value.data().data(), y.value.data().data(), x.value.numel() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace mtml::testing
