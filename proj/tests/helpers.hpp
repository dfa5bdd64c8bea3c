#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rccr/rng.hpp"
#include "rccr/seq.hpp"
#include "rccr/tensor.hpp"

namespace testutil {

/// Random sequence over ACGT, with an optional chance of N per position.
inline std::vector<rccr::Base> random_bases(rccr::Rng& rng, std::size_t len,
                                            double n_prob = 0.0) {
    std::vector<rccr::Base> bases(len);
    for (auto& b : bases) {
        b = rng.uniform() < n_prob ? rccr::Base::N
                                   : static_cast<rccr::Base>(rng.below(4));
    }
    return bases;
}

/// Decode a base-4 index into the k-th sequence of the given length, so loops
/// can enumerate every ACGT string of a fixed length.
inline std::vector<rccr::Base> nth_sequence(std::uint64_t index, std::size_t len) {
    std::vector<rccr::Base> bases(len);
    for (std::size_t i = 0; i < len; ++i) {
        bases[i] = static_cast<rccr::Base>(index % 4);
        index /= 4;
    }
    return bases;
}

inline rccr::Tensor random_tensor(rccr::Rng& rng, const std::vector<std::size_t>& shape,
                                  double lo = -1.0, double hi = 1.0) {
    rccr::Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// Strictly positive probability row (sums to 1).
inline std::vector<double> random_prob_row(rccr::Rng& rng, std::size_t dim,
                                           double floor = 1e-3) {
    std::vector<double> p(dim);
    double sum = 0.0;
    for (auto& v : p) {
        v = floor + std::exp(rng.gaussian());
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline double max_abs_diff(const rccr::Tensor& a, const rccr::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testutil
