#pragma once

#include <vector>

#include "graft/tensor.hpp"

namespace graft::testutil {

struct PrecisionScope {
    Precision saved;
    explicit PrecisionScope(Precision p) : saved(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved); }
};

inline std::vector<double> random_vec(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i) {
        const double d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
        if (d > m) m = d;
    }
    return m;
}

}  // namespace graft::testutil
