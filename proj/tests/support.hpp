// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the test binaries.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mfpn/tensor.hpp"

namespace mfpn::test {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(s);
    for (double& v : t.mutable_values()) {
        v = d(rng);
    }
    return t;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    }
    return m;
}

inline bool all_equal(const Tensor& t, double v) {
    for (double x : t.values()) {
        if (x != v) {
            return false;
        }
    }
    return true;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mfpn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mfpn::test
