#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ovg {

struct GradcheckEntry {
    std::string name;
    double max_rel = 0.0;
    double max_abs = 0.0;
    int n_coords = 0;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double max_rel = 0.0;
    bool pass = true;

    std::string to_string() const;
};

// Central finite differences (64-bit, h = 1e-5) against analytic gradients
// for every op class and for the end-to-end training loss with respect to a
// sampled parameter subset (>= 200 coordinates, always including the
// Gaussian weight parameters and gate MLP weights). Tolerance: relative
// error <= 1e-4, absolute 1e-7 near zero.
GradcheckReport run_gradcheck(std::uint64_t seed);

}  // namespace ovg
