#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blindloss {

struct GradSuiteResult {
    std::string name;
    double max_error = 0.0;
    int instances = 0;
};

// Finite-difference verification of every loss gradient: CML, CCL, CWCL,
// SDCL, cross-entropy and the InfoNCE primitive, each over `instances_per_loss`
// random small instances (feature extents <= 8), differentiated through
// instance normalization, covariance products, projection heads and the
// stabilized exponentials.
std::vector<GradSuiteResult> run_gradient_suite(int instances_per_loss, std::uint64_t seed);

}  // namespace blindloss
